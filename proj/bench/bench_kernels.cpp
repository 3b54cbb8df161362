// Times the OpenMP kernel variants against the serial reference and checks
// that both produce bitwise-identical outputs. Honor CONVLSTM_THREADS.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "convlstm/kernels.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"
#include "convlstm/threading.hpp"

using namespace convlstm;
namespace ks = convlstm::kernels::serial;
namespace kp = convlstm::kernels::omp;

namespace {

Tensor32 random_tensor(const std::vector<int>& shape, Rng& rng) {
  Tensor32 t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.uniform() - 0.5);
  }
  return t;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool same_bits(const Tensor32& a, const Tensor32& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

void report(const std::string& name, double serial_ms, double omp_ms, bool bitwise) {
  std::printf("%-24s %10.3f %10.3f %9.2fx  %s\n", name.c_str(), serial_ms, omp_ms,
              serial_ms / omp_ms, bitwise ? "yes" : "NO");
}

}  // namespace

int main() {
  const int reps = 5;
  std::printf("threads=%d (CONVLSTM_THREADS; 0 = serial)\n", max_threads());
  std::printf("%-24s %10s %10s %10s  %s\n", "kernel", "serial_ms", "omp_ms", "speedup",
              "bitwise");

  Rng rng(42);

  // conv2d: 32ch 64x64 -> 64ch, 3x3 same padding.
  ConvSpec spec;
  spec.filter_size = 3;
  spec.stride = 1;
  spec.in_channels = 32;
  spec.out_channels = 64;
  spec.padding = ConvSpec::same_padding(3);
  const Tensor32 conv_in = random_tensor({32, 64, 64}, rng);
  const Tensor32 conv_w = random_tensor({64, 32, 3, 3}, rng);
  const Tensor32 conv_b = random_tensor({64}, rng);

  {
    Tensor32 out_s, out_p;
    const double ms_s =
        time_ms([&]() { out_s = ks::conv2d_forward(conv_in, conv_w, conv_b, spec); }, reps);
    const double ms_p =
        time_ms([&]() { out_p = kp::conv2d_forward(conv_in, conv_w, conv_b, spec); }, reps);
    report("conv2d_forward", ms_s, ms_p, same_bits(out_s, out_p));
  }

  {
    const Tensor32 grad_out = random_tensor({64, 64, 64}, rng);
    Tensor32 gi_s(conv_in.shape()), gw_s(conv_w.shape()), gb_s(conv_b.shape());
    Tensor32 gi_p(conv_in.shape()), gw_p(conv_w.shape()), gb_p(conv_b.shape());
    const double ms_s = time_ms(
        [&]() {
          gi_s.zero();
          gw_s.zero();
          gb_s.zero();
          ks::conv2d_backward_acc(conv_in, conv_w, spec, grad_out, &gi_s, &gw_s, &gb_s);
        },
        reps);
    const double ms_p = time_ms(
        [&]() {
          gi_p.zero();
          gw_p.zero();
          gb_p.zero();
          kp::conv2d_backward_acc(conv_in, conv_w, spec, grad_out, &gi_p, &gw_p, &gb_p);
        },
        reps);
    report("conv2d_backward", ms_s, ms_p,
           same_bits(gi_s, gi_p) && same_bits(gw_s, gw_p) && same_bits(gb_s, gb_p));
  }

  {
    const Tensor32 pool_in = random_tensor({64, 64, 64}, rng);
    PoolResult<float> r_s, r_p;
    const double ms_s = time_ms([&]() { r_s = ks::maxpool_forward(pool_in, 2, 2); }, reps);
    const double ms_p = time_ms([&]() { r_p = kp::maxpool_forward(pool_in, 2, 2); }, reps);
    report("maxpool_forward", ms_s, ms_p,
           same_bits(r_s.output, r_p.output) && r_s.argmax == r_p.argmax);
  }

  {
    const Tensor32 lcn_in = random_tensor({64, 64, 64}, rng);
    Tensor32 mean_s, std_s, mean_p, std_p;
    const double ms_s =
        time_ms([&]() { ks::lcn_stats(lcn_in, 5, 1e-4f, &mean_s, &std_s); }, reps);
    const double ms_p =
        time_ms([&]() { kp::lcn_stats(lcn_in, 5, 1e-4f, &mean_p, &std_p); }, reps);
    report("lcn_stats", ms_s, ms_p, same_bits(mean_s, mean_p) && same_bits(std_s, std_p));
  }

  {
    const Tensor32 w = random_tensor({2048, 2048}, rng);
    const Tensor32 x = random_tensor({2048}, rng);
    Tensor32 y_s, y_p;
    const double ms_s = time_ms([&]() { y_s = ks::matvec(w, x); }, reps);
    const double ms_p = time_ms([&]() { y_p = kp::matvec(w, x); }, reps);
    report("matvec", ms_s, ms_p, same_bits(y_s, y_p));
  }

  return 0;
}
