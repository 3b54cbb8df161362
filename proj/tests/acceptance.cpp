// Acceptance gate: exercises the eight headline behaviors end to end and
// prints exactly one PASS/FAIL line per criterion. Exit status 0 only when
// every criterion holds. Subprocess checks locate the CLI binary through
// CONVLSTM_CLI_BIN, falling back to tools/convlstm relative to the cwd.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "convlstm/data.hpp"
#include "convlstm/error.hpp"
#include "convlstm/eval.hpp"
#include "convlstm/kernels.hpp"
#include "convlstm/layers.hpp"
#include "convlstm/lstm.hpp"
#include "convlstm/model.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"
#include "convlstm/train.hpp"

namespace fs = std::filesystem;
using namespace convlstm;

namespace {

// --------------------------------------------------------------------------
// shared plumbing

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string cli_bin() {
  const char* env = std::getenv("CONVLSTM_CLI_BIN");
  if (env != nullptr && fs::exists(env)) return env;
  if (fs::exists("tools/convlstm")) return "tools/convlstm";
  throw ConfigError("CLI binary not found; set CONVLSTM_CLI_BIN");
}

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path capture =
      fs::temp_directory_path() / ("convlstm-accept-" + std::to_string(counter++) + ".txt");
  const std::string command =
      env_prefix + cli_bin() + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(command.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::ostringstream text;
  text << in.rdbuf();
  r.output = text.str();
  fs::remove(capture);
  return r;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("convlstm-accept-" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// Relative error with a floor at the smallest gradient a central difference
// at epsilon ~1e-5 resolves above its own rounding noise.
double rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_h = cfg.input_w = 8;
  cfg.input_channels = 1;
  cfg.num_classes = 3;
  cfg.conv1 = {3, 1, 2};
  cfg.conv2 = {3, 1, 3};
  cfg.conv3 = {3, 1, 4};
  cfg.pool1 = 2;
  cfg.pool2 = 2;
  cfg.pool3 = 1;
  cfg.lcn_window = 3;
  cfg.fc_dim = 8;
  cfg.dropout_p = 0.5;
  cfg.lstm_filter = 3;
  cfg.lstm_depth = 4;
  cfg.sequence_length = 2;
  return cfg;
}

template <typename Fill>
TensorT<double> filled(const std::vector<int>& shape, Rng& rng, Fill scale) {
  TensorT<double> t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale(rng.uniform() - 0.5);
  return t;
}

TensorT<double> random_tensor(const std::vector<int>& shape, Rng& rng) {
  return filled(shape, rng, [](double v) { return v; });
}

double dot(const TensorT<double>& a, const TensorT<double>& b) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// --------------------------------------------------------------------------
// criterion 1: gradient correctness

// Max relative error between an analytic input/parameter gradient and full
// central differences of loss(x) = dot(probe, layer(x)).
double fd_check(TensorT<double>& subject, const TensorT<double>& analytic,
                const std::function<double()>& loss) {
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::int64_t i = 0; i < subject.size(); ++i) {
    const double keep = subject[i];
    subject[i] = keep + eps;
    const double up = loss();
    subject[i] = keep - eps;
    const double down = loss();
    subject[i] = keep;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double check_conv_layer(Rng& rng) {
  ConvLayer<double> layer(ConvSpec{3, 2, 2, 3, 1});
  for (ParamRef<double>& p : layer.params("conv")) *p.value = random_tensor(p.value->shape(), rng);
  TensorT<double> x = random_tensor({2, 7, 7}, rng);
  typename ConvLayer<double>::Cache cache;
  const TensorT<double> probe = random_tensor(layer.forward(x, &cache).shape(), rng);

  layer.zero_grads();
  const TensorT<double> grad_x = layer.backward(cache, probe);
  const auto loss = [&] {
    typename ConvLayer<double>::Cache c;
    return dot(probe, layer.forward(x, &c));
  };
  double worst = fd_check(x, grad_x, loss);
  worst = std::max(worst, fd_check(layer.weights(), layer.grad_weights(), loss));
  worst = std::max(worst, fd_check(layer.bias(), layer.grad_bias(), loss));
  return worst;
}

double check_pool_layer(Rng& rng) {
  PoolLayer<double> layer(2, 2);
  TensorT<double> x = random_tensor({2, 6, 6}, rng);
  typename PoolLayer<double>::Cache cache;
  const TensorT<double> probe = random_tensor(layer.forward(x, &cache).shape(), rng);
  const TensorT<double> grad_x = layer.backward(cache, probe);
  return fd_check(x, grad_x, [&] {
    typename PoolLayer<double>::Cache c;
    return dot(probe, layer.forward(x, &c));
  });
}

double check_lcn_layer(Rng& rng) {
  LcnLayer<double> layer(3, 1e-4);
  TensorT<double> x = random_tensor({2, 6, 6}, rng);
  typename LcnLayer<double>::Cache cache;
  const TensorT<double> probe = random_tensor(layer.forward(x, &cache).shape(), rng);
  const TensorT<double> grad_x = layer.backward(cache, probe);
  return fd_check(x, grad_x, [&] {
    typename LcnLayer<double>::Cache c;
    return dot(probe, layer.forward(x, &c));
  });
}

double check_fc_layer(Rng& rng) {
  FcLayer<double> layer(5, 4);
  for (ParamRef<double>& p : layer.params("fc")) *p.value = random_tensor(p.value->shape(), rng);
  TensorT<double> x = random_tensor({5}, rng);
  typename FcLayer<double>::Cache cache;
  const TensorT<double> probe = random_tensor(layer.forward(x, &cache).shape(), rng);
  layer.zero_grads();
  const TensorT<double> grad_x = layer.backward(cache, probe);
  const auto loss = [&] {
    typename FcLayer<double>::Cache c;
    return dot(probe, layer.forward(x, &c));
  };
  double worst = fd_check(x, grad_x, loss);
  for (ParamRef<double>& p : layer.params("fc")) {
    worst = std::max(worst, fd_check(*p.value, *p.grad, loss));
  }
  return worst;
}

double check_dropout_layer(Rng& rng) {
  DropoutLayer<double> layer(0.3);
  TensorT<double> x = random_tensor({3, 4, 4}, rng);
  const std::uint64_t mask_seed = 123;
  typename DropoutLayer<double>::Cache cache;
  Rng mask_rng(mask_seed);
  TensorT<double> out = layer.forward(x, Mode::kTrain, &mask_rng, &cache);
  const TensorT<double> probe = random_tensor(out.shape(), rng);
  const TensorT<double> grad_x = layer.backward(cache, probe);
  // The mask is a function of the stream state only, so reseeding fixes it.
  return fd_check(x, grad_x, [&] {
    typename DropoutLayer<double>::Cache c;
    Rng r(mask_seed);
    return dot(probe, layer.forward(x, Mode::kTrain, &r, &c));
  });
}

double check_softmax(Rng& rng) {
  TensorT<double> logits = random_tensor({4}, rng);
  const int label = 2;
  const SoftmaxResult<double> sm = softmax_cross_entropy(logits, label);
  return fd_check(logits, sm.grad_logits,
                  [&] { return static_cast<double>(softmax_cross_entropy(logits, label).loss); });
}

// BPTT of a standalone cell against finite differences of a probe loss over
// every hidden output.
double check_cell(GateKind kind, Rng& rng) {
  GateTransformSpec gate;
  gate.kind = kind;
  gate.hidden_dim = 4;  // fully connected
  gate.filter_size = 3;
  gate.depth = 2;  // convolutional
  const int steps = 3;
  LstmCell<double> cell(gate, 2, true);
  std::vector<ParamRef<double>> params = cell.params("cell");
  for (ParamRef<double>& p : params) {
    *p.value = filled(p.value->shape(), rng, [](double v) { return 0.6 * v; });
  }

  std::vector<TensorT<double>> xs;
  for (int t = 0; t < steps; ++t) {
    xs.push_back(kind == GateKind::kConvolutional ? random_tensor({2, 5, 5}, rng)
                                                  : random_tensor({2}, rng));
  }
  std::vector<TensorT<double>> probes;
  const auto loss = [&] {
    std::vector<LstmStepCache<double>> caches;
    const std::vector<TensorT<double>> hs = cell.unroll(xs, cell.zero_state(xs[0]), &caches);
    double total = 0.0;
    for (int t = 0; t < steps; ++t) total += dot(probes[static_cast<std::size_t>(t)], hs[t]);
    return total;
  };

  std::vector<LstmStepCache<double>> caches;
  std::vector<TensorT<double>> hs = cell.unroll(xs, cell.zero_state(xs[0]), &caches);
  std::vector<TensorT<double>> grad_hs;
  for (const TensorT<double>& h : hs) {
    probes.push_back(random_tensor(h.shape(), rng));
    grad_hs.push_back(probes.back());
  }
  cell.zero_grads();
  const std::vector<TensorT<double>> grad_xs = cell.bptt(caches, grad_hs);

  double worst = 0.0;
  for (int t = 0; t < steps; ++t) {
    worst = std::max(worst, fd_check(xs[static_cast<std::size_t>(t)],
                                     grad_xs[static_cast<std::size_t>(t)], loss));
  }
  for (ParamRef<double>& p : params) worst = std::max(worst, fd_check(*p.value, *p.grad, loss));
  return worst;
}

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20260814);

  double layers_worst = 0.0;
  for (auto check : {check_conv_layer, check_pool_layer, check_lcn_layer, check_fc_layer,
                     check_dropout_layer, check_softmax}) {
    layers_worst = std::max(layers_worst, check(rng));
  }
  double cells_worst = std::max(check_cell(GateKind::kFullyConnected, rng),
                                check_cell(GateKind::kConvolutional, rng));

  // Whole models through the library gradient checker.
  double models_worst = 0.0;
  for (int variant = 0; variant < 3; ++variant) {
    ModelConfig cfg = tiny_config();
    const ModelKind kind = variant == 0 ? ModelKind::kBaseline : ModelKind::kMotion;
    if (variant == 2) cfg.gate_kind = GateKind::kFullyConnected;
    std::unique_ptr<Model<double>> model = build_model<double>(kind, cfg);
    init_weights(*model, "he", 21 + static_cast<std::uint64_t>(variant));
    SequenceSample<double> sample;
    sample.label = 1;
    const int frames = kind == ModelKind::kMotion ? 2 : 1;
    for (int t = 0; t < frames; ++t) sample.frames.push_back(random_tensor({1, 8, 8}, rng));
    const GradCheckReport report = grad_check(*model, sample, 1e-5, 6, 99);
    models_worst = std::max(models_worst, report.max_rel_err);
  }

  // The command named by the claim, end to end.
  bool cli_ok = true;
  for (const std::string& args :
       {std::string("gradcheck --model baseline --tiny"),
        std::string("gradcheck --model motion --tiny"),
        std::string("gradcheck --model motion --tiny --gates fc")}) {
    const RunResult r = run_cli(args);
    cli_ok = cli_ok && r.code == 0 && r.output.find("gradcheck PASS") != std::string::npos;
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double worst = std::max({layers_worst, cells_worst, models_worst});
  Outcome o;
  o.pass = worst <= 1e-5 && cli_ok && seconds < 300.0;
  o.detail = fmt("max_rel_err %.2e (layers %.2e, cells %.2e, models %.2e), cli %s, %.0fs",
                 worst, layers_worst, cells_worst, models_worst, cli_ok ? "PASS" : "FAIL",
                 seconds);
  return o;
}

// --------------------------------------------------------------------------
// criterion 2: scalar-cell fidelity and carry behavior

struct ScalarParams {
  double wi, ui, bi, wc, uc, bc, wf, uf, bf, wo, uo, bo, vo;
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void scalar_step(const ScalarParams& p, double x, bool forget, double& C, double& h) {
  const double i = sigmoid(p.wi * x + p.ui * h + p.bi);
  const double c_hat = std::tanh(p.wc * x + p.uc * h + p.bc);
  const double f = sigmoid(p.wf * x + p.uf * h + p.bf);
  const double C_new = forget ? i * c_hat + f * C : i * c_hat + C;
  const double o = sigmoid(p.wo * x + p.uo * h + p.vo * C_new + p.bo);
  C = C_new;
  h = o * std::tanh(C_new);
}

LstmCell<double> scalar_cell(const ScalarParams& p, bool forget) {
  GateTransformSpec gate;
  gate.kind = GateKind::kFullyConnected;
  gate.hidden_dim = 1;
  LstmCell<double> cell(gate, 1, forget);
  const double w[4] = {p.wi, p.wc, p.wf, p.wo};
  const double u[4] = {p.ui, p.uc, p.uf, p.uo};
  const double b[4] = {p.bi, p.bc, p.bf, p.bo};
  for (int g = 0; g < 4; ++g) {
    cell.input_weights(g)[0] = w[g];
    cell.recurrent_weights(g)[0] = u[g];
    cell.bias(g)[0] = b[g];
  }
  cell.peephole()[0] = p.vo;
  return cell;
}

Outcome criterion2() {
  Rng rng(7261);
  const auto draw = [&rng] { return 3.0 * (rng.uniform() - 0.5); };
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ScalarParams p{draw(), draw(), draw(), draw(), draw(), draw(), draw(),
                         draw(), draw(), draw(), draw(), draw(), draw()};
    const bool forget = rng.uniform() < 0.5;
    LstmCell<double> cell = scalar_cell(p, forget);

    double C = 2.0 * (rng.uniform() - 0.5), h = 2.0 * (rng.uniform() - 0.5);
    LstmState<double> state;
    state.C = TensorT<double>({1});
    state.h = TensorT<double>({1});
    state.C[0] = C;
    state.h[0] = h;
    for (int t = 0; t < 3; ++t) {
      const double x = 2.0 * (rng.uniform() - 0.5);
      TensorT<double> xt({1});
      xt[0] = x;
      auto [out, next] = cell.step(xt, state, nullptr);
      scalar_step(p, x, forget, C, h);
      worst = std::max({worst, std::fabs(next.C[0] - C), std::fabs(out[0] - h)});
      state = std::move(next);
    }
  }

  // Legacy carry: with a zero candidate branch the cell state never moves.
  const ScalarParams zero_candidate{0.8, 0.8, 0.8, 0.0, 0.0, 0.0, 0.8,
                                    0.8, 0.8, 0.8, 0.8, 0.8, 0.8};
  LstmCell<double> legacy = scalar_cell(zero_candidate, false);
  LstmState<double> state;
  state.C = TensorT<double>({1});
  state.h = TensorT<double>({1});
  state.C[0] = 0.8125;
  state.h[0] = 0.25;
  bool carry_exact = true;
  TensorT<double> x({1});
  for (int t = 0; t < 10; ++t) {
    x[0] = 1.5 * (rng.uniform() - 0.5);
    auto [out, next] = legacy.step(x, state, nullptr);
    carry_exact = carry_exact && next.C[0] == 0.8125;
    state = std::move(next);
  }

  // Forget-gate cell with f < 1 and zero candidate: strict decay instead.
  LstmCell<double> gated = scalar_cell(zero_candidate, true);
  state.C[0] = 1.5;
  state.h[0] = 0.25;
  bool decays = true;
  double prev = 1.5;
  for (int t = 0; t < 8; ++t) {
    x[0] = 1.5 * (rng.uniform() - 0.5);
    auto [out, next] = gated.step(x, state, nullptr);
    decays = decays && std::fabs(next.C[0]) < std::fabs(prev);
    prev = next.C[0];
    state = std::move(next);
  }

  Outcome o;
  o.pass = worst <= 1e-12 && carry_exact && decays;
  o.detail = fmt("1000 trials max dev %.2e, legacy carry %s, forget decay %s", worst,
                 carry_exact ? "exact" : "BROKEN", decays ? "strict" : "BROKEN");
  return o;
}

// --------------------------------------------------------------------------
// criterion 3: motion beats the single-frame baseline on the blob dataset

std::vector<Sample32> explode(const std::vector<Sample32>& sequences) {
  std::vector<Sample32> out;
  for (const Sample32& s : sequences) {
    for (const TensorT<float>& f : s.frames) {
      Sample32 single;
      single.label = s.label;
      single.instance_id = s.instance_id;
      single.frames.push_back(f);
      out.push_back(std::move(single));
    }
  }
  return out;
}

Outcome criterion3() {
  const auto start = std::chrono::steady_clock::now();

  SyntheticSpec spec;
  spec.num_instances = 512;
  spec.step_deg = 30.0;  // within reach of a 3x3 gate on the 8x8 feature map
  const SyntheticDataset data = synth_generate(spec, 1);

  ModelConfig cfg = tiny_config();
  cfg.input_h = cfg.input_w = 32;
  cfg.num_classes = 2;
  cfg.fc_dim = 32;
  cfg.dropout_p = 0.0;
  cfg.lstm_depth = 8;
  cfg.lstm_filter = 3;

  double baseline_max = 0.0, motion_min = 1.0;
  bool all_hold = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    {  // single-frame baseline
      std::vector<Sample32> train = explode(data.train);
      std::vector<Sample32> val = explode(data.test);
      const std::vector<double> means = compute_channel_means(train);
      subtract_channel_means(train, means);
      subtract_channel_means(val, means);
      std::unique_ptr<Model<float>> model = build_baseline<float>(cfg);
      init_weights(*model, "he", seed);
      TrainConfig tc;
      tc.learning_rate = 1e-4;
      tc.epochs = 15;
      tc.batch_size = 32;
      tc.seed = seed;
      const TrainResult r = train_loop(*model, train, val, tc, nullptr);
      baseline_max = std::max(baseline_max, r.best_val_acc);
      all_hold = all_hold && r.best_val_acc <= 0.60;
    }
    {  // 2-frame conv-gate motion model
      std::vector<Sample32> train = data.train;
      std::vector<Sample32> val = data.test;
      const std::vector<double> means = compute_channel_means(train);
      subtract_channel_means(train, means);
      subtract_channel_means(val, means);
      std::unique_ptr<Model<float>> model = build_motion<float>(cfg);
      init_weights(*model, "he", seed);
      TrainConfig tc;
      tc.learning_rate = 2e-2;
      tc.epochs = 40;
      tc.batch_size = 32;
      tc.seed = seed;
      const TrainResult r = train_loop(*model, train, val, tc, nullptr);
      motion_min = std::min(motion_min, r.best_val_acc);
      all_hold = all_hold && r.best_val_acc >= 0.90;
    }
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Outcome o;
  o.pass = all_hold && seconds < 900.0;
  o.detail = fmt("3 seeds: baseline <= %.1f%% (need <=60), motion >= %.1f%% (need >=90), %.0fs",
                 100.0 * baseline_max, 100.0 * motion_min, seconds);
  return o;
}

// --------------------------------------------------------------------------
// criterion 4: conv gates use fewer parameters than fc gates

std::int64_t parse_count(const std::string& output, const std::string& key) {
  const std::size_t at = output.find(key);
  if (at == std::string::npos) return -1;
  return std::strtoll(output.c_str() + at + key.size(), nullptr, 10);
}

Outcome criterion4() {
  // Desk-scale motion config: tiny trunk at 32x32, gate depth 8, filter 3.
  const RunResult r = run_cli(
      "params --model motion --preset tiny --input-size 32 --channels 1 --classes 2 "
      "--lstm-depth 8 --lstm-filter 3");
  if (r.code != 0) return {false, fmt("params exited %d", r.code)};

  // Closed-form oracle from the gate shapes: trunk 32 -> pools 2/2/1 -> 8x8
  // with 4 feature channels.
  const std::int64_t d = 8, c_in = 4, k2 = 9, fh = 8, fw = 8;
  const std::int64_t conv_cell = 4 * (d * c_in * k2) + 4 * (d * d * k2) + d * d * k2 + 4 * d;
  const std::int64_t flat = c_in * fh * fw;
  const std::int64_t hidden = d * fh * fw;  // fc hidden sized to match the conv state
  const std::int64_t fc_cell =
      4 * hidden * flat + 4 * hidden * hidden + hidden * hidden + 4 * hidden;

  const std::int64_t got_conv = parse_count(r.output, "lstm_cell conv-gate params=");
  const std::int64_t got_fc = parse_count(r.output, "lstm_cell fc-gate params=");
  const std::int64_t got_total = parse_count(r.output, "total params=");

  ModelConfig cfg = tiny_config();
  cfg.input_h = cfg.input_w = 32;
  cfg.num_classes = 2;
  cfg.lstm_depth = 8;
  cfg.lstm_filter = 3;
  std::unique_ptr<Model<double>> model = build_motion<double>(cfg);
  std::int64_t lib_total = 0;
  for (const ParamRef<double>& p : model->params()) lib_total += p.value->size();

  Outcome o;
  o.pass = got_conv == conv_cell && got_fc == fc_cell && got_total == lib_total &&
           got_conv < got_fc;
  o.detail = fmt("conv cell %lld (oracle %lld), fc cell %lld (oracle %lld), total %lld",
                 static_cast<long long>(got_conv), static_cast<long long>(conv_cell),
                 static_cast<long long>(got_fc), static_cast<long long>(fc_cell),
                 static_cast<long long>(got_total));
  return o;
}

// --------------------------------------------------------------------------
// criterion 5: protocol constructions against brute-force oracles

std::vector<std::vector<FrameRecord>> groups_of(const std::vector<FrameRecord>& records) {
  std::vector<std::vector<FrameRecord>> groups;
  std::map<std::string, std::size_t> at;
  for (const FrameRecord& r : records) {
    auto [it, fresh] = at.try_emplace(r.instance_id, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(r);
  }
  for (auto& g : groups) {
    std::sort(g.begin(), g.end(),
              [](const FrameRecord& a, const FrameRecord& b) { return a.frame_index < b.frame_index; });
  }
  return groups;
}

double circ_dist(double a, double b) {
  const double d = std::fmod(std::fabs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

Outcome criterion5() {
  Rng rng(5150);
  std::vector<FrameRecord> records;
  for (int i = 0; i < 1000; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "i%04d", i);
    const int frames = 2 + static_cast<int>(rng.uniform_int(7));  // some instances stay < n
    std::set<int> indices;
    while (static_cast<int>(indices.size()) < frames) {
      indices.insert(static_cast<int>(rng.uniform_int(41)));
    }
    for (int f : indices) {
      FrameRecord r;
      r.path = std::string(id) + ".pgm";
      r.label = i % 7;
      r.instance_id = id;
      r.frame_index = f;
      r.angle_deg = rng.uniform() * 360.0;
      r.has_angle = true;
      records.push_back(std::move(r));
    }
  }
  rng.shuffle(records);
  const std::vector<std::vector<FrameRecord>> groups = groups_of(records);

  // short {t-17, t}
  std::vector<SequenceDescriptor> want_short;
  for (const auto& g : groups) {
    for (const FrameRecord& anchor : g) {
      int partner = g.front().frame_index;
      for (const FrameRecord& r : g) {
        if (r.frame_index <= anchor.frame_index - 17) partner = std::max(partner, r.frame_index);
      }
      want_short.push_back({anchor.label, anchor.instance_id, {partner, anchor.frame_index}});
    }
  }
  const bool short_ok = make_short_timeframe(records, 17) == want_short;

  // wide viewpoint, n = 2 (antipode) and n = 3 (60 degree steps)
  bool wide_ok = true;
  for (int n : {2, 3}) {
    std::vector<SequenceDescriptor> want;
    int want_skipped = 0;
    const double spacing = n == 2 ? 180.0 : 180.0 / n;
    for (const auto& g : groups) {
      if (static_cast<int>(g.size()) < n) {
        want_skipped += static_cast<int>(g.size());
        continue;
      }
      for (const FrameRecord& anchor : g) {
        SequenceDescriptor d{anchor.label, anchor.instance_id, {}};
        for (int k = 0; k < n; ++k) {
          const double target = std::fmod(anchor.angle_deg + k * spacing, 360.0);
          int best = -1;
          double best_dist = 1e300;
          for (const FrameRecord& r : g) {
            const double dist = circ_dist(r.angle_deg, target);
            if (dist < best_dist || (dist == best_dist && r.frame_index < best)) {
              best = r.frame_index;
              best_dist = dist;
            }
          }
          d.frame_indices.push_back(best);
        }
        want.push_back(std::move(d));
      }
    }
    const WideViewpointResult got = make_wide_viewpoint(records, n);
    wide_ok = wide_ok && got.sequences == want && got.skipped == want_skipped;
  }

  // prior frames {t-20, t-10, t} with original-crop fallback
  std::vector<SequenceDescriptor> want_prior;
  for (const auto& g : groups) {
    std::set<int> present;
    for (const FrameRecord& r : g) present.insert(r.frame_index);
    for (const FrameRecord& anchor : g) {
      SequenceDescriptor d{anchor.label, anchor.instance_id, {}};
      for (int j = 2; j >= 0; --j) {
        const int at = anchor.frame_index - 10 * j;
        d.frame_indices.push_back(present.count(at) ? at : anchor.frame_index);
      }
      want_prior.push_back(std::move(d));
    }
  }
  const bool prior_ok = make_prior_frame_sequences(records, 3, 10) == want_prior;

  // Golden files: the descriptor serialization is lossless and stable.
  const fs::path dir = fresh_dir("golden");
  const std::string path_a = (dir / "a.csv").string();
  const std::string path_b = (dir / "b.csv").string();
  save_descriptors(path_a, want_short);
  save_descriptors(path_b, want_short);
  std::ifstream fa(path_a), fb(path_b);
  std::stringstream ba, bb;
  ba << fa.rdbuf();
  bb << fb.rdbuf();
  const bool golden_ok = load_descriptors(path_a) == want_short && ba.str() == bb.str();

  Outcome o;
  o.pass = short_ok && wide_ok && prior_ok && golden_ok;
  o.detail = fmt("1000 instances: short %s, wide %s, prior %s, files %s",
                 short_ok ? "exact" : "MISMATCH", wide_ok ? "exact" : "MISMATCH",
                 prior_ok ? "exact" : "MISMATCH", golden_ok ? "stable" : "MISMATCH");
  return o;
}

// --------------------------------------------------------------------------
// criterion 6: inference-mode identities

Outcome criterion6() {
  Rng rng(6001);
  ModelConfig cfg = tiny_config();
  cfg.dropout_p = 0.0;

  std::unique_ptr<Model<double>> motion = build_motion<double>(cfg);
  init_weights(*motion, "he", 61);
  std::unique_ptr<Model<double>> baseline = build_baseline<double>(cfg);
  init_weights(*baseline, "he", 62);

  const auto frame = [&rng] {
    TensorT<double> f({1, 8, 8});
    for (std::int64_t i = 0; i < f.size(); ++i) f[i] = rng.uniform() - 0.5;
    return f;
  };
  const auto max_diff = [](const TensorT<double>& a, const TensorT<double>& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
  };

  // Reversal invariance of bidirectional testing.
  SequenceSample<double> seq;
  seq.frames = {frame(), frame()};
  SequenceSample<double> rev;
  rev.frames = {seq.frames[1], seq.frames[0]};
  const double rev_diff =
      max_diff(bidirectional_test_inference(*motion, seq), bidirectional_test_inference(*motion, rev));

  // On a palindrome both orders coincide, so bidi testing is direct testing.
  SequenceSample<double> pal;
  pal.frames = {seq.frames[0], seq.frames[0]};
  const double pal_diff =
      max_diff(bidirectional_test_inference(*motion, pal), motion->predict(pal.frames));

  // Average pooling ignores frame order.
  SequenceSample<double> three;
  three.frames = {frame(), frame(), frame()};
  SequenceSample<double> rotated;
  rotated.frames = {three.frames[2], three.frames[0], three.frames[1]};
  const double perm_diff = max_diff(pooled_baseline_inference(*baseline, three, Pooling::kAverage),
                                    pooled_baseline_inference(*baseline, rotated, Pooling::kAverage));

  // At length one both poolings reduce to plain single-frame inference (max
  // pooling renormalizes, so it may move the entries by a rounding ulp).
  SequenceSample<double> one;
  one.frames = {frame()};
  const double single_diff =
      std::max(max_diff(pooled_baseline_inference(*baseline, one, Pooling::kAverage),
                        baseline->predict(one.frames)),
               max_diff(pooled_baseline_inference(*baseline, one, Pooling::kMax),
                        baseline->predict(one.frames)));

  // Every mode emits a probability vector.
  double sum_err = 0.0;
  const auto check_sum = [&sum_err](const TensorT<double>& probs) {
    double s = 0.0;
    for (std::int64_t i = 0; i < probs.size(); ++i) s += probs[i];
    sum_err = std::max(sum_err, std::fabs(s - 1.0));
  };
  check_sum(motion->predict(seq.frames));
  check_sum(bidirectional_test_inference(*motion, seq));
  check_sum(baseline->predict(one.frames));
  check_sum(pooled_baseline_inference(*baseline, three, Pooling::kAverage));
  check_sum(pooled_baseline_inference(*baseline, three, Pooling::kMax));

  Outcome o;
  o.pass = rev_diff <= 1e-15 && pal_diff <= 1e-15 && perm_diff <= 1e-12 &&
           single_diff <= 1e-14 && sum_err <= 1e-6;
  o.detail = fmt("reversal %.1e, palindrome %.1e, permutation %.1e, length-1 %.1e, sum %.1e",
                 rev_diff, pal_diff, perm_diff, single_diff, sum_err);
  return o;
}

// --------------------------------------------------------------------------
// criterion 7: bitwise deterministic training, any thread count

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> names;
  for (const auto& entry : fs::directory_iterator(a)) names.push_back(entry.path().filename());
  std::sort(names.begin(), names.end());
  std::size_t b_count = 0;
  for (const auto& entry : fs::directory_iterator(b)) {
    (void)entry;
    ++b_count;
  }
  if (b_count != names.size()) return false;
  for (const fs::path& name : names) {
    if (!same_bytes(a / name, b / name)) return false;
  }
  return true;
}

Outcome criterion7() {
  const std::string args =
      "train --model motion --data synth --preset tiny --synth-instances 8 --epochs 2 "
      "--batch 4 --seed 9 --out ";
  const fs::path a = fresh_dir("det-a"), b = fresh_dir("det-b"), c = fresh_dir("det-c");
  const RunResult ra = run_cli(args + a.string());
  const RunResult rb = run_cli(args + b.string());
  const RunResult rc = run_cli(args + c.string(), "CONVLSTM_THREADS=4 ");
  if (ra.code != 0 || rb.code != 0 || rc.code != 0) {
    return {false, fmt("train exits %d/%d/%d", ra.code, rb.code, rc.code)};
  }
  const bool ab = same_tree(a, b);
  const bool ac = same_tree(a, c);
  Outcome o;
  o.pass = ab && ac;
  o.detail = fmt("snapshot+log bytes: rerun %s, CONVLSTM_THREADS=4 %s",
                 ab ? "identical" : "DIFFER", ac ? "identical" : "DIFFER");
  return o;
}

// --------------------------------------------------------------------------
// criterion 8: cross-validation reporting

Outcome criterion8() {
  const auto metrics = [](double acc) {
    Metrics m;
    m.accuracy = acc;
    return m;
  };
  const CrossValReport headline =
      crossval_report({metrics(0.8006), metrics(0.8202), metrics(0.8398)});
  const CrossValReport pair = crossval_report({metrics(0.8), metrics(0.9)});

  // Independent sample-std recomputation.
  const double mean = (0.8006 + 0.8202 + 0.8398) / 3.0;
  double ss = 0.0;
  for (double v : {0.8006, 0.8202, 0.8398}) ss += (v - mean) * (v - mean);
  const double want_std = std::sqrt(ss / 2.0);
  const bool numbers_ok = std::fabs(headline.mean_accuracy - mean) < 5e-5 &&
                          std::fabs(headline.std_accuracy - want_std) < 5e-5;

  const bool style_ok = format_mean_std(headline) == "82.02 ± 1.96" &&
                        format_mean_std(pair) == "85.00 ± 7.07" &&
                        report_table(headline).find("82.02 ± 1.96") != std::string::npos;

  Outcome o;
  o.pass = numbers_ok && style_ok;
  o.detail = fmt("mean/std %s, style '%s'", numbers_ok ? "match" : "MISMATCH",
                 format_mean_std(headline).c_str());
  return o;
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Entry entries[] = {
      {1, "gradient correctness", criterion1},
      {2, "lstm semantic fidelity", criterion2},
      {3, "motion beats single-frame baseline", criterion3},
      {4, "conv-gate parameter economy", criterion4},
      {5, "sequence-protocol golden files", criterion5},
      {6, "inference-mode identities", criterion6},
      {7, "bitwise-deterministic training", criterion7},
      {8, "cross-validation reporting", criterion8},
  };

  bool all = true;
  for (const Entry& e : entries) {
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    all = all && o.pass;
    std::printf("criterion %d %s %s: %s\n", e.id, o.pass ? "PASS" : "FAIL", e.name,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
