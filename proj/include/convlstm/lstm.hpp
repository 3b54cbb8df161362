#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "convlstm/kernels.hpp"
#include "convlstm/layers.hpp"
#include "convlstm/tensor.hpp"

namespace convlstm {

// How the four gates map their inputs: dense matrices on flattened vectors,
// or stride-1 same-padded convolutions that preserve the spatial layout.
enum class GateKind { kFullyConnected, kConvolutional };

struct GateTransformSpec {
  GateKind kind = GateKind::kConvolutional;
  int hidden_dim = 0;   // fully connected: gate output length
  int filter_size = 5;  // convolutional: square kernel, odd
  int depth = 256;      // convolutional: gate output channels

  void validate() const {
    if (kind == GateKind::kFullyConnected) {
      if (hidden_dim < 1) throw ConfigError("gate hidden_dim must be >= 1");
    } else {
      if (depth < 1) throw ConfigError("gate depth must be >= 1");
      if (filter_size < 1 || filter_size % 2 == 0) {
        throw ConfigError("gate filter_size must be odd so state shapes recur");
      }
    }
  }
};

template <typename T>
struct LstmState {
  TensorT<T> C, h;
};

// Everything one step needs to reproduce its gradients.
template <typename T>
struct LstmStepCache {
  TensorT<T> x, h_prev, C_prev;
  TensorT<T> i, c_hat, f, o;  // post-activation gate values
  TensorT<T> C, tanh_C;
};

// One recurrent cell: input, candidate, forget and output gates, each with an
// input transform W, a recurrent transform U and a bias b, plus the peephole
// V from the fresh cell state into the output gate. With use_forget_gate off
// the carry is the legacy unbounded form C_t = i*c_hat + C_{t-1}.
template <typename T>
class LstmCell {
 public:
  LstmCell() = default;
  // input_dim: vector length (fully connected) or channel count (conv).
  LstmCell(const GateTransformSpec& gate, int input_dim, bool use_forget_gate);

  std::pair<TensorT<T>, LstmState<T>> step(const TensorT<T>& x, const LstmState<T>& prev,
                                           LstmStepCache<T>* cache) const;

  // All-zero C and h shaped to match the gate response to x0.
  LstmState<T> zero_state(const TensorT<T>& x0) const;

  // Hidden outputs for every timestep, starting from init.
  std::vector<TensorT<T>> unroll(const std::vector<TensorT<T>>& xs, const LstmState<T>& init,
                                 std::vector<LstmStepCache<T>>* caches) const;

  // Backpropagation through time. grad_hs[t] is the upstream gradient on
  // h_t; parameter gradients accumulate in place and the per-timestep input
  // gradients come back.
  std::vector<TensorT<T>> bptt(const std::vector<LstmStepCache<T>>& caches,
                               const std::vector<TensorT<T>>& grad_hs);

  std::vector<ParamRef<T>> params(const std::string& prefix);
  void zero_grads();

  const GateTransformSpec& gate() const { return gate_; }
  int input_dim() const { return input_dim_; }
  bool use_forget_gate() const { return use_forget_gate_; }

  static constexpr int kNumGates = 4;
  static constexpr std::array<const char*, kNumGates> kGateNames = {"i", "c", "f", "o"};

  TensorT<T>& input_weights(int g) { return w_[g]; }
  TensorT<T>& recurrent_weights(int g) { return u_[g]; }
  TensorT<T>& bias(int g) { return b_[g]; }
  TensorT<T>& peephole() { return v_o_; }

 private:
  TensorT<T> apply_input(int g, const TensorT<T>& x) const;      // W_g x + b_g
  TensorT<T> apply_recurrent(int g, const TensorT<T>& h) const;  // U_g h
  TensorT<T> apply_peephole(const TensorT<T>& c) const;          // V_o C
  // Accumulates any non-null gradient of a gate transform, both gate kinds.
  void transform_backward(const TensorT<T>& in, const TensorT<T>& w, bool input_transform,
                          const TensorT<T>& grad_pre, TensorT<T>* grad_in, TensorT<T>* grad_w,
                          TensorT<T>* grad_b) const;
  TensorT<T> gate_shaped(const TensorT<T>& x) const;  // zero tensor, gate output shape
  ConvSpec input_spec() const;
  ConvSpec state_spec() const;

  GateTransformSpec gate_;
  int input_dim_ = 0;
  bool use_forget_gate_ = true;

  std::array<TensorT<T>, kNumGates> w_, u_, b_;
  TensorT<T> v_o_;
  std::array<TensorT<T>, kNumGates> grad_w_, grad_u_, grad_b_;
  TensorT<T> grad_v_o_;
};

enum class MergeMode { kConcatChannels, kElementwiseSum };

template <typename T>
struct BidirCache {
  std::vector<LstmStepCache<T>> fwd_steps, bwd_steps;
  std::vector<int> final_shape;  // shape of each branch's final h
};

// Runs one cell over xs in order and the other over xs reversed, then merges
// the two final hidden states: channel concatenation (forward first) or
// elementwise sum.
template <typename T>
TensorT<T> bidirectional_run(const std::vector<TensorT<T>>& xs, const LstmCell<T>& fwd,
                             const LstmCell<T>& bwd, MergeMode merge,
                             BidirCache<T>* cache);

// Splits the merged gradient, runs BPTT on both branches and returns the
// summed per-timestep input gradients in the original frame order.
template <typename T>
std::vector<TensorT<T>> bidirectional_backward(LstmCell<T>& fwd, LstmCell<T>& bwd,
                                               const BidirCache<T>& cache, MergeMode merge,
                                               const TensorT<T>& grad_merged);

}  // namespace convlstm
