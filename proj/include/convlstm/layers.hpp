#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convlstm/kernels.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"

namespace convlstm {

enum class Mode { kTrain, kEval };

// Named view of one trainable parameter tensor and its gradient buffer.
template <typename T>
struct ParamRef {
  std::string name;
  TensorT<T>* value;
  TensorT<T>* grad;
};

// Convolutional layer. forward() is const and caches into a caller-owned
// Cache so the same parameters can be applied to many frames; backward()
// accumulates into the gradient buffers.
template <typename T>
class ConvLayer {
 public:
  struct Cache {
    TensorT<T> input;
  };

  ConvLayer() = default;
  explicit ConvLayer(const ConvSpec& spec);

  TensorT<T> forward(const TensorT<T>& x, Cache* cache) const;
  TensorT<T> backward(const Cache& cache, const TensorT<T>& grad_out);

  const ConvSpec& spec() const { return spec_; }
  std::vector<ParamRef<T>> params(const std::string& prefix);
  void zero_grads();

  TensorT<T>& weights() { return weights_; }
  TensorT<T>& bias() { return bias_; }
  const TensorT<T>& grad_weights() const { return grad_weights_; }
  const TensorT<T>& grad_bias() const { return grad_bias_; }

 private:
  ConvSpec spec_;
  TensorT<T> weights_, bias_;
  TensorT<T> grad_weights_, grad_bias_;
};

// Fully connected layer: W x + b on rank-1 inputs.
template <typename T>
class FcLayer {
 public:
  struct Cache {
    TensorT<T> input;
  };

  FcLayer() = default;
  FcLayer(int in_dim, int out_dim);

  TensorT<T> forward(const TensorT<T>& x, Cache* cache) const;
  TensorT<T> backward(const Cache& cache, const TensorT<T>& grad_out);

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  std::vector<ParamRef<T>> params(const std::string& prefix);
  void zero_grads();

  TensorT<T>& weights() { return weights_; }
  TensorT<T>& bias() { return bias_; }

 private:
  int in_dim_ = 0, out_dim_ = 0;
  TensorT<T> weights_, bias_;
  TensorT<T> grad_weights_, grad_bias_;
};

// Inverted dropout: each entry is zeroed with probability p at train time and
// survivors are scaled by 1/(1-p), so evaluation is the identity.
template <typename T>
class DropoutLayer {
 public:
  struct Cache {
    TensorT<T> mask;  // empty in eval mode
  };

  DropoutLayer() = default;
  explicit DropoutLayer(double p);

  TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng, Cache* cache) const;
  TensorT<T> backward(const Cache& cache, const TensorT<T>& grad_out) const;

  double p() const { return p_; }

 private:
  double p_ = 0.0;
};

// Max pooling with recorded winner positions.
template <typename T>
class PoolLayer {
 public:
  struct Cache {
    std::vector<std::int64_t> argmax;
    std::vector<int> input_shape;
  };

  PoolLayer() = default;
  PoolLayer(int window, int stride) : window_(window), stride_(stride) {}

  TensorT<T> forward(const TensorT<T>& x, Cache* cache) const;
  TensorT<T> backward(const Cache& cache, const TensorT<T>& grad_out) const;

  int window() const { return window_; }
  int stride() const { return stride_; }

 private:
  int window_ = 2, stride_ = 2;
};

// Local contrast normalization: per channel, subtract the window-local mean
// and divide by sqrt(window-local variance + epsilon). Non-trainable.
template <typename T>
class LcnLayer {
 public:
  struct Cache {
    TensorT<T> input, mean, inv_std;
  };

  LcnLayer() = default;
  LcnLayer(int window, T epsilon) : window_(window), epsilon_(epsilon) {}

  TensorT<T> forward(const TensorT<T>& x, Cache* cache) const;
  TensorT<T> backward(const Cache& cache, const TensorT<T>& grad_out) const;

  int window() const { return window_; }
  T epsilon() const { return epsilon_; }

 private:
  int window_ = 5;
  T epsilon_ = T(1e-4);
};

// Per-batch dropout randomness: one stream per dropout layer, keyed by
// (seed, epoch, batch, layer ordinal), created on first use and consumed
// sample by sample across the batch. Gradient checks simply pass none.
class DropoutStreams {
 public:
  DropoutStreams(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch)
      : base_(mix_seed(mix_seed(seed, epoch), batch)) {}

  Rng& layer(int ordinal) {
    for (auto& entry : streams_) {
      if (entry.first == ordinal) return entry.second;
    }
    streams_.emplace_back(ordinal, Rng(mix_seed(base_, static_cast<std::uint64_t>(ordinal))));
    return streams_.back().second;
  }

 private:
  std::uint64_t base_;
  std::vector<std::pair<int, Rng>> streams_;
};

template <typename T>
struct SoftmaxResult {
  T loss;
  TensorT<T> probs;
  TensorT<T> grad_logits;  // probs - onehot(label)
};

template <typename T>
SoftmaxResult<T> softmax_cross_entropy(const TensorT<T>& logits, int label);

// Probabilities only (max-subtracted softmax).
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits);

}  // namespace convlstm
