#include "convlstm/layers.hpp"

#include <cmath>

namespace convlstm {

template <typename T>
ConvLayer<T>::ConvLayer(const ConvSpec& spec) : spec_(spec) {
  spec_.validate();
  weights_ = TensorT<T>(
      {spec_.out_channels, spec_.in_channels, spec_.filter_size, spec_.filter_size});
  bias_ = TensorT<T>({spec_.out_channels});
  grad_weights_ = TensorT<T>(weights_.shape());
  grad_bias_ = TensorT<T>(bias_.shape());
}

template <typename T>
TensorT<T> ConvLayer<T>::forward(const TensorT<T>& x, Cache* cache) const {
  if (cache != nullptr) cache->input = x;
  return kernels::conv2d_forward(x, weights_, bias_, spec_);
}

template <typename T>
TensorT<T> ConvLayer<T>::backward(const Cache& cache, const TensorT<T>& grad_out) {
  TensorT<T> grad_input(cache.input.shape());
  kernels::conv2d_backward_acc(cache.input, weights_, spec_, grad_out, &grad_input,
                               &grad_weights_, &grad_bias_);
  return grad_input;
}

template <typename T>
std::vector<ParamRef<T>> ConvLayer<T>::params(const std::string& prefix) {
  return {{prefix + ".weights", &weights_, &grad_weights_},
          {prefix + ".bias", &bias_, &grad_bias_}};
}

template <typename T>
void ConvLayer<T>::zero_grads() {
  grad_weights_.zero();
  grad_bias_.zero();
}

template <typename T>
FcLayer<T>::FcLayer(int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("fc dimensions must be >= 1");
  weights_ = TensorT<T>({out_dim_, in_dim_});
  bias_ = TensorT<T>({out_dim_});
  grad_weights_ = TensorT<T>(weights_.shape());
  grad_bias_ = TensorT<T>(bias_.shape());
}

template <typename T>
TensorT<T> FcLayer<T>::forward(const TensorT<T>& x, Cache* cache) const {
  if (cache != nullptr) cache->input = x;
  TensorT<T> out = kernels::matvec(weights_, x);
  add_into(out, bias_);
  return out;
}

template <typename T>
TensorT<T> FcLayer<T>::backward(const Cache& cache, const TensorT<T>& grad_out) {
  add_into(grad_bias_, grad_out);
  kernels::matvec_backward_weights_acc(cache.input, grad_out, &grad_weights_);
  TensorT<T> grad_input(cache.input.shape());
  kernels::matvec_backward_input_acc(weights_, grad_out, &grad_input);
  return grad_input;
}

template <typename T>
std::vector<ParamRef<T>> FcLayer<T>::params(const std::string& prefix) {
  return {{prefix + ".weights", &weights_, &grad_weights_},
          {prefix + ".bias", &bias_, &grad_bias_}};
}

template <typename T>
void FcLayer<T>::zero_grads() {
  grad_weights_.zero();
  grad_bias_.zero();
}

template <typename T>
DropoutLayer<T>::DropoutLayer(double p) : p_(p) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
}

template <typename T>
TensorT<T> DropoutLayer<T>::forward(const TensorT<T>& x, Mode mode, Rng* rng,
                                    Cache* cache) const {
  if (mode == Mode::kEval || p_ == 0.0) {
    if (cache != nullptr) cache->mask = TensorT<T>();
    return x;
  }
  if (rng == nullptr) throw ArgumentError("dropout in train mode needs a random stream");
  const T scale = T(1) / static_cast<T>(1.0 - p_);
  TensorT<T> mask(x.shape());
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    mask[i] = rng->uniform() < p_ ? T(0) : scale;
    out[i] = x[i] * mask[i];
  }
  if (cache != nullptr) cache->mask = std::move(mask);
  return out;
}

template <typename T>
TensorT<T> DropoutLayer<T>::backward(const Cache& cache, const TensorT<T>& grad_out) const {
  if (cache.mask.size() == 0) return grad_out;  // identity pass
  return hadamard(grad_out, cache.mask);
}

template <typename T>
TensorT<T> PoolLayer<T>::forward(const TensorT<T>& x, Cache* cache) const {
  PoolResult<T> result = kernels::maxpool_forward(x, window_, stride_);
  if (cache != nullptr) {
    cache->argmax = std::move(result.argmax);
    cache->input_shape = x.shape();
  }
  return std::move(result.output);
}

template <typename T>
TensorT<T> PoolLayer<T>::backward(const Cache& cache, const TensorT<T>& grad_out) const {
  return kernels::maxpool_backward(cache.argmax, cache.input_shape, grad_out);
}

template <typename T>
TensorT<T> LcnLayer<T>::forward(const TensorT<T>& x, Cache* cache) const {
  TensorT<T> mean, inv_std;
  kernels::lcn_stats(x, window_, epsilon_, &mean, &inv_std);
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) * inv_std[i];
  if (cache != nullptr) {
    cache->input = x;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
TensorT<T> LcnLayer<T>::backward(const Cache& cache, const TensorT<T>& grad_out) const {
  TensorT<T> grad_input(cache.input.shape());
  kernels::lcn_backward_acc(cache.input, cache.mean, cache.inv_std, window_, grad_out,
                            &grad_input);
  return grad_input;
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 1) throw DimensionError("softmax expects a rank-1 tensor");
  const int n = logits.extent(0);
  T max_z = logits[0];
  for (int i = 1; i < n; ++i) max_z = std::max(max_z, logits[i]);
  TensorT<T> probs(logits.shape());
  T denom = T(0);
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - max_z);
    denom += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= denom;
  return probs;
}

template <typename T>
SoftmaxResult<T> softmax_cross_entropy(const TensorT<T>& logits, int label) {
  if (logits.rank() != 1) throw DimensionError("softmax expects a rank-1 tensor");
  const int n = logits.extent(0);
  if (label < 0 || label >= n) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(n) + " classes");
  }
  T max_z = logits[0];
  for (int i = 1; i < n; ++i) max_z = std::max(max_z, logits[i]);
  TensorT<T> probs(logits.shape());
  T denom = T(0);
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - max_z);
    denom += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= denom;
  SoftmaxResult<T> result;
  // loss = -log probs[label] = logsumexp(z) - z[label]; the second form keeps
  // extreme logits from rounding the probability to zero first.
  result.loss = std::log(denom) - (logits[label] - max_z);
  result.grad_logits = probs;
  result.grad_logits[label] -= T(1);
  result.probs = std::move(probs);
  return result;
}

#define CONVLSTM_INSTANTIATE_LAYERS(T)                                        \
  template class ConvLayer<T>;                                                \
  template class FcLayer<T>;                                                  \
  template class DropoutLayer<T>;                                             \
  template class PoolLayer<T>;                                                \
  template class LcnLayer<T>;                                                 \
  template TensorT<T> softmax<T>(const TensorT<T>&);                          \
  template SoftmaxResult<T> softmax_cross_entropy<T>(const TensorT<T>&, int);

CONVLSTM_INSTANTIATE_LAYERS(float)
CONVLSTM_INSTANTIATE_LAYERS(double)

#undef CONVLSTM_INSTANTIATE_LAYERS

}  // namespace convlstm
