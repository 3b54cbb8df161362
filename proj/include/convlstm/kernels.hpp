#pragma once

#include <cmath>
#include <vector>

#include "convlstm/tensor.hpp"

namespace convlstm {

// Square-kernel 2D convolution geometry. Convolution here means
// cross-correlation: kernels are not flipped.
struct ConvSpec {
  int filter_size = 1;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  int padding = 0;

  void validate() const {
    if (filter_size < 1) throw ConfigError("filter_size must be >= 1");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be >= 1");
    if (padding < 0) throw ConfigError("padding must be >= 0");
  }

  // floor((in + 2*padding - filter_size)/stride) + 1; must stay positive.
  int out_extent(int in_extent) const {
    int numer = in_extent + 2 * padding - filter_size;
    if (numer < 0) {
      throw DimensionError("conv output extent < 1 for input extent " +
                           std::to_string(in_extent));
    }
    return numer / stride + 1;
  }

  static int same_padding(int filter_size) { return (filter_size - 1) / 2; }
};

// ---------------------------------------------------------------------------
// Scalar nonlinearities and their derivative evaluations.

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
inline T sigmoid_deriv(T x) {
  T s = sigmoid(x);
  return s * (T(1) - s);
}

template <typename T>
inline T tanh_deriv(T x) {
  T t = std::tanh(x);
  return T(1) - t * t;
}

// ---------------------------------------------------------------------------
// Elementwise tensor ops (small; always serial).

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "add");
  TensorT<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& src) {
  require_same_shape(dst, src, "add_into");
  for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void axpy_into(TensorT<T>& dst, T alpha, const TensorT<T>& src) {
  require_same_shape(dst, src, "axpy_into");
  for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "hadamard");
  TensorT<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
TensorT<T> map_sigmoid(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

template <typename T>
TensorT<T> map_tanh(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Pooling result: per output cell the winning input position as a linear
// index into the input tensor. Ties break to the lowest linear index.

template <typename T>
struct PoolResult {
  TensorT<T> output;
  std::vector<std::int64_t> argmax;
};

template <typename T>
struct ConvGrads {
  TensorT<T> grad_input;
  TensorT<T> grad_weights;
  TensorT<T> grad_bias;
};

namespace kernels {

// Serial reference implementations: plain nested loops, kept for testing.
namespace serial {

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec);

// Accumulates (+=) into any non-null output; shapes must already match.
template <typename T>
void conv2d_backward_acc(const TensorT<T>& input, const TensorT<T>& weights,
                         const ConvSpec& spec, const TensorT<T>& grad_out,
                         TensorT<T>* grad_input, TensorT<T>* grad_weights,
                         TensorT<T>* grad_bias);

template <typename T>
PoolResult<T> maxpool_forward(const TensorT<T>& input, int window, int stride);

template <typename T>
void maxpool_backward_acc(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_shape, const TensorT<T>& grad_out,
                          TensorT<T>* grad_input);

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> matvec(const TensorT<T>& w, const TensorT<T>& x);

// grad_x += W^T g
template <typename T>
void matvec_backward_input_acc(const TensorT<T>& w, const TensorT<T>& grad_out,
                               TensorT<T>* grad_x);

// grad_w += g x^T
template <typename T>
void matvec_backward_weights_acc(const TensorT<T>& x, const TensorT<T>& grad_out,
                                 TensorT<T>* grad_w);

// Window-local mean and 1/sqrt(var + epsilon), per channel. Out-of-bounds
// window members contribute nothing and are not counted.
template <typename T>
void lcn_stats(const TensorT<T>& x, int window, T epsilon, TensorT<T>* mean,
               TensorT<T>* inv_std);

template <typename T>
void lcn_backward_acc(const TensorT<T>& x, const TensorT<T>& mean, const TensorT<T>& inv_std,
                      int window, const TensorT<T>& grad_out, TensorT<T>* grad_input);

}  // namespace serial

// OpenMP variants. Gather-style loops: each parallel iteration owns its
// output cells, so results are bitwise identical to the serial reference.
namespace omp {

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec);

template <typename T>
void conv2d_backward_acc(const TensorT<T>& input, const TensorT<T>& weights,
                         const ConvSpec& spec, const TensorT<T>& grad_out,
                         TensorT<T>* grad_input, TensorT<T>* grad_weights,
                         TensorT<T>* grad_bias);

template <typename T>
PoolResult<T> maxpool_forward(const TensorT<T>& input, int window, int stride);

template <typename T>
void maxpool_backward_acc(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_shape, const TensorT<T>& grad_out,
                          TensorT<T>* grad_input);

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> matvec(const TensorT<T>& w, const TensorT<T>& x);

template <typename T>
void matvec_backward_input_acc(const TensorT<T>& w, const TensorT<T>& grad_out,
                               TensorT<T>* grad_x);

template <typename T>
void matvec_backward_weights_acc(const TensorT<T>& x, const TensorT<T>& grad_out,
                                 TensorT<T>* grad_w);

template <typename T>
void lcn_stats(const TensorT<T>& x, int window, T epsilon, TensorT<T>* mean,
               TensorT<T>* inv_std);

template <typename T>
void lcn_backward_acc(const TensorT<T>& x, const TensorT<T>& mean, const TensorT<T>& inv_std,
                      int window, const TensorT<T>& grad_out, TensorT<T>* grad_input);

}  // namespace omp

// Dispatchers: OpenMP path when the worker cap allows it, serial otherwise.

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec);

template <typename T>
void conv2d_backward_acc(const TensorT<T>& input, const TensorT<T>& weights,
                         const ConvSpec& spec, const TensorT<T>& grad_out,
                         TensorT<T>* grad_input, TensorT<T>* grad_weights,
                         TensorT<T>* grad_bias);

// Fresh-gradient convenience wrapper around conv2d_backward_acc.
template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const ConvSpec& spec, const TensorT<T>& grad_out);

template <typename T>
PoolResult<T> maxpool_forward(const TensorT<T>& input, int window, int stride);

template <typename T>
void maxpool_backward_acc(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_shape, const TensorT<T>& grad_out,
                          TensorT<T>* grad_input);

template <typename T>
TensorT<T> maxpool_backward(const std::vector<std::int64_t>& argmax,
                            const std::vector<int>& input_shape, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> matvec(const TensorT<T>& w, const TensorT<T>& x);

template <typename T>
void matvec_backward_input_acc(const TensorT<T>& w, const TensorT<T>& grad_out,
                               TensorT<T>* grad_x);

template <typename T>
void matvec_backward_weights_acc(const TensorT<T>& x, const TensorT<T>& grad_out,
                                 TensorT<T>* grad_w);

template <typename T>
void lcn_stats(const TensorT<T>& x, int window, T epsilon, TensorT<T>* mean,
               TensorT<T>* inv_std);

template <typename T>
void lcn_backward_acc(const TensorT<T>& x, const TensorT<T>& mean, const TensorT<T>& inv_std,
                      int window, const TensorT<T>& grad_out, TensorT<T>* grad_input);

}  // namespace kernels
}  // namespace convlstm
