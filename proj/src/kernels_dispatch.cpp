#include "convlstm/kernels.hpp"
#include "convlstm/threading.hpp"

namespace convlstm {
namespace kernels {

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec) {
  return parallel_enabled() ? omp::conv2d_forward(input, weights, bias, spec)
                            : serial::conv2d_forward(input, weights, bias, spec);
}

template <typename T>
void conv2d_backward_acc(const TensorT<T>& input, const TensorT<T>& weights,
                         const ConvSpec& spec, const TensorT<T>& grad_out,
                         TensorT<T>* grad_input, TensorT<T>* grad_weights,
                         TensorT<T>* grad_bias) {
  if (parallel_enabled()) {
    omp::conv2d_backward_acc(input, weights, spec, grad_out, grad_input, grad_weights,
                             grad_bias);
  } else {
    serial::conv2d_backward_acc(input, weights, spec, grad_out, grad_input, grad_weights,
                                grad_bias);
  }
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const ConvSpec& spec, const TensorT<T>& grad_out) {
  ConvGrads<T> grads;
  grads.grad_input = TensorT<T>(input.shape());
  grads.grad_weights = TensorT<T>(weights.shape());
  grads.grad_bias = TensorT<T>({spec.out_channels});
  conv2d_backward_acc(input, weights, spec, grad_out, &grads.grad_input, &grads.grad_weights,
                      &grads.grad_bias);
  return grads;
}

template <typename T>
PoolResult<T> maxpool_forward(const TensorT<T>& input, int window, int stride) {
  return parallel_enabled() ? omp::maxpool_forward(input, window, stride)
                            : serial::maxpool_forward(input, window, stride);
}

template <typename T>
void maxpool_backward_acc(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_shape, const TensorT<T>& grad_out,
                          TensorT<T>* grad_input) {
  if (parallel_enabled()) {
    omp::maxpool_backward_acc(argmax, input_shape, grad_out, grad_input);
  } else {
    serial::maxpool_backward_acc(argmax, input_shape, grad_out, grad_input);
  }
}

template <typename T>
TensorT<T> maxpool_backward(const std::vector<std::int64_t>& argmax,
                            const std::vector<int>& input_shape, const TensorT<T>& grad_out) {
  TensorT<T> grad_input(input_shape);
  maxpool_backward_acc(argmax, input_shape, grad_out, &grad_input);
  return grad_input;
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  return parallel_enabled() ? omp::matmul(a, b) : serial::matmul(a, b);
}

template <typename T>
TensorT<T> matvec(const TensorT<T>& w, const TensorT<T>& x) {
  return parallel_enabled() ? omp::matvec(w, x) : serial::matvec(w, x);
}

template <typename T>
void matvec_backward_input_acc(const TensorT<T>& w, const TensorT<T>& grad_out,
                               TensorT<T>* grad_x) {
  if (parallel_enabled()) {
    omp::matvec_backward_input_acc(w, grad_out, grad_x);
  } else {
    serial::matvec_backward_input_acc(w, grad_out, grad_x);
  }
}

template <typename T>
void matvec_backward_weights_acc(const TensorT<T>& x, const TensorT<T>& grad_out,
                                 TensorT<T>* grad_w) {
  if (parallel_enabled()) {
    omp::matvec_backward_weights_acc(x, grad_out, grad_w);
  } else {
    serial::matvec_backward_weights_acc(x, grad_out, grad_w);
  }
}

template <typename T>
void lcn_stats(const TensorT<T>& x, int window, T epsilon, TensorT<T>* mean,
               TensorT<T>* inv_std) {
  if (parallel_enabled()) {
    omp::lcn_stats(x, window, epsilon, mean, inv_std);
  } else {
    serial::lcn_stats(x, window, epsilon, mean, inv_std);
  }
}

template <typename T>
void lcn_backward_acc(const TensorT<T>& x, const TensorT<T>& mean, const TensorT<T>& inv_std,
                      int window, const TensorT<T>& grad_out, TensorT<T>* grad_input) {
  if (parallel_enabled()) {
    omp::lcn_backward_acc(x, mean, inv_std, window, grad_out, grad_input);
  } else {
    serial::lcn_backward_acc(x, mean, inv_std, window, grad_out, grad_input);
  }
}

#define CONVLSTM_INSTANTIATE_DISPATCH(T)                                                    \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,              \
                                        const TensorT<T>&, const ConvSpec&);               \
  template void conv2d_backward_acc<T>(const TensorT<T>&, const TensorT<T>&,              \
                                       const ConvSpec&, const TensorT<T>&, TensorT<T>*,   \
                                       TensorT<T>*, TensorT<T>*);                          \
  template ConvGrads<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,           \
                                           const ConvSpec&, const TensorT<T>&);            \
  template PoolResult<T> maxpool_forward<T>(const TensorT<T>&, int, int);                  \
  template void maxpool_backward_acc<T>(const std::vector<std::int64_t>&,                  \
                                        const std::vector<int>&, const TensorT<T>&,        \
                                        TensorT<T>*);                                      \
  template TensorT<T> maxpool_backward<T>(const std::vector<std::int64_t>&,                \
                                          const std::vector<int>&, const TensorT<T>&);     \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> matvec<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template void matvec_backward_input_acc<T>(const TensorT<T>&, const TensorT<T>&,         \
                                             TensorT<T>*);                                 \
  template void matvec_backward_weights_acc<T>(const TensorT<T>&, const TensorT<T>&,       \
                                               TensorT<T>*);                               \
  template void lcn_stats<T>(const TensorT<T>&, int, T, TensorT<T>*, TensorT<T>*);         \
  template void lcn_backward_acc<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                    const TensorT<T>&, int, const TensorT<T>&, TensorT<T>*);

CONVLSTM_INSTANTIATE_DISPATCH(float)
CONVLSTM_INSTANTIATE_DISPATCH(double)

#undef CONVLSTM_INSTANTIATE_DISPATCH

}  // namespace kernels
}  // namespace convlstm
