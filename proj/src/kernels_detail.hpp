#pragma once

// Argument validation shared by the serial reference and the OpenMP kernels.

#include <cstdint>
#include <string>
#include <vector>

#include "convlstm/kernels.hpp"
#include "convlstm/tensor.hpp"

namespace convlstm {
namespace kernels {
namespace detail {

template <typename T>
inline void check_conv_forward(const TensorT<T>& input, const TensorT<T>& weights,
                               const TensorT<T>& bias, const ConvSpec& spec) {
  spec.validate();
  if (input.rank() != 3) throw DimensionError("conv input must be rank 3 (C,H,W)");
  if (input.extent(0) != spec.in_channels) {
    throw DimensionError("conv input axis 0 (channels): expected " +
                         std::to_string(spec.in_channels) + ", got " +
                         std::to_string(input.extent(0)));
  }
  if (weights.rank() != 4 || weights.extent(0) != spec.out_channels ||
      weights.extent(1) != spec.in_channels || weights.extent(2) != spec.filter_size ||
      weights.extent(3) != spec.filter_size) {
    throw DimensionError("conv weights must be [" + std::to_string(spec.out_channels) + "," +
                         std::to_string(spec.in_channels) + "," +
                         std::to_string(spec.filter_size) + "," +
                         std::to_string(spec.filter_size) + "], got " +
                         TensorT<T>::shape_string(weights.shape()));
  }
  if (bias.rank() != 1 || bias.extent(0) != spec.out_channels) {
    throw DimensionError("conv bias axis 0: expected " + std::to_string(spec.out_channels) +
                         ", got " + TensorT<T>::shape_string(bias.shape()));
  }
}

template <typename T>
inline void check_conv_backward(const TensorT<T>& input, const TensorT<T>& weights,
                                const ConvSpec& spec, const TensorT<T>& grad_out,
                                TensorT<T>* grad_input, TensorT<T>* grad_weights,
                                TensorT<T>* grad_bias) {
  spec.validate();
  if (input.rank() != 3) throw DimensionError("conv input must be rank 3 (C,H,W)");
  if (input.extent(0) != spec.in_channels) {
    throw DimensionError("conv input axis 0 (channels): expected " +
                         std::to_string(spec.in_channels));
  }
  const int oh = spec.out_extent(input.extent(1));
  const int ow = spec.out_extent(input.extent(2));
  if (grad_out.rank() != 3 || grad_out.extent(0) != spec.out_channels ||
      grad_out.extent(1) != oh || grad_out.extent(2) != ow) {
    throw DimensionError("conv grad_out: expected [" + std::to_string(spec.out_channels) + "," +
                         std::to_string(oh) + "," + std::to_string(ow) + "], got " +
                         TensorT<T>::shape_string(grad_out.shape()));
  }
  if (grad_input != nullptr) require_same_shape(*grad_input, input, "conv grad_input");
  if (grad_weights != nullptr) require_same_shape(*grad_weights, weights, "conv grad_weights");
  if (grad_bias != nullptr && (grad_bias->rank() != 1 || grad_bias->extent(0) != spec.out_channels)) {
    throw DimensionError("conv grad_bias axis 0: expected " + std::to_string(spec.out_channels));
  }
}

template <typename T>
inline void check_pool_forward(const TensorT<T>& input, int window, int stride) {
  if (window < 1 || stride < 1) throw ConfigError("pool window and stride must be >= 1");
  if (input.rank() != 3) throw DimensionError("pool input must be rank 3 (C,H,W)");
  if (window > input.extent(1) || window > input.extent(2)) {
    throw DimensionError("pool window " + std::to_string(window) +
                         " larger than input extent " +
                         TensorT<T>::shape_string(input.shape()));
  }
}

template <typename T>
inline void check_pool_backward(const std::vector<std::int64_t>& argmax,
                                const std::vector<int>& input_shape,
                                const TensorT<T>& grad_out) {
  if (input_shape.size() != 3) throw DimensionError("pool input shape must be rank 3");
  if (grad_out.rank() != 3) throw DimensionError("pool grad_out must be rank 3");
  if (static_cast<std::int64_t>(argmax.size()) != grad_out.size()) {
    throw DimensionError("pool index map size " + std::to_string(argmax.size()) +
                         " does not match grad_out size " + std::to_string(grad_out.size()));
  }
  if (grad_out.extent(0) != input_shape[0]) {
    throw DimensionError("pool grad_out axis 0 (channels) does not match input shape");
  }
  const std::int64_t plane = static_cast<std::int64_t>(input_shape[1]) * input_shape[2];
  const std::int64_t cells = static_cast<std::int64_t>(grad_out.extent(1)) * grad_out.extent(2);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(argmax.size()); ++i) {
    const std::int64_t c = i / cells;
    if (argmax[static_cast<std::size_t>(i)] < c * plane ||
        argmax[static_cast<std::size_t>(i)] >= (c + 1) * plane) {
      throw DimensionError("pool index map entry " + std::to_string(i) +
                           " outside its channel plane; stale map?");
    }
  }
}

template <typename T>
inline void check_matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul operands must be rank 2");
  if (a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul inner axes disagree: " + std::to_string(a.extent(1)) +
                         " vs " + std::to_string(b.extent(0)));
  }
}

template <typename T>
inline void check_matvec(const TensorT<T>& w, const TensorT<T>& x) {
  if (w.rank() != 2) throw DimensionError("matvec weights must be rank 2");
  if (x.rank() != 1) throw DimensionError("matvec input must be rank 1");
  if (w.extent(1) != x.extent(0)) {
    throw DimensionError("matvec axis 1: expected " + std::to_string(w.extent(1)) + ", got " +
                         std::to_string(x.extent(0)));
  }
}

template <typename T>
inline void check_lcn(const TensorT<T>& x, int window, T epsilon) {
  if (x.rank() != 3) throw DimensionError("lcn input must be rank 3 (C,H,W)");
  if (window < 1 || window % 2 == 0) throw ConfigError("lcn window must be odd and >= 1");
  if (epsilon <= T(0)) throw ConfigError("lcn epsilon must be > 0");
}

}  // namespace detail
}  // namespace kernels
}  // namespace convlstm
