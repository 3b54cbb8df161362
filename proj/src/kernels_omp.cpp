// OpenMP kernels. Gather-style: every parallel iteration writes only its own
// output cells and accumulates serially within each cell, so results are
// bitwise identical to the serial reference for any thread count.

#include <algorithm>
#include <cmath>

#include "convlstm/kernels.hpp"
#include "convlstm/threading.hpp"
#include "kernels_detail.hpp"

namespace convlstm {
namespace kernels {
namespace omp {

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec) {
  detail::check_conv_forward(input, weights, bias, spec);
  const int h = input.extent(1), w = input.extent(2);
  const int oh = spec.out_extent(h), ow = spec.out_extent(w);
  const int k = spec.filter_size, s = spec.stride, p = spec.padding;
  const int co_n = spec.out_channels, ci_n = spec.in_channels;
  TensorT<T> out({co_n, oh, ow});
  const int nthreads = max_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
  for (int co = 0; co < co_n; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T acc = bias[co];
        for (int ci = 0; ci < ci_n; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * s - p + kx;
              if (ix < 0 || ix >= w) continue;
              acc += input(ci, iy, ix) * weights(co, ci, ky, kx);
            }
          }
        }
        out(co, oy, ox) = acc;
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward_acc(const TensorT<T>& input, const TensorT<T>& weights,
                         const ConvSpec& spec, const TensorT<T>& grad_out,
                         TensorT<T>* grad_input, TensorT<T>* grad_weights,
                         TensorT<T>* grad_bias) {
  detail::check_conv_backward(input, weights, spec, grad_out, grad_input, grad_weights,
                              grad_bias);
  const int h = input.extent(1), w = input.extent(2);
  const int oh = grad_out.extent(1), ow = grad_out.extent(2);
  const int k = spec.filter_size, s = spec.stride, p = spec.padding;
  const int co_n = spec.out_channels, ci_n = spec.in_channels;
  const int nthreads = max_threads();

  if (grad_bias != nullptr) {
#pragma omp parallel for schedule(static) num_threads(nthreads)
    for (int co = 0; co < co_n; ++co) {
      T acc = T(0);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) acc += grad_out(co, oy, ox);
      (*grad_bias)[co] += acc;
    }
  }

  if (grad_weights != nullptr) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
    for (int co = 0; co < co_n; ++co) {
      for (int ci = 0; ci < ci_n; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            T acc = T(0);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s - p + ky;
              if (iy < 0 || iy >= h) continue;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * s - p + kx;
                if (ix < 0 || ix >= w) continue;
                acc += grad_out(co, oy, ox) * input(ci, iy, ix);
              }
            }
            (*grad_weights)(co, ci, ky, kx) += acc;
          }
        }
      }
    }
  }

  if (grad_input != nullptr) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
    for (int ci = 0; ci < ci_n; ++ci) {
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          T acc = T(0);
          for (int co = 0; co < co_n; ++co) {
            for (int ky = 0; ky < k; ++ky) {
              const int ny = iy + p - ky;
              if (ny < 0 || ny % s != 0) continue;
              const int oy = ny / s;
              if (oy >= oh) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int nx = ix + p - kx;
                if (nx < 0 || nx % s != 0) continue;
                const int ox = nx / s;
                if (ox >= ow) continue;
                acc += grad_out(co, oy, ox) * weights(co, ci, ky, kx);
              }
            }
          }
          (*grad_input)(ci, iy, ix) += acc;
        }
      }
    }
  }
}

template <typename T>
PoolResult<T> maxpool_forward(const TensorT<T>& input, int window, int stride) {
  detail::check_pool_forward(input, window, stride);
  const int c_n = input.extent(0), h = input.extent(1), w = input.extent(2);
  const int oh = (h - window) / stride + 1;
  const int ow = (w - window) / stride + 1;
  PoolResult<T> result;
  result.output = TensorT<T>({c_n, oh, ow});
  result.argmax.assign(static_cast<std::size_t>(c_n) * oh * ow, 0);
  const int nthreads = max_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
  for (int c = 0; c < c_n; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T best = input(c, oy * stride, ox * stride);
        std::int64_t best_idx =
            (static_cast<std::int64_t>(c) * h + oy * stride) * w + ox * stride;
        for (int ky = 0; ky < window; ++ky) {
          const int iy = oy * stride + ky;
          for (int kx = 0; kx < window; ++kx) {
            const int ix = ox * stride + kx;
            const T v = input(c, iy, ix);
            if (v > best) {
              best = v;
              best_idx = (static_cast<std::int64_t>(c) * h + iy) * w + ix;
            }
          }
        }
        result.output(c, oy, ox) = best;
        result.argmax[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = best_idx;
      }
    }
  }
  return result;
}

template <typename T>
void maxpool_backward_acc(const std::vector<std::int64_t>& argmax,
                          const std::vector<int>& input_shape, const TensorT<T>& grad_out,
                          TensorT<T>* grad_input) {
  detail::check_pool_backward(argmax, input_shape, grad_out);
  if (grad_input->shape() != input_shape) {
    throw DimensionError("pool grad_input shape does not match recorded input shape");
  }
  const int c_n = grad_out.extent(0);
  const std::int64_t cells = static_cast<std::int64_t>(grad_out.extent(1)) * grad_out.extent(2);
  const int nthreads = max_threads();
  // Winner indices never leave their channel plane (validated above), so a
  // per-channel scatter has no cross-thread writes.
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int c = 0; c < c_n; ++c) {
    for (std::int64_t i = c * cells; i < (c + 1) * cells; ++i) {
      (*grad_input)[argmax[static_cast<std::size_t>(i)]] += grad_out[i];
    }
  }
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_matmul(a, b);
  const int m = a.extent(0), n = a.extent(1), p = b.extent(1);
  TensorT<T> out({m, p});
  const int nthreads = max_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      T acc = T(0);
      for (int l = 0; l < n; ++l) acc += a(i, l) * b(l, j);
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
TensorT<T> matvec(const TensorT<T>& w, const TensorT<T>& x) {
  detail::check_matvec(w, x);
  const int m = w.extent(0), n = w.extent(1);
  TensorT<T> out({m});
  const int nthreads = max_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int i = 0; i < m; ++i) {
    T acc = T(0);
    for (int j = 0; j < n; ++j) acc += w(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

template <typename T>
void matvec_backward_input_acc(const TensorT<T>& w, const TensorT<T>& grad_out,
                               TensorT<T>* grad_x) {
  if (w.rank() != 2 || grad_out.rank() != 1 || w.extent(0) != grad_out.extent(0)) {
    throw DimensionError("matvec backward: grad_out axis 0 must match weight rows");
  }
  if (grad_x->rank() != 1 || grad_x->extent(0) != w.extent(1)) {
    throw DimensionError("matvec backward: grad_x axis 0 must match weight cols");
  }
  const int m = w.extent(0), n = w.extent(1);
  const int nthreads = max_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int j = 0; j < n; ++j) {
    T acc = T(0);
    for (int i = 0; i < m; ++i) acc += w(i, j) * grad_out[i];
    (*grad_x)[j] += acc;
  }
}

template <typename T>
void matvec_backward_weights_acc(const TensorT<T>& x, const TensorT<T>& grad_out,
                                 TensorT<T>* grad_w) {
  if (x.rank() != 1 || grad_out.rank() != 1) {
    throw DimensionError("matvec backward: x and grad_out must be rank 1");
  }
  if (grad_w->rank() != 2 || grad_w->extent(0) != grad_out.extent(0) ||
      grad_w->extent(1) != x.extent(0)) {
    throw DimensionError("matvec backward: grad_w shape mismatch");
  }
  const int m = grad_out.extent(0), n = x.extent(0);
  const int nthreads = max_threads();
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) (*grad_w)(i, j) += grad_out[i] * x[j];
  }
}

template <typename T>
void lcn_stats(const TensorT<T>& x, int window, T epsilon, TensorT<T>* mean,
               TensorT<T>* inv_std) {
  detail::check_lcn(x, window, epsilon);
  const int c_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int half = (window - 1) / 2;
  *mean = TensorT<T>(x.shape());
  *inv_std = TensorT<T>(x.shape());
  const int nthreads = max_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
  for (int c = 0; c < c_n; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const int y0 = std::max(0, y - half), y1 = std::min(h - 1, y + half);
        const int x0 = std::max(0, xx - half), x1 = std::min(w - 1, xx + half);
        const int count = (y1 - y0 + 1) * (x1 - x0 + 1);
        T sum = T(0);
        for (int v = y0; v <= y1; ++v)
          for (int u = x0; u <= x1; ++u) sum += x(c, v, u);
        const T mu = sum / static_cast<T>(count);
        T var = T(0);
        for (int v = y0; v <= y1; ++v) {
          for (int u = x0; u <= x1; ++u) {
            const T d = x(c, v, u) - mu;
            var += d * d;
          }
        }
        var /= static_cast<T>(count);
        (*mean)(c, y, xx) = mu;
        (*inv_std)(c, y, xx) = T(1) / std::sqrt(var + epsilon);
      }
    }
  }
}

template <typename T>
void lcn_backward_acc(const TensorT<T>& x, const TensorT<T>& mean, const TensorT<T>& inv_std,
                      int window, const TensorT<T>& grad_out, TensorT<T>* grad_input) {
  require_same_shape(grad_out, x, "lcn grad_out");
  require_same_shape(*grad_input, x, "lcn grad_input");
  const int c_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int half = (window - 1) / 2;
  const int nthreads = max_threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
  for (int c = 0; c < c_n; ++c) {
    for (int ry = 0; ry < h; ++ry) {
      for (int rx = 0; rx < w; ++rx) {
        T acc = grad_out(c, ry, rx) * inv_std(c, ry, rx);
        const int py0 = std::max(0, ry - half), py1 = std::min(h - 1, ry + half);
        const int px0 = std::max(0, rx - half), px1 = std::min(w - 1, rx + half);
        for (int py = py0; py <= py1; ++py) {
          const int wy0 = std::max(0, py - half), wy1 = std::min(h - 1, py + half);
          for (int px = px0; px <= px1; ++px) {
            const int wx0 = std::max(0, px - half), wx1 = std::min(w - 1, px + half);
            const T n_p = static_cast<T>((wy1 - wy0 + 1) * (wx1 - wx0 + 1));
            const T g = grad_out(c, py, px);
            const T is = inv_std(c, py, px);
            const T centered_p = x(c, py, px) - mean(c, py, px);
            const T centered_r = x(c, ry, rx) - mean(c, py, px);
            acc -= g * is / n_p + g * is * is * is * centered_p * centered_r / n_p;
          }
        }
        (*grad_input)(c, ry, rx) += acc;
      }
    }
  }
}

#define CONVLSTM_INSTANTIATE_OMP(T)                                                         \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,              \
                                        const TensorT<T>&, const ConvSpec&);               \
  template void conv2d_backward_acc<T>(const TensorT<T>&, const TensorT<T>&,              \
                                       const ConvSpec&, const TensorT<T>&, TensorT<T>*,   \
                                       TensorT<T>*, TensorT<T>*);                          \
  template PoolResult<T> maxpool_forward<T>(const TensorT<T>&, int, int);                  \
  template void maxpool_backward_acc<T>(const std::vector<std::int64_t>&,                  \
                                        const std::vector<int>&, const TensorT<T>&,        \
                                        TensorT<T>*);                                      \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> matvec<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template void matvec_backward_input_acc<T>(const TensorT<T>&, const TensorT<T>&,         \
                                             TensorT<T>*);                                 \
  template void matvec_backward_weights_acc<T>(const TensorT<T>&, const TensorT<T>&,       \
                                               TensorT<T>*);                               \
  template void lcn_stats<T>(const TensorT<T>&, int, T, TensorT<T>*, TensorT<T>*);         \
  template void lcn_backward_acc<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                    const TensorT<T>&, int, const TensorT<T>&, TensorT<T>*);

CONVLSTM_INSTANTIATE_OMP(float)
CONVLSTM_INSTANTIATE_OMP(double)

#undef CONVLSTM_INSTANTIATE_OMP

}  // namespace omp
}  // namespace kernels
}  // namespace convlstm
