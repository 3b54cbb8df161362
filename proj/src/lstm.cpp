#include "convlstm/lstm.hpp"

#include <cmath>

namespace convlstm {

template <typename T>
LstmCell<T>::LstmCell(const GateTransformSpec& gate, int input_dim, bool use_forget_gate)
    : gate_(gate), input_dim_(input_dim), use_forget_gate_(use_forget_gate) {
  gate_.validate();
  if (input_dim < 1) throw ConfigError("lstm input_dim must be >= 1");
  if (gate_.kind == GateKind::kFullyConnected) {
    const int n = gate_.hidden_dim;
    for (int g = 0; g < kNumGates; ++g) {
      w_[g] = TensorT<T>({n, input_dim_});
      u_[g] = TensorT<T>({n, n});
      b_[g] = TensorT<T>({n});
    }
    v_o_ = TensorT<T>({n, n});
  } else {
    const int d = gate_.depth, k = gate_.filter_size;
    for (int g = 0; g < kNumGates; ++g) {
      w_[g] = TensorT<T>({d, input_dim_, k, k});
      u_[g] = TensorT<T>({d, d, k, k});
      b_[g] = TensorT<T>({d});
    }
    v_o_ = TensorT<T>({d, d, k, k});
  }
  for (int g = 0; g < kNumGates; ++g) {
    grad_w_[g] = TensorT<T>(w_[g].shape());
    grad_u_[g] = TensorT<T>(u_[g].shape());
    grad_b_[g] = TensorT<T>(b_[g].shape());
  }
  grad_v_o_ = TensorT<T>(v_o_.shape());
}

template <typename T>
ConvSpec LstmCell<T>::input_spec() const {
  ConvSpec spec;
  spec.filter_size = gate_.filter_size;
  spec.stride = 1;
  spec.in_channels = input_dim_;
  spec.out_channels = gate_.depth;
  spec.padding = ConvSpec::same_padding(gate_.filter_size);
  return spec;
}

template <typename T>
ConvSpec LstmCell<T>::state_spec() const {
  ConvSpec spec = input_spec();
  spec.in_channels = gate_.depth;
  return spec;
}

template <typename T>
TensorT<T> LstmCell<T>::gate_shaped(const TensorT<T>& x) const {
  if (gate_.kind == GateKind::kFullyConnected) {
    if (x.rank() != 1 || x.extent(0) != input_dim_) {
      throw DimensionError("lstm input must be rank 1 of length " +
                           std::to_string(input_dim_) + ", got " + x.shape_string());
    }
    return TensorT<T>({gate_.hidden_dim});
  }
  if (x.rank() != 3 || x.extent(0) != input_dim_) {
    throw DimensionError("lstm input must be rank 3 with " + std::to_string(input_dim_) +
                         " channels, got " + x.shape_string());
  }
  return TensorT<T>({gate_.depth, x.extent(1), x.extent(2)});
}

template <typename T>
TensorT<T> LstmCell<T>::apply_input(int g, const TensorT<T>& x) const {
  if (gate_.kind == GateKind::kFullyConnected) {
    TensorT<T> pre = kernels::matvec(w_[g], x);
    add_into(pre, b_[g]);
    return pre;
  }
  return kernels::conv2d_forward(x, w_[g], b_[g], input_spec());
}

template <typename T>
TensorT<T> LstmCell<T>::apply_recurrent(int g, const TensorT<T>& h) const {
  if (gate_.kind == GateKind::kFullyConnected) return kernels::matvec(u_[g], h);
  TensorT<T> zero_bias({gate_.depth});
  return kernels::conv2d_forward(h, u_[g], zero_bias, state_spec());
}

template <typename T>
TensorT<T> LstmCell<T>::apply_peephole(const TensorT<T>& c) const {
  if (gate_.kind == GateKind::kFullyConnected) return kernels::matvec(v_o_, c);
  TensorT<T> zero_bias({gate_.depth});
  return kernels::conv2d_forward(c, v_o_, zero_bias, state_spec());
}

template <typename T>
void LstmCell<T>::transform_backward(const TensorT<T>& in, const TensorT<T>& w,
                                     bool input_transform, const TensorT<T>& grad_pre,
                                     TensorT<T>* grad_in, TensorT<T>* grad_w,
                                     TensorT<T>* grad_b) const {
  if (gate_.kind == GateKind::kConvolutional) {
    kernels::conv2d_backward_acc(in, w, input_transform ? input_spec() : state_spec(),
                                 grad_pre, grad_in, grad_w, grad_b);
    return;
  }
  if (grad_b != nullptr) add_into(*grad_b, grad_pre);
  if (grad_w != nullptr) kernels::matvec_backward_weights_acc(in, grad_pre, grad_w);
  if (grad_in != nullptr) kernels::matvec_backward_input_acc(w, grad_pre, grad_in);
}

template <typename T>
LstmState<T> LstmCell<T>::zero_state(const TensorT<T>& x0) const {
  LstmState<T> state;
  state.C = gate_shaped(x0);
  state.h = gate_shaped(x0);
  return state;
}

template <typename T>
std::pair<TensorT<T>, LstmState<T>> LstmCell<T>::step(const TensorT<T>& x,
                                                      const LstmState<T>& prev,
                                                      LstmStepCache<T>* cache) const {
  TensorT<T> expected = gate_shaped(x);
  if (prev.C.shape() != expected.shape() || prev.h.shape() != expected.shape()) {
    throw DimensionError("lstm state shape does not match gate output shape " +
                         expected.shape_string());
  }

  // Gate order: input, candidate, forget, carry, output, hidden.
  TensorT<T> pre_i = apply_input(0, x);
  add_into(pre_i, apply_recurrent(0, prev.h));
  TensorT<T> i = map_sigmoid(pre_i);

  TensorT<T> pre_c = apply_input(1, x);
  add_into(pre_c, apply_recurrent(1, prev.h));
  TensorT<T> c_hat = map_tanh(pre_c);

  TensorT<T> f;
  if (use_forget_gate_) {
    TensorT<T> pre_f = apply_input(2, x);
    add_into(pre_f, apply_recurrent(2, prev.h));
    f = map_sigmoid(pre_f);
  }

  TensorT<T> C = hadamard(i, c_hat);
  if (use_forget_gate_) {
    for (std::int64_t n = 0; n < C.size(); ++n) C[n] += f[n] * prev.C[n];
  } else {
    add_into(C, prev.C);  // legacy carry: unbounded accumulation
  }

  // The peephole feeds the output gate from the freshly computed cell state.
  TensorT<T> pre_o = apply_input(3, x);
  add_into(pre_o, apply_recurrent(3, prev.h));
  add_into(pre_o, apply_peephole(C));
  TensorT<T> o = map_sigmoid(pre_o);

  TensorT<T> tanh_C = map_tanh(C);
  TensorT<T> h = hadamard(o, tanh_C);

  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->C_prev = prev.C;
    cache->i = std::move(i);
    cache->c_hat = std::move(c_hat);
    cache->f = std::move(f);
    cache->o = o;
    cache->C = C;
    cache->tanh_C = tanh_C;
  }
  LstmState<T> next;
  next.C = std::move(C);
  next.h = h;
  return {std::move(h), std::move(next)};
}

template <typename T>
std::vector<TensorT<T>> LstmCell<T>::unroll(const std::vector<TensorT<T>>& xs,
                                            const LstmState<T>& init,
                                            std::vector<LstmStepCache<T>>* caches) const {
  if (xs.empty()) throw ArgumentError("lstm unroll needs at least one input");
  if (caches != nullptr) caches->resize(xs.size());
  std::vector<TensorT<T>> hs;
  hs.reserve(xs.size());
  LstmState<T> state = init;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto [h, next] = step(xs[t], state, caches != nullptr ? &(*caches)[t] : nullptr);
    hs.push_back(std::move(h));
    state = std::move(next);
  }
  return hs;
}

template <typename T>
std::vector<TensorT<T>> LstmCell<T>::bptt(const std::vector<LstmStepCache<T>>& caches,
                                          const std::vector<TensorT<T>>& grad_hs) {
  if (caches.empty()) throw ArgumentError("lstm bptt needs at least one cached step");
  if (caches.size() != grad_hs.size()) {
    throw ArgumentError("lstm bptt: one upstream gradient per cached step required");
  }
  const int steps = static_cast<int>(caches.size());
  std::vector<TensorT<T>> grad_xs(static_cast<std::size_t>(steps));

  TensorT<T> dh_rec(caches.back().C.shape());
  TensorT<T> dC_rec(caches.back().C.shape());
  for (int t = steps - 1; t >= 0; --t) {
    const LstmStepCache<T>& cc = caches[static_cast<std::size_t>(t)];
    require_same_shape(grad_hs[static_cast<std::size_t>(t)], cc.C, "lstm bptt grad_h");

    TensorT<T> dh = grad_hs[static_cast<std::size_t>(t)];
    add_into(dh, dh_rec);

    // Output gate pre-activation gradient, then total cell-state gradient.
    TensorT<T> dpre_o(cc.C.shape());
    for (std::int64_t n = 0; n < dpre_o.size(); ++n) {
      dpre_o[n] = dh[n] * cc.tanh_C[n] * cc.o[n] * (T(1) - cc.o[n]);
    }
    TensorT<T> dC = dC_rec;
    for (std::int64_t n = 0; n < dC.size(); ++n) {
      dC[n] += dh[n] * cc.o[n] * (T(1) - cc.tanh_C[n] * cc.tanh_C[n]);
    }
    // The peephole saw the fresh cell state, so its backward feeds dC too.
    transform_backward(cc.C, v_o_, false, dpre_o, &dC, &grad_v_o_, nullptr);

    TensorT<T> dpre_i(cc.C.shape()), dpre_c(cc.C.shape());
    for (std::int64_t n = 0; n < dC.size(); ++n) {
      dpre_i[n] = dC[n] * cc.c_hat[n] * cc.i[n] * (T(1) - cc.i[n]);
      dpre_c[n] = dC[n] * cc.i[n] * (T(1) - cc.c_hat[n] * cc.c_hat[n]);
    }
    TensorT<T> dpre_f;
    if (use_forget_gate_) {
      dpre_f = TensorT<T>(cc.C.shape());
      for (std::int64_t n = 0; n < dC.size(); ++n) {
        dpre_f[n] = dC[n] * cc.C_prev[n] * cc.f[n] * (T(1) - cc.f[n]);
      }
    }

    TensorT<T> dx(cc.x.shape());
    TensorT<T> dh_prev(cc.h_prev.shape());
    for (int g = 0; g < kNumGates; ++g) {
      if (g == 2 && !use_forget_gate_) continue;
      const TensorT<T>& dpre = g == 0 ? dpre_i : g == 1 ? dpre_c : g == 2 ? dpre_f : dpre_o;
      transform_backward(cc.x, w_[g], true, dpre, &dx, &grad_w_[g], &grad_b_[g]);
      transform_backward(cc.h_prev, u_[g], false, dpre, &dh_prev, &grad_u_[g], nullptr);
    }

    grad_xs[static_cast<std::size_t>(t)] = std::move(dx);
    dh_rec = std::move(dh_prev);
    if (use_forget_gate_) {
      dC_rec = hadamard(dC, cc.f);
    } else {
      dC_rec = std::move(dC);  // legacy carry passes the gradient through
    }
  }
  return grad_xs;
}

template <typename T>
std::vector<ParamRef<T>> LstmCell<T>::params(const std::string& prefix) {
  std::vector<ParamRef<T>> out;
  for (int g = 0; g < kNumGates; ++g) {
    const std::string base = prefix + "." + kGateNames[static_cast<std::size_t>(g)];
    out.push_back({base + ".W", &w_[g], &grad_w_[g]});
    out.push_back({base + ".U", &u_[g], &grad_u_[g]});
    out.push_back({base + ".b", &b_[g], &grad_b_[g]});
  }
  out.push_back({prefix + ".o.V", &v_o_, &grad_v_o_});
  return out;
}

template <typename T>
void LstmCell<T>::zero_grads() {
  for (int g = 0; g < kNumGates; ++g) {
    grad_w_[g].zero();
    grad_u_[g].zero();
    grad_b_[g].zero();
  }
  grad_v_o_.zero();
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
TensorT<T> merge_states(const TensorT<T>& hf, const TensorT<T>& hb, MergeMode merge) {
  require_same_shape(hf, hb, "bidirectional merge");
  if (merge == MergeMode::kElementwiseSum) return add(hf, hb);
  // Channel concatenation, forward branch first. Axis 0 is contiguous in
  // row-major order for both rank-1 and rank-3 states.
  std::vector<int> shape = hf.shape();
  shape[0] *= 2;
  TensorT<T> out(shape);
  for (std::int64_t n = 0; n < hf.size(); ++n) out[n] = hf[n];
  for (std::int64_t n = 0; n < hb.size(); ++n) out[hf.size() + n] = hb[n];
  return out;
}

}  // namespace

template <typename T>
TensorT<T> bidirectional_run(const std::vector<TensorT<T>>& xs, const LstmCell<T>& fwd,
                             const LstmCell<T>& bwd, MergeMode merge, BidirCache<T>* cache) {
  if (xs.empty()) throw ArgumentError("bidirectional run needs at least one input");
  std::vector<TensorT<T>> rev(xs.rbegin(), xs.rend());

  std::vector<TensorT<T>> fwd_hs =
      fwd.unroll(xs, fwd.zero_state(xs[0]), cache != nullptr ? &cache->fwd_steps : nullptr);
  std::vector<TensorT<T>> bwd_hs =
      bwd.unroll(rev, bwd.zero_state(rev[0]), cache != nullptr ? &cache->bwd_steps : nullptr);

  const TensorT<T>& hf = fwd_hs.back();
  const TensorT<T>& hb = bwd_hs.back();
  if (cache != nullptr) cache->final_shape = hf.shape();
  return merge_states(hf, hb, merge);
}

template <typename T>
std::vector<TensorT<T>> bidirectional_backward(LstmCell<T>& fwd, LstmCell<T>& bwd,
                                               const BidirCache<T>& cache, MergeMode merge,
                                               const TensorT<T>& grad_merged) {
  const std::size_t steps = cache.fwd_steps.size();
  if (steps == 0 || cache.bwd_steps.size() != steps) {
    throw ArgumentError("bidirectional backward needs matching cached branches");
  }
  TensorT<T> ghf(cache.final_shape), ghb(cache.final_shape);
  if (merge == MergeMode::kElementwiseSum) {
    require_same_shape(grad_merged, ghf, "bidirectional merge gradient");
    ghf = grad_merged;
    ghb = grad_merged;
  } else {
    std::vector<int> expect = cache.final_shape;
    expect[0] *= 2;
    if (grad_merged.shape() != expect) {
      throw DimensionError("bidirectional merge gradient has wrong shape");
    }
    for (std::int64_t n = 0; n < ghf.size(); ++n) ghf[n] = grad_merged[n];
    for (std::int64_t n = 0; n < ghb.size(); ++n) ghb[n] = grad_merged[ghf.size() + n];
  }

  // Only the final hidden state feeds the classifier; earlier steps get zero
  // upstream gradient and see everything through the recurrence.
  std::vector<TensorT<T>> grad_hs_f, grad_hs_b;
  for (std::size_t t = 0; t < steps; ++t) {
    grad_hs_f.emplace_back(cache.final_shape);
    grad_hs_b.emplace_back(cache.final_shape);
  }
  grad_hs_f.back() = std::move(ghf);
  grad_hs_b.back() = std::move(ghb);

  std::vector<TensorT<T>> gx = fwd.bptt(cache.fwd_steps, grad_hs_f);
  std::vector<TensorT<T>> gx_rev = bwd.bptt(cache.bwd_steps, grad_hs_b);
  for (std::size_t t = 0; t < steps; ++t) {
    add_into(gx[t], gx_rev[steps - 1 - t]);
  }
  return gx;
}

#define CONVLSTM_INSTANTIATE_LSTM(T)                                                       \
  template class LstmCell<T>;                                                              \
  template TensorT<T> bidirectional_run<T>(const std::vector<TensorT<T>>&,                 \
                                           const LstmCell<T>&, const LstmCell<T>&,         \
                                           MergeMode, BidirCache<T>*);                     \
  template std::vector<TensorT<T>> bidirectional_backward<T>(                              \
      LstmCell<T>&, LstmCell<T>&, const BidirCache<T>&, MergeMode, const TensorT<T>&);

CONVLSTM_INSTANTIATE_LSTM(float)
CONVLSTM_INSTANTIATE_LSTM(double)

#undef CONVLSTM_INSTANTIATE_LSTM

}  // namespace convlstm
