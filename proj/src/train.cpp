#include "convlstm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

#include "convlstm/rng.hpp"

namespace convlstm {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (init != "he") throw ConfigError("unknown init scheme '" + init + "'");
}

namespace {

template <typename T>
int argmax_index(const TensorT<T>& v) {
  int best = 0;
  for (int i = 1; i < v.extent(0); ++i) {
    if (v[i] > v[best]) best = i;  // ties keep the lowest index
  }
  return best;
}

std::int64_t fan_in_of(const std::vector<int>& shape) {
  std::int64_t fan = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
  return fan;
}

}  // namespace

template <typename T>
void init_weights(Model<T>& model, const std::string& scheme, std::uint64_t seed) {
  if (scheme != "he") throw ConfigError("unknown init scheme '" + scheme + "'");
  std::vector<ParamRef<T>> params = model.params();
  for (std::size_t idx = 0; idx < params.size(); ++idx) {
    ParamRef<T>& p = params[idx];
    const bool is_bias = p.name.ends_with(".b") || p.name.ends_with(".bias");
    if (is_bias) {
      // Forget-gate biases start at +1 so early training retains memory.
      p.value->fill(p.name.ends_with(".f.b") ? T(1) : T(0));
      continue;
    }
    Rng rng(mix_seed(mix_seed(seed, 0x1417ULL), static_cast<std::uint64_t>(idx)));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in_of(p.value->shape())));
    for (std::int64_t i = 0; i < p.value->size(); ++i) {
      (*p.value)[i] = static_cast<T>(rng.normal() * stddev);
    }
  }
  model.creation_seed() = seed;
}

template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, double learning_rate) {
  for (const ParamRef<T>& p : params) {
    for (std::int64_t i = 0; i < p.grad->size(); ++i) {
      const T g = (*p.grad)[i];
      if (!std::isfinite(static_cast<double>(g))) {
        throw TrainingError("non-finite gradient in " + p.name);
      }
      (*p.value)[i] -= static_cast<T>(learning_rate) * g;
    }
  }
}

namespace {

template <typename T>
double validation_accuracy(Model<T>& model, const std::vector<SequenceSample<T>>& val) {
  int correct = 0;
  for (const SequenceSample<T>& s : val) {
    if (argmax_index(model.predict(s.frames)) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

}  // namespace

template <typename T>
TrainResult train_loop(Model<T>& model, const std::vector<SequenceSample<T>>& train,
                       const std::vector<SequenceSample<T>>& val, const TrainConfig& config,
                       std::ostream* log) {
  config.validate();
  if (train.empty()) throw ArgumentError("training needs at least one sample");

  TrainResult result;
  if (log != nullptr) *log << "epoch,mean_loss,train_acc,val_acc\n";

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<ParamRef<T>> params = model.params();
  std::vector<TensorT<T>> best_params;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(mix_seed(config.seed, 0x0e70c5ULL),
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      model.zero_grads();
      DropoutStreams streams(config.seed, static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(batch_index));
      for (std::size_t k = start; k < end; ++k) {
        const SequenceSample<T>& s = train[order[k]];
        TensorT<T> logits = model.forward(s.frames, Mode::kTrain, &streams);
        SoftmaxResult<T> sm = softmax_cross_entropy(logits, s.label);
        if (!std::isfinite(static_cast<double>(sm.loss))) {
          throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(batch_index));
        }
        loss_sum += static_cast<double>(sm.loss);
        if (argmax_index(sm.probs) == s.label) ++correct;
        model.backward(sm.grad_logits);
      }
      // Mean gradient over the batch, folded into the step size.
      sgd_step(params, config.learning_rate / static_cast<double>(end - start));
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(train.size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    stats.val_acc = val.empty() ? 0.0 : validation_accuracy(model, val);
    result.history.push_back(stats);

    if (log != nullptr) {
      char line[128];
      std::snprintf(line, sizeof(line), "%d,%.6f,%.4f,%.4f\n", stats.epoch, stats.mean_loss,
                    stats.train_acc, stats.val_acc);
      *log << line;
    }

    if (!val.empty() && (best_params.empty() || stats.val_acc > result.best_val_acc)) {
      result.best_val_acc = stats.val_acc;
      result.best_epoch = epoch;
      best_params.clear();
      for (const ParamRef<T>& p : params) best_params.push_back(*p.value);
    }
  }

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = best_params[i];
  } else if (!result.history.empty()) {
    result.best_epoch = config.epochs;
    result.best_val_acc = result.history.back().val_acc;
  }
  return result;
}

// Smallest gradient magnitude a central difference at epsilon ~ 1e-5 can
// measure to ~1e-5 relative precision (noise ulp(loss)/epsilon over rtol).
constexpr double kGradResolution = 1e-4;

template <typename T>
GradCheckReport grad_check(Model<T>& model, const SequenceSample<T>& sample, double epsilon,
                           int coords_per_tensor, std::uint64_t seed) {
  if (std::is_same_v<T, float>) {
    throw ConfigError("gradient checking requires a double-precision model");
  }
  if (epsilon <= 0.0) throw ArgumentError("gradcheck epsilon must be > 0");
  if (coords_per_tensor < 1) throw ArgumentError("coords_per_tensor must be >= 1");

  std::vector<ParamRef<T>> params = model.params();
  const auto loss_at = [&]() {
    TensorT<T> logits = model.forward(sample.frames, Mode::kEval, nullptr);
    return static_cast<double>(softmax_cross_entropy(logits, sample.label).loss);
  };

  model.zero_grads();
  TensorT<T> logits = model.forward(sample.frames, Mode::kEval, nullptr);
  SoftmaxResult<T> sm = softmax_cross_entropy(logits, sample.label);
  model.backward(sm.grad_logits);
  std::vector<TensorT<T>> analytic;
  analytic.reserve(params.size());
  for (const ParamRef<T>& p : params) analytic.push_back(*p.grad);

  GradCheckReport report;
  for (std::size_t idx = 0; idx < params.size(); ++idx) {
    ParamRef<T>& p = params[idx];
    const std::int64_t n = p.value->size();

    std::vector<std::int64_t> coords;
    if (n <= coords_per_tensor) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      Rng rng(mix_seed(mix_seed(seed, 0x9cULL), static_cast<std::uint64_t>(idx)));
      std::set<std::int64_t> chosen;
      while (static_cast<int>(chosen.size()) < coords_per_tensor) {
        chosen.insert(rng.uniform_int(static_cast<int>(n)));
      }
      coords.assign(chosen.begin(), chosen.end());
    }

    GradCheckEntry entry;
    entry.name = p.name;
    for (std::int64_t c : coords) {
      const T saved = (*p.value)[c];
      (*p.value)[c] = saved + static_cast<T>(epsilon);
      const double lp = loss_at();
      (*p.value)[c] = saved - static_cast<T>(epsilon);
      const double lm = loss_at();
      (*p.value)[c] = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = static_cast<double>(analytic[idx][c]);
      // Central differences on an O(1) loss resolve gradients no finer than
      // ~ulp(loss)/epsilon ~ 1e-10 absolute, so the denominator floors at
      // the smallest magnitude measurable to rel-tolerance precision rather
      // than at 0: coordinates beneath it (including parameters the loss is
      // exactly invariant to, e.g. a conv bias that LCN cancels) compare
      // absolutely at that scale, and a missing or flipped term of any
      // measurable size still fails.
      const double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), kGradResolution});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_tensor = entry.name;
    }
    report.tensors.push_back(std::move(entry));
  }
  return report;
}

#define CONVLSTM_INSTANTIATE_TRAIN(T)                                                      \
  template void init_weights<T>(Model<T>&, const std::string&, std::uint64_t);             \
  template void sgd_step<T>(const std::vector<ParamRef<T>>&, double);                      \
  template TrainResult train_loop<T>(Model<T>&, const std::vector<SequenceSample<T>>&,     \
                                     const std::vector<SequenceSample<T>>&,                \
                                     const TrainConfig&, std::ostream*);                   \
  template GradCheckReport grad_check<T>(Model<T>&, const SequenceSample<T>&, double, int, \
                                         std::uint64_t);

CONVLSTM_INSTANTIATE_TRAIN(float)
CONVLSTM_INSTANTIATE_TRAIN(double)

#undef CONVLSTM_INSTANTIATE_TRAIN

}  // namespace convlstm
