#include "convlstm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace convlstm {

template <typename T>
int argmax_lowest(const TensorT<T>& probs) {
  if (probs.rank() != 1 || probs.extent(0) < 1) {
    throw DimensionError("argmax expects a nonempty rank-1 tensor");
  }
  int best = 0;
  for (int i = 1; i < probs.extent(0); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

template <typename T>
TensorT<T> pooled_baseline_inference(Model<T>& model, const SequenceSample<T>& sample,
                                     Pooling pooling) {
  if (model.kind() != ModelKind::kBaseline) {
    throw ArgumentError("pooled inference applies the single-frame baseline only");
  }
  if (sample.frames.empty()) throw ArgumentError("pooled inference needs at least one frame");

  TensorT<T> combined;
  for (const TensorT<T>& frame : sample.frames) {
    TensorT<T> probs = model.predict({frame});
    if (combined.empty()) {
      combined = std::move(probs);
    } else if (pooling == Pooling::kAverage) {
      add_into(combined, probs);
    } else {
      for (std::int64_t i = 0; i < combined.size(); ++i) {
        combined[i] = std::max(combined[i], probs[i]);
      }
    }
  }
  if (pooling == Pooling::kAverage) {
    const T inv = T(1) / static_cast<T>(sample.frames.size());
    for (std::int64_t i = 0; i < combined.size(); ++i) combined[i] *= inv;
  } else {
    // Elementwise max is not a distribution; renormalize. Argmax unchanged.
    T total = T(0);
    for (std::int64_t i = 0; i < combined.size(); ++i) total += combined[i];
    for (std::int64_t i = 0; i < combined.size(); ++i) combined[i] /= total;
  }
  return combined;
}

template <typename T>
TensorT<T> bidirectional_test_inference(Model<T>& model, const SequenceSample<T>& sample) {
  if (model.kind() != ModelKind::kMotion) {
    throw ArgumentError("bidirectional test inference needs the motion model");
  }
  TensorT<T> fwd = model.predict(sample.frames);
  std::vector<TensorT<T>> reversed(sample.frames.rbegin(), sample.frames.rend());
  TensorT<T> bwd = model.predict(reversed);
  for (std::int64_t i = 0; i < fwd.size(); ++i) fwd[i] = (fwd[i] + bwd[i]) / T(2);
  return fwd;
}

template <typename T>
Metrics evaluate(Model<T>& model, const std::vector<SequenceSample<T>>& samples,
                 InferenceMode mode) {
  if (samples.empty()) throw ArgumentError("evaluate needs at least one sample");
  const int num_classes = model.config().num_classes;
  std::vector<int> correct(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> count(static_cast<std::size_t>(num_classes), 0);
  int total_correct = 0;
  for (const SequenceSample<T>& s : samples) {
    if (s.label < 0 || s.label >= num_classes) {
      throw IndexError("sample label " + std::to_string(s.label) + " out of range");
    }
    TensorT<T> probs;
    switch (mode) {
      case InferenceMode::kDirect:
        probs = model.predict(s.frames);
        break;
      case InferenceMode::kBidi:
        probs = bidirectional_test_inference(model, s);
        break;
      case InferenceMode::kPoolAverage:
        probs = pooled_baseline_inference(model, s, Pooling::kAverage);
        break;
      case InferenceMode::kPoolMax:
        probs = pooled_baseline_inference(model, s, Pooling::kMax);
        break;
    }
    const bool hit = argmax_lowest(probs) == s.label;
    total_correct += hit ? 1 : 0;
    correct[static_cast<std::size_t>(s.label)] += hit ? 1 : 0;
    count[static_cast<std::size_t>(s.label)] += 1;
  }
  Metrics m;
  m.count = static_cast<int>(samples.size());
  m.accuracy = static_cast<double>(total_correct) / static_cast<double>(samples.size());
  for (int c = 0; c < num_classes; ++c) {
    const std::size_t i = static_cast<std::size_t>(c);
    m.per_class_accuracy.push_back(
        count[i] == 0 ? 0.0 : static_cast<double>(correct[i]) / static_cast<double>(count[i]));
  }
  return m;
}

CrossValReport crossval_report(const std::vector<Metrics>& per_split,
                               const std::vector<int>& split_ids) {
  if (per_split.size() < 2) {
    throw ArgumentError("cross-validation needs at least 2 splits (std undefined)");
  }
  if (!split_ids.empty() && split_ids.size() != per_split.size()) {
    throw ArgumentError("one split id per metrics entry required");
  }
  CrossValReport report;
  report.per_split = per_split;
  if (split_ids.empty()) {
    for (std::size_t i = 0; i < per_split.size(); ++i) {
      report.split_ids.push_back(static_cast<int>(i) + 1);
    }
  } else {
    report.split_ids = split_ids;
  }
  double sum = 0.0;
  for (const Metrics& m : per_split) sum += m.accuracy;
  const double n = static_cast<double>(per_split.size());
  report.mean_accuracy = sum / n;
  double ss = 0.0;
  for (const Metrics& m : per_split) {
    const double d = m.accuracy - report.mean_accuracy;
    ss += d * d;
  }
  report.std_accuracy = std::sqrt(ss / (n - 1.0));
  return report;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

std::string format_mean_std(const CrossValReport& report) {
  return format_percent(report.mean_accuracy) + " ± " + format_percent(report.std_accuracy);
}

std::string report_csv(const CrossValReport& report) {
  std::ostringstream out;
  out << "split_id,accuracy\n";
  for (std::size_t i = 0; i < report.per_split.size(); ++i) {
    out << report.split_ids[i] << "," << format_percent(report.per_split[i].accuracy) << "\n";
  }
  out << format_percent(report.mean_accuracy) << "," << format_percent(report.std_accuracy)
      << "\n";
  return out.str();
}

std::string report_table(const CrossValReport& report) {
  std::ostringstream out;
  out << "Split  Accuracy\n";
  for (std::size_t i = 0; i < report.per_split.size(); ++i) {
    out << report.split_ids[i] << "      " << format_percent(report.per_split[i].accuracy)
        << "\n";
  }
  out << "Accuracy & Standard Deviation: " << format_mean_std(report) << "\n";
  return out.str();
}

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "direct") return InferenceMode::kDirect;
  if (name == "bidi") return InferenceMode::kBidi;
  if (name == "pool-avg") return InferenceMode::kPoolAverage;
  if (name == "pool-max") return InferenceMode::kPoolMax;
  throw ConfigError("unknown inference mode '" + name + "'");
}

#define CONVLSTM_INSTANTIATE_EVAL(T)                                                      \
  template int argmax_lowest<T>(const TensorT<T>&);                                       \
  template TensorT<T> pooled_baseline_inference<T>(Model<T>&, const SequenceSample<T>&,   \
                                                   Pooling);                              \
  template TensorT<T> bidirectional_test_inference<T>(Model<T>&, const SequenceSample<T>&); \
  template Metrics evaluate<T>(Model<T>&, const std::vector<SequenceSample<T>>&,          \
                               InferenceMode);

CONVLSTM_INSTANTIATE_EVAL(float)
CONVLSTM_INSTANTIATE_EVAL(double)

#undef CONVLSTM_INSTANTIATE_EVAL

}  // namespace convlstm
