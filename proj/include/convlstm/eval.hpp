#pragma once

#include <string>
#include <vector>

#include "convlstm/data.hpp"
#include "convlstm/model.hpp"

namespace convlstm {

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  int count = 0;
};

enum class Pooling { kAverage, kMax };

enum class InferenceMode { kDirect, kBidi, kPoolAverage, kPoolMax };

// Lowest index wins exact ties, deterministically.
template <typename T>
int argmax_lowest(const TensorT<T>& probs);

// Runs the single-frame model on every frame and combines the probability
// vectors: elementwise mean, or elementwise max renormalized to sum one.
template <typename T>
TensorT<T> pooled_baseline_inference(Model<T>& model, const SequenceSample<T>& sample,
                                     Pooling pooling);

// Classifies the sequence in both orders and averages the distributions.
template <typename T>
TensorT<T> bidirectional_test_inference(Model<T>& model, const SequenceSample<T>& sample);

template <typename T>
Metrics evaluate(Model<T>& model, const std::vector<SequenceSample<T>>& samples,
                 InferenceMode mode = InferenceMode::kDirect);

struct CrossValReport {
  std::vector<int> split_ids;
  std::vector<Metrics> per_split;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation, divisor n-1
};

// split_ids may be empty (then numbered 1..n); needs >= 2 splits.
CrossValReport crossval_report(const std::vector<Metrics>& per_split,
                               const std::vector<int>& split_ids = {});

std::string format_percent(double fraction);        // 0.8202 -> "82.02"
std::string format_mean_std(const CrossValReport&);  // "82.02 ± 1.96"
std::string report_csv(const CrossValReport&);
std::string report_table(const CrossValReport&);

InferenceMode parse_inference_mode(const std::string& name);  // direct|bidi|pool-avg|pool-max

}  // namespace convlstm
