#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "convlstm/error.hpp"
#include "convlstm/eval.hpp"
#include "convlstm/model.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/tensor.hpp"
#include "convlstm/train.hpp"
#include "doctest.h"

using namespace convlstm;

namespace {

ModelConfig eval_config(int sequence_length) {
  ModelConfig cfg;
  cfg.input_h = cfg.input_w = 8;
  cfg.input_channels = 1;
  cfg.num_classes = 3;
  cfg.conv1 = {3, 1, 2};
  cfg.conv2 = {3, 1, 3};
  cfg.conv3 = {3, 1, 4};
  cfg.pool1 = 2;
  cfg.pool2 = 2;
  cfg.pool3 = 1;
  cfg.lcn_window = 3;
  cfg.fc_dim = 8;
  cfg.dropout_p = 0.0;
  cfg.lstm_filter = 3;
  cfg.lstm_depth = 4;
  cfg.merge = MergeMode::kConcatChannels;
  cfg.sequence_length = sequence_length;
  return cfg;
}

TensorT<double> random_frame(Rng& rng) {
  TensorT<double> f({1, 8, 8});
  for (std::int64_t i = 0; i < f.size(); ++i) f[i] = rng.uniform() - 0.5;
  return f;
}

SequenceSample<double> random_sample(Rng& rng, int frames, int label = 0) {
  SequenceSample<double> s;
  s.label = label;
  for (int f = 0; f < frames; ++f) s.frames.push_back(random_frame(rng));
  return s;
}

Metrics fake_metrics(double accuracy) {
  Metrics m;
  m.accuracy = accuracy;
  m.count = 100;
  return m;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("argmax_lowest picks the maximum and breaks ties low") {
  TensorT<double> probs({3});
  probs[0] = 0.2;
  probs[1] = 0.5;
  probs[2] = 0.3;
  CHECK(argmax_lowest(probs) == 1);
  probs[0] = 0.5;
  CHECK(argmax_lowest(probs) == 0);  // tie with index 1
  CHECK_THROWS_AS(argmax_lowest(TensorT<double>({2, 2})), DimensionError);
}

TEST_CASE("pooled baseline inference matches per-frame composition") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(eval_config(2));
  init_weights(*model, "he", 31);
  Rng rng(5);
  const SequenceSample<double> sample = random_sample(rng, 3);

  std::vector<TensorT<double>> per_frame;
  for (const TensorT<double>& frame : sample.frames) {
    per_frame.push_back(model->predict({frame}));
  }

  SUBCASE("average pooling is the elementwise mean") {
    const TensorT<double> pooled = pooled_baseline_inference(*model, sample, Pooling::kAverage);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double want =
          (per_frame[0][c] + per_frame[1][c] + per_frame[2][c]) / 3.0;
      CHECK(pooled[c] == doctest::Approx(want).epsilon(1e-12));
      total += pooled[c];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("max pooling renormalizes and keeps the argmax") {
    const TensorT<double> pooled = pooled_baseline_inference(*model, sample, Pooling::kMax);
    double norm = 0.0;
    for (int c = 0; c < 3; ++c) {
      norm += std::max({per_frame[0][c], per_frame[1][c], per_frame[2][c]});
    }
    TensorT<double> want({3});
    for (int c = 0; c < 3; ++c) {
      want[c] = std::max({per_frame[0][c], per_frame[1][c], per_frame[2][c]}) / norm;
      CHECK(pooled[c] == doctest::Approx(want[c]).epsilon(1e-12));
    }
    CHECK(argmax_lowest(pooled) == argmax_lowest(want));
    double total = 0.0;
    for (int c = 0; c < 3; ++c) total += pooled[c];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("argument validation") {
    SequenceSample<double> empty;
    CHECK_THROWS_AS(pooled_baseline_inference(*model, empty, Pooling::kAverage), ArgumentError);
    std::unique_ptr<Model<double>> motion = build_motion<double>(eval_config(2));
    CHECK_THROWS_AS(pooled_baseline_inference(*motion, sample, Pooling::kAverage),
                    ArgumentError);
  }
}

TEST_CASE("bidirectional test inference averages both frame orders") {
  std::unique_ptr<Model<double>> model = build_motion<double>(eval_config(3));
  init_weights(*model, "he", 32);
  Rng rng(6);
  const SequenceSample<double> sample = random_sample(rng, 3);

  const TensorT<double> fwd = model->predict(sample.frames);
  std::vector<TensorT<double>> reversed(sample.frames.rbegin(), sample.frames.rend());
  const TensorT<double> bwd = model->predict(reversed);

  const TensorT<double> combined = bidirectional_test_inference(*model, sample);
  for (int c = 0; c < 3; ++c) {
    CHECK(combined[c] == doctest::Approx((fwd[c] + bwd[c]) / 2.0).epsilon(1e-12));
  }

  std::unique_ptr<Model<double>> baseline = build_baseline<double>(eval_config(2));
  CHECK_THROWS_AS(bidirectional_test_inference(*baseline, sample), ArgumentError);
}

TEST_CASE("evaluate scores direct predictions against labels") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(eval_config(2));
  init_weights(*model, "he", 33);
  Rng rng(7);
  std::vector<SequenceSample<double>> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(random_sample(rng, 1));
  for (SequenceSample<double>& s : samples) {
    s.label = argmax_lowest(model->predict(s.frames));
  }

  const Metrics all = evaluate(*model, samples);
  CHECK(all.accuracy == 1.0);
  CHECK(all.count == 4);
  REQUIRE(all.per_class_accuracy.size() == 3);

  // Flipping one label costs exactly one hit.
  const int old_label = samples[0].label;
  samples[0].label = (old_label + 1) % 3;
  const Metrics flipped = evaluate(*model, samples);
  CHECK(flipped.accuracy == 0.75);
  CHECK(flipped.per_class_accuracy[static_cast<std::size_t>(samples[0].label)] < 1.0);

  // Classes that never occur report zero, occupied classes their hit rate.
  std::vector<int> count(3, 0), correct(3, 0);
  for (const SequenceSample<double>& s : samples) {
    count[static_cast<std::size_t>(s.label)]++;
    correct[static_cast<std::size_t>(s.label)] +=
        argmax_lowest(model->predict(s.frames)) == s.label;
  }
  for (int c = 0; c < 3; ++c) {
    const double want = count[c] == 0 ? 0.0 : static_cast<double>(correct[c]) / count[c];
    CHECK(flipped.per_class_accuracy[static_cast<std::size_t>(c)] == doctest::Approx(want));
  }

  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(evaluate(*model, {}), ArgumentError);
    samples[1].label = 3;
    CHECK_THROWS_AS(evaluate(*model, samples), IndexError);
  }
}

TEST_CASE("evaluate composes the alternate inference modes") {
  Rng rng(8);

  SUBCASE("pooled modes on the baseline") {
    std::unique_ptr<Model<double>> model = build_baseline<double>(eval_config(2));
    init_weights(*model, "he", 34);
    std::vector<SequenceSample<double>> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(random_sample(rng, 3, i % 3));
    for (InferenceMode mode : {InferenceMode::kPoolAverage, InferenceMode::kPoolMax}) {
      const Pooling pooling =
          mode == InferenceMode::kPoolAverage ? Pooling::kAverage : Pooling::kMax;
      int hits = 0;
      for (const SequenceSample<double>& s : samples) {
        hits += argmax_lowest(pooled_baseline_inference(*model, s, pooling)) == s.label;
      }
      const Metrics m = evaluate(*model, samples, mode);
      CHECK(m.accuracy == doctest::Approx(static_cast<double>(hits) / samples.size()));
    }
  }

  SUBCASE("bidirectional testing on the motion model") {
    std::unique_ptr<Model<double>> model = build_motion<double>(eval_config(2));
    init_weights(*model, "he", 35);
    std::vector<SequenceSample<double>> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(random_sample(rng, 2, i % 3));
    int hits = 0;
    for (const SequenceSample<double>& s : samples) {
      hits += argmax_lowest(bidirectional_test_inference(*model, s)) == s.label;
    }
    const Metrics m = evaluate(*model, samples, InferenceMode::kBidi);
    CHECK(m.accuracy == doctest::Approx(static_cast<double>(hits) / samples.size()));
  }
}

TEST_CASE("cross-validation mean and sample standard deviation") {
  SUBCASE("identical splits have zero spread") {
    const CrossValReport r = crossval_report({fake_metrics(0.8), fake_metrics(0.8),
                                              fake_metrics(0.8)});
    CHECK(r.mean_accuracy == doctest::Approx(0.8));
    CHECK(r.std_accuracy == doctest::Approx(0.0));
    CHECK(r.split_ids == std::vector<int>{1, 2, 3});
    CHECK(format_mean_std(r) == "80.00 ± 0.00");
  }

  SUBCASE("two splits") {
    const CrossValReport r = crossval_report({fake_metrics(0.8), fake_metrics(0.9)});
    CHECK(r.mean_accuracy == doctest::Approx(0.85));
    // Sample std with divisor n-1: sqrt(2 * 0.05^2 / 1).
    CHECK(r.std_accuracy == doctest::Approx(0.05 * std::sqrt(2.0)));
    CHECK(format_mean_std(r) == "85.00 ± 7.07");
  }

  SUBCASE("evenly spaced accuracies reproduce the headline format") {
    // For {x-d, x, x+d} the sample standard deviation is exactly d.
    const CrossValReport r = crossval_report({fake_metrics(0.8006), fake_metrics(0.8202),
                                              fake_metrics(0.8398)});
    CHECK(format_mean_std(r) == "82.02 ± 1.96");
  }

  SUBCASE("explicit split ids are preserved") {
    const CrossValReport r =
        crossval_report({fake_metrics(0.5), fake_metrics(0.6)}, {7, 9});
    CHECK(r.split_ids == std::vector<int>{7, 9});
    CHECK_THROWS_AS(crossval_report({fake_metrics(0.5), fake_metrics(0.6)}, {7}),
                    ArgumentError);
  }

  SUBCASE("fewer than two splits is an error") {
    CHECK_THROWS_AS(crossval_report({fake_metrics(0.8)}), ArgumentError);
    CHECK_THROWS_AS(crossval_report({}), ArgumentError);
  }
}

TEST_CASE("report rendering") {
  const CrossValReport r = crossval_report({fake_metrics(0.8006), fake_metrics(0.8202),
                                            fake_metrics(0.8398)});
  CHECK(report_csv(r) ==
        "split_id,accuracy\n1,80.06\n2,82.02\n3,83.98\n82.02,1.96\n");
  const std::string table = report_table(r);
  CHECK(table.find("Split  Accuracy") != std::string::npos);
  CHECK(table.find("Accuracy & Standard Deviation: 82.02 ± 1.96") != std::string::npos);
}

TEST_CASE("format_percent renders hundredths") {
  CHECK(format_percent(0.8202) == "82.02");
  CHECK(format_percent(1.0) == "100.00");
  CHECK(format_percent(0.0) == "0.00");
  CHECK(format_percent(0.005) == "0.50");
}

TEST_CASE("inference mode names parse") {
  CHECK(parse_inference_mode("direct") == InferenceMode::kDirect);
  CHECK(parse_inference_mode("bidi") == InferenceMode::kBidi);
  CHECK(parse_inference_mode("pool-avg") == InferenceMode::kPoolAverage);
  CHECK(parse_inference_mode("pool-max") == InferenceMode::kPoolMax);
  CHECK_THROWS_AS(parse_inference_mode("oracle"), ConfigError);
}

}  // TEST_SUITE("eval")
