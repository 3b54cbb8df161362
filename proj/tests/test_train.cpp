#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <sstream>
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

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.input_h = cfg.input_w = 8;
  cfg.input_channels = 1;
  cfg.num_classes = 2;
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
  cfg.sequence_length = 2;
  return cfg;
}

// Two trivially separable single-frame classes: bright left half vs bright
// right half, plus per-sample noise so the samples are not identical.
template <typename T>
std::vector<SequenceSample<T>> toy_samples(int per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SequenceSample<T>> out;
  for (int i = 0; i < 2 * per_class; ++i) {
    SequenceSample<T> s;
    s.label = i % 2;
    s.instance_id = "toy-" + std::to_string(i);
    TensorT<T> frame({1, 8, 8});
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const bool lit = s.label == 0 ? x < 4 : x >= 4;
        frame(0, y, x) = static_cast<T>((lit ? 1.0 : 0.0) + 0.05 * (rng.uniform() - 0.5));
      }
    }
    s.frames.push_back(std::move(frame));
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
const ParamRef<T>* find_param(std::vector<ParamRef<T>>& params, const std::string& name) {
  for (const ParamRef<T>& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.init = "xavier";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("he initialization: scale, zero biases, forget bias one") {
  ModelConfig cfg = toy_config();
  cfg.input_h = cfg.input_w = 16;
  cfg.conv1 = {3, 1, 4};
  cfg.conv2 = {3, 1, 8};
  cfg.conv3 = {3, 1, 8};
  cfg.fc_dim = 1024;  // fc1.W gets 1024 x 128 entries for tight statistics
  std::unique_ptr<Model<double>> model = build_motion<double>(cfg);
  init_weights(*model, "he", 42);
  std::vector<ParamRef<double>> params = model->params();

  SUBCASE("weight tensors follow sqrt(2 / fan_in)") {
    const ParamRef<double>* fc1 = find_param(params, "fc1.weights");
    REQUIRE(fc1 != nullptr);
    const std::int64_t n = fc1->value->size();
    const std::int64_t fan_in = fc1->value->extent(1);
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      sum += (*fc1->value)[i];
      sq += (*fc1->value)[i] * (*fc1->value)[i];
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    const double want_std = std::sqrt(2.0 / static_cast<double>(fan_in));
    CHECK(std::fabs(mean) < 0.01 * want_std);
    CHECK(std::sqrt(var) == doctest::Approx(want_std).epsilon(0.05));
  }

  SUBCASE("biases are zero except the forget gates") {
    int forget_biases = 0;
    for (const ParamRef<double>& p : params) {
      if (!(p.name.ends_with(".b") || p.name.ends_with(".bias"))) continue;
      const bool forget = p.name.ends_with(".f.b");
      forget_biases += forget;
      for (std::int64_t i = 0; i < p.value->size(); ++i) {
        CHECK((*p.value)[i] == (forget ? 1.0 : 0.0));
      }
    }
    CHECK(forget_biases == 2);  // one per direction
  }

  SUBCASE("deterministic in the seed") {
    std::unique_ptr<Model<double>> again = build_motion<double>(cfg);
    init_weights(*again, "he", 42);
    std::unique_ptr<Model<double>> other = build_motion<double>(cfg);
    init_weights(*other, "he", 43);
    std::vector<ParamRef<double>> a = again->params();
    std::vector<ParamRef<double>> o = other->params();
    bool same_42 = true, same_43 = true;
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::int64_t i = 0; i < params[t].value->size(); ++i) {
        same_42 = same_42 && (*params[t].value)[i] == (*a[t].value)[i];
        same_43 = same_43 && (*params[t].value)[i] == (*o[t].value)[i];
      }
    }
    CHECK(same_42);
    CHECK(!same_43);
  }

  SUBCASE("unknown scheme is rejected") {
    CHECK_THROWS_AS(init_weights(*model, "uniform", 1), ConfigError);
  }
}

TEST_CASE("sgd_step applies p -= lr * g exactly") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(toy_config());
  init_weights(*model, "he", 7);
  std::vector<ParamRef<double>> params = model->params();
  std::vector<TensorT<double>> before;
  for (const ParamRef<double>& p : params) {
    before.push_back(*p.value);
    for (std::int64_t i = 0; i < p.grad->size(); ++i) {
      (*p.grad)[i] = 0.25 * static_cast<double>(i % 7) - 0.5;
    }
  }
  sgd_step(params, 0.125);
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::int64_t i = 0; i < params[t].value->size(); ++i) {
      CHECK((*params[t].value)[i] == before[t][i] - 0.125 * (*params[t].grad)[i]);
    }
  }
}

TEST_CASE("sgd_step rejects non-finite gradients by tensor name") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(toy_config());
  init_weights(*model, "he", 7);
  std::vector<ParamRef<double>> params = model->params();
  model->zero_grads();
  (*params[2].grad)[0] = std::numeric_limits<double>::infinity();
  try {
    sgd_step(params, 0.1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find(params[2].name) != std::string::npos);
  }
}

TEST_CASE("train_loop drives a separable toy problem to full accuracy") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(toy_config());
  init_weights(*model, "he", 3);
  const std::vector<SequenceSample<double>> train = toy_samples<double>(8, 11);
  const std::vector<SequenceSample<double>> val = toy_samples<double>(4, 12);

  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.seed = 5;
  std::ostringstream log;
  const TrainResult result = train_loop(*model, train, val, cfg, &log);

  REQUIRE(result.history.size() == 30);
  CHECK(result.history.front().epoch == 1);
  CHECK(result.history.back().epoch == 30);
  CHECK(result.history.back().train_acc == 1.0);
  CHECK(result.history.back().mean_loss < result.history.front().mean_loss);
  CHECK(result.best_val_acc == 1.0);

  // The log is one CSV line per epoch under a fixed header.
  std::istringstream lines(log.str());
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "epoch,mean_loss,train_acc,val_acc");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 30);
}

TEST_CASE("train_loop restores the best-validation parameters") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(toy_config());
  init_weights(*model, "he", 9);
  const std::vector<SequenceSample<double>> train = toy_samples<double>(6, 21);
  const std::vector<SequenceSample<double>> val = toy_samples<double>(4, 22);

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 8;
  cfg.batch_size = 3;
  cfg.seed = 2;
  const TrainResult result = train_loop(*model, train, val, cfg, nullptr);

  double best = 0.0;
  int best_epoch = 0;
  for (const EpochStats& s : result.history) {
    if (s.val_acc > best) {
      best = s.val_acc;
      best_epoch = s.epoch;
    }
  }
  CHECK(result.best_val_acc == best);
  CHECK(result.best_epoch == best_epoch);
  // The model's parameters reproduce the reported best accuracy.
  CHECK(evaluate(*model, val).accuracy == doctest::Approx(result.best_val_acc));
}

TEST_CASE("train_loop without validation keeps the final parameters") {
  std::unique_ptr<Model<double>> model = build_baseline<double>(toy_config());
  init_weights(*model, "he", 13);
  const std::vector<SequenceSample<double>> train = toy_samples<double>(4, 31);

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  const TrainResult result = train_loop(*model, train, {}, cfg, nullptr);
  CHECK(result.best_epoch == 3);
  for (const EpochStats& s : result.history) CHECK(s.val_acc == 0.0);
}

TEST_CASE("train_loop raises TrainingError when the loss diverges") {
  // float saturates to inf within an epoch at this rate; the LCN stage keeps
  // a double model finite far longer, so overflow is probed where it bites.
  std::unique_ptr<Model<float>> model = build_baseline<float>(toy_config());
  init_weights(*model, "he", 3);
  const std::vector<SequenceSample<float>> train = toy_samples<float>(4, 41);
  TrainConfig cfg;
  cfg.learning_rate = 1e30;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  CHECK_THROWS_AS(train_loop(*model, train, {}, cfg, nullptr), TrainingError);
}

TEST_CASE("identical runs agree bitwise, including the dropout path") {
  ModelConfig mcfg = toy_config();
  mcfg.dropout_p = 0.5;
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.seed = 77;

  const auto run = [&](std::string* log_out) {
    std::unique_ptr<Model<float>> model = build_baseline<float>(mcfg);
    init_weights(*model, "he", 8);
    const std::vector<SequenceSample<float>> train = toy_samples<float>(6, 51);
    const std::vector<SequenceSample<float>> val = toy_samples<float>(3, 52);
    std::ostringstream log;
    train_loop(*model, train, val, cfg, &log);
    *log_out = log.str();
    std::vector<float> flat;
    for (const ParamRef<float>& p : model->params()) {
      flat.insert(flat.end(), p.value->data(), p.value->data() + p.value->size());
    }
    return flat;
  };

  std::string log_a, log_b;
  const std::vector<float> a = run(&log_a);
  const std::vector<float> b = run(&log_b);
  CHECK(log_a == log_b);
  CHECK(a == b);
}

TEST_CASE("grad_check validates its arguments") {
  std::unique_ptr<Model<float>> fmodel = build_baseline<float>(toy_config());
  SequenceSample<float> fsample;
  fsample.frames.emplace_back(std::vector<int>{1, 8, 8});
  CHECK_THROWS_AS(grad_check(*fmodel, fsample, 1e-5, 1, 1), ConfigError);

  std::unique_ptr<Model<double>> model = build_baseline<double>(toy_config());
  init_weights(*model, "he", 1);
  SequenceSample<double> sample;
  sample.frames.emplace_back(std::vector<int>{1, 8, 8});
  CHECK_THROWS_AS(grad_check(*model, sample, 0.0, 1, 1), ArgumentError);
  CHECK_THROWS_AS(grad_check(*model, sample, 1e-5, 0, 1), ArgumentError);
}

TEST_CASE("grad_check accepts the analytic gradients of both models") {
  Rng rng(99);
  for (ModelKind kind : {ModelKind::kBaseline, ModelKind::kMotion}) {
    std::unique_ptr<Model<double>> model = build_model<double>(kind, toy_config());
    init_weights(*model, "he", 4);
    SequenceSample<double> sample;
    sample.label = 1;
    const int frames = kind == ModelKind::kMotion ? 2 : 1;
    for (int f = 0; f < frames; ++f) {
      TensorT<double> frame({1, 8, 8});
      for (std::int64_t i = 0; i < frame.size(); ++i) frame[i] = rng.uniform() - 0.5;
      sample.frames.push_back(std::move(frame));
    }
    const GradCheckReport report = grad_check(*model, sample, 1e-5, 2, 17);
    CAPTURE(report.worst_tensor);
    CHECK(report.max_rel_err < 1e-6);
    CHECK(report.tensors.size() == model->params().size());
    CHECK(!report.worst_tensor.empty());
  }
}

}  // TEST_SUITE("train")
