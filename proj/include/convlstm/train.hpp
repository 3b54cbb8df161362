#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "convlstm/data.hpp"
#include "convlstm/model.hpp"

namespace convlstm {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 1;
  std::string init = "he";

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;  // epoch whose parameters the model holds afterwards
  double best_val_acc = 0.0;
};

// He-scaled normal weights, zero biases, forget-gate bias +1.
template <typename T>
void init_weights(Model<T>& model, const std::string& scheme, std::uint64_t seed);

// p <- p - lr * g; any non-finite gradient aborts, naming the tensor.
template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, double learning_rate);

// Plain minibatch SGD. Shuffle order is a pure function of (seed, epoch),
// dropout masks of (seed, epoch, batch, layer); identical runs agree bitwise.
// Per epoch one CSV line `epoch,mean_loss,train_acc,val_acc` goes to log.
// When val is nonempty, the best-validation epoch's parameters are restored
// into the model at the end.
template <typename T>
TrainResult train_loop(Model<T>& model, const std::vector<SequenceSample<T>>& train,
                       const std::vector<SequenceSample<T>>& val, const TrainConfig& config,
                       std::ostream* log);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_err = 0.0;
  std::string worst_tensor;
};

// Central differences (L(p+e)-L(p-e))/2e against the analytic gradient on
// >= coords_per_tensor sampled coordinates per tensor (all, if fewer).
// Relative error |a-n| / max(|a|, |n|, r) where r is the smallest gradient a
// central difference can resolve (see kGradResolution). Double precision only.
template <typename T>
GradCheckReport grad_check(Model<T>& model, const SequenceSample<T>& sample, double epsilon,
                           int coords_per_tensor, std::uint64_t seed);

}  // namespace convlstm
