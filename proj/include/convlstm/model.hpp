#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "convlstm/layers.hpp"
#include "convlstm/lstm.hpp"
#include "convlstm/tensor.hpp"

namespace convlstm {

enum class ModelKind { kBaseline, kMotion };

struct ConvCfg {
  int filter = 3;
  int stride = 1;
  int depth = 1;
};

// One declarative description covers both model kinds; the motion model
// additionally reads the lstm/merge/sequence fields.
struct ModelConfig {
  int input_h = 64, input_w = 64, input_channels = 3;
  int num_classes = 51;

  // Trunk: conv1 -> pool -> conv2 -> pool -> LCN -> conv3 -> pool. Trunk
  // convolutions use same padding so the stride alone sets the downsampling.
  ConvCfg conv1{5, 2, 64};
  ConvCfg conv2{3, 1, 128};
  ConvCfg conv3{3, 1, 128};
  int pool1 = 2, pool2 = 2, pool3 = 2;  // window == stride
  int lcn_window = 5;
  double lcn_epsilon = 1e-4;

  int fc_dim = 4096;
  double dropout_p = 0.5;

  GateKind gate_kind = GateKind::kConvolutional;
  int lstm_filter = 5;
  int lstm_depth = 256;
  // Fully connected gates: hidden length; 0 derives depth*feature_h*feature_w
  // so both gate kinds carry equally sized hidden states.
  int lstm_hidden = 0;
  MergeMode merge = MergeMode::kConcatChannels;
  int sequence_length = 2;

  void validate(ModelKind kind) const;
};

// Spatial extents after each trunk stage, all required positive.
struct TrunkShapes {
  int conv1_hw[2], pool1_hw[2], conv2_hw[2], pool2_hw[2], conv3_hw[2], pool3_hw[2];
  int feature_channels = 0;  // conv3 depth
  int feature_h = 0, feature_w = 0;

  static TrunkShapes derive(const ModelConfig& config);
};

template <typename T>
struct TrunkCache {
  typename ConvLayer<T>::Cache conv1, conv2, conv3;
  typename PoolLayer<T>::Cache pool1, pool2, pool3;
  typename LcnLayer<T>::Cache lcn;
};

// The three conv/pool stages shared by both models.
template <typename T>
class Trunk {
 public:
  Trunk() = default;
  explicit Trunk(const ModelConfig& config);

  TensorT<T> forward(const TensorT<T>& image, TrunkCache<T>* cache) const;
  TensorT<T> backward(const TrunkCache<T>& cache, const TensorT<T>& grad_out);

  std::vector<ParamRef<T>> params();
  void zero_grads();

 private:
  ConvLayer<T> conv1_, conv2_, conv3_;
  PoolLayer<T> pool1_, pool2_, pool3_;
  LcnLayer<T> lcn_;
};

template <typename T>
class Model {
 public:
  virtual ~Model() = default;

  virtual ModelKind kind() const = 0;
  virtual const ModelConfig& config() const = 0;

  // Returns logits and fills internal caches for backward. frames must hold
  // exactly one frame for the baseline, sequence_length frames for motion.
  virtual TensorT<T> forward(const std::vector<TensorT<T>>& frames, Mode mode,
                             DropoutStreams* streams) = 0;
  virtual void backward(const TensorT<T>& grad_logits) = 0;

  TensorT<T> predict(const std::vector<TensorT<T>>& frames) {
    return softmax(forward(frames, Mode::kEval, nullptr));
  }

  virtual std::vector<ParamRef<T>> params() = 0;
  void zero_grads() {
    for (auto& p : params()) p.grad->zero();
  }

  // Training-set channel means, carried with snapshots so evaluation applies
  // the same centering.
  std::vector<double>& channel_means() { return channel_means_; }
  const std::vector<double>& channel_means() const { return channel_means_; }
  std::uint64_t& creation_seed() { return creation_seed_; }

 private:
  std::vector<double> channel_means_;
  std::uint64_t creation_seed_ = 0;
};

template <typename T>
class BaselineModel : public Model<T> {
 public:
  explicit BaselineModel(const ModelConfig& config);

  ModelKind kind() const override { return ModelKind::kBaseline; }
  const ModelConfig& config() const override { return config_; }
  TensorT<T> forward(const std::vector<TensorT<T>>& frames, Mode mode,
                     DropoutStreams* streams) override;
  void backward(const TensorT<T>& grad_logits) override;
  std::vector<ParamRef<T>> params() override;

 private:
  ModelConfig config_;
  TrunkShapes shapes_;
  Trunk<T> trunk_;
  FcLayer<T> fc1_, fc2_, fc3_;
  DropoutLayer<T> drop1_, drop2_;

  TrunkCache<T> trunk_cache_;
  typename FcLayer<T>::Cache fc1_cache_, fc2_cache_, fc3_cache_;
  typename DropoutLayer<T>::Cache drop1_cache_, drop2_cache_;
  std::vector<int> feature_shape_;
};

template <typename T>
class MotionModel : public Model<T> {
 public:
  explicit MotionModel(const ModelConfig& config);

  ModelKind kind() const override { return ModelKind::kMotion; }
  const ModelConfig& config() const override { return config_; }
  TensorT<T> forward(const std::vector<TensorT<T>>& frames, Mode mode,
                     DropoutStreams* streams) override;
  void backward(const TensorT<T>& grad_logits) override;
  std::vector<ParamRef<T>> params() override;

  const LstmCell<T>& forward_cell() const { return fwd_; }
  const LstmCell<T>& backward_cell() const { return bwd_; }

 private:
  ModelConfig config_;
  TrunkShapes shapes_;
  Trunk<T> trunk_;
  LstmCell<T> fwd_, bwd_;
  FcLayer<T> fc1_, fc2_;

  std::vector<TrunkCache<T>> trunk_caches_;
  std::vector<std::vector<int>> feature_shapes_;
  BidirCache<T> bidir_cache_;
  std::vector<int> merged_shape_;
  typename FcLayer<T>::Cache fc1_cache_, fc2_cache_;
};

template <typename T>
std::unique_ptr<Model<T>> build_baseline(const ModelConfig& config);

template <typename T>
std::unique_ptr<Model<T>> build_motion(const ModelConfig& config);

template <typename T>
std::unique_ptr<Model<T>> build_model(ModelKind kind, const ModelConfig& config);

template <typename T>
std::int64_t param_count(Model<T>& model);

// Snapshot directory: one TEN1 file per parameter ("<name>.ten"), training
// channel means in "channel_means.ten", and a plain-text "model.meta" with
// key=value lines for kind, config fields and creation seed.
template <typename T>
void save_model(Model<T>& model, const std::string& dir);

template <typename T>
std::unique_ptr<Model<T>> load_model(const std::string& dir);

std::string kind_name(ModelKind kind);
ModelKind parse_kind(const std::string& name);
std::string merge_name(MergeMode merge);
MergeMode parse_merge(const std::string& name);
std::string gate_kind_name(GateKind kind);
GateKind parse_gate_kind(const std::string& name);

}  // namespace convlstm
