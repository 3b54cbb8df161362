#include "convlstm/model.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "convlstm/ten_io.hpp"

namespace convlstm {

namespace {

void check_conv_cfg(const ConvCfg& cfg, const char* name) {
  if (cfg.filter < 1 || cfg.stride < 1 || cfg.depth < 1) {
    throw ConfigError(std::string(name) + ": filter, stride and depth must be >= 1");
  }
}

int pooled_extent(int in, int window, const char* stage) {
  if (window < 1) throw ConfigError(std::string(stage) + ": pool window must be >= 1");
  if (in < window) {
    throw ConfigError(std::string(stage) + ": pool window " + std::to_string(window) +
                      " exceeds extent " + std::to_string(in));
  }
  return (in - window) / window + 1;
}

ConvSpec trunk_spec(const ConvCfg& cfg, int in_channels) {
  ConvSpec spec;
  spec.filter_size = cfg.filter;
  spec.stride = cfg.stride;
  spec.in_channels = in_channels;
  spec.out_channels = cfg.depth;
  spec.padding = ConvSpec::same_padding(cfg.filter);
  return spec;
}

}  // namespace

void ModelConfig::validate(ModelKind kind) const {
  if (input_h < 1 || input_w < 1 || input_channels < 1) {
    throw ConfigError("input resolution must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  check_conv_cfg(conv1, "conv1");
  check_conv_cfg(conv2, "conv2");
  check_conv_cfg(conv3, "conv3");
  if (lcn_window < 1 || lcn_window % 2 == 0) throw ConfigError("lcn_window must be odd");
  if (lcn_epsilon <= 0.0) throw ConfigError("lcn_epsilon must be > 0");
  if (fc_dim < 1) throw ConfigError("fc_dim must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
  if (kind == ModelKind::kMotion) {
    if (sequence_length < 2) throw ConfigError("motion model requires sequence_length >= 2");
    GateTransformSpec gate;
    gate.kind = gate_kind;
    gate.hidden_dim = lstm_hidden > 0 ? lstm_hidden : 1;
    gate.filter_size = lstm_filter;
    gate.depth = lstm_depth;
    gate.validate();
  }
  TrunkShapes::derive(*this);  // throws on any nonpositive derived extent
}

TrunkShapes TrunkShapes::derive(const ModelConfig& config) {
  TrunkShapes s;
  try {
    ConvSpec c1 = trunk_spec(config.conv1, config.input_channels);
    s.conv1_hw[0] = c1.out_extent(config.input_h);
    s.conv1_hw[1] = c1.out_extent(config.input_w);
    s.pool1_hw[0] = pooled_extent(s.conv1_hw[0], config.pool1, "pool1");
    s.pool1_hw[1] = pooled_extent(s.conv1_hw[1], config.pool1, "pool1");
    ConvSpec c2 = trunk_spec(config.conv2, config.conv1.depth);
    s.conv2_hw[0] = c2.out_extent(s.pool1_hw[0]);
    s.conv2_hw[1] = c2.out_extent(s.pool1_hw[1]);
    s.pool2_hw[0] = pooled_extent(s.conv2_hw[0], config.pool2, "pool2");
    s.pool2_hw[1] = pooled_extent(s.conv2_hw[1], config.pool2, "pool2");
    ConvSpec c3 = trunk_spec(config.conv3, config.conv2.depth);
    s.conv3_hw[0] = c3.out_extent(s.pool2_hw[0]);
    s.conv3_hw[1] = c3.out_extent(s.pool2_hw[1]);
    s.pool3_hw[0] = pooled_extent(s.conv3_hw[0], config.pool3, "pool3");
    s.pool3_hw[1] = pooled_extent(s.conv3_hw[1], config.pool3, "pool3");
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("trunk produces a nonpositive extent: ") + e.what());
  }
  s.feature_channels = config.conv3.depth;
  s.feature_h = s.pool3_hw[0];
  s.feature_w = s.pool3_hw[1];
  return s;
}

// ---------------------------------------------------------------------------

template <typename T>
Trunk<T>::Trunk(const ModelConfig& config)
    : conv1_(trunk_spec(config.conv1, config.input_channels)),
      conv2_(trunk_spec(config.conv2, config.conv1.depth)),
      conv3_(trunk_spec(config.conv3, config.conv2.depth)),
      pool1_(config.pool1, config.pool1),
      pool2_(config.pool2, config.pool2),
      pool3_(config.pool3, config.pool3),
      lcn_(config.lcn_window, static_cast<T>(config.lcn_epsilon)) {}

template <typename T>
TensorT<T> Trunk<T>::forward(const TensorT<T>& image, TrunkCache<T>* cache) const {
  TrunkCache<T> local;
  TrunkCache<T>& c = cache != nullptr ? *cache : local;
  TensorT<T> t = conv1_.forward(image, &c.conv1);
  t = pool1_.forward(t, &c.pool1);
  t = conv2_.forward(t, &c.conv2);
  t = pool2_.forward(t, &c.pool2);
  t = lcn_.forward(t, &c.lcn);
  t = conv3_.forward(t, &c.conv3);
  return pool3_.forward(t, &c.pool3);
}

template <typename T>
TensorT<T> Trunk<T>::backward(const TrunkCache<T>& cache, const TensorT<T>& grad_out) {
  TensorT<T> g = pool3_.backward(cache.pool3, grad_out);
  g = conv3_.backward(cache.conv3, g);
  g = lcn_.backward(cache.lcn, g);
  g = pool2_.backward(cache.pool2, g);
  g = conv2_.backward(cache.conv2, g);
  g = pool1_.backward(cache.pool1, g);
  return conv1_.backward(cache.conv1, g);
}

template <typename T>
std::vector<ParamRef<T>> Trunk<T>::params() {
  std::vector<ParamRef<T>> out = conv1_.params("conv1");
  for (auto& p : conv2_.params("conv2")) out.push_back(p);
  for (auto& p : conv3_.params("conv3")) out.push_back(p);
  return out;
}

template <typename T>
void Trunk<T>::zero_grads() {
  conv1_.zero_grads();
  conv2_.zero_grads();
  conv3_.zero_grads();
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_frame_shape(const TensorT<T>& frame, const ModelConfig& config) {
  const std::vector<int> expect = {config.input_channels, config.input_h, config.input_w};
  if (frame.shape() != expect) {
    throw DimensionError("frame shape " + frame.shape_string() + " does not match configured " +
                         TensorT<T>::shape_string(expect));
  }
}

}  // namespace

template <typename T>
BaselineModel<T>::BaselineModel(const ModelConfig& config)
    : config_(config), shapes_(TrunkShapes::derive(config)) {
  config_.validate(ModelKind::kBaseline);
  trunk_ = Trunk<T>(config_);
  const int flat = shapes_.feature_channels * shapes_.feature_h * shapes_.feature_w;
  fc1_ = FcLayer<T>(flat, config_.fc_dim);
  fc2_ = FcLayer<T>(config_.fc_dim, config_.fc_dim);
  fc3_ = FcLayer<T>(config_.fc_dim, config_.num_classes);
  drop1_ = DropoutLayer<T>(config_.dropout_p);
  drop2_ = DropoutLayer<T>(config_.dropout_p);
  this->channel_means().assign(static_cast<std::size_t>(config_.input_channels), 0.0);
}

template <typename T>
TensorT<T> BaselineModel<T>::forward(const std::vector<TensorT<T>>& frames, Mode mode,
                                     DropoutStreams* streams) {
  if (frames.size() != 1) throw ArgumentError("baseline model consumes exactly one frame");
  check_frame_shape(frames[0], config_);
  TensorT<T> feat = trunk_.forward(frames[0], &trunk_cache_);
  feature_shape_ = feat.shape();
  TensorT<T> t = feat.reshaped({static_cast<int>(feat.size())});
  t = fc1_.forward(t, &fc1_cache_);
  t = drop1_.forward(t, mode, streams != nullptr ? &streams->layer(0) : nullptr, &drop1_cache_);
  t = fc2_.forward(t, &fc2_cache_);
  t = drop2_.forward(t, mode, streams != nullptr ? &streams->layer(1) : nullptr, &drop2_cache_);
  return fc3_.forward(t, &fc3_cache_);
}

template <typename T>
void BaselineModel<T>::backward(const TensorT<T>& grad_logits) {
  if (feature_shape_.empty()) throw ArgumentError("backward before forward");
  TensorT<T> g = fc3_.backward(fc3_cache_, grad_logits);
  g = drop2_.backward(drop2_cache_, g);
  g = fc2_.backward(fc2_cache_, g);
  g = drop1_.backward(drop1_cache_, g);
  g = fc1_.backward(fc1_cache_, g);
  g = g.reshaped(feature_shape_);
  trunk_.backward(trunk_cache_, g);
}

template <typename T>
std::vector<ParamRef<T>> BaselineModel<T>::params() {
  std::vector<ParamRef<T>> out = trunk_.params();
  for (auto& p : fc1_.params("fc1")) out.push_back(p);
  for (auto& p : fc2_.params("fc2")) out.push_back(p);
  for (auto& p : fc3_.params("fc3")) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
MotionModel<T>::MotionModel(const ModelConfig& config)
    : config_(config), shapes_(TrunkShapes::derive(config)) {
  config_.validate(ModelKind::kMotion);
  trunk_ = Trunk<T>(config_);

  const int flat_feature = shapes_.feature_channels * shapes_.feature_h * shapes_.feature_w;
  GateTransformSpec gate;
  gate.kind = config_.gate_kind;
  gate.filter_size = config_.lstm_filter;
  gate.depth = config_.lstm_depth;
  gate.hidden_dim = config_.lstm_hidden > 0
                        ? config_.lstm_hidden
                        : config_.lstm_depth * shapes_.feature_h * shapes_.feature_w;
  const int input_dim =
      gate.kind == GateKind::kConvolutional ? shapes_.feature_channels : flat_feature;
  fwd_ = LstmCell<T>(gate, input_dim, /*use_forget_gate=*/true);
  bwd_ = LstmCell<T>(gate, input_dim, /*use_forget_gate=*/true);

  const int state_size = gate.kind == GateKind::kConvolutional
                             ? gate.depth * shapes_.feature_h * shapes_.feature_w
                             : gate.hidden_dim;
  const int merged = config_.merge == MergeMode::kConcatChannels ? 2 * state_size : state_size;
  fc1_ = FcLayer<T>(merged, config_.fc_dim);
  fc2_ = FcLayer<T>(config_.fc_dim, config_.num_classes);
  this->channel_means().assign(static_cast<std::size_t>(config_.input_channels), 0.0);
}

template <typename T>
TensorT<T> MotionModel<T>::forward(const std::vector<TensorT<T>>& frames, Mode mode,
                                   DropoutStreams* streams) {
  (void)mode;
  (void)streams;  // the motion head carries no dropout
  if (static_cast<int>(frames.size()) != config_.sequence_length) {
    throw ArgumentError("motion model expects " + std::to_string(config_.sequence_length) +
                        " frames, got " + std::to_string(frames.size()));
  }
  trunk_caches_.resize(frames.size());
  feature_shapes_.resize(frames.size());
  std::vector<TensorT<T>> xs;
  xs.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    check_frame_shape(frames[t], config_);
    TensorT<T> feat = trunk_.forward(frames[t], &trunk_caches_[t]);
    feature_shapes_[t] = feat.shape();
    if (config_.gate_kind == GateKind::kFullyConnected) {
      feat = feat.reshaped({static_cast<int>(feat.size())});
    }
    xs.push_back(std::move(feat));
  }
  TensorT<T> merged = bidirectional_run(xs, fwd_, bwd_, config_.merge, &bidir_cache_);
  merged_shape_ = merged.shape();
  TensorT<T> t = merged.reshaped({static_cast<int>(merged.size())});
  t = fc1_.forward(t, &fc1_cache_);
  return fc2_.forward(t, &fc2_cache_);
}

template <typename T>
void MotionModel<T>::backward(const TensorT<T>& grad_logits) {
  if (merged_shape_.empty()) throw ArgumentError("backward before forward");
  TensorT<T> g = fc2_.backward(fc2_cache_, grad_logits);
  g = fc1_.backward(fc1_cache_, g);
  g = g.reshaped(merged_shape_);
  std::vector<TensorT<T>> gxs =
      bidirectional_backward(fwd_, bwd_, bidir_cache_, config_.merge, g);
  for (std::size_t t = 0; t < gxs.size(); ++t) {
    if (config_.gate_kind == GateKind::kFullyConnected) {
      trunk_.backward(trunk_caches_[t], gxs[t].reshaped(feature_shapes_[t]));
    } else {
      trunk_.backward(trunk_caches_[t], gxs[t]);
    }
  }
}

template <typename T>
std::vector<ParamRef<T>> MotionModel<T>::params() {
  std::vector<ParamRef<T>> out = trunk_.params();
  for (auto& p : fwd_.params("fwd")) out.push_back(p);
  for (auto& p : bwd_.params("bwd")) out.push_back(p);
  for (auto& p : fc1_.params("fc1")) out.push_back(p);
  for (auto& p : fc2_.params("fc2")) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Model<T>> build_baseline(const ModelConfig& config) {
  config.validate(ModelKind::kBaseline);
  return std::make_unique<BaselineModel<T>>(config);
}

template <typename T>
std::unique_ptr<Model<T>> build_motion(const ModelConfig& config) {
  config.validate(ModelKind::kMotion);
  return std::make_unique<MotionModel<T>>(config);
}

template <typename T>
std::unique_ptr<Model<T>> build_model(ModelKind kind, const ModelConfig& config) {
  return kind == ModelKind::kBaseline ? build_baseline<T>(config) : build_motion<T>(config);
}

template <typename T>
std::int64_t param_count(Model<T>& model) {
  std::int64_t n = 0;
  for (const auto& p : model.params()) n += p.value->size();
  return n;
}

// ---------------------------------------------------------------------------

std::string kind_name(ModelKind kind) {
  return kind == ModelKind::kBaseline ? "baseline" : "motion";
}

ModelKind parse_kind(const std::string& name) {
  if (name == "baseline") return ModelKind::kBaseline;
  if (name == "motion") return ModelKind::kMotion;
  throw ConfigError("unknown model kind '" + name + "'");
}

std::string merge_name(MergeMode merge) {
  return merge == MergeMode::kConcatChannels ? "concat" : "sum";
}

MergeMode parse_merge(const std::string& name) {
  if (name == "concat") return MergeMode::kConcatChannels;
  if (name == "sum") return MergeMode::kElementwiseSum;
  throw ConfigError("unknown merge mode '" + name + "'");
}

std::string gate_kind_name(GateKind kind) {
  return kind == GateKind::kConvolutional ? "conv" : "fc";
}

GateKind parse_gate_kind(const std::string& name) {
  if (name == "conv") return GateKind::kConvolutional;
  if (name == "fc") return GateKind::kFullyConnected;
  throw ConfigError("unknown gate kind '" + name + "'");
}

namespace {

std::map<std::string, std::string> config_entries(ModelKind kind, const ModelConfig& c,
                                                  std::uint64_t seed) {
  std::map<std::string, std::string> m;
  auto put = [&m](const std::string& k, auto v) {
    std::ostringstream os;
    os << v;
    m[k] = os.str();
  };
  put("format", 1);
  m["kind"] = kind_name(kind);
  put("input_h", c.input_h);
  put("input_w", c.input_w);
  put("input_channels", c.input_channels);
  put("num_classes", c.num_classes);
  put("conv1.filter", c.conv1.filter);
  put("conv1.stride", c.conv1.stride);
  put("conv1.depth", c.conv1.depth);
  put("conv2.filter", c.conv2.filter);
  put("conv2.stride", c.conv2.stride);
  put("conv2.depth", c.conv2.depth);
  put("conv3.filter", c.conv3.filter);
  put("conv3.stride", c.conv3.stride);
  put("conv3.depth", c.conv3.depth);
  put("pool1", c.pool1);
  put("pool2", c.pool2);
  put("pool3", c.pool3);
  put("lcn_window", c.lcn_window);
  put("lcn_epsilon", c.lcn_epsilon);
  put("fc_dim", c.fc_dim);
  put("dropout_p", c.dropout_p);
  m["gate_kind"] = gate_kind_name(c.gate_kind);
  put("lstm_filter", c.lstm_filter);
  put("lstm_depth", c.lstm_depth);
  put("lstm_hidden", c.lstm_hidden);
  m["merge"] = merge_name(c.merge);
  put("sequence_length", c.sequence_length);
  put("seed", seed);
  return m;
}

class MetaReader {
 public:
  explicit MetaReader(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError(path + " line " + std::to_string(lineno) + ": expected key=value");
      }
      entries_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw FormatError("model.meta is missing key '" + key + "'");
    return it->second;
  }

  int get_int(const std::string& key) const { return std::stoi(get(key)); }
  double get_double(const std::string& key) const { return std::stod(get(key)); }
  std::uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace

template <typename T>
void save_model(Model<T>& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ofstream meta(fs::path(dir) / "model.meta");
  if (!meta) throw FormatError("cannot write model.meta in " + dir);
  for (const auto& [k, v] : config_entries(model.kind(), model.config(), model.creation_seed())) {
    meta << k << "=" << v << "\n";
  }
  meta.close();

  for (const auto& p : model.params()) {
    save_ten1((fs::path(dir) / (p.name + ".ten")).string(), *p.value);
  }
  const auto& means = model.channel_means();
  TensorT<float> means32({static_cast<int>(means.size())});
  for (std::size_t i = 0; i < means.size(); ++i) means32[i] = static_cast<float>(means[i]);
  save_ten1((fs::path(dir) / "channel_means.ten").string(), means32);
}

template <typename T>
std::unique_ptr<Model<T>> load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  MetaReader meta((fs::path(dir) / "model.meta").string());

  ModelConfig c;
  ModelKind kind = parse_kind(meta.get("kind"));
  c.input_h = meta.get_int("input_h");
  c.input_w = meta.get_int("input_w");
  c.input_channels = meta.get_int("input_channels");
  c.num_classes = meta.get_int("num_classes");
  c.conv1 = {meta.get_int("conv1.filter"), meta.get_int("conv1.stride"),
             meta.get_int("conv1.depth")};
  c.conv2 = {meta.get_int("conv2.filter"), meta.get_int("conv2.stride"),
             meta.get_int("conv2.depth")};
  c.conv3 = {meta.get_int("conv3.filter"), meta.get_int("conv3.stride"),
             meta.get_int("conv3.depth")};
  c.pool1 = meta.get_int("pool1");
  c.pool2 = meta.get_int("pool2");
  c.pool3 = meta.get_int("pool3");
  c.lcn_window = meta.get_int("lcn_window");
  c.lcn_epsilon = meta.get_double("lcn_epsilon");
  c.fc_dim = meta.get_int("fc_dim");
  c.dropout_p = meta.get_double("dropout_p");
  c.gate_kind = parse_gate_kind(meta.get("gate_kind"));
  c.lstm_filter = meta.get_int("lstm_filter");
  c.lstm_depth = meta.get_int("lstm_depth");
  c.lstm_hidden = meta.get_int("lstm_hidden");
  c.merge = parse_merge(meta.get("merge"));
  c.sequence_length = meta.get_int("sequence_length");

  std::unique_ptr<Model<T>> model = build_model<T>(kind, c);
  model->creation_seed() = meta.get_u64("seed");

  for (const auto& p : model->params()) {
    TensorT<float> loaded = load_ten1((fs::path(dir) / (p.name + ".ten")).string());
    if (loaded.shape() != p.value->shape()) {
      throw DimensionError("snapshot tensor " + p.name + " has shape " +
                           loaded.shape_string() + ", model expects " +
                           p.value->shape_string());
    }
    *p.value = loaded.template cast<T>();
  }

  TensorT<float> means = load_ten1((fs::path(dir) / "channel_means.ten").string());
  if (means.rank() != 1 || means.extent(0) != c.input_channels) {
    throw DimensionError("channel_means.ten must hold one value per input channel");
  }
  model->channel_means().assign(means.values().begin(), means.values().end());
  return model;
}

#define CONVLSTM_INSTANTIATE_MODEL(T)                                                \
  template class Trunk<T>;                                                           \
  template class BaselineModel<T>;                                                   \
  template class MotionModel<T>;                                                     \
  template std::unique_ptr<Model<T>> build_baseline<T>(const ModelConfig&);          \
  template std::unique_ptr<Model<T>> build_motion<T>(const ModelConfig&);            \
  template std::unique_ptr<Model<T>> build_model<T>(ModelKind, const ModelConfig&);  \
  template std::int64_t param_count<T>(Model<T>&);                                   \
  template void save_model<T>(Model<T>&, const std::string&);                        \
  template std::unique_ptr<Model<T>> load_model<T>(const std::string&);

CONVLSTM_INSTANTIATE_MODEL(float)
CONVLSTM_INSTANTIATE_MODEL(double)

#undef CONVLSTM_INSTANTIATE_MODEL

}  // namespace convlstm
