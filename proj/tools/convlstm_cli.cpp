// convlstm command line: dataset construction, synthetic data, training,
// gradient checking, evaluation and parameter counting in one binary.
//
// Exit codes: 0 success, 2 usage/config, 3 data validation, 4 training
// divergence, 5 gradcheck failure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "convlstm/data.hpp"
#include "convlstm/error.hpp"
#include "convlstm/eval.hpp"
#include "convlstm/model.hpp"
#include "convlstm/rng.hpp"
#include "convlstm/train.hpp"

namespace fs = std::filesystem;
using namespace convlstm;

namespace {

// ---------------------------------------------------------------------------
// small formatting helpers

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// Every command echoes one "config:" line with its fully resolved settings so
// runs are reproducible from their logs alone.
class ConfigEcho {
 public:
  ConfigEcho& kv(const std::string& key, const std::string& value) {
    parts_.push_back(key + "=" + value);
    return *this;
  }
  ConfigEcho& kv(const std::string& key, const char* value) {
    return kv(key, std::string(value));
  }
  ConfigEcho& kv(const std::string& key, int value) { return kv(key, std::to_string(value)); }
  ConfigEcho& kv(const std::string& key, std::int64_t value) {
    return kv(key, std::to_string(value));
  }
  ConfigEcho& kv(const std::string& key, std::uint64_t value) {
    return kv(key, std::to_string(value));
  }
  ConfigEcho& kv(const std::string& key, double value) { return kv(key, fmt_double(value)); }

  void print(std::ostream& out) const {
    out << "config:";
    for (const std::string& p : parts_) out << " " << p;
    out << "\n";
  }

 private:
  std::vector<std::string> parts_;
};

// Mirrors stream output into a second buffer (stdout + log file).
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    if (a_ != nullptr && a_->sputc(static_cast<char>(c)) == traits_type::eof()) return traits_type::eof();
    if (b_ != nullptr && b_->sputc(static_cast<char>(c)) == traits_type::eof()) return traits_type::eof();
    return c;
  }
  int sync() override {
    int rc = 0;
    if (a_ != nullptr) rc |= a_->pubsync();
    if (b_ != nullptr) rc |= b_->pubsync();
    return rc;
  }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

// ---------------------------------------------------------------------------
// model configuration flags shared by train / gradcheck / eval / params

struct ModelFlags {
  std::string preset = "full";
  int input_size = 0;
  int channels = 0;
  int classes = 0;
  int conv1_depth = 0, conv2_depth = 0, conv3_depth = 0;
  int pool1 = 0, pool2 = 0, pool3 = 0;
  int fc_dim = 0;
  double dropout = 0.0;
  std::string gates = "conv";
  std::string merge = "concat";
  int lstm_filter = 0;
  int lstm_depth = 0;
  int lstm_hidden = 0;
  int frames = 0;
};

// Small model for fast double-precision gradient checks and smoke runs.
ModelConfig tiny_model_config() {
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
  cfg.lstm_filter = 3;
  cfg.lstm_depth = 4;
  cfg.sequence_length = 2;
  return cfg;
}

void add_model_flags(CLI::App* cmd, ModelFlags& f, const std::string& default_preset) {
  f.preset = default_preset;
  cmd->add_option("--preset", f.preset, "base architecture: full or tiny")
      ->capture_default_str();
  cmd->add_option("--input-size", f.input_size, "input height and width");
  cmd->add_option("--channels", f.channels, "input channels");
  cmd->add_option("--classes", f.classes, "number of classes");
  cmd->add_option("--conv1-depth", f.conv1_depth, "conv1 output channels");
  cmd->add_option("--conv2-depth", f.conv2_depth, "conv2 output channels");
  cmd->add_option("--conv3-depth", f.conv3_depth, "conv3 output channels");
  cmd->add_option("--pool1", f.pool1, "pool1 window (= stride)");
  cmd->add_option("--pool2", f.pool2, "pool2 window (= stride)");
  cmd->add_option("--pool3", f.pool3, "pool3 window (= stride)");
  cmd->add_option("--fc-dim", f.fc_dim, "hidden width of the classifier head");
  cmd->add_option("--dropout", f.dropout, "dropout probability in [0,1)");
  cmd->add_option("--gates", f.gates, "LSTM gate transform: conv or fc");
  cmd->add_option("--merge", f.merge, "direction merge: concat or sum");
  cmd->add_option("--lstm-filter", f.lstm_filter, "conv-gate filter size (odd)");
  cmd->add_option("--lstm-depth", f.lstm_depth, "conv-gate state channels");
  cmd->add_option("--lstm-hidden", f.lstm_hidden,
                  "fc-gate hidden length (0 derives the conv state size)");
  cmd->add_option("--frames", f.frames, "sequence length for the motion model");
}

ModelConfig resolve_model_config(const CLI::App* cmd, const ModelFlags& f) {
  ModelConfig cfg;
  if (f.preset == "tiny") {
    cfg = tiny_model_config();
  } else if (f.preset != "full") {
    throw ConfigError("unknown preset '" + f.preset + "' (expected full or tiny)");
  }
  if (cmd->count("--input-size") > 0) cfg.input_h = cfg.input_w = f.input_size;
  if (cmd->count("--channels") > 0) cfg.input_channels = f.channels;
  if (cmd->count("--classes") > 0) cfg.num_classes = f.classes;
  if (cmd->count("--conv1-depth") > 0) cfg.conv1.depth = f.conv1_depth;
  if (cmd->count("--conv2-depth") > 0) cfg.conv2.depth = f.conv2_depth;
  if (cmd->count("--conv3-depth") > 0) cfg.conv3.depth = f.conv3_depth;
  if (cmd->count("--pool1") > 0) cfg.pool1 = f.pool1;
  if (cmd->count("--pool2") > 0) cfg.pool2 = f.pool2;
  if (cmd->count("--pool3") > 0) cfg.pool3 = f.pool3;
  if (cmd->count("--fc-dim") > 0) cfg.fc_dim = f.fc_dim;
  if (cmd->count("--dropout") > 0) cfg.dropout_p = f.dropout;
  if (cmd->count("--gates") > 0) cfg.gate_kind = parse_gate_kind(f.gates);
  if (cmd->count("--merge") > 0) cfg.merge = parse_merge(f.merge);
  if (cmd->count("--lstm-filter") > 0) cfg.lstm_filter = f.lstm_filter;
  if (cmd->count("--lstm-depth") > 0) cfg.lstm_depth = f.lstm_depth;
  if (cmd->count("--lstm-hidden") > 0) cfg.lstm_hidden = f.lstm_hidden;
  if (cmd->count("--frames") > 0) cfg.sequence_length = f.frames;
  return cfg;
}

void echo_model_config(ConfigEcho& echo, ModelKind kind, const ModelConfig& cfg) {
  echo.kv("model", kind_name(kind))
      .kv("input", std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) + "x" +
                       std::to_string(cfg.input_channels))
      .kv("classes", cfg.num_classes)
      .kv("conv1", std::to_string(cfg.conv1.filter) + "/" + std::to_string(cfg.conv1.stride) +
                       "/" + std::to_string(cfg.conv1.depth))
      .kv("conv2", std::to_string(cfg.conv2.filter) + "/" + std::to_string(cfg.conv2.stride) +
                       "/" + std::to_string(cfg.conv2.depth))
      .kv("conv3", std::to_string(cfg.conv3.filter) + "/" + std::to_string(cfg.conv3.stride) +
                       "/" + std::to_string(cfg.conv3.depth))
      .kv("pools", std::to_string(cfg.pool1) + "/" + std::to_string(cfg.pool2) + "/" +
                       std::to_string(cfg.pool3))
      .kv("lcn", std::to_string(cfg.lcn_window) + "/" + fmt_double(cfg.lcn_epsilon))
      .kv("fc_dim", cfg.fc_dim)
      .kv("dropout", cfg.dropout_p);
  if (kind == ModelKind::kMotion) {
    echo.kv("gates", gate_kind_name(cfg.gate_kind))
        .kv("lstm_filter", cfg.lstm_filter)
        .kv("lstm_depth", cfg.lstm_depth)
        .kv("lstm_hidden", cfg.lstm_hidden)
        .kv("merge", merge_name(cfg.merge))
        .kv("frames", cfg.sequence_length);
  }
}

// ---------------------------------------------------------------------------
// data plumbing shared by train and eval

struct SynthFlags {
  std::uint64_t seed = 1;
  int instances = 256;
  int image_size = 32;
  double step_deg = 60.0;
  double orbit_radius = 9.0;
  double blob_sigma = 1.6;
  double test_fraction = 0.5;
};

void add_synth_flags(CLI::App* cmd, SynthFlags& f) {
  cmd->add_option("--synth-seed", f.seed, "synthetic dataset seed")->capture_default_str();
  cmd->add_option("--synth-instances", f.instances, "synthetic instance count")
      ->capture_default_str();
  cmd->add_option("--synth-size", f.image_size, "synthetic image size")->capture_default_str();
  cmd->add_option("--synth-step-deg", f.step_deg, "synthetic per-frame orbit step (degrees)")
      ->capture_default_str();
  cmd->add_option("--synth-orbit-radius", f.orbit_radius, "synthetic orbit radius (pixels)")
      ->capture_default_str();
  cmd->add_option("--synth-blob-sigma", f.blob_sigma, "synthetic blob sigma (pixels)")
      ->capture_default_str();
  cmd->add_option("--synth-test-fraction", f.test_fraction, "synthetic test fraction")
      ->capture_default_str();
}

SyntheticSpec synth_spec_from_flags(const SynthFlags& f, int frames_per_instance) {
  SyntheticSpec spec;
  spec.image_size = f.image_size;
  spec.num_instances = f.instances;
  spec.frames_per_instance = frames_per_instance;
  spec.step_deg = f.step_deg;
  spec.orbit_radius = f.orbit_radius;
  spec.blob_sigma = f.blob_sigma;
  spec.test_fraction = f.test_fraction;
  return spec;
}

std::vector<SequenceDescriptor> whole_instance_descriptors(
    const std::vector<FrameRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, SequenceDescriptor> by_id;
  for (const FrameRecord& r : records) {
    auto it = by_id.find(r.instance_id);
    if (it == by_id.end()) {
      order.push_back(r.instance_id);
      SequenceDescriptor& d = by_id[r.instance_id];
      d.label = r.label;
      d.instance_id = r.instance_id;
      d.frame_indices.push_back(r.frame_index);
    } else {
      it->second.frame_indices.push_back(r.frame_index);
    }
  }
  std::vector<SequenceDescriptor> out;
  for (const std::string& id : order) {
    SequenceDescriptor d = by_id[id];
    std::sort(d.frame_indices.begin(), d.frame_indices.end());
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<SequenceDescriptor> explode_to_singles(const std::vector<SequenceDescriptor>& descs) {
  std::vector<SequenceDescriptor> out;
  for (const SequenceDescriptor& d : descs) {
    for (int t : d.frame_indices) out.push_back({d.label, d.instance_id, {t}});
  }
  return out;
}

std::vector<Sample32> explode_samples(const std::vector<Sample32>& samples) {
  std::vector<Sample32> out;
  for (const Sample32& s : samples) {
    for (const TensorT<float>& f : s.frames) out.push_back({{f}, s.label, s.instance_id});
  }
  return out;
}

void append_reversed_copies(std::vector<Sample32>& samples) {
  const std::size_t n = samples.size();
  samples.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample32 copy = samples[i];
    std::reverse(copy.frames.begin(), copy.frames.end());
    samples.push_back(std::move(copy));
  }
}

const SplitManifest& select_split(const std::vector<SplitManifest>& splits, int want) {
  if (splits.empty()) throw ValidationError("split file holds no splits");
  if (want < 0) return splits.front();
  for (const SplitManifest& s : splits) {
    if (s.split_id == want) return s;
  }
  throw ConfigError("split id " + std::to_string(want) + " not present in split file");
}

void partition_by_split(std::vector<Sample32> all, const SplitManifest& split,
                        std::vector<Sample32>* train, std::vector<Sample32>* test) {
  const std::set<std::string> tr(split.train_ids.begin(), split.train_ids.end());
  const std::set<std::string> te(split.test_ids.begin(), split.test_ids.end());
  for (Sample32& s : all) {
    if (tr.count(s.instance_id) > 0) {
      train->push_back(std::move(s));
    } else if (te.count(s.instance_id) > 0) {
      test->push_back(std::move(s));
    } else {
      throw ValidationError("instance '" + s.instance_id + "' is not assigned in split " +
                            std::to_string(split.split_id));
    }
  }
}

int derive_num_classes(const std::vector<Sample32>& samples) {
  int max_label = -1;
  for (const Sample32& s : samples) max_label = std::max(max_label, s.label);
  return max_label + 1;
}

// ---------------------------------------------------------------------------
// sequences

struct SequencesOpts {
  std::string manifest, out;
  std::string protocol = "short";
  int gap = 17;
  int n = 2;
  int count = 3;
  int spacing = 10;
  bool subsample = false;
  bool augment = false;
};

void run_sequences(const SequencesOpts& opt) {
  std::vector<FrameRecord> records = load_manifest(opt.manifest);
  if (opt.subsample) records = every_fifth(records);

  std::vector<SequenceDescriptor> descs;
  int skipped = 0;
  if (opt.protocol == "short") {
    descs = make_short_timeframe(records, opt.gap);
  } else if (opt.protocol == "wide") {
    WideViewpointResult r = make_wide_viewpoint(records, opt.n);
    descs = std::move(r.sequences);
    skipped = r.skipped;
  } else if (opt.protocol == "prior") {
    descs = make_prior_frame_sequences(records, opt.count, opt.spacing);
  } else {
    throw ConfigError("unknown protocol '" + opt.protocol + "' (expected short, wide or prior)");
  }
  if (opt.augment) descs = reverse_augment(descs);

  ConfigEcho echo;
  echo.kv("command", "sequences")
      .kv("manifest", opt.manifest)
      .kv("protocol", opt.protocol)
      .kv("gap", opt.gap)
      .kv("n", opt.n)
      .kv("count", opt.count)
      .kv("spacing", opt.spacing)
      .kv("every_fifth", opt.subsample ? 1 : 0)
      .kv("reverse_augment", opt.augment ? 1 : 0)
      .kv("out", opt.out);
  echo.print(std::cout);

  save_descriptors(opt.out, descs);
  std::cout << "emitted=" << descs.size() << " skipped=" << skipped << "\n";
}

void setup_sequences(CLI::App& app) {
  auto opt = std::make_shared<SequencesOpts>();
  CLI::App* cmd = app.add_subcommand("sequences", "Build sequence descriptors from a manifest");
  cmd->set_config("--config", "", "key=value config file");
  cmd->add_option("--manifest", opt->manifest, "frame manifest CSV")->required();
  cmd->add_option("--protocol", opt->protocol, "short, wide or prior")->capture_default_str();
  cmd->add_option("--gap", opt->gap, "short: frame-index gap")->capture_default_str();
  cmd->add_option("--n", opt->n, "wide: frames per sequence")->capture_default_str();
  cmd->add_option("--count", opt->count, "prior: frames per sequence")->capture_default_str();
  cmd->add_option("--spacing", opt->spacing, "prior: frame-index spacing")->capture_default_str();
  cmd->add_flag("--every-fifth", opt->subsample, "keep only frames with index % 5 == 0 first");
  cmd->add_flag("--reverse-augment", opt->augment, "append a reversed copy of every sequence");
  cmd->add_option("--out", opt->out, "descriptor file to write")->required();
  cmd->callback([opt]() { run_sequences(*opt); });
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string out;
  std::uint64_t seed = 1;
  int frames = 2;
  SynthFlags flags;
};

void run_synth(const SynthOpts& opt) {
  SyntheticSpec spec = synth_spec_from_flags(opt.flags, opt.frames);
  SyntheticDataset ds = synth_generate(spec, opt.seed);

  ConfigEcho echo;
  echo.kv("command", "synth")
      .kv("seed", opt.seed)
      .kv("instances", spec.num_instances)
      .kv("frames_per_instance", spec.frames_per_instance)
      .kv("image_size", spec.image_size)
      .kv("step_deg", spec.step_deg)
      .kv("orbit_radius", spec.orbit_radius)
      .kv("blob_sigma", spec.blob_sigma)
      .kv("test_fraction", spec.test_fraction)
      .kv("out", opt.out);
  echo.print(std::cout);

  synth_write(ds, spec, opt.out);
  std::cout << "train_instances=" << ds.train.size() << " test_instances=" << ds.test.size()
            << " frames=" << ds.records.size() << "\n";
}

void setup_synth(CLI::App& app) {
  auto opt = std::make_shared<SynthOpts>();
  CLI::App* cmd = app.add_subcommand("synth", "Generate the synthetic moving-blob dataset");
  cmd->set_config("--config", "", "key=value config file");
  cmd->allow_config_extras(CLI::config_extras_mode::error);
  cmd->add_option("--out", opt->out, "output directory")->required();
  cmd->add_option("--seed", opt->seed, "generation seed")->capture_default_str();
  cmd->add_option("--frames", opt->frames, "frames per instance")->capture_default_str();
  cmd->add_option("--instances", opt->flags.instances, "instance count")->capture_default_str();
  cmd->add_option("--image-size", opt->flags.image_size, "image size")->capture_default_str();
  cmd->add_option("--step-deg", opt->flags.step_deg, "per-frame orbit step (degrees)")
      ->capture_default_str();
  cmd->add_option("--orbit-radius", opt->flags.orbit_radius, "orbit radius (pixels)")
      ->capture_default_str();
  cmd->add_option("--blob-sigma", opt->flags.blob_sigma, "blob sigma (pixels)")
      ->capture_default_str();
  cmd->add_option("--test-fraction", opt->flags.test_fraction, "test fraction")
      ->capture_default_str();
  cmd->callback([opt]() { run_synth(*opt); });
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string model = "baseline";
  std::string data;
  std::string sequences;
  std::string splits;
  int split_id = -1;
  bool augment = false;
  std::string out;
  double lr = 0.0;
  int epochs = 50;
  int batch = 32;
  std::uint64_t seed = 1;
  ModelFlags mf;
  SynthFlags sf;
};

struct TrainData {
  std::vector<Sample32> train, val;
  int sequence_length = 0;  // frames per motion sample actually loaded
};

TrainData load_train_data(const CLI::App* cmd, const TrainOpts& opt, ModelKind kind,
                          int preset_frames) {
  TrainData data;
  const bool frames_set = cmd->count("--frames") > 0;

  if (opt.data == "synth") {
    const int frames = frames_set ? opt.mf.frames : preset_frames;
    SyntheticDataset ds = synth_generate(synth_spec_from_flags(opt.sf, frames), opt.sf.seed);
    data.train = std::move(ds.train);
    data.val = std::move(ds.test);
    data.sequence_length = frames;
  } else {
    std::vector<FrameRecord> records =
        load_manifest((fs::path(opt.data) / "manifest.csv").string());
    std::vector<SequenceDescriptor> descs = !opt.sequences.empty()
                                                ? load_descriptors(opt.sequences)
                                                : whole_instance_descriptors(records);
    std::vector<Sample32> all = materialize_sequences(descs, records);

    std::string splits_path = opt.splits;
    if (splits_path.empty()) {
      const fs::path candidate = fs::path(opt.data) / "splits.csv";
      if (fs::exists(candidate)) splits_path = candidate.string();
    }
    if (!splits_path.empty()) {
      const std::vector<SplitManifest> splits = load_splits(splits_path);
      partition_by_split(std::move(all), select_split(splits, opt.split_id), &data.train,
                         &data.val);
    } else {
      data.train = std::move(all);
    }
    if (data.train.empty()) throw ValidationError("training split selects no samples");
    data.sequence_length = static_cast<int>(data.train.front().frames.size());
  }

  if (kind == ModelKind::kBaseline) {
    // The single-frame model trains and validates on every frame separately.
    data.train = explode_samples(data.train);
    data.val = explode_samples(data.val);
  }
  if (opt.augment) append_reversed_copies(data.train);
  return data;
}

void run_train(const CLI::App* cmd, const TrainOpts& opt) {
  const ModelKind kind = parse_kind(opt.model);
  ModelConfig cfg = resolve_model_config(cmd, opt.mf);
  if (opt.data.empty()) throw ConfigError("--data is required (directory or 'synth')");

  TrainData data = load_train_data(cmd, opt, kind, cfg.sequence_length);

  // Data-derived defaults; explicit flags win.
  const TensorT<float>& probe = data.train.front().frames.front();
  if (cmd->count("--channels") == 0) cfg.input_channels = probe.extent(0);
  if (cmd->count("--input-size") == 0) {
    cfg.input_h = probe.extent(1);
    cfg.input_w = probe.extent(2);
  }
  if (cmd->count("--classes") == 0) {
    cfg.num_classes = std::max(derive_num_classes(data.train), derive_num_classes(data.val));
  }
  if (cmd->count("--frames") == 0 && kind == ModelKind::kMotion) {
    cfg.sequence_length = data.sequence_length;
  }

  TrainConfig tc;
  tc.learning_rate = cmd->count("--lr") > 0
                         ? opt.lr
                         : (kind == ModelKind::kMotion ? 1e-3 : 1e-4);
  tc.epochs = opt.epochs;
  tc.batch_size = opt.batch;
  tc.seed = opt.seed;

  ConfigEcho echo;
  echo.kv("command", "train").kv("data", opt.data);
  echo_model_config(echo, kind, cfg);
  echo.kv("lr", tc.learning_rate)
      .kv("epochs", tc.epochs)
      .kv("batch", tc.batch_size)
      .kv("seed", tc.seed)
      .kv("reverse_augment", opt.augment ? 1 : 0)
      .kv("train_samples", static_cast<std::int64_t>(data.train.size()))
      .kv("val_samples", static_cast<std::int64_t>(data.val.size()))
      .kv("out", opt.out.empty() ? "-" : opt.out);
  echo.print(std::cout);

  std::unique_ptr<Model<float>> model = build_model<float>(kind, cfg);
  init_weights(*model, tc.init, tc.seed);
  model->creation_seed() = tc.seed;

  const std::vector<double> means = compute_channel_means(data.train);
  subtract_channel_means(data.train, means);
  subtract_channel_means(data.val, means);
  model->channel_means() = means;

  TrainResult result;
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    std::ofstream log_file(fs::path(opt.out) / "train_log.csv");
    if (!log_file) throw FormatError("cannot write train_log.csv in " + opt.out);
    TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
    std::ostream log(&tee);
    result = train_loop(*model, data.train, data.val, tc, &log);
  } else {
    result = train_loop(*model, data.train, data.val, tc, &std::cout);
  }

  std::cout << "best_epoch=" << result.best_epoch
            << " best_val_acc=" << format_percent(result.best_val_acc) << "\n";
  if (!opt.out.empty()) {
    save_model(*model, opt.out);
    std::cout << "snapshot=" << opt.out << "\n";
  }
}

void setup_train(CLI::App& app) {
  auto opt = std::make_shared<TrainOpts>();
  CLI::App* cmd = app.add_subcommand("train", "Train a model and write a snapshot");
  cmd->set_config("--config", "", "key=value config file");
  cmd->add_option("--model", opt->model, "baseline or motion")->required();
  cmd->add_option("--data", opt->data, "data directory with manifest.csv, or 'synth'")
      ->required();
  cmd->add_option("--sequences", opt->sequences, "sequence descriptor file (directory data)");
  cmd->add_option("--splits", opt->splits, "split file (defaults to <data>/splits.csv)");
  cmd->add_option("--split-id", opt->split_id, "split to train on (default: first)");
  cmd->add_flag("--reverse-augment", opt->augment,
                "append reversed copies of the training sequences");
  cmd->add_option("--out", opt->out, "snapshot directory (omit to skip saving)");
  cmd->add_option("--lr", opt->lr, "learning rate (default 1e-4 baseline, 1e-3 motion)");
  cmd->add_option("--epochs", opt->epochs, "training epochs")->capture_default_str();
  cmd->add_option("--batch", opt->batch, "minibatch size")->capture_default_str();
  cmd->add_option("--seed", opt->seed, "training seed")->capture_default_str();
  add_model_flags(cmd, opt->mf, "full");
  add_synth_flags(cmd, opt->sf);
  cmd->callback([opt, cmd]() { run_train(cmd, *opt); });
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOpts {
  std::string model = "baseline";
  bool tiny = false;
  double epsilon = 1e-5;
  double tol = 1e-5;
  int coords = 20;
  std::uint64_t seed = 1;
  ModelFlags mf;
};

int run_gradcheck(const CLI::App* cmd, const GradcheckOpts& opt) {
  const ModelKind kind = parse_kind(opt.model);
  ModelConfig cfg = resolve_model_config(cmd, opt.mf);

  ConfigEcho echo;
  echo.kv("command", "gradcheck");
  echo_model_config(echo, kind, cfg);
  echo.kv("epsilon", opt.epsilon).kv("tol", opt.tol).kv("coords", opt.coords).kv("seed", opt.seed);
  echo.print(std::cout);

  std::unique_ptr<Model<double>> model = build_model<double>(kind, cfg);
  init_weights(*model, "he", opt.seed);

  Rng rng(mix_seed(opt.seed, 0xda7aU));
  SequenceSample<double> sample;
  const int frames = kind == ModelKind::kMotion ? cfg.sequence_length : 1;
  for (int t = 0; t < frames; ++t) {
    TensorT<double> frame({cfg.input_channels, cfg.input_h, cfg.input_w});
    for (std::int64_t i = 0; i < frame.size(); ++i) frame[i] = rng.uniform() - 0.5;
    sample.frames.push_back(std::move(frame));
  }
  sample.label = rng.uniform_int(cfg.num_classes);

  const GradCheckReport report =
      grad_check(*model, sample, opt.epsilon, opt.coords, mix_seed(opt.seed, 0x6cU));
  for (const GradCheckEntry& e : report.tensors) {
    std::printf("%-16s max_rel_err=%.3e\n", e.name.c_str(), e.max_rel_err);
  }
  const bool pass = report.max_rel_err <= opt.tol;
  std::printf("gradcheck %s max_rel_err=%.3e worst=%s\n", pass ? "PASS" : "FAIL",
              report.max_rel_err, report.worst_tensor.c_str());
  return pass ? 0 : 5;
}

void setup_gradcheck(CLI::App& app, int& exit_code) {
  auto opt = std::make_shared<GradcheckOpts>();
  CLI::App* cmd =
      app.add_subcommand("gradcheck", "Check analytic gradients against central differences");
  cmd->set_config("--config", "", "key=value config file");
  cmd->add_option("--model", opt->model, "baseline or motion")->required();
  cmd->add_flag("--tiny", opt->tiny, "use the tiny preset (default for gradcheck)");
  cmd->add_option("--epsilon", opt->epsilon, "finite-difference step")->capture_default_str();
  cmd->add_option("--tol", opt->tol, "max relative error tolerance")->capture_default_str();
  cmd->add_option("--coords", opt->coords, "coordinates checked per tensor")
      ->capture_default_str();
  cmd->add_option("--seed", opt->seed, "parameter and probe seed")->capture_default_str();
  add_model_flags(cmd, opt->mf, "tiny");
  cmd->callback([opt, cmd, &exit_code]() {
    if (opt->tiny) opt->mf.preset = "tiny";
    exit_code = run_gradcheck(cmd, *opt);
  });
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string snapshot;
  std::string data;
  std::string sequences;
  std::string splits;
  std::string mode = "direct";
  std::string on = "test";
  std::string format = "csv";
  SynthFlags sf;
};

std::vector<Sample32> load_eval_samples(const EvalOpts& opt, const Model<float>& model,
                                        InferenceMode mode,
                                        std::vector<SplitManifest>* splits_out) {
  const ModelKind kind = model.kind();
  const bool singles = kind == ModelKind::kBaseline && mode == InferenceMode::kDirect;

  std::vector<Sample32> samples;
  if (opt.data == "synth") {
    if (!opt.splits.empty()) {
      throw ConfigError("--splits applies to directory data only");
    }
    SyntheticDataset ds = synth_generate(
        synth_spec_from_flags(opt.sf, model.config().sequence_length), opt.sf.seed);
    if (opt.on == "train") {
      samples = std::move(ds.train);
    } else if (opt.on == "test") {
      samples = std::move(ds.test);
    } else if (opt.on == "all") {
      samples = std::move(ds.train);
      for (Sample32& s : ds.test) samples.push_back(std::move(s));
    } else {
      throw ConfigError("unknown --on '" + opt.on + "' (expected train, test or all)");
    }
  } else {
    std::vector<FrameRecord> records = load_manifest((fs::path(opt.data) / "manifest.csv").string());
    std::vector<SequenceDescriptor> descs = !opt.sequences.empty()
                                                ? load_descriptors(opt.sequences)
                                                : whole_instance_descriptors(records);
    if (singles) descs = explode_to_singles(descs);
    samples = materialize_sequences(descs, records);
    if (!opt.splits.empty()) *splits_out = load_splits(opt.splits);
  }
  if (singles && opt.data == "synth") samples = explode_samples(samples);

  subtract_channel_means(samples, model.channel_means());
  return samples;
}

void run_eval(const EvalOpts& opt) {
  std::unique_ptr<Model<float>> model = load_model<float>(opt.snapshot);
  const InferenceMode mode = parse_inference_mode(opt.mode);

  ConfigEcho echo;
  echo.kv("command", "eval")
      .kv("snapshot", opt.snapshot)
      .kv("data", opt.data)
      .kv("model", kind_name(model->kind()))
      .kv("mode", opt.mode)
      .kv("on", opt.on)
      .kv("splits", opt.splits.empty() ? "-" : opt.splits)
      .kv("format", opt.format);
  echo.print(std::cout);

  std::vector<SplitManifest> splits;
  std::vector<Sample32> samples = load_eval_samples(opt, *model, mode, &splits);

  if (!splits.empty()) {
    std::vector<Metrics> per_split;
    std::vector<int> ids;
    for (const SplitManifest& split : splits) {
      const std::set<std::string> te(split.test_ids.begin(), split.test_ids.end());
      std::vector<Sample32> subset;
      for (const Sample32& s : samples) {
        if (te.count(s.instance_id) > 0) subset.push_back(s);
      }
      if (subset.empty()) {
        throw ValidationError("split " + std::to_string(split.split_id) +
                              " selects no evaluation samples");
      }
      per_split.push_back(evaluate(*model, subset, mode));
      ids.push_back(split.split_id);
    }
    const CrossValReport report = crossval_report(per_split, ids);
    std::cout << (opt.format == "table" ? report_table(report) : report_csv(report));
    return;
  }

  const Metrics m = evaluate(*model, samples, mode);
  std::cout << "samples=" << m.count << "\n";
  std::cout << "accuracy=" << format_percent(m.accuracy) << "\n";
  for (std::size_t c = 0; c < m.per_class_accuracy.size(); ++c) {
    std::cout << "class_" << c << "_accuracy=" << format_percent(m.per_class_accuracy[c])
              << "\n";
  }
}

void setup_eval(CLI::App& app) {
  auto opt = std::make_shared<EvalOpts>();
  CLI::App* cmd = app.add_subcommand("eval", "Evaluate a snapshot on a dataset");
  cmd->set_config("--config", "", "key=value config file");
  cmd->add_option("--snapshot", opt->snapshot, "snapshot directory")->required();
  cmd->add_option("--data", opt->data, "data directory with manifest.csv, or 'synth'")
      ->required();
  cmd->add_option("--sequences", opt->sequences, "sequence descriptor file (directory data)");
  cmd->add_option("--splits", opt->splits, "split file: report per-split accuracy + mean/std");
  cmd->add_option("--mode", opt->mode, "direct, bidi, pool-avg or pool-max")
      ->capture_default_str();
  cmd->add_option("--on", opt->on, "synth partition: train, test or all")->capture_default_str();
  cmd->add_option("--format", opt->format, "csv or table")->capture_default_str();
  add_synth_flags(cmd, opt->sf);
  cmd->callback([opt]() { run_eval(*opt); });
}

// ---------------------------------------------------------------------------
// params

struct ParamsOpts {
  std::string model = "baseline";
  ModelFlags mf;
};

// Closed-form per-cell parameter counts used for the conv-vs-fc comparison.
std::int64_t conv_cell_param_count(int in_channels, int depth, int filter) {
  const std::int64_t k2 = static_cast<std::int64_t>(filter) * filter;
  const std::int64_t w = 4 * static_cast<std::int64_t>(depth) * in_channels * k2;
  const std::int64_t u = 4 * static_cast<std::int64_t>(depth) * depth * k2;
  const std::int64_t v = static_cast<std::int64_t>(depth) * depth * k2;
  const std::int64_t b = 4 * static_cast<std::int64_t>(depth);
  return w + u + v + b;
}

std::int64_t fc_cell_param_count(std::int64_t input_dim, std::int64_t hidden) {
  return 4 * hidden * input_dim + 4 * hidden * hidden + hidden * hidden + 4 * hidden;
}

void run_params(const CLI::App* cmd, const ParamsOpts& opt) {
  const ModelKind kind = parse_kind(opt.model);
  const ModelConfig cfg = resolve_model_config(cmd, opt.mf);

  ConfigEcho echo;
  echo.kv("command", "params");
  echo_model_config(echo, kind, cfg);
  echo.print(std::cout);

  std::unique_ptr<Model<float>> model = build_model<float>(kind, cfg);

  // Group tensors by layer (name up to the last component).
  std::vector<std::pair<std::string, std::int64_t>> layers;
  for (const ParamRef<float>& p : model->params()) {
    const std::size_t dot = p.name.rfind('.');
    const std::string layer = dot == std::string::npos ? p.name : p.name.substr(0, dot);
    if (layers.empty() || layers.back().first != layer) layers.push_back({layer, 0});
    layers.back().second += p.value->size();
  }
  for (const auto& [name, count] : layers) {
    std::cout << "layer " << name << " params=" << count << "\n";
  }
  std::cout << "total params=" << param_count(*model) << "\n";

  if (kind == ModelKind::kMotion) {
    const TrunkShapes shapes = TrunkShapes::derive(cfg);
    const std::int64_t conv_cell =
        conv_cell_param_count(shapes.feature_channels, cfg.lstm_depth, cfg.lstm_filter);
    const std::int64_t state = static_cast<std::int64_t>(cfg.lstm_depth) * shapes.feature_h *
                               shapes.feature_w;
    const std::int64_t hidden = cfg.lstm_hidden > 0 ? cfg.lstm_hidden : state;
    const std::int64_t flat = static_cast<std::int64_t>(shapes.feature_channels) *
                              shapes.feature_h * shapes.feature_w;
    const std::int64_t fc_cell = fc_cell_param_count(flat, hidden);
    std::cout << "lstm_cell conv-gate params=" << conv_cell << "\n";
    std::cout << "lstm_cell fc-gate params=" << fc_cell << "\n";
  }
}

void setup_params(CLI::App& app) {
  auto opt = std::make_shared<ParamsOpts>();
  CLI::App* cmd = app.add_subcommand("params", "Print per-layer and total parameter counts");
  cmd->set_config("--config", "", "key=value config file");
  cmd->add_option("--model", opt->model, "baseline or motion")->required();
  add_model_flags(cmd, opt->mf, "full");
  cmd->callback([opt, cmd]() { run_params(cmd, *opt); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional-gate bidirectional LSTM motion models"};
  app.require_subcommand(1);

  int exit_code = 0;
  setup_sequences(app);
  setup_synth(app);
  setup_train(app);
  setup_gradcheck(app, exit_code);
  setup_eval(app);
  setup_params(app);
  for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    sub->allow_config_extras(CLI::config_extras_mode::error);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const convlstm::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
