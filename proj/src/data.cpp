#include "convlstm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "convlstm/rng.hpp"

namespace convlstm {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == sep) {
      fields.push_back(current);
      current.clear();
    } else {
      current += ch;
    }
  }
  fields.push_back(current);
  return fields;
}

int parse_int(const std::string& text, const std::string& where) {
  std::size_t pos = 0;
  int value = 0;
  try {
    value = std::stoi(text, &pos);
  } catch (const std::exception&) {
    throw ParseError(where + ": expected integer, got '" + text + "'");
  }
  if (pos != text.size()) throw ParseError(where + ": trailing characters in '" + text + "'");
  return value;
}

double parse_double(const std::string& text, const std::string& where) {
  std::size_t pos = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ParseError(where + ": expected number, got '" + text + "'");
  }
  if (pos != text.size()) throw ParseError(where + ": trailing characters in '" + text + "'");
  return value;
}

std::string line_ref(const std::string& path, int lineno) {
  return path + " line " + std::to_string(lineno);
}

// Groups records per instance in first-appearance order, frames sorted by
// index, so constructed sequence order is a pure function of the manifest.
std::vector<std::vector<const FrameRecord*>> group_by_instance(
    const std::vector<FrameRecord>& records) {
  std::vector<std::vector<const FrameRecord*>> groups;
  std::map<std::string, std::size_t> index;
  for (const FrameRecord& r : records) {
    auto [it, fresh] = index.try_emplace(r.instance_id, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(&r);
  }
  for (auto& g : groups) {
    std::sort(g.begin(), g.end(), [](const FrameRecord* a, const FrameRecord* b) {
      return a->frame_index < b->frame_index;
    });
  }
  return groups;
}

double circular_distance_deg(double a, double b) {
  double d = std::fmod(std::fabs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

}  // namespace

std::vector<FrameRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path);
  std::vector<FrameRecord> records;
  std::set<std::pair<std::string, int>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line, ',');
    if (f.size() != 5) {
      throw ParseError(line_ref(path, lineno) + ": expected 5 comma-separated fields, got " +
                       std::to_string(f.size()));
    }
    FrameRecord r;
    r.path = f[0];
    if (r.path.empty()) throw ParseError(line_ref(path, lineno) + ": empty path");
    r.label = parse_int(f[1], line_ref(path, lineno));
    if (r.label < 0) throw ValidationError(line_ref(path, lineno) + ": negative label");
    r.instance_id = f[2];
    if (r.instance_id.empty()) throw ParseError(line_ref(path, lineno) + ": empty instance_id");
    r.frame_index = parse_int(f[3], line_ref(path, lineno));
    if (r.frame_index < 0) {
      throw ValidationError(line_ref(path, lineno) + ": negative frame_index");
    }
    if (f[4] == "-") {
      r.has_angle = false;
    } else {
      r.angle_deg = parse_double(f[4], line_ref(path, lineno));
      if (r.angle_deg < 0.0 || r.angle_deg >= 360.0) {
        throw ValidationError(line_ref(path, lineno) + ": angle must be in [0, 360)");
      }
      r.has_angle = true;
    }
    if (!seen.insert({r.instance_id, r.frame_index}).second) {
      throw ValidationError(line_ref(path, lineno) + ": duplicate (instance_id, frame_index) (" +
                            r.instance_id + ", " + std::to_string(r.frame_index) + ")");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_manifest(const std::string& path, const std::vector<FrameRecord>& records) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (const FrameRecord& r : records) {
    out << r.path << "," << r.label << "," << r.instance_id << "," << r.frame_index << ",";
    if (r.has_angle) {
      std::ostringstream angle;
      angle << r.angle_deg;
      out << angle.str();
    } else {
      out << "-";
    }
    out << "\n";
  }
}

std::vector<FrameRecord> every_fifth(const std::vector<FrameRecord>& records) {
  std::vector<FrameRecord> kept;
  for (const FrameRecord& r : records) {
    if (r.frame_index % 5 == 0) kept.push_back(r);
  }
  return kept;
}

void save_descriptors(const std::string& path, const std::vector<SequenceDescriptor>& descs) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (const SequenceDescriptor& d : descs) {
    out << d.label << "," << d.instance_id;
    for (int idx : d.frame_indices) out << "," << idx;
    out << "\n";
  }
}

std::vector<SequenceDescriptor> load_descriptors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open descriptor file " + path);
  std::vector<SequenceDescriptor> descs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line, ',');
    if (f.size() < 3) {
      throw ParseError(line_ref(path, lineno) + ": expected label,instance_id,indices...");
    }
    SequenceDescriptor d;
    d.label = parse_int(f[0], line_ref(path, lineno));
    d.instance_id = f[1];
    for (std::size_t i = 2; i < f.size(); ++i) {
      d.frame_indices.push_back(parse_int(f[i], line_ref(path, lineno)));
    }
    descs.push_back(std::move(d));
  }
  return descs;
}

std::vector<SequenceDescriptor> make_short_timeframe(const std::vector<FrameRecord>& records,
                                                     int gap) {
  if (gap < 1) throw ArgumentError("short time-frame gap must be >= 1");
  std::vector<SequenceDescriptor> out;
  for (const auto& group : group_by_instance(records)) {
    for (const FrameRecord* anchor : group) {
      const int want = anchor->frame_index - gap;
      // Greatest index at or below t-gap; groups are sorted ascending.
      int partner = group.front()->frame_index;
      for (const FrameRecord* r : group) {
        if (r->frame_index <= want) partner = r->frame_index;
      }
      out.push_back({anchor->label, anchor->instance_id, {partner, anchor->frame_index}});
    }
  }
  return out;
}

WideViewpointResult make_wide_viewpoint(const std::vector<FrameRecord>& records, int n) {
  if (n < 2) throw ArgumentError("wide-viewpoint n must be >= 2");
  for (const FrameRecord& r : records) {
    if (!r.has_angle) {
      throw ValidationError("wide-viewpoint construction needs angle_deg on every record (" +
                            r.instance_id + ", frame " + std::to_string(r.frame_index) + ")");
    }
  }
  WideViewpointResult result;
  // A pair is most informative at the antipode; longer sequences instead
  // step 180/n so the whole sequence stays within a half turn.
  const double spacing = n == 2 ? 180.0 : 180.0 / n;
  for (const auto& group : group_by_instance(records)) {
    if (static_cast<int>(group.size()) < n) {
      result.skipped += static_cast<int>(group.size());
      continue;
    }
    for (const FrameRecord* anchor : group) {
      SequenceDescriptor d;
      d.label = anchor->label;
      d.instance_id = anchor->instance_id;
      for (int k = 0; k < n; ++k) {
        const double target = std::fmod(anchor->angle_deg + k * spacing, 360.0);
        const FrameRecord* best = nullptr;
        double best_dist = 0.0;
        for (const FrameRecord* r : group) {
          const double dist = circular_distance_deg(r->angle_deg, target);
          if (best == nullptr || dist < best_dist ||
              (dist == best_dist && r->frame_index < best->frame_index)) {
            best = r;
            best_dist = dist;
          }
        }
        d.frame_indices.push_back(best->frame_index);
      }
      result.sequences.push_back(std::move(d));
    }
  }
  return result;
}

std::vector<SequenceDescriptor> make_prior_frame_sequences(
    const std::vector<FrameRecord>& records, int count, int spacing) {
  if (count < 2) throw ArgumentError("prior-frame count must be >= 2");
  if (spacing < 1) throw ArgumentError("prior-frame spacing must be >= 1");
  std::vector<SequenceDescriptor> out;
  for (const auto& group : group_by_instance(records)) {
    std::set<int> present;
    for (const FrameRecord* r : group) present.insert(r->frame_index);
    for (const FrameRecord* anchor : group) {
      SequenceDescriptor d;
      d.label = anchor->label;
      d.instance_id = anchor->instance_id;
      for (int j = count - 1; j >= 0; --j) {
        const int want = anchor->frame_index - j * spacing;
        // A missing prior frame falls back to the anchor's own crop.
        d.frame_indices.push_back(present.count(want) ? want : anchor->frame_index);
      }
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<SequenceDescriptor> reverse_augment(const std::vector<SequenceDescriptor>& descs) {
  std::vector<SequenceDescriptor> out;
  out.reserve(descs.size() * 2);
  for (const SequenceDescriptor& d : descs) {
    out.push_back(d);
    SequenceDescriptor rev = d;
    std::reverse(rev.frame_indices.begin(), rev.frame_indices.end());
    out.push_back(std::move(rev));
  }
  return out;
}

std::vector<SplitManifest> load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open split file " + path);
  std::map<int, SplitManifest> by_id;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line, ',');
    if (f.size() != 3) {
      throw ParseError(line_ref(path, lineno) + ": expected split_id,instance_id,train|test");
    }
    const int split_id = parse_int(f[0], line_ref(path, lineno));
    if (split_id < 1) throw ValidationError(line_ref(path, lineno) + ": split_id must be >= 1");
    SplitManifest& split = by_id[split_id];
    split.split_id = split_id;
    if (f[2] == "train") {
      split.train_ids.push_back(f[1]);
    } else if (f[2] == "test") {
      split.test_ids.push_back(f[1]);
    } else {
      throw ParseError(line_ref(path, lineno) + ": role must be train or test, got '" + f[2] +
                       "'");
    }
  }
  std::vector<SplitManifest> splits;
  for (auto& [id, split] : by_id) {
    std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
    for (const std::string& t : split.test_ids) {
      if (train.count(t)) {
        throw ValidationError("split " + std::to_string(id) + ": instance '" + t +
                              "' appears in both train and test");
      }
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

void save_splits(const std::string& path, const std::vector<SplitManifest>& splits) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (const SplitManifest& s : splits) {
    for (const std::string& id : s.train_ids) out << s.split_id << "," << id << ",train\n";
    for (const std::string& id : s.test_ids) out << s.split_id << "," << id << ",test\n";
  }
}

std::vector<Sample32> materialize_sequences(const std::vector<SequenceDescriptor>& descs,
                                            const std::vector<FrameRecord>& records) {
  std::map<std::pair<std::string, int>, const FrameRecord*> by_key;
  for (const FrameRecord& r : records) by_key[{r.instance_id, r.frame_index}] = &r;

  std::vector<Sample32> samples;
  samples.reserve(descs.size());
  for (const SequenceDescriptor& d : descs) {
    Sample32 s;
    s.label = d.label;
    s.instance_id = d.instance_id;
    for (int idx : d.frame_indices) {
      auto it = by_key.find({d.instance_id, idx});
      if (it == by_key.end()) {
        throw ValidationError("descriptor references missing frame (" + d.instance_id + ", " +
                              std::to_string(idx) + ")");
      }
      s.frames.push_back(load_image(it->second->path));
      if (!s.frames.back().same_shape(s.frames.front())) {
        throw ValidationError("frames of instance " + d.instance_id + " disagree in shape");
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<double> compute_channel_means(const std::vector<Sample32>& samples) {
  if (samples.empty()) throw ArgumentError("channel means need at least one sample");
  const int channels = samples.front().frames.front().extent(0);
  std::vector<double> sums(static_cast<std::size_t>(channels), 0.0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(channels), 0);
  for (const Sample32& s : samples) {
    for (const TensorT<float>& frame : s.frames) {
      if (frame.extent(0) != channels) {
        throw DimensionError("samples disagree in channel count");
      }
      const std::int64_t plane = static_cast<std::int64_t>(frame.extent(1)) * frame.extent(2);
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) acc += frame[c * plane + i];
        sums[static_cast<std::size_t>(c)] += acc;
        counts[static_cast<std::size_t>(c)] += plane;
      }
    }
  }
  std::vector<double> means(sums.size());
  for (std::size_t c = 0; c < sums.size(); ++c) means[c] = sums[c] / static_cast<double>(counts[c]);
  return means;
}

void subtract_channel_means(std::vector<Sample32>& samples, const std::vector<double>& means) {
  for (Sample32& s : samples) {
    for (TensorT<float>& frame : s.frames) {
      if (frame.extent(0) != static_cast<int>(means.size())) {
        throw DimensionError("channel mean count does not match frame channels");
      }
      const std::int64_t plane = static_cast<std::int64_t>(frame.extent(1)) * frame.extent(2);
      for (int c = 0; c < frame.extent(0); ++c) {
        const float m = static_cast<float>(means[static_cast<std::size_t>(c)]);
        for (std::int64_t i = 0; i < plane; ++i) frame[c * plane + i] -= m;
      }
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

// Reads one header integer, skipping whitespace and '#' comments, consuming
// the single terminator byte after the digits.
int pnm_header_value(std::istream& in, const std::string& path) {
  int c = in.get();
  while (true) {
    if (c == EOF) throw FormatError(path + ": truncated header");
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
      continue;
    }
    if (!std::isspace(c)) break;
    c = in.get();
  }
  if (!std::isdigit(c)) throw FormatError(path + ": expected integer in header");
  long value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1 << 20) throw FormatError(path + ": header value out of range");
    c = in.get();
  }
  return static_cast<int>(value);
}

}  // namespace

TensorT<float> load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw FormatError(path + ": unsupported magic (want binary P5 or P6)");
  }
  const int channels = magic[1] == '5' ? 1 : 3;
  const int width = pnm_header_value(in, path);
  const int height = pnm_header_value(in, path);
  const int maxval = pnm_header_value(in, path);
  if (width < 1 || height < 1) throw FormatError(path + ": nonpositive dimensions");
  if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported");

  const std::size_t bytes = static_cast<std::size_t>(width) * height * channels;
  std::vector<unsigned char> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw FormatError(path + ": truncated pixel payload");
  }

  TensorT<float> image({channels, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        image(c, y, x) =
            static_cast<float>(raw[(static_cast<std::size_t>(y) * width + x) * channels + c]) /
            255.0f;
      }
    }
  }
  return image;
}

void save_image(const std::string& path, const TensorT<float>& image) {
  if (image.rank() != 3 || (image.extent(0) != 1 && image.extent(0) != 3)) {
    throw ArgumentError("save_image expects [1,H,W] or [3,H,W]");
  }
  const int channels = image.extent(0), height = image.extent(1), width = image.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write image " + path);
  out << (channels == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        float v = std::min(1.0f, std::max(0.0f, image(c, y, x)));
        raw[(static_cast<std::size_t>(y) * width + x) * channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (image_size < 8) throw ConfigError("synthetic image_size must be >= 8");
  if (num_instances < 2) throw ConfigError("synthetic num_instances must be >= 2");
  if (frames_per_instance < 1) throw ConfigError("frames_per_instance must be >= 1");
  if (blob_sigma <= 0.0 || blob_amplitude <= 0.0) {
    throw ConfigError("blob sigma and amplitude must be > 0");
  }
  if (step_deg <= 0.0 || step_deg >= 180.0) {
    throw ConfigError("step_deg must be in (0, 180) so direction is unambiguous");
  }
  if (test_fraction <= 0.0 || test_fraction >= 1.0) {
    throw ConfigError("test_fraction must be in (0, 1)");
  }
  const double half = (image_size - 1) / 2.0;
  if (base_radius < 0.0 || base_radius > half) {
    throw ConfigError("base disk does not fit in the image");
  }
  if (orbit_radius <= 0.0 || orbit_radius + 3.0 * blob_sigma > half) {
    throw ConfigError("blob orbit exceeds the image");
  }
}

namespace {

TensorT<float> render_blob_frame(const SyntheticSpec& spec, double angle_deg) {
  const int s = spec.image_size;
  const double cx = (s - 1) / 2.0, cy = (s - 1) / 2.0;
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double bx = cx + spec.orbit_radius * std::cos(rad);
  const double by = cy - spec.orbit_radius * std::sin(rad);
  const double inv2s2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
  TensorT<float> frame({1, s, s});
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dcx = x - cx, dcy = y - cy;
      double v = std::sqrt(dcx * dcx + dcy * dcy) <= spec.base_radius ? spec.base_intensity : 0.0;
      const double dbx = x - bx, dby = y - by;
      v += spec.blob_amplitude * std::exp(-(dbx * dbx + dby * dby) * inv2s2);
      frame(0, y, x) = static_cast<float>(std::min(1.0, v));
    }
  }
  return frame;
}

double normalize_angle(double deg) {
  double a = std::fmod(deg, 360.0);
  if (a < 0.0) a += 360.0;
  return a;
}

}  // namespace

SyntheticDataset synth_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset dataset;

  std::vector<Sample32> samples(static_cast<std::size_t>(spec.num_instances));
  for (int i = 0; i < spec.num_instances; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    Sample32& sample = samples[static_cast<std::size_t>(i)];
    sample.label = i % 2;  // balanced classes
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%04d", i);
    sample.instance_id = id;
    const double theta0 = rng.uniform() * 360.0;
    const double dir = sample.label == 1 ? 1.0 : -1.0;  // class 1 counterclockwise
    for (int j = 0; j < spec.frames_per_instance; ++j) {
      const double angle = normalize_angle(theta0 + dir * j * spec.step_deg);
      sample.frames.push_back(render_blob_frame(spec, angle));
      FrameRecord r;
      r.label = sample.label;
      r.instance_id = sample.instance_id;
      r.frame_index = j;
      r.angle_deg = angle;
      r.has_angle = true;
      dataset.records.push_back(std::move(r));
    }
  }

  // Stratified instance-level split so both classes stay balanced.
  std::vector<int> class0, class1;
  for (int i = 0; i < spec.num_instances; ++i) (i % 2 == 0 ? class0 : class1).push_back(i);
  Rng split_rng(mix_seed(seed, 0x5b117eeeULL));
  split_rng.shuffle(class0);
  split_rng.shuffle(class1);
  std::vector<bool> is_test(static_cast<std::size_t>(spec.num_instances), false);
  const auto mark_test = [&is_test, &spec](const std::vector<int>& ids) {
    const int n_test = static_cast<int>(std::lround(ids.size() * spec.test_fraction));
    for (int k = 0; k < n_test; ++k) is_test[static_cast<std::size_t>(ids[k])] = true;
  };
  mark_test(class0);
  mark_test(class1);

  dataset.split.split_id = 1;
  for (int i = 0; i < spec.num_instances; ++i) {
    Sample32& sample = samples[static_cast<std::size_t>(i)];
    if (is_test[static_cast<std::size_t>(i)]) {
      dataset.split.test_ids.push_back(sample.instance_id);
      dataset.test.push_back(std::move(sample));
    } else {
      dataset.split.train_ids.push_back(sample.instance_id);
      dataset.train.push_back(std::move(sample));
    }
  }
  if (dataset.train.empty() || dataset.test.empty()) {
    throw ConfigError("synthetic split left train or test empty");
  }
  return dataset;
}

void synth_write(const SyntheticDataset& dataset, const SyntheticSpec& spec,
                 const std::string& dir) {
  (void)spec;
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "frames");

  std::map<std::pair<std::string, int>, const TensorT<float>*> frames;
  const auto index_samples = [&frames](const std::vector<Sample32>& samples) {
    for (const Sample32& s : samples) {
      for (std::size_t j = 0; j < s.frames.size(); ++j) {
        frames[{s.instance_id, static_cast<int>(j)}] = &s.frames[j];
      }
    }
  };
  index_samples(dataset.train);
  index_samples(dataset.test);

  std::vector<FrameRecord> records = dataset.records;
  for (FrameRecord& r : records) {
    auto it = frames.find({r.instance_id, r.frame_index});
    if (it == frames.end()) {
      throw ValidationError("dataset record without frame tensor: " + r.instance_id);
    }
    const std::string name = r.instance_id + "_" + std::to_string(r.frame_index) + ".pgm";
    const fs::path file = fs::path(dir) / "frames" / name;
    save_image(file.string(), *it->second);
    r.path = file.string();
  }
  save_manifest((fs::path(dir) / "manifest.csv").string(), records);
  save_splits((fs::path(dir) / "splits.csv").string(), {dataset.split});
}

}  // namespace convlstm
