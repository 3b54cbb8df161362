#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convlstm/tensor.hpp"

namespace convlstm {

struct FrameRecord {
  std::string path;
  int label = 0;
  std::string instance_id;
  int frame_index = 0;
  double angle_deg = 0.0;
  bool has_angle = false;
};

// One line per frame: path,label,instance_id,frame_index,angle_deg with "-"
// when the angle is unknown.
std::vector<FrameRecord> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<FrameRecord>& records);

// Keeps frames whose index is a multiple of five.
std::vector<FrameRecord> every_fifth(const std::vector<FrameRecord>& records);

// A constructed sequence before any image is touched: the frame indices are
// enough to audit a protocol and to materialize tensors later.
struct SequenceDescriptor {
  int label = 0;
  std::string instance_id;
  std::vector<int> frame_indices;

  bool operator==(const SequenceDescriptor&) const = default;
};

// Descriptor files: label,instance_id,frame_index_1,...,frame_index_n
void save_descriptors(const std::string& path, const std::vector<SequenceDescriptor>& descs);
std::vector<SequenceDescriptor> load_descriptors(const std::string& path);

// {t-gap, t} pairs per frame; a missing partner clamps to the nearest frame
// at or below t-gap, then to the instance's earliest frame.
std::vector<SequenceDescriptor> make_short_timeframe(const std::vector<FrameRecord>& records,
                                                     int gap);

struct WideViewpointResult {
  std::vector<SequenceDescriptor> sequences;
  int skipped = 0;  // anchors dropped because their instance has < n frames
};

// n frames nearest the anchor angle + k*spacing for k = 0..n-1, where the
// spacing is 180 for a pair (anchor plus antipode) and 180/n beyond that;
// angular ties break to the lower frame index.
WideViewpointResult make_wide_viewpoint(const std::vector<FrameRecord>& records, int n);

// {t-(count-1)*spacing, ..., t-spacing, t}; missing members fall back to the
// frame at t itself.
std::vector<SequenceDescriptor> make_prior_frame_sequences(
    const std::vector<FrameRecord>& records, int count, int spacing);

// Each sample plus its frame-reversed copy, no dedup.
std::vector<SequenceDescriptor> reverse_augment(const std::vector<SequenceDescriptor>& descs);

struct SplitManifest {
  int split_id = 0;
  std::vector<std::string> train_ids, test_ids;
};

// Lines: split_id,instance_id,train|test
std::vector<SplitManifest> load_splits(const std::string& path);
void save_splits(const std::string& path, const std::vector<SplitManifest>& splits);

template <typename T>
struct SequenceSample {
  std::vector<TensorT<T>> frames;
  int label = 0;
  std::string instance_id;
};

using Sample32 = SequenceSample<float>;

template <typename T>
SequenceSample<T> cast_sample(const Sample32& s) {
  SequenceSample<T> out;
  out.label = s.label;
  out.instance_id = s.instance_id;
  for (const TensorT<float>& f : s.frames) out.frames.push_back(f.template cast<T>());
  return out;
}

// Loads every referenced image; all frames of a sample must agree in shape.
std::vector<Sample32> materialize_sequences(const std::vector<SequenceDescriptor>& descs,
                                            const std::vector<FrameRecord>& records);

// Per-channel mean over every frame of every sample.
std::vector<double> compute_channel_means(const std::vector<Sample32>& samples);
void subtract_channel_means(std::vector<Sample32>& samples, const std::vector<double>& means);

// Binary PGM (P5) or PPM (P6), maxval 255, scaled to [0, 1], channel-major.
TensorT<float> load_image(const std::string& path);
void save_image(const std::string& path, const TensorT<float>& image);

// Two classes that only differ in which way a blob orbits the image center:
// class 0 clockwise, class 1 counterclockwise. Start angles are uniform, so
// any single frame carries no class information.
struct SyntheticSpec {
  int image_size = 32;
  int num_instances = 256;  // split between train and test, stratified
  int frames_per_instance = 2;
  double blob_sigma = 1.6;
  double blob_amplitude = 0.9;
  double orbit_radius = 9.0;
  double step_deg = 60.0;
  double base_radius = 6.0;  // static centered disk shared by all instances
  double base_intensity = 0.35;
  double test_fraction = 0.5;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<Sample32> train, test;
  std::vector<FrameRecord> records;  // frame metadata incl. angles, paths empty
  SplitManifest split;               // single instance-level split
};

SyntheticDataset synth_generate(const SyntheticSpec& spec, std::uint64_t seed);

// Materializes a generated dataset for audit: PGM frames plus manifest.csv
// and splits.csv in the given directory.
void synth_write(const SyntheticDataset& dataset, const SyntheticSpec& spec,
                 const std::string& dir);

}  // namespace convlstm
