#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmmg/tensor.hpp"

namespace dmmg {

/// 3D joint trajectories, coords[(j*3 + c)*T + t] in meters.
struct SkeletonSequence {
  int joints = 0;
  int channels = 3;
  int frames = 0;
  std::vector<float> coords;

  float at(int j, int c, int t) const {
    return coords[(static_cast<size_t>(j) * 3 + static_cast<size_t>(c)) * frames + t];
  }
  float& at(int j, int c, int t) {
    return coords[(static_cast<size_t>(j) * 3 + static_cast<size_t>(c)) * frames + t];
  }
  void validate() const;
};

SkeletonSequence make_sequence(int joints, int frames);

/// Sequence as a [J,3,T] tensor leaf (values copied).
Tensor sequence_tensor(const SkeletonSequence& x);
SkeletonSequence tensor_sequence(const Tensor& t);

struct LabeledDataset {
  std::vector<SkeletonSequence> sequences;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split_tag;

  size_t size() const { return sequences.size(); }
  void validate() const;
};

struct SyntheticConfig {
  std::uint64_t seed = 1;
  int num_classes = 8;
  int sequences_per_class = 37;
  int joints = 11;
  int frames = 32;
  float viewpoint_jitter = 3.1415927f;  // max |rotation angle| in radians
  float noise_std = 0.01f;              // meters
};

/// Names of the generator's movement patterns, index == class label.
std::vector<std::string> synthetic_class_names(int num_classes);

/// Frame t becomes X_t - X_{t-1}; frame 0 is zero. Shape unchanged.
SkeletonSequence motion_stream(const SkeletonSequence& x);

/// Linear interpolation onto target_t uniformly spaced frame positions,
/// endpoints preserved.
SkeletonSequence resample_temporal(const SkeletonSequence& x, int target_t);

/// Subtracts the root joint position from every joint, per frame.
SkeletonSequence center_sequence(const SkeletonSequence& x, int root_joint);

/// Deterministic articulated-motion dataset: one sinusoidal joint-angle
/// pattern per class over a fixed bone tree, plus a per-sample random global
/// rotation (angle up to viewpoint_jitter) and coordinate noise. Split is
/// stratified 2:1 per class.
std::pair<LabeledDataset, LabeledDataset> generate_synthetic_dataset(const SyntheticConfig& cfg);

void encode_skl(const LabeledDataset& ds, const std::string& path);
LabeledDataset decode_skl(const std::string& path);

/// Parent of each joint in the generator's body tree (-1 for the pelvis
/// root). The bone list in graph.hpp pairs each joint with this parent.
const std::vector<int>& body_tree_parents();

}  // namespace dmmg
