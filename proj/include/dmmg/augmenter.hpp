#pragma once

#include <cstdint>

#include "dmmg/optimizer.hpp"
#include "dmmg/skeleton.hpp"
#include "dmmg/tensor.hpp"

namespace dmmg {

struct Quaternion {
  float w = 1.0f, x = 0.0f, y = 0.0f, z = 0.0f;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  float norm() const;
};

Quaternion quaternion_from_tensor(const Tensor& q);
Tensor quaternion_tensor(const Quaternion& q);

/// Two-layer MLP (3J -> 64 -> 4) whose normalized output is a view-change
/// quaternion. The final layer starts as a small random perturbation, so the
/// initial prediction sits near the identity rotation without being pinned
/// to its zero-gradient fixed point.
struct SkeletonAugmenter {
  int joints = 0;
  ParameterSet params;
};

/// Two-layer MLP (3J -> 64 -> n) whose sigmoid output reweights the n bones.
/// The final layer starts near a positive bias, so the initial weights are
/// close to 1 and the perturbed graph close to the unweighted one.
struct GraphAugmenter {
  int joints = 0;
  int edges = 0;
  ParameterSet params;
};

SkeletonAugmenter init_skeleton_augmenter(int joints, std::uint64_t seed);
GraphAugmenter init_graph_augmenter(int joints, int edges, std::uint64_t seed);

/// Unit quaternion [w,x,y,z] predicted from the sequence descriptor (the
/// temporal mean of the flattened J*3 coordinates). Differentiable in the
/// augmenter parameters. The raw MLP output is taken as an offset from the
/// identity quaternion before normalization, which keeps the zero-initialized
/// augmenter at the identity while leaving its gradient alive.
Tensor predict_quaternion(const SkeletonAugmenter& aug, const Tensor& x);

/// Per-bone weights in (0,1) from the same descriptor. Differentiable.
Tensor predict_edge_weights(const GraphAugmenter& aug, const Tensor& x);

/// Rotates every frame's coordinates by the unit quaternion q ([4] tensor).
/// x is [J,3,T]; differentiable in both x and q.
Tensor rotate_sequence(const Tensor& x, const Tensor& q);

/// Value-level convenience overload.
SkeletonSequence rotate_sequence(const SkeletonSequence& x, const Quaternion& q);

}  // namespace dmmg
