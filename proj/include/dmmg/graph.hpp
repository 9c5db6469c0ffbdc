#pragma once

#include <utility>
#include <vector>

#include "dmmg/tensor.hpp"

namespace dmmg {

/// Undirected body graph with self-loops. edges holds each bone once as
/// (i, j) with i < j, sorted; adjacency is identity plus symmetric ones at
/// the bones.
struct SkeletonGraph {
  int joints = 0;
  std::vector<std::pair<int, int>> edges;
  Tensor adjacency;  // [J,J], values only
};

SkeletonGraph build_skeleton_graph(int joints, const std::vector<std::pair<int, int>>& bones);

/// The 10 bones of the 11-joint body tree (pelvis, chest, head, two 2-joint
/// arms off the chest, two 2-joint legs off the pelvis).
const std::vector<std::pair<int, int>>& body_bones();

/// build_skeleton_graph over the 11-joint body tree.
SkeletonGraph body_graph();

/// D^{-1/2} A D^{-1/2} with D_ii = row sum of a. Differentiable; rows must
/// sum to a positive value.
Tensor normalize_adjacency(const Tensor& a);

/// Reweighted adjacency: entry (i,j) of the k-th bone becomes w[k] on both
/// sides of the diagonal, the diagonal stays 1, zeros stay zero. w values
/// must lie in [0,1]. Differentiable in w.
Tensor apply_edge_weights(const SkeletonGraph& g, const Tensor& w);

}  // namespace dmmg
