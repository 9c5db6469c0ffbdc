#include "dmmg/graph.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "dmmg/errors.hpp"

namespace dmmg {

SkeletonGraph build_skeleton_graph(int joints, const std::vector<std::pair<int, int>>& bones) {
  if (joints <= 0) throw ConfigError("build_skeleton_graph: joint count must be positive");
  std::set<std::pair<int, int>> seen;
  std::vector<std::pair<int, int>> edges;
  edges.reserve(bones.size());
  for (const auto& [a, b] : bones) {
    if (a < 0 || a >= joints || b < 0 || b >= joints)
      throw ConfigError("build_skeleton_graph: bone (" + std::to_string(a) + "," +
                        std::to_string(b) + ") outside " + std::to_string(joints) + " joints");
    if (a == b)
      throw ConfigError("build_skeleton_graph: self bone at joint " + std::to_string(a));
    auto e = std::minmax(a, b);
    if (!seen.insert({e.first, e.second}).second)
      throw ConfigError("build_skeleton_graph: duplicate bone (" + std::to_string(a) + "," +
                        std::to_string(b) + ")");
    edges.push_back({e.first, e.second});
  }
  std::sort(edges.begin(), edges.end());
  SkeletonGraph g;
  g.joints = joints;
  g.edges = std::move(edges);
  g.adjacency = Tensor::zeros({joints, joints});
  for (int d = 0; d < joints; ++d)
    g.adjacency.mutable_data()[static_cast<size_t>(d) * joints + d] = 1.0f;
  for (const auto& [i, j] : g.edges) {
    g.adjacency.mutable_data()[static_cast<size_t>(i) * joints + j] = 1.0f;
    g.adjacency.mutable_data()[static_cast<size_t>(j) * joints + i] = 1.0f;
  }
  return g;
}

const std::vector<std::pair<int, int>>& body_bones() {
  static const std::vector<std::pair<int, int>> bones = {
      {0, 1}, {1, 2}, {1, 3}, {3, 4}, {1, 5}, {5, 6}, {0, 7}, {7, 8}, {0, 9}, {9, 10}};
  return bones;
}

SkeletonGraph body_graph() { return build_skeleton_graph(11, body_bones()); }

Tensor normalize_adjacency(const Tensor& a) { return normalized_adjacency(a); }

Tensor apply_edge_weights(const SkeletonGraph& g, const Tensor& w) {
  if (w.rank() != 1 || w.dim(0) != static_cast<int>(g.edges.size()))
    throw ContractError("apply_edge_weights: expected " + std::to_string(g.edges.size()) +
                        " weights, got shape with " + std::to_string(w.numel()) + " values");
  for (std::int64_t k = 0; k < w.numel(); ++k) {
    float v = w.data()[k];
    if (!(v >= 0.0f && v <= 1.0f))
      throw ContractError("apply_edge_weights: weight " + std::to_string(v) + " at index " +
                          std::to_string(k) + " outside [0,1]");
  }
  return edge_weights_to_adjacency(w, g.edges, g.joints);
}

}  // namespace dmmg
