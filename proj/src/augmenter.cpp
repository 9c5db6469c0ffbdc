#include "dmmg/augmenter.hpp"

#include <cmath>

#include "dmmg/errors.hpp"
#include "dmmg/rng.hpp"

namespace dmmg {

namespace {

constexpr int kHidden = 64;

Tensor fan_in_uniform(Shape shape, int fan_in, Rng& rng) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  Tensor t = Tensor::zeros(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.mutable_data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

/// Final layer starts as a small random perturbation around final_bias rather
/// than exactly zero. An exactly-zero skeleton head predicts the identity
/// rotation, which makes both branches of the view game bitwise equal and
/// leaves the positive-distance gradient starting at zero, a critical point
/// the adversary can never escape.
ParameterSet init_mlp(const char* prefix, int in_dim, int out_dim, Rng& rng, float final_bias) {
  constexpr float kFinalScale = 0.01f;
  ParameterSet ps;
  std::string p(prefix);
  ps.add(p + ".w1", fan_in_uniform({in_dim, kHidden}, in_dim, rng));
  ps.add(p + ".b1", Tensor::zeros({kHidden}));
  Tensor w2 = Tensor::zeros({kHidden, out_dim});
  for (std::int64_t i = 0; i < w2.numel(); ++i)
    w2.mutable_data()[i] = rng.uniform(-kFinalScale, kFinalScale);
  Tensor b2 = Tensor::zeros({out_dim});
  for (std::int64_t i = 0; i < b2.numel(); ++i)
    b2.mutable_data()[i] = final_bias + rng.uniform(-kFinalScale, kFinalScale);
  ps.add(p + ".w2", std::move(w2));
  ps.add(p + ".b2", std::move(b2));
  return ps;
}

/// Temporal mean of the flattened J*3 coordinates, as a [1, 3J] row.
Tensor sequence_descriptor(const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) != 3)
    throw ShapeError("sequence descriptor expects a [J,3,T] tensor");
  Tensor mean_pose = reduce(x, {2}, ReduceMode::Mean);  // [J,3]
  return reshape(mean_pose, {1, x.dim(0) * 3});
}

Tensor mlp_forward(const ParameterSet& params, const char* prefix, const Tensor& desc) {
  std::string p(prefix);
  const Tensor* w1 = params.find(p + ".w1");
  const Tensor* b1 = params.find(p + ".b1");
  const Tensor* w2 = params.find(p + ".w2");
  const Tensor* b2 = params.find(p + ".b2");
  if (!w1 || !b1 || !w2 || !b2)
    throw ContractError("augmenter parameter set lacks the '" + p + "' MLP");
  Tensor h = relu(add_rowvec(matmul(desc, *w1), *b1));
  return add_rowvec(matmul(h, *w2), *b2);
}

}  // namespace

float Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion quaternion_from_tensor(const Tensor& q) {
  if (q.numel() != 4) throw ShapeError("quaternion tensor must hold 4 values");
  return {q.data()[0], q.data()[1], q.data()[2], q.data()[3]};
}

Tensor quaternion_tensor(const Quaternion& q) {
  return Tensor::from_data({4}, {q.w, q.x, q.y, q.z});
}

SkeletonAugmenter init_skeleton_augmenter(int joints, std::uint64_t seed) {
  if (joints < 1) throw ConfigError("skeleton augmenter needs at least one joint");
  SkeletonAugmenter aug;
  aug.joints = joints;
  Rng rng(seed, 103, 0);
  aug.params = init_mlp("r", joints * 3, 4, rng, 0.0f);
  return aug;
}

GraphAugmenter init_graph_augmenter(int joints, int edges, std::uint64_t seed) {
  if (joints < 1) throw ConfigError("graph augmenter needs at least one joint");
  if (edges < 1) throw ConfigError("graph augmenter needs at least one edge");
  GraphAugmenter aug;
  aug.joints = joints;
  aug.edges = edges;
  // Bias the sigmoid head toward 1: weights near 1 reproduce the unweighted
  // graph, so the edge branch also starts close to a no-op instead of at the
  // heavy mid-strength perturbation sigmoid(0) = 0.5 would give.
  Rng rng(seed, 104, 0);
  aug.params = init_mlp("t", joints * 3, edges, rng, 2.0f);
  return aug;
}

Tensor predict_quaternion(const SkeletonAugmenter& aug, const Tensor& x) {
  if (x.dim(0) != aug.joints)
    throw ShapeError("predict_quaternion: augmenter built for " + std::to_string(aug.joints) +
                     " joints, sequence has " + std::to_string(x.dim(0)));
  Tensor raw = reshape(mlp_forward(aug.params, "r", sequence_descriptor(x)), {4});
  Tensor identity = Tensor::from_data({4}, {1.0f, 0.0f, 0.0f, 0.0f});
  Tensor offset = add(raw, identity);
  double norm_sq = 0.0;
  for (int i = 0; i < 4; ++i)
    norm_sq += static_cast<double>(offset.data()[i]) * offset.data()[i];
  if (norm_sq < 1e-16) return Tensor::from_data({4}, {1.0f, 0.0f, 0.0f, 0.0f});
  return l2_normalize(offset);
}

Tensor predict_edge_weights(const GraphAugmenter& aug, const Tensor& x) {
  if (x.dim(0) != aug.joints)
    throw ShapeError("predict_edge_weights: augmenter built for " + std::to_string(aug.joints) +
                     " joints, sequence has " + std::to_string(x.dim(0)));
  Tensor raw = mlp_forward(aug.params, "t", sequence_descriptor(x));
  return reshape(sigmoid(raw), {aug.edges});
}

Tensor rotate_sequence(const Tensor& x, const Tensor& q) {
  if (x.rank() != 3 || x.dim(1) != 3)
    throw ShapeError("rotate_sequence: expected a [J,3,T] tensor");
  if (q.numel() != 4) throw ShapeError("rotate_sequence: quaternion must hold 4 values");
  double norm_sq = 0.0;
  for (int i = 0; i < 4; ++i) norm_sq += static_cast<double>(q.data()[i]) * q.data()[i];
  if (std::fabs(norm_sq - 1.0) > 1e-4)
    throw ContractError("rotate_sequence: quaternion norm " +
                        std::to_string(std::sqrt(norm_sq)) + " is not 1");
  const int j = x.dim(0), t = x.dim(2);
  Tensor r = quat_to_rotmat(q);
  Tensor cols = reshape(transpose_nd(x, {1, 0, 2}), {3, j * t});
  Tensor rotated = matmul(r, cols);
  return transpose_nd(reshape(rotated, {3, j, t}), {1, 0, 2});
}

SkeletonSequence rotate_sequence(const SkeletonSequence& x, const Quaternion& q) {
  Tensor out = rotate_sequence(sequence_tensor(x), quaternion_tensor(q));
  return tensor_sequence(out);
}

}  // namespace dmmg
