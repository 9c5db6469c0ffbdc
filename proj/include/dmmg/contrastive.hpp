#pragma once

#include <vector>

#include "dmmg/tensor.hpp"

namespace dmmg {

struct TripletConfig {
  float margin = 1.0f;
  float gamma = 10.0f;
  bool hard_mining = true;
  void validate() const;
};

/// z1: projected features of the original batch (anchors); z2: projected
/// features of the augmented batch (one positive per anchor, same row).
struct BatchEmbeddings {
  Tensor z1;
  Tensor z2;
};

/// d[i][j] = squared Euclidean distance between a row i and b row j.
/// Values only; mining treats embeddings as constants.
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);

/// Per-anchor hardest negative: the nearest other anchor row of z1, ties to
/// the lowest index. The positive is always the anchor's own augmented row.
std::vector<int> mine_hard_pairs(const Tensor& z1);

/// Hinge sum over anchors: [d(z1_i, negative)^2 - d(z1_i, z2_i)^2 + margin]_+
/// with the mined negative (or summed over all other anchors without
/// mining). Differentiable in z1 and z2; mining indices are constants.
Tensor mi_estimate(const BatchEmbeddings& e, const TripletConfig& cfg);

struct GameLosses {
  Tensor l_min;   // I
  Tensor l_max;   // gamma - I
  float i_value;  // I as measured
};

GameLosses game_losses(const BatchEmbeddings& e, const TripletConfig& cfg);

}  // namespace dmmg
