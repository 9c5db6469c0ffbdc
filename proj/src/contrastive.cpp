#include "dmmg/contrastive.hpp"

#include <string>

#include "dmmg/errors.hpp"

namespace dmmg {

void TripletConfig::validate() const {
  if (!(margin > 0.0f)) throw ConfigError("triplet margin must be positive");
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("pairwise_sq_dist: rows must share the feature dimension");
  const int n = a.dim(0), m = b.dim(0), p = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      float acc = 0.0f;
      const float* ai = a.data() + static_cast<std::int64_t>(i) * p;
      const float* bj = b.data() + static_cast<std::int64_t>(j) * p;
      for (int k = 0; k < p; ++k) {
        float d = ai[k] - bj[k];
        acc += d * d;
      }
      out.mutable_data()[static_cast<std::int64_t>(i) * m + j] = acc;
    }
  return out;
}

std::vector<int> mine_hard_pairs(const Tensor& z1) {
  if (z1.rank() != 2) throw ShapeError("mine_hard_pairs: embeddings must be [N,p]");
  const int n = z1.dim(0);
  if (n < 2) throw DegenerateError("mine_hard_pairs: a batch of " + std::to_string(n) +
                                   " has no negatives");
  Tensor d = pairwise_sq_dist(z1, z1);
  std::vector<int> neg(static_cast<size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    float best = 0.0f;
    int best_j = -1;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      float v = d.data()[static_cast<std::int64_t>(i) * n + j];
      if (best_j < 0 || v < best) {
        best = v;
        best_j = j;
      }
    }
    neg[static_cast<size_t>(i)] = best_j;
  }
  return neg;
}

namespace {

Tensor anchor_term(const Tensor& z1, const Tensor& z2, int i, int j, float margin) {
  Tensor anchor = take_row(z1, i);
  Tensor d_neg = reduce(square(sub(anchor, take_row(z1, j))), {0}, ReduceMode::Sum);
  Tensor d_pos = reduce(square(sub(anchor, take_row(z2, i))), {0}, ReduceMode::Sum);
  return relu(add_const(sub(d_neg, d_pos), margin));
}

}  // namespace

Tensor mi_estimate(const BatchEmbeddings& e, const TripletConfig& cfg) {
  cfg.validate();
  if (e.z1.rank() != 2 || e.z1.shape() != e.z2.shape())
    throw ShapeError("mi_estimate: z1 and z2 must be [N,p] of equal shape");
  const int n = e.z1.dim(0);
  if (n < 2)
    throw DegenerateError("mi_estimate: a batch of " + std::to_string(n) + " has no negatives");
  Tensor total;
  bool first = true;
  if (cfg.hard_mining) {
    std::vector<int> neg = mine_hard_pairs(e.z1);
    for (int i = 0; i < n; ++i) {
      Tensor term = anchor_term(e.z1, e.z2, i, neg[static_cast<size_t>(i)], cfg.margin);
      total = first ? term : add(total, term);
      first = false;
    }
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        Tensor term = anchor_term(e.z1, e.z2, i, j, cfg.margin);
        total = first ? term : add(total, term);
        first = false;
      }
  }
  return total;
}

GameLosses game_losses(const BatchEmbeddings& e, const TripletConfig& cfg) {
  Tensor i_est = mi_estimate(e, cfg);
  GameLosses out;
  out.l_min = i_est;
  out.l_max = add_const(neg(i_est), cfg.gamma);
  out.i_value = i_est.item();
  return out;
}

}  // namespace dmmg
