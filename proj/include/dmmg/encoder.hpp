#pragma once

#include <cstdint>
#include <vector>

#include "dmmg/optimizer.hpp"
#include "dmmg/tensor.hpp"

namespace dmmg {

struct BlockSpec {
  int in_channels;
  int out_channels;
  int temporal_kernel;
  int temporal_stride;
};

/// Stacked blocks of spatial graph convolution (per frame) followed by a
/// strided temporal convolution (per joint), then global mean pooling to an
/// embed_dim feature, with an FC+ReLU projector on top for pretraining.
struct EncoderConfig {
  std::vector<BlockSpec> blocks = {{3, 16, 5, 1}, {16, 32, 5, 2}, {32, 64, 5, 2}};
  int embed_dim = 64;
  int proj_dim = 64;
  void validate() const;
};

/// Online parameters and their momentum-averaged targets. Both sets hold the
/// encoder (f.*) and projector (g.*) tensors under identical names.
struct EncoderPair {
  EncoderConfig cfg;
  ParameterSet online;
  ParameterSet target;
  float momentum_coef = 0.999f;
};

/// Fresh parameter set: fan-in uniform weights, deterministic in seed.
ParameterSet init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed);

/// init_encoder_params plus a bitwise copy as the momentum target.
EncoderPair init_encoder_pair(const EncoderConfig& cfg, std::uint64_t seed, float momentum_coef);

/// One sequence [J,3,T] through every block under adjacency a_norm [J,J],
/// mean-pooled over joints and frames to [embed_dim]. Differentiable in
/// params, x, and a_norm.
Tensor encode_sequence(const EncoderConfig& cfg, const ParameterSet& params, const Tensor& x,
                       const Tensor& a_norm);

/// Batch form: one shared adjacency (a_norms size 1) or one per sample
/// (size B). Returns [B, embed_dim].
Tensor encode_batch(const EncoderConfig& cfg, const ParameterSet& params,
                    const std::vector<Tensor>& xs, const std::vector<Tensor>& a_norms);

/// Projector head: relu(z W + b), [B, proj_dim].
Tensor project(const EncoderConfig& cfg, const ParameterSet& params, const Tensor& z);

/// Every target parameter moves to momentum_coef * target + (1 -
/// momentum_coef) * online; online is untouched.
void momentum_update(EncoderPair& pair);

}  // namespace dmmg
