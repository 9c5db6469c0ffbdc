#include "dmmg/encoder.hpp"

#include <cmath>
#include <string>

#include "dmmg/errors.hpp"
#include "dmmg/rng.hpp"

namespace dmmg {

void EncoderConfig::validate() const {
  if (blocks.empty()) throw ConfigError("encoder needs at least one block");
  if (blocks[0].in_channels != 3)
    throw ConfigError("first block must take 3 input channels, got " +
                      std::to_string(blocks[0].in_channels));
  for (size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.in_channels < 1 || blk.out_channels < 1)
      throw ConfigError("block " + std::to_string(b) + " has non-positive channel count");
    if (blk.temporal_kernel < 1 || blk.temporal_kernel % 2 == 0)
      throw ConfigError("block " + std::to_string(b) + " temporal kernel must be odd, got " +
                        std::to_string(blk.temporal_kernel));
    if (blk.temporal_stride < 1)
      throw ConfigError("block " + std::to_string(b) + " temporal stride must be positive");
    if (b > 0 && blk.in_channels != blocks[b - 1].out_channels)
      throw ConfigError("block " + std::to_string(b) + " expects " +
                        std::to_string(blk.in_channels) + " channels but block " +
                        std::to_string(b - 1) + " emits " +
                        std::to_string(blocks[b - 1].out_channels));
  }
  if (embed_dim != blocks.back().out_channels)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must equal the last block's " +
                      std::to_string(blocks.back().out_channels) + " output channels");
  if (proj_dim < 1) throw ConfigError("proj_dim must be positive");
}

namespace {

Tensor uniform_init(Shape shape, int fan_in, Rng& rng) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  Tensor t = Tensor::zeros(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.mutable_data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

ParameterSet init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 101, 0);
  ParameterSet ps;
  for (size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    std::string prefix = "f.block" + std::to_string(b);
    ps.add(prefix + ".spatial_w",
           uniform_init({blk.in_channels, blk.out_channels}, blk.in_channels, rng));
    ps.add(prefix + ".temporal_k",
           uniform_init({blk.out_channels, blk.out_channels, blk.temporal_kernel},
                        blk.out_channels * blk.temporal_kernel, rng));
  }
  ps.add("g.proj_w", uniform_init({cfg.embed_dim, cfg.proj_dim}, cfg.embed_dim, rng));
  ps.add("g.proj_b", Tensor::zeros({cfg.proj_dim}));
  return ps;
}

EncoderPair init_encoder_pair(const EncoderConfig& cfg, std::uint64_t seed, float momentum_coef) {
  if (!(momentum_coef >= 0.0f && momentum_coef <= 1.0f))
    throw ConfigError("momentum coefficient must lie in [0,1]");
  EncoderPair pair;
  pair.cfg = cfg;
  pair.momentum_coef = momentum_coef;
  pair.online = init_encoder_params(cfg, seed);
  for (const auto& p : pair.online) {
    Tensor copy = p.value.clone();
    copy.set_requires_grad(false);
    pair.target.add(p.name, copy);
    pair.target.find(p.name)->set_requires_grad(false);
  }
  return pair;
}

Tensor encode_sequence(const EncoderConfig& cfg, const ParameterSet& params, const Tensor& x,
                       const Tensor& a_norm) {
  if (x.rank() != 3 || x.dim(1) != cfg.blocks[0].in_channels)
    throw ShapeError("encode_sequence: expected [J," +
                     std::to_string(cfg.blocks[0].in_channels) + ",T] input");
  const int joints = x.dim(0);
  if (a_norm.rank() != 2 || a_norm.dim(0) != joints || a_norm.dim(1) != joints)
    throw ShapeError("encode_sequence: adjacency is " +
                     std::to_string(a_norm.rank() == 2 ? a_norm.dim(0) : -1) + "x" +
                     std::to_string(a_norm.rank() == 2 ? a_norm.dim(1) : -1) + " for " +
                     std::to_string(joints) + " joints");
  Tensor h = x;
  for (size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    const int c_in = blk.in_channels, c_out = blk.out_channels, t = h.dim(2);
    const Tensor* w = params.find("f.block" + std::to_string(b) + ".spatial_w");
    const Tensor* k = params.find("f.block" + std::to_string(b) + ".temporal_k");
    if (!w || !k)
      throw ContractError("encode_sequence: parameter set lacks block " + std::to_string(b));
    // joint mixing for every channel and frame at once
    Tensor ah = matmul(a_norm, reshape(h, {joints, c_in * t}));
    // channel mixing per (joint, frame)
    Tensor jt_c = reshape(transpose_nd(reshape(ah, {joints, c_in, t}), {0, 2, 1}),
                          {joints * t, c_in});
    Tensor mixed = matmul(jt_c, *w);
    Tensor spatial = relu(transpose_nd(reshape(mixed, {joints, t, c_out}), {0, 2, 1}));
    h = relu(temporal_conv1d(spatial, *k, blk.temporal_stride));
  }
  return reduce(h, {0, 2}, ReduceMode::Mean);
}

Tensor encode_batch(const EncoderConfig& cfg, const ParameterSet& params,
                    const std::vector<Tensor>& xs, const std::vector<Tensor>& a_norms) {
  if (xs.empty()) throw ShapeError("encode_batch: empty batch");
  if (a_norms.size() != 1 && a_norms.size() != xs.size())
    throw ShapeError("encode_batch: " + std::to_string(a_norms.size()) + " adjacencies for " +
                     std::to_string(xs.size()) + " samples");
  std::vector<Tensor> rows;
  rows.reserve(xs.size());
  for (size_t i = 0; i < xs.size(); ++i)
    rows.push_back(encode_sequence(cfg, params, xs[i],
                                   a_norms.size() == 1 ? a_norms[0] : a_norms[i]));
  return stack_rows(rows);
}

Tensor project(const EncoderConfig& cfg, const ParameterSet& params, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != cfg.embed_dim)
    throw ShapeError("project: expected [B," + std::to_string(cfg.embed_dim) + "] features");
  const Tensor* w = params.find("g.proj_w");
  const Tensor* b = params.find("g.proj_b");
  if (!w || !b) throw ContractError("project: parameter set lacks the projector");
  return relu(add_rowvec(matmul(z, *w), *b));
}

void momentum_update(EncoderPair& pair) {
  const float a = pair.momentum_coef;
  if (pair.online.size() != pair.target.size())
    throw ContractError("momentum_update: online and target sets differ in size");
  for (size_t i = 0; i < pair.online.size(); ++i) {
    const Tensor& online = pair.online[i].value;
    Tensor& target = pair.target[i].value;
    if (online.shape() != target.shape())
      throw ContractError("momentum_update: shape mismatch at '" + pair.online[i].name + "'");
    float* td = target.mutable_data();
    const float* od = online.data();
    for (std::int64_t k = 0; k < online.numel(); ++k)
      td[k] = a * td[k] + (1.0f - a) * od[k];
  }
}

}  // namespace dmmg
