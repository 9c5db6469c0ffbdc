#include "dmmg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "dmmg/errors.hpp"

namespace dmmg {

namespace {

using nlohmann::json;

/// Row-wise L2 normalization with an epsilon floor. The triplet objective is
/// computed on the unit sphere: without this the max phase can grow I without
/// bound by inflating embedding norms until every hinge saturates dead.
Tensor normalize_rows(const Tensor& z) {
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(z.dim(0)));
  for (int i = 0; i < z.dim(0); ++i) {
    Tensor r = take_row(z, i);
    Tensor inv = rsqrt(add_const(sum_all(square(r)), 1e-12f));
    rows.push_back(mul_scalar_tensor(r, inv));
  }
  return stack_rows(rows);
}

Tensor encode_project(const EncoderConfig& cfg, const ParameterSet& params,
                      const std::vector<Tensor>& xs, const std::vector<Tensor>& a_norms) {
  return normalize_rows(project(cfg, params, encode_batch(cfg, params, xs, a_norms)));
}

Quaternion random_unit_quaternion(Rng& rng) {
  while (true) {
    Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    float n = q.norm();
    if (n > 1e-4f) return {q.w / n, q.x / n, q.y / n, q.z / n};
  }
}

Tensor random_edge_weights(Rng& rng, int edges) {
  Tensor w = Tensor::zeros({edges});
  float* d = w.mutable_data();
  for (int i = 0; i < edges; ++i) d[i] = rng.uniform(0.0f, 1.0f);
  return w;
}

void require_batch(const std::vector<Tensor>& batch, const char* op) {
  if (batch.size() < 2)
    throw DegenerateError(std::string(op) + ": batch of " + std::to_string(batch.size()) +
                          " sequence(s) is too small, need at least 2");
}

bool contains(const std::vector<Game>& v, Game g) {
  return std::find(v.begin(), v.end(), g) != v.end();
}

}  // namespace

std::string game_name(Game g) { return g == Game::Vmmg ? "vmmg" : "emmg"; }

Game parse_game(const std::string& name) {
  if (name == "vmmg") return Game::Vmmg;
  if (name == "emmg") return Game::Emmg;
  throw ConfigError("unknown game '" + name + "', expected vmmg or emmg");
}

std::string stream_name(Stream s) { return s == Stream::Joint ? "joint" : "motion"; }

Stream parse_stream(const std::string& name) {
  if (name == "joint") return Stream::Joint;
  if (name == "motion") return Stream::Motion;
  throw ConfigError("unknown stream '" + name + "', expected joint or motion");
}

std::string ablation_name(Game g) { return g == Game::Vmmg ? "r_view" : "r_edge"; }

Game parse_ablation(const std::string& name) {
  if (name == "r_view") return Game::Vmmg;
  if (name == "r_edge") return Game::Emmg;
  throw ConfigError("unknown ablation '" + name + "', expected none, r_view or r_edge");
}

void PretrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
  if (batch_size < 2)
    throw ConfigError("batch_size must be at least 2, got " + std::to_string(batch_size));
  if (!(momentum_coef >= 0.0f && momentum_coef <= 1.0f))
    throw ConfigError("momentum_coef must lie in [0, 1], got " + std::to_string(momentum_coef));
  if (!(encoder_lr > 0.0f) || !(augmenter_lr > 0.0f))
    throw ConfigError("learning rates must be positive");
  if (games.empty() && ablation.empty())
    throw ConfigError("no games selected: games and ablation are both empty");
  for (size_t i = 0; i < games.size(); ++i)
    for (size_t j = i + 1; j < games.size(); ++j)
      if (games[i] == games[j]) throw ConfigError("games lists " + game_name(games[i]) + " twice");
  for (size_t i = 0; i < ablation.size(); ++i)
    for (size_t j = i + 1; j < ablation.size(); ++j)
      if (ablation[i] == ablation[j])
        throw ConfigError("ablation lists " + ablation_name(ablation[i]) + " twice");
  for (Game g : {Game::Vmmg, Game::Emmg}) {
    if (game_active(g) && std::count(game_order.begin(), game_order.end(), g) != 1)
      throw ConfigError("game_order must mention " + game_name(g) + " exactly once");
  }
  triplet.validate();
  encoder.validate();
}

bool PretrainConfig::game_active(Game g) const {
  return contains(games, g) || contains(ablation, g);
}

bool PretrainConfig::game_randomized(Game g) const { return contains(ablation, g); }

TrainState init_train_state(const PretrainConfig& cfg, int joints) {
  cfg.validate();
  if (joints != 11)
    throw ConfigError("pretraining uses the 11-joint body graph, got " + std::to_string(joints) +
                      " joints");
  TrainState st;
  st.cfg = cfg;
  st.graph = body_graph();
  st.a_norm = normalize_adjacency(st.graph.adjacency);
  st.encoder = init_encoder_pair(cfg.encoder, cfg.seed, cfg.momentum_coef);
  st.skeleton_aug = init_skeleton_augmenter(joints, cfg.seed);
  st.graph_aug = init_graph_augmenter(joints, static_cast<int>(st.graph.edges.size()), cfg.seed);
  st.encoder_opt = OptimizerState::sgd(cfg.encoder_lr, cfg.encoder_momentum, cfg.encoder_wd);
  st.skeleton_opt = OptimizerState::sgd(cfg.augmenter_lr);
  st.graph_opt = OptimizerState::sgd(cfg.augmenter_lr);
  st.rng = Rng(cfg.seed, 102, 0);
  return st;
}

StepStats vmmg_step(TrainState& st, const std::vector<Tensor>& batch, bool random_mode) {
  require_batch(batch, "vmmg_step");
  StepStats stats;
  const EncoderConfig& ec = st.cfg.encoder;
  const std::vector<Tensor> base_a = {st.a_norm};

  if (!random_mode) {
    st.encoder.online.set_requires_grad(false);
    st.graph_aug.params.set_requires_grad(false);
    st.skeleton_aug.params.set_requires_grad(true);
    Tape tape;
    std::vector<Tensor> aug;
    aug.reserve(batch.size());
    for (const Tensor& x : batch)
      aug.push_back(rotate_sequence(x, predict_quaternion(st.skeleton_aug, x)));
    Tensor z1 = encode_project(ec, st.encoder.online, batch, base_a);
    Tensor z2 = encode_project(ec, st.encoder.online, aug, base_a);
    GameLosses gl = game_losses({z1, z2}, st.cfg.triplet);
    tape.backward(gl.l_min);
    optimizer_step(st.skeleton_opt, st.skeleton_aug.params, StepMode::Descent);
    stats.min_ran = true;
    stats.i_min = gl.i_value;
  }

  st.skeleton_aug.params.set_requires_grad(false);
  st.graph_aug.params.set_requires_grad(false);
  st.encoder.online.set_requires_grad(true);
  {
    Tape tape;
    std::vector<Tensor> aug;
    aug.reserve(batch.size());
    for (const Tensor& x : batch) {
      Tensor q = random_mode ? quaternion_tensor(random_unit_quaternion(st.rng))
                             : predict_quaternion(st.skeleton_aug, x);
      aug.push_back(rotate_sequence(x, q));
    }
    Tensor z1 = encode_project(ec, st.encoder.online, batch, base_a);
    Tensor z2 = encode_project(ec, st.encoder.target, aug, base_a);
    GameLosses gl = game_losses({z1, z2}, st.cfg.triplet);
    tape.backward(gl.l_max);
    optimizer_step(st.encoder_opt, st.encoder.online, StepMode::Descent);
    momentum_update(st.encoder);
    stats.i_max = gl.i_value;
  }
  return stats;
}

StepStats emmg_step(TrainState& st, const std::vector<Tensor>& batch, bool random_mode) {
  require_batch(batch, "emmg_step");
  StepStats stats;
  const EncoderConfig& ec = st.cfg.encoder;
  const std::vector<Tensor> base_a = {st.a_norm};
  const int edges = static_cast<int>(st.graph.edges.size());

  if (!random_mode) {
    st.encoder.online.set_requires_grad(false);
    st.skeleton_aug.params.set_requires_grad(false);
    st.graph_aug.params.set_requires_grad(true);
    Tape tape;
    std::vector<Tensor> a_tilde;
    a_tilde.reserve(batch.size());
    for (const Tensor& x : batch) {
      Tensor w = predict_edge_weights(st.graph_aug, x);
      a_tilde.push_back(normalize_adjacency(apply_edge_weights(st.graph, w)));
    }
    Tensor z1 = encode_project(ec, st.encoder.online, batch, base_a);
    Tensor z2 = encode_project(ec, st.encoder.online, batch, a_tilde);
    GameLosses gl = game_losses({z1, z2}, st.cfg.triplet);
    tape.backward(gl.l_min);
    optimizer_step(st.graph_opt, st.graph_aug.params, StepMode::Descent);
    stats.min_ran = true;
    stats.i_min = gl.i_value;
  }

  st.skeleton_aug.params.set_requires_grad(false);
  st.graph_aug.params.set_requires_grad(false);
  st.encoder.online.set_requires_grad(true);
  {
    Tape tape;
    std::vector<Tensor> a_tilde;
    a_tilde.reserve(batch.size());
    for (const Tensor& x : batch) {
      Tensor w = random_mode ? random_edge_weights(st.rng, edges)
                             : predict_edge_weights(st.graph_aug, x);
      a_tilde.push_back(normalize_adjacency(apply_edge_weights(st.graph, w)));
    }
    Tensor z1 = encode_project(ec, st.encoder.online, batch, base_a);
    Tensor z2 = encode_project(ec, st.encoder.target, batch, a_tilde);
    GameLosses gl = game_losses({z1, z2}, st.cfg.triplet);
    tape.backward(gl.l_max);
    optimizer_step(st.encoder_opt, st.encoder.online, StepMode::Descent);
    momentum_update(st.encoder);
    stats.i_max = gl.i_value;
  }
  return stats;
}

namespace {

std::vector<std::vector<int>> make_batches(const std::vector<int>& order, int batch_size) {
  std::vector<std::vector<int>> batches;
  const int n = static_cast<int>(order.size());
  for (int start = 0; start < n; start += batch_size) {
    int end = std::min(start + batch_size, n);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  // A trailing singleton cannot form a contrastive pair; borrow one sample
  // from the previous batch so the final two batches have sizes N-1 and 2.
  if (batches.size() > 1 && batches.back().size() == 1) {
    auto& prev = batches[batches.size() - 2];
    batches.back().insert(batches.back().begin(), prev.back());
    prev.pop_back();
  }
  return batches;
}

}  // namespace

PretrainResult pretrain(const PretrainConfig& cfg, const LabeledDataset& data) {
  cfg.validate();
  if (data.sequences.empty()) throw DegenerateError("pretrain: dataset is empty");
  if (data.sequences.size() < 2)
    throw DegenerateError("pretrain: need at least 2 sequences to form a batch, got 1");
  const int joints = data.sequences[0].joints;
  const int frames = data.sequences[0].frames;
  for (size_t i = 0; i < data.sequences.size(); ++i) {
    const SkeletonSequence& s = data.sequences[i];
    if (s.joints != joints || s.frames != frames)
      throw ShapeError("pretrain: sequence " + std::to_string(i) + " is " +
                       std::to_string(s.joints) + "x" + std::to_string(s.frames) +
                       ", expected " + std::to_string(joints) + "x" + std::to_string(frames));
  }

  TrainState st = init_train_state(cfg, joints);
  std::vector<Tensor> xs;
  xs.reserve(data.sequences.size());
  for (const SkeletonSequence& seq : data.sequences)
    xs.push_back(sequence_tensor(cfg.stream == Stream::Motion ? motion_stream(seq) : seq));

  std::vector<json> metrics;
  std::vector<int> order(xs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.rng.shuffle(order);
    double min_sum[2] = {0.0, 0.0}, max_sum[2] = {0.0, 0.0};
    std::int64_t min_cnt[2] = {0, 0}, max_cnt[2] = {0, 0};
    for (const std::vector<int>& idx : make_batches(order, cfg.batch_size)) {
      std::vector<Tensor> batch;
      batch.reserve(idx.size());
      for (int i : idx) batch.push_back(xs[static_cast<size_t>(i)]);
      json rec = {{"type", "step"}, {"epoch", epoch}, {"step", st.step}};
      try {
        for (Game g : cfg.game_order) {
          if (!cfg.game_active(g)) continue;
          bool randomized = cfg.game_randomized(g);
          StepStats ss =
              g == Game::Vmmg ? vmmg_step(st, batch, randomized) : emmg_step(st, batch, randomized);
          int gi = g == Game::Vmmg ? 0 : 1;
          if (ss.min_ran) {
            rec[game_name(g) + "_i_min"] = ss.i_min;
            min_sum[gi] += ss.i_min;
            min_cnt[gi] += 1;
          }
          rec[game_name(g) + "_i_max"] = ss.i_max;
          max_sum[gi] += ss.i_max;
          max_cnt[gi] += 1;
        }
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(st.step) + ": " + e.what());
      }
      metrics.push_back(std::move(rec));
      st.step += 1;
    }
    json erec = {{"type", "epoch"}, {"epoch", epoch}};
    for (Game g : {Game::Vmmg, Game::Emmg}) {
      int gi = g == Game::Vmmg ? 0 : 1;
      if (min_cnt[gi] > 0)
        erec[game_name(g) + "_i_min_mean"] = min_sum[gi] / static_cast<double>(min_cnt[gi]);
      if (max_cnt[gi] > 0)
        erec[game_name(g) + "_i_max_mean"] = max_sum[gi] / static_cast<double>(max_cnt[gi]);
    }
    metrics.push_back(std::move(erec));
    st.epoch += 1;
  }
  return {std::move(st), std::move(metrics)};
}

namespace {

json require_key(const json& j, const char* key) {
  if (!j.contains(key))
    throw FormatError(std::string("checkpoint config is missing key '") + key + "'");
  return j.at(key);
}

}  // namespace

json pretrain_manifest_config(const PretrainConfig& cfg, int joints, int frames) {
  json games = json::array(), order = json::array(), ablation = json::array();
  for (Game g : cfg.games) games.push_back(game_name(g));
  for (Game g : cfg.game_order) order.push_back(game_name(g));
  for (Game g : cfg.ablation) ablation.push_back(ablation_name(g));
  json blocks = json::array();
  for (const BlockSpec& b : cfg.encoder.blocks)
    blocks.push_back({b.in_channels, b.out_channels, b.temporal_kernel, b.temporal_stride});
  return json{{"kind", "pretrain"},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"encoder_lr", cfg.encoder_lr},
              {"encoder_wd", cfg.encoder_wd},
              {"encoder_momentum", cfg.encoder_momentum},
              {"augmenter_lr", cfg.augmenter_lr},
              {"momentum_coef", cfg.momentum_coef},
              {"margin", cfg.triplet.margin},
              {"gamma", cfg.triplet.gamma},
              {"hard_mining", cfg.triplet.hard_mining},
              {"games", games},
              {"game_order", order},
              {"ablation", ablation},
              {"stream", stream_name(cfg.stream)},
              {"seed", cfg.seed},
              {"encoder",
               {{"blocks", blocks}, {"embed_dim", cfg.encoder.embed_dim},
                {"proj_dim", cfg.encoder.proj_dim}}},
              {"joints", joints},
              {"frames", frames}};
}

PretrainConfig config_from_manifest(const json& config, int& joints_out) {
  PretrainConfig cfg;
  try {
    cfg.epochs = require_key(config, "epochs").get<int>();
    cfg.batch_size = require_key(config, "batch_size").get<int>();
    cfg.encoder_lr = require_key(config, "encoder_lr").get<float>();
    cfg.encoder_wd = require_key(config, "encoder_wd").get<float>();
    cfg.encoder_momentum = require_key(config, "encoder_momentum").get<float>();
    cfg.augmenter_lr = require_key(config, "augmenter_lr").get<float>();
    cfg.momentum_coef = require_key(config, "momentum_coef").get<float>();
    cfg.triplet.margin = require_key(config, "margin").get<float>();
    cfg.triplet.gamma = require_key(config, "gamma").get<float>();
    cfg.triplet.hard_mining = require_key(config, "hard_mining").get<bool>();
    cfg.games.clear();
    for (const auto& g : require_key(config, "games")) cfg.games.push_back(parse_game(g));
    cfg.game_order.clear();
    for (const auto& g : require_key(config, "game_order"))
      cfg.game_order.push_back(parse_game(g));
    cfg.ablation.clear();
    for (const auto& g : require_key(config, "ablation"))
      cfg.ablation.push_back(parse_ablation(g));
    cfg.stream = parse_stream(require_key(config, "stream").get<std::string>());
    cfg.seed = require_key(config, "seed").get<std::uint64_t>();
    json enc = require_key(config, "encoder");
    cfg.encoder.blocks.clear();
    for (const auto& b : require_key(enc, "blocks")) {
      if (!b.is_array() || b.size() != 4)
        throw FormatError("checkpoint encoder block must be a 4-element array");
      cfg.encoder.blocks.push_back(
          {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
    }
    cfg.encoder.embed_dim = require_key(enc, "embed_dim").get<int>();
    cfg.encoder.proj_dim = require_key(enc, "proj_dim").get<int>();
    joints_out = require_key(config, "joints").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config is malformed: ") + e.what());
  }
  return cfg;
}

std::vector<std::pair<std::string, Tensor>> checkpoint_params(const TrainState& st) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const NamedParam& p : st.encoder.online) out.emplace_back(p.name, p.value);
  for (const NamedParam& p : st.encoder.target) out.emplace_back("target." + p.name, p.value);
  for (const NamedParam& p : st.skeleton_aug.params) out.emplace_back(p.name, p.value);
  for (const NamedParam& p : st.graph_aug.params) out.emplace_back(p.name, p.value);
  return out;
}

TrainState state_from_checkpoint(const json& config,
                                 const std::vector<std::pair<std::string, Tensor>>& params) {
  int joints = 0;
  PretrainConfig cfg = config_from_manifest(config, joints);
  TrainState st = init_train_state(cfg, joints);
  size_t matched = 0;
  auto restore = [&](ParameterSet& ps, const std::string& name, const Tensor& src) {
    Tensor* dst = ps.find(name);
    if (!dst) return false;
    if (dst->shape() != src.shape())
      throw FormatError("checkpoint parameter '" + name + "' has the wrong shape");
    std::copy(src.data(), src.data() + src.numel(), dst->mutable_data());
    matched += 1;
    return true;
  };
  for (const auto& [name, value] : params) {
    bool ok;
    if (name.rfind("target.", 0) == 0)
      ok = restore(st.encoder.target, name.substr(7), value);
    else if (name.rfind("r.", 0) == 0)
      ok = restore(st.skeleton_aug.params, name, value);
    else if (name.rfind("t.", 0) == 0)
      ok = restore(st.graph_aug.params, name, value);
    else
      ok = restore(st.encoder.online, name, value);
    if (!ok) throw FormatError("checkpoint parameter '" + name + "' matches no model parameter");
  }
  size_t expected = st.encoder.online.size() + st.encoder.target.size() +
                    st.skeleton_aug.params.size() + st.graph_aug.params.size();
  if (matched != expected)
    throw FormatError("checkpoint restores " + std::to_string(matched) + " of " +
                      std::to_string(expected) + " model parameters");
  return st;
}

}  // namespace dmmg
