#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmmg/augmenter.hpp"
#include "dmmg/contrastive.hpp"
#include "dmmg/encoder.hpp"
#include "dmmg/graph.hpp"
#include "dmmg/optimizer.hpp"
#include "dmmg/rng.hpp"
#include "dmmg/skeleton.hpp"

namespace dmmg {

enum class Game { Vmmg, Emmg };
enum class Stream { Joint, Motion };

std::string game_name(Game g);
Game parse_game(const std::string& name);
std::string stream_name(Stream s);
Stream parse_stream(const std::string& name);
std::string ablation_name(Game g);        // r_view / r_edge
Game parse_ablation(const std::string& name);

struct PretrainConfig {
  int epochs = 30;
  int batch_size = 32;
  float encoder_lr = 0.1f;
  float encoder_wd = 1e-4f;
  float encoder_momentum = 0.9f;
  float augmenter_lr = 0.01f;
  float momentum_coef = 0.999f;
  TripletConfig triplet;
  std::vector<Game> games = {Game::Vmmg, Game::Emmg};
  std::vector<Game> game_order = {Game::Vmmg, Game::Emmg};
  /// Games run with a random augmentation instead of the learned adversary
  /// (and no min phase). A game listed here runs even if absent from games.
  std::vector<Game> ablation;
  Stream stream = Stream::Joint;
  std::uint64_t seed = 1;
  EncoderConfig encoder;

  void validate() const;
  bool game_active(Game g) const;
  bool game_randomized(Game g) const;
};

struct TrainState {
  PretrainConfig cfg;
  SkeletonGraph graph;
  Tensor a_norm;  // normalized base adjacency, values only
  EncoderPair encoder;
  SkeletonAugmenter skeleton_aug;
  GraphAugmenter graph_aug;
  OptimizerState encoder_opt, skeleton_opt, graph_opt;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  Rng rng{0};
};

TrainState init_train_state(const PretrainConfig& cfg, int joints);

struct StepStats {
  bool min_ran = false;
  float i_min = 0.0f;
  float i_max = 0.0f;
};

/// Viewpoint game on one batch of [J,3,T] leaves. Min phase: embed originals
/// and rotated copies with the frozen online encoder, descend I into the
/// skeleton augmenter only. Max phase: recompute rotations under the frozen
/// augmenter, embed originals online and rotated copies with the momentum
/// target, descend gamma - I into the online encoder and projector, then
/// momentum-update the target. random_mode replaces the learned rotation
/// with a uniform random one and skips the min phase.
StepStats vmmg_step(TrainState& st, const std::vector<Tensor>& batch, bool random_mode);

/// Edge game, same schedule: the augmented branch re-encodes the originals
/// under per-sample reweighted and renormalized adjacencies.
StepStats emmg_step(TrainState& st, const std::vector<Tensor>& batch, bool random_mode);

struct PretrainResult {
  TrainState state;
  std::vector<nlohmann::json> metrics;  // step records plus per-epoch means
};

PretrainResult pretrain(const PretrainConfig& cfg, const LabeledDataset& data);

/// Manifest config block recorded in checkpoints; carries everything eval
/// needs to rebuild the encoder and stream transform.
nlohmann::json pretrain_manifest_config(const PretrainConfig& cfg, int joints, int frames);
PretrainConfig config_from_manifest(const nlohmann::json& config, int& joints_out);

/// All persistent tensors in checkpoint order: online, target (as
/// "target.<name>"), then both augmenter MLPs.
std::vector<std::pair<std::string, Tensor>> checkpoint_params(const TrainState& st);

/// Rebuilds a usable state (encoder pair + augmenters) from checkpoint
/// tensors; optimizer moments and rng are fresh.
TrainState state_from_checkpoint(const nlohmann::json& config,
                                 const std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace dmmg
