#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "dmmg/errors.hpp"
#include "dmmg/rng.hpp"
#include "dmmg/trainer.hpp"

using namespace dmmg;

namespace {

EncoderConfig toy_encoder() {
  EncoderConfig ec;
  ec.blocks = {{3, 4, 3, 1}, {4, 6, 3, 2}};
  ec.embed_dim = 6;
  ec.proj_dim = 5;
  return ec;
}

PretrainConfig toy_config() {
  PretrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.encoder = toy_encoder();
  cfg.seed = 5;
  return cfg;
}

LabeledDataset toy_dataset(int count, std::uint64_t seed, int frames = 10) {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.split_tag = "train";
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    SkeletonSequence s = make_sequence(11, frames);
    for (auto& v : s.coords) v = rng.uniform(-0.5f, 0.5f);
    ds.sequences.push_back(std::move(s));
    ds.labels.push_back(i % 2);
  }
  return ds;
}

std::vector<Tensor> toy_batch(int count, std::uint64_t seed) {
  LabeledDataset ds = toy_dataset(count, seed);
  std::vector<Tensor> batch;
  for (const auto& s : ds.sequences) batch.push_back(sequence_tensor(s));
  return batch;
}

std::vector<float> flat_values(const ParameterSet& ps) {
  std::vector<float> out;
  for (const NamedParam& p : ps)
    out.insert(out.end(), p.value.data(), p.value.data() + p.value.numel());
  return out;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("pretrain config validation") {
  PretrainConfig cfg = toy_config();
  CHECK_NOTHROW(cfg.validate());

  PretrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.momentum_coef = 1.5f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.encoder_lr = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.games.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.ablation = {Game::Vmmg};
  CHECK_NOTHROW(bad.validate());

  bad = cfg;
  bad.games = {Game::Vmmg, Game::Vmmg};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.ablation = {Game::Emmg, Game::Emmg};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.game_order = {Game::Vmmg};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("game and stream names round trip") {
  CHECK(parse_game(game_name(Game::Vmmg)) == Game::Vmmg);
  CHECK(parse_game(game_name(Game::Emmg)) == Game::Emmg);
  CHECK(parse_stream(stream_name(Stream::Motion)) == Stream::Motion);
  CHECK(parse_ablation("r_view") == Game::Vmmg);
  CHECK(parse_ablation("r_edge") == Game::Emmg);
  CHECK(ablation_name(Game::Vmmg) == "r_view");
  CHECK_THROWS_AS(parse_game("both"), ConfigError);
  CHECK_THROWS_AS(parse_stream("bone"), ConfigError);
  CHECK_THROWS_AS(parse_ablation("none"), ConfigError);
}

TEST_CASE("init_train_state demands the body graph joint count") {
  CHECK_THROWS_AS(init_train_state(toy_config(), 12), ConfigError);
}

TEST_CASE("pretrain rejects degenerate datasets") {
  PretrainConfig cfg = toy_config();
  CHECK_THROWS_AS(pretrain(cfg, LabeledDataset{}), DegenerateError);
  CHECK_THROWS_AS(pretrain(cfg, toy_dataset(1, 3)), DegenerateError);

  LabeledDataset mixed = toy_dataset(4, 3);
  mixed.sequences[2] = make_sequence(11, 9);
  CHECK_THROWS_AS(pretrain(cfg, mixed), ShapeError);
}

TEST_CASE("steps reject batches below the pair minimum") {
  TrainState st = init_train_state(toy_config(), 11);
  std::vector<Tensor> one = toy_batch(1, 3);
  CHECK_THROWS_AS(vmmg_step(st, one, false), DegenerateError);
  CHECK_THROWS_AS(emmg_step(st, one, false), DegenerateError);
}

TEST_CASE("a single game never touches the other augmenter") {
  PretrainConfig cfg = toy_config();
  cfg.games = {Game::Vmmg};
  cfg.game_order = {Game::Vmmg};
  TrainState init = init_train_state(cfg, 11);
  PretrainResult res = pretrain(cfg, toy_dataset(8, 21));
  CHECK(same_bits(flat_values(res.state.graph_aug.params), flat_values(init.graph_aug.params)));
  CHECK_FALSE(
      same_bits(flat_values(res.state.encoder.online), flat_values(init.encoder.online)));

  cfg.games = {Game::Emmg};
  cfg.game_order = {Game::Emmg};
  init = init_train_state(cfg, 11);
  res = pretrain(cfg, toy_dataset(8, 21));
  CHECK(same_bits(flat_values(res.state.skeleton_aug.params),
                  flat_values(init.skeleton_aug.params)));
}

namespace {

/// Shifts every parameter well away from zero so that an update suppressed by
/// a learning rate below float resolution is a bitwise no-op: p minus a ~1e-30
/// product only keeps p's bytes when p itself is not ~0.
void clear_zeros(ParameterSet& ps, Rng& rng) {
  for (NamedParam& p : ps)
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      float sign = rng.uniform(0.0f, 1.0f) < 0.5f ? -1.0f : 1.0f;
      float& v = p.value.mutable_data()[i];
      v += sign * rng.uniform(0.3f, 0.6f);
      if (std::fabs(v) < 0.05f) v += v < 0.0f ? -0.1f : 0.1f;
    }
}

float min_abs(const std::vector<float>& v) {
  float m = 1e30f;
  for (float x : v) m = std::min(m, std::fabs(x));
  return m;
}

}  // namespace

TEST_CASE("min phases leave the online encoder untouched") {
  // The encoder learning rate is driven below float resolution, so its own
  // optimizer cannot move any weight; a byte that changes over the run could
  // only come from a phase stepping parameters it has no business touching.
  PretrainConfig cfg = toy_config();
  cfg.encoder_lr = 1e-30f;
  TrainState st = init_train_state(cfg, 11);
  Rng noise(987);
  clear_zeros(st.encoder.online, noise);
  std::vector<float> before = flat_values(st.encoder.online);
  REQUIRE(min_abs(before) > 1e-3f);
  std::vector<float> skel0 = flat_values(st.skeleton_aug.params);
  std::vector<Tensor> batch = toy_batch(4, 13);
  for (int step = 0; step < 6; ++step) {
    vmmg_step(st, batch, false);
    emmg_step(st, batch, false);
    CHECK(same_bits(flat_values(st.encoder.online), before));
  }
  // the augmenters did train, so the min phases genuinely ran
  CHECK_FALSE(same_bits(flat_values(st.skeleton_aug.params), skel0));
}

TEST_CASE("max phases leave the augmenters untouched") {
  PretrainConfig cfg = toy_config();
  cfg.augmenter_lr = 1e-30f;
  TrainState st = init_train_state(cfg, 11);
  Rng noise(988);
  clear_zeros(st.skeleton_aug.params, noise);
  clear_zeros(st.graph_aug.params, noise);
  std::vector<float> skel = flat_values(st.skeleton_aug.params);
  std::vector<float> graph = flat_values(st.graph_aug.params);
  REQUIRE(min_abs(skel) > 1e-3f);
  REQUIRE(min_abs(graph) > 1e-3f);
  std::vector<float> online0 = flat_values(st.encoder.online);
  std::vector<Tensor> batch = toy_batch(4, 14);
  for (int step = 0; step < 6; ++step) {
    vmmg_step(st, batch, false);
    emmg_step(st, batch, false);
    CHECK(same_bits(flat_values(st.skeleton_aug.params), skel));
    CHECK(same_bits(flat_values(st.graph_aug.params), graph));
  }
  CHECK_FALSE(same_bits(flat_values(st.encoder.online), online0));
}

TEST_CASE("random mode skips min phases and leaves augmenters alone") {
  PretrainConfig cfg = toy_config();
  cfg.games.clear();
  cfg.ablation = {Game::Vmmg, Game::Emmg};
  TrainState init = init_train_state(cfg, 11);
  PretrainResult res = pretrain(cfg, toy_dataset(8, 17));
  CHECK(same_bits(flat_values(res.state.skeleton_aug.params),
                  flat_values(init.skeleton_aug.params)));
  CHECK(same_bits(flat_values(res.state.graph_aug.params), flat_values(init.graph_aug.params)));
  for (const auto& rec : res.metrics) {
    CHECK_FALSE(rec.contains("vmmg_i_min"));
    CHECK_FALSE(rec.contains("emmg_i_min"));
    CHECK_FALSE(rec.contains("vmmg_i_min_mean"));
    CHECK_FALSE(rec.contains("emmg_i_min_mean"));
    if (rec.at("type") == "step") {
      CHECK(rec.contains("vmmg_i_max"));
      CHECK(rec.contains("emmg_i_max"));
    }
  }
}

TEST_CASE("one max step improves its own objective on a replayed batch") {
  // The augmenter learning rate is negligible and the target is frozen, so
  // between two identical batches the only moving part is the online encoder;
  // gamma - I must fall, i.e. the measured I must rise, on average over seeds.
  float delta_sum = 0.0f;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PretrainConfig cfg = toy_config();
    cfg.encoder_lr = 1e-3f;
    cfg.augmenter_lr = 1e-30f;
    cfg.momentum_coef = 1.0f;
    cfg.seed = seed;
    TrainState st = init_train_state(cfg, 11);
    std::vector<Tensor> batch = toy_batch(6, 100 + seed);
    StepStats first = vmmg_step(st, batch, false);
    StepStats second = vmmg_step(st, batch, false);
    delta_sum += second.i_max - first.i_max;
  }
  CHECK(delta_sum / 5.0f > 0.0f);
}

TEST_CASE("one min step does not increase I under a fixed encoder") {
  // encoder effectively frozen (lr below float resolution, frozen target);
  // augmenter takes one step per call at the contract's rate
  for (Game game : {Game::Vmmg, Game::Emmg}) {
    int ok = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      PretrainConfig cfg = toy_config();
      cfg.encoder_lr = 1e-30f;
      cfg.augmenter_lr = 1e-3f;
      cfg.momentum_coef = 1.0f;
      cfg.seed = seed;
      TrainState st = init_train_state(cfg, 11);
      std::vector<Tensor> batch = toy_batch(6, 200 + seed);
      StepStats first = game == Game::Vmmg ? vmmg_step(st, batch, false)
                                           : emmg_step(st, batch, false);
      StepStats second = game == Game::Vmmg ? vmmg_step(st, batch, false)
                                            : emmg_step(st, batch, false);
      if (second.i_min <= first.i_min + 1e-6f) ok += 1;
    }
    CHECK(ok >= 4);
  }
}

TEST_CASE("momentum endpoints freeze or copy the target") {
  PretrainConfig cfg = toy_config();
  cfg.momentum_coef = 1.0f;
  TrainState st = init_train_state(cfg, 11);
  std::vector<float> target0 = flat_values(st.encoder.target);
  std::vector<Tensor> batch = toy_batch(4, 31);
  for (int i = 0; i < 3; ++i) {
    vmmg_step(st, batch, false);
    emmg_step(st, batch, false);
  }
  CHECK(same_bits(flat_values(st.encoder.target), target0));
  CHECK_FALSE(same_bits(flat_values(st.encoder.online), target0));

  cfg.momentum_coef = 0.0f;
  st = init_train_state(cfg, 11);
  for (int i = 0; i < 3; ++i) {
    vmmg_step(st, batch, false);
    CHECK(same_bits(flat_values(st.encoder.target), flat_values(st.encoder.online)));
  }
}

TEST_CASE("gamma never alters the trajectory") {
  auto run = [&](float gamma) {
    PretrainConfig cfg = toy_config();
    cfg.triplet.gamma = gamma;
    return pretrain(cfg, toy_dataset(10, 77));
  };
  PretrainResult a = run(0.0f);
  PretrainResult b = run(100.0f);
  auto pa = checkpoint_params(a.state);
  auto pb = checkpoint_params(b.state);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(std::memcmp(pa[i].second.data(), pb[i].second.data(),
                      static_cast<size_t>(pa[i].second.numel()) * sizeof(float)) == 0);
  }
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) CHECK(a.metrics[i] == b.metrics[i]);
}

TEST_CASE("identical seeds reproduce the run bitwise") {
  PretrainConfig cfg = toy_config();
  LabeledDataset ds = toy_dataset(10, 55);
  PretrainResult a = pretrain(cfg, ds);
  PretrainResult b = pretrain(cfg, ds);
  auto pa = checkpoint_params(a.state);
  auto pb = checkpoint_params(b.state);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(std::memcmp(pa[i].second.data(), pb[i].second.data(),
                      static_cast<size_t>(pa[i].second.numel()) * sizeof(float)) == 0);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) CHECK(a.metrics[i] == b.metrics[i]);

  cfg.seed = 6;
  PretrainResult c = pretrain(cfg, ds);
  CHECK(a.metrics != c.metrics);
}

TEST_CASE("metrics log counts batches with the tail borrow rule") {
  PretrainConfig cfg = toy_config();  // batch 4, 2 epochs

  // 10 = 4+4+2: three steps per epoch
  PretrainResult res = pretrain(cfg, toy_dataset(10, 91));
  int steps = 0, epochs = 0;
  for (const auto& rec : res.metrics) {
    if (rec.at("type") == "step") steps += 1;
    if (rec.at("type") == "epoch") epochs += 1;
  }
  CHECK(steps == 6);
  CHECK(epochs == 2);

  // 9 = 4+4+1 -> borrow -> 4+3+2
  res = pretrain(cfg, toy_dataset(9, 92));
  steps = 0;
  for (const auto& rec : res.metrics)
    if (rec.at("type") == "step") steps += 1;
  CHECK(steps == 6);

  // 5 = 4+1 -> borrow -> 3+2
  cfg.epochs = 1;
  res = pretrain(cfg, toy_dataset(5, 93));
  steps = 0;
  for (const auto& rec : res.metrics)
    if (rec.at("type") == "step") steps += 1;
  CHECK(steps == 2);
}

TEST_CASE("step records carry phase values and epoch records their means") {
  PretrainConfig cfg = toy_config();
  cfg.epochs = 1;
  PretrainResult res = pretrain(cfg, toy_dataset(8, 94));
  double vmax_sum = 0.0;
  int vmax_cnt = 0;
  const nlohmann::json* epoch_rec = nullptr;
  for (const auto& rec : res.metrics) {
    if (rec.at("type") == "step") {
      CHECK(rec.contains("epoch"));
      CHECK(rec.contains("step"));
      for (const char* key : {"vmmg_i_min", "vmmg_i_max", "emmg_i_min", "emmg_i_max"})
        CHECK(rec.contains(key));
      vmax_sum += rec.at("vmmg_i_max").get<double>();
      vmax_cnt += 1;
    } else {
      epoch_rec = &rec;
    }
  }
  REQUIRE(epoch_rec != nullptr);
  for (const char* key :
       {"vmmg_i_min_mean", "vmmg_i_max_mean", "emmg_i_min_mean", "emmg_i_max_mean"})
    CHECK(epoch_rec->contains(key));
  CHECK(epoch_rec->at("vmmg_i_max_mean").get<double>() ==
        doctest::Approx(vmax_sum / vmax_cnt).epsilon(1e-9));
}

TEST_CASE("manifest config round trips every field") {
  PretrainConfig cfg = toy_config();
  cfg.epochs = 7;
  cfg.batch_size = 9;
  cfg.encoder_lr = 0.05f;
  cfg.encoder_wd = 2e-4f;
  cfg.encoder_momentum = 0.8f;
  cfg.augmenter_lr = 0.02f;
  cfg.momentum_coef = 0.97f;
  cfg.triplet.margin = 1.5f;
  cfg.triplet.gamma = 4.0f;
  cfg.triplet.hard_mining = false;
  cfg.games = {Game::Emmg};
  cfg.game_order = {Game::Emmg, Game::Vmmg};
  cfg.ablation = {Game::Vmmg};
  cfg.stream = Stream::Motion;
  cfg.seed = 42;

  nlohmann::json manifest = pretrain_manifest_config(cfg, 11, 16);
  int joints = 0;
  PretrainConfig back = config_from_manifest(manifest, joints);
  CHECK(joints == 11);
  CHECK(manifest.at("frames") == 16);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.encoder_lr == cfg.encoder_lr);
  CHECK(back.encoder_wd == cfg.encoder_wd);
  CHECK(back.encoder_momentum == cfg.encoder_momentum);
  CHECK(back.augmenter_lr == cfg.augmenter_lr);
  CHECK(back.momentum_coef == cfg.momentum_coef);
  CHECK(back.triplet.margin == cfg.triplet.margin);
  CHECK(back.triplet.gamma == cfg.triplet.gamma);
  CHECK(back.triplet.hard_mining == cfg.triplet.hard_mining);
  CHECK(back.games == cfg.games);
  CHECK(back.game_order == cfg.game_order);
  CHECK(back.ablation == cfg.ablation);
  CHECK(back.stream == cfg.stream);
  CHECK(back.seed == cfg.seed);
  CHECK(back.encoder.blocks.size() == cfg.encoder.blocks.size());
  CHECK(back.encoder.blocks[1].out_channels == cfg.encoder.blocks[1].out_channels);
  CHECK(back.encoder.embed_dim == cfg.encoder.embed_dim);
  CHECK(back.encoder.proj_dim == cfg.encoder.proj_dim);

  manifest.erase("momentum_coef");
  CHECK_THROWS_AS(config_from_manifest(manifest, joints), FormatError);
}

TEST_CASE("checkpoint params rebuild an identical state") {
  PretrainConfig cfg = toy_config();
  PretrainResult res = pretrain(cfg, toy_dataset(8, 61));
  auto params = checkpoint_params(res.state);

  // toy encoder: 2 blocks x 2 tensors + projector w/b, twice (online+target),
  // plus two 4-tensor augmenter heads
  CHECK(params.size() == 6 + 6 + 4 + 4);
  CHECK(params[6].first.rfind("target.", 0) == 0);

  nlohmann::json manifest = pretrain_manifest_config(cfg, 11, 10);
  TrainState rebuilt = state_from_checkpoint(manifest, params);
  auto again = checkpoint_params(rebuilt);
  REQUIRE(again.size() == params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(again[i].first == params[i].first);
    CHECK(std::memcmp(again[i].second.data(), params[i].second.data(),
                      static_cast<size_t>(params[i].second.numel()) * sizeof(float)) == 0);
  }

  auto broken = params;
  broken[2].first = "f.block9.spatial_w";
  CHECK_THROWS_AS(state_from_checkpoint(manifest, broken), FormatError);

  auto missing = params;
  missing.pop_back();
  CHECK_THROWS_AS(state_from_checkpoint(manifest, missing), FormatError);
}

TEST_CASE("motion stream pretraining diverges from joint stream") {
  PretrainConfig cfg = toy_config();
  cfg.epochs = 1;
  LabeledDataset ds = toy_dataset(6, 88);
  PretrainResult joint = pretrain(cfg, ds);
  cfg.stream = Stream::Motion;
  PretrainResult motion = pretrain(cfg, ds);
  CHECK(joint.metrics != motion.metrics);
}
