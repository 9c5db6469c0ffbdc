#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "dmmg/errors.hpp"
#include "dmmg/eval.hpp"
#include "dmmg/rng.hpp"

using namespace dmmg;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig ec;
  ec.blocks = {{3, 4, 3, 1}};
  ec.embed_dim = 4;
  ec.proj_dim = 4;
  return ec;
}

/// Two classes whose coordinate scales differ so strongly that any
/// reasonable backbone separates them linearly.
LabeledDataset scale_split_dataset(int per_class, std::uint64_t seed, const char* tag) {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.split_tag = tag;
  Rng rng(seed);
  for (int c = 0; c < 2; ++c) {
    float base = c == 0 ? 0.2f : 2.0f;
    for (int i = 0; i < per_class; ++i) {
      SkeletonSequence s = make_sequence(11, 8);
      for (auto& v : s.coords) v = base + rng.uniform(-0.05f, 0.05f);
      ds.sequences.push_back(std::move(s));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

EvalConfig quick_eval() {
  EvalConfig cfg;
  cfg.epochs = 25;
  cfg.lr = 0.01f;
  cfg.lr_drop_epoch = 20;
  cfg.batch_size = 8;
  return cfg;
}

}  // namespace

TEST_CASE("protocol names round trip") {
  for (Protocol p : {Protocol::Linear, Protocol::Finetune, Protocol::Knn, Protocol::Semi})
    CHECK(parse_protocol(protocol_name(p)) == p);
  CHECK_THROWS_AS(parse_protocol("svm"), ConfigError);
}

TEST_CASE("eval config validation") {
  EvalConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  EvalConfig bad = cfg;
  bad.knn_k = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.knn_temperature = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.label_fraction = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.label_fraction = 1.5f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("accuracy argmax breaks ties toward the lowest class") {
  ClassScores s;
  s.num_classes = 2;
  s.labels = {0, 1};
  s.scores = {{0.5f, 0.5f}, {0.5f, 0.5f}};
  // both rows resolve to class 0: first correct, second wrong
  CHECK(s.accuracy() == doctest::Approx(0.5f));

  ClassScores empty;
  CHECK_THROWS_AS(empty.accuracy(), DegenerateError);

  ClassScores ragged;
  ragged.num_classes = 2;
  ragged.labels = {0};
  ragged.scores = {{1.0f, 0.0f}, {0.0f, 1.0f}};
  CHECK_THROWS_AS(ragged.accuracy(), ContractError);
}

TEST_CASE("scores serialize and deserialize") {
  ClassScores s;
  s.num_classes = 3;
  s.labels = {2, 0};
  s.scores = {{0.1f, 0.2f, 0.7f}, {0.9f, 0.05f, 0.05f}};
  ClassScores back = scores_from_json(scores_json(s));
  CHECK(back.num_classes == 3);
  CHECK(back.labels == s.labels);
  CHECK(back.scores == s.scores);

  nlohmann::json j = scores_json(s);
  j.erase("labels");
  CHECK_THROWS_AS(scores_from_json(j), FormatError);

  j = scores_json(s);
  j["labels"] = {2, 0, 1};
  CHECK_THROWS_AS(scores_from_json(j), FormatError);

  j = scores_json(s);
  j["scores"][0] = {0.5f, 0.5f};
  CHECK_THROWS_AS(scores_from_json(j), FormatError);
}

TEST_CASE("knn votes match the closed form") {
  EvalConfig cfg;
  cfg.knn_k = 2;
  cfg.knn_temperature = 0.1f;
  std::vector<std::vector<float>> train = {{1.0f, 0.0f}, {0.0f, 1.0f}};
  std::vector<int> train_labels = {0, 1};
  std::vector<std::vector<float>> test = {{1.0f, 0.0f}};
  EvalResult r = knn_on_features(train, train_labels, test, {0}, 2, cfg);
  // sims are 1 and 0; vote weights e^10 and e^0
  double w0 = std::exp(10.0), w1 = 1.0;
  CHECK(r.scores.scores[0][0] == doctest::Approx(w0 / (w0 + w1)).epsilon(1e-6));
  CHECK(r.scores.scores[0][1] == doctest::Approx(w1 / (w0 + w1)).epsilon(1e-6));
  CHECK(r.accuracy == 1.0f);
  CHECK(r.epoch_curve.empty());
}

TEST_CASE("knn rows are normalized and scale invariant") {
  EvalConfig cfg;
  cfg.knn_k = 1;
  std::vector<std::vector<float>> train = {{2.0f, 0.0f}, {0.0f, 7.0f}};
  std::vector<std::vector<float>> scaled = {{1.0f, 0.0f}, {0.0f, 0.1f}};
  std::vector<int> labels = {0, 1};
  std::vector<std::vector<float>> test = {{0.3f, 0.4f}, {5.0f, 0.0f}};
  EvalResult a = knn_on_features(train, labels, test, {1, 0}, 2, cfg);
  EvalResult b = knn_on_features(scaled, labels, test, {1, 0}, 2, cfg);
  CHECK(a.scores.scores == b.scores.scores);
  for (const auto& row : a.scores.scores) {
    float sum = 0.0f;
    for (float v : row) {
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("knn ties prefer the earlier train row") {
  EvalConfig cfg;
  cfg.knn_k = 1;
  std::vector<std::vector<float>> train = {{1.0f, 0.0f}, {1.0f, 0.0f}};
  std::vector<int> labels = {1, 0};
  EvalResult r = knn_on_features(train, labels, {{1.0f, 0.0f}}, {1}, 2, cfg);
  CHECK(r.scores.scores[0][1] == 1.0f);
  CHECK(r.accuracy == 1.0f);
}

TEST_CASE("knn input contracts") {
  EvalConfig cfg;
  cfg.knn_k = 3;
  std::vector<std::vector<float>> train = {{1.0f, 0.0f}, {0.0f, 1.0f}};
  std::vector<int> labels = {0, 1};
  CHECK_THROWS_AS(knn_on_features(train, labels, {{1.0f, 0.0f}}, {0}, 2, cfg), ConfigError);
  cfg.knn_k = 1;
  CHECK_THROWS_AS(knn_on_features({}, {}, {{1.0f, 0.0f}}, {0}, 2, cfg), DegenerateError);
  CHECK_THROWS_AS(knn_on_features(train, {0}, {{1.0f, 0.0f}}, {0}, 2, cfg), ContractError);
}

TEST_CASE("stratified split takes the ceiling per class") {
  LabeledDataset ds;
  ds.num_classes = 2;
  for (int i = 0; i < 50; ++i) {
    ds.sequences.push_back(make_sequence(11, 4));
    ds.labels.push_back(i % 2);
  }

  std::vector<int> one = semi_supervised_split(ds, 0.01f, 9);
  CHECK(one.size() == 2);  // ceil(0.01 * 25) = 1 per class

  std::vector<int> ten = semi_supervised_split(ds, 0.1f, 9);
  CHECK(ten.size() == 6);  // ceil(2.5) = 3 per class
  int per_class[2] = {0, 0};
  for (size_t i = 0; i < ten.size(); ++i) {
    if (i > 0) CHECK(ten[i] > ten[i - 1]);
    per_class[ds.labels[static_cast<size_t>(ten[i])]] += 1;
  }
  CHECK(per_class[0] == 3);
  CHECK(per_class[1] == 3);

  CHECK(semi_supervised_split(ds, 1.0f, 9).size() == 50);
  CHECK(semi_supervised_split(ds, 0.1f, 9) == ten);
  CHECK(semi_supervised_split(ds, 0.1f, 10) != ten);
  CHECK_THROWS_AS(semi_supervised_split(ds, 0.0f, 9), ConfigError);

  ds.num_classes = 3;  // class 2 exists on paper only
  CHECK_THROWS_AS(semi_supervised_split(ds, 0.5f, 9), ConfigError);
}

TEST_CASE("subset keeps sequences aligned with labels") {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.split_tag = "train";
  for (int i = 0; i < 4; ++i) {
    SkeletonSequence s = make_sequence(11, 3);
    s.at(0, 0, 0) = static_cast<float>(i);
    ds.sequences.push_back(std::move(s));
    ds.labels.push_back(i % 2);
  }
  LabeledDataset sub = subset_dataset(ds, {3, 1});
  CHECK(sub.size() == 2);
  CHECK(sub.split_tag == "train");
  CHECK(sub.sequences[0].at(0, 0, 0) == 3.0f);
  CHECK(sub.labels[0] == 1);
  CHECK(sub.sequences[1].at(0, 0, 0) == 1.0f);
  CHECK_THROWS_AS(subset_dataset(ds, {4}), ContractError);
  CHECK_THROWS_AS(subset_dataset(ds, {-1}), ContractError);
}

TEST_CASE("fusion averages and renormalizes rows") {
  ClassScores a, b;
  a.num_classes = b.num_classes = 2;
  a.labels = b.labels = {0, 1};
  a.scores = {{0.8f, 0.2f}, {0.5f, 0.1f}};
  b.scores = {{0.4f, 0.6f}, {0.1f, 0.1f}};
  FuseResult f = fuse_streams(a, b);
  CHECK(f.scores.scores[0][0] == doctest::Approx(0.6f));
  CHECK(f.scores.scores[0][1] == doctest::Approx(0.4f));
  // means {0.3, 0.1} renormalize to {0.75, 0.25}
  CHECK(f.scores.scores[1][0] == doctest::Approx(0.75f));
  CHECK(f.scores.scores[1][1] == doctest::Approx(0.25f));
  CHECK(f.accuracy == doctest::Approx(0.5f));

  ClassScores c = b;
  c.num_classes = 3;
  c.scores = {{0.2f, 0.4f, 0.4f}, {0.1f, 0.8f, 0.1f}};
  CHECK_THROWS_AS(fuse_streams(a, c), ShapeError);

  c = b;
  c.scores.pop_back();
  c.labels.pop_back();
  CHECK_THROWS_AS(fuse_streams(a, c), ShapeError);

  c = b;
  c.labels = {1, 1};
  CHECK_THROWS_AS(fuse_streams(a, c), ContractError);
}

TEST_CASE("pca projects onto the dominant directions") {
  // samples stretched along x with a weak y component and silent z
  std::vector<std::vector<float>> feats;
  Rng rng(3);
  std::vector<float> xs, ys;
  for (int i = 0; i < 40; ++i) {
    float a = rng.uniform(-5.0f, 5.0f);
    float b = rng.uniform(-0.3f, 0.3f);
    xs.push_back(a);
    ys.push_back(b);
    feats.push_back({a, b, 0.0f});
  }
  std::vector<std::array<float, 2>> proj = pca_2d(feats);
  float mx = 0.0f, my = 0.0f;
  for (int i = 0; i < 40; ++i) {
    mx += xs[static_cast<size_t>(i)];
    my += ys[static_cast<size_t>(i)];
  }
  mx /= 40.0f;
  my /= 40.0f;
  for (int i = 0; i < 40; ++i) {
    CHECK(proj[static_cast<size_t>(i)][0] ==
          doctest::Approx(xs[static_cast<size_t>(i)] - mx).epsilon(0.02));
    CHECK(proj[static_cast<size_t>(i)][1] ==
          doctest::Approx(ys[static_cast<size_t>(i)] - my).epsilon(0.05));
  }

  CHECK(pca_2d(feats) == proj);
  CHECK_THROWS_AS(pca_2d({}), DegenerateError);
  CHECK_THROWS_AS(pca_2d({{1.0f, 2.0f}, {1.0f}}), ShapeError);
}

TEST_CASE("embedding a dataset yields one backbone row per sequence") {
  EncoderConfig ec = tiny_encoder();
  ParameterSet params = init_encoder_params(ec, 17);
  LabeledDataset ds = scale_split_dataset(3, 5, "train");
  auto feats = embed_dataset(ec, params, ds);
  CHECK(feats.size() == 6);
  for (const auto& row : feats) CHECK(row.size() == 4);
  CHECK(embed_dataset(ec, params, ds) == feats);

  LabeledDataset wrong;
  wrong.num_classes = 2;
  wrong.sequences.push_back(make_sequence(9, 4));
  wrong.labels.push_back(0);
  CHECK_THROWS_AS(embed_dataset(ec, params, wrong), ConfigError);
}

TEST_CASE("frozen linear probe separates an easy split") {
  EncoderConfig ec = tiny_encoder();
  ParameterSet params = init_encoder_params(ec, 17);
  ParameterSet snapshot;
  for (const NamedParam& p : params) snapshot.add(p.name, p.value.clone());

  LabeledDataset train = scale_split_dataset(8, 21, "train");
  LabeledDataset test = scale_split_dataset(4, 22, "test");
  EvalConfig cfg = quick_eval();
  EvalResult r = linear_eval(ec, params, train, test, cfg, true);
  CHECK(r.accuracy >= 0.9f);
  CHECK(r.scores.scores.size() == 8);
  CHECK(r.epoch_curve.size() == 25);
  CHECK(r.epoch_curve.front() > r.epoch_curve.back());

  // the probe trains on a copy: caller parameters keep their bytes
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(std::memcmp(params[i].value.data(), snapshot[i].value.data(),
                      static_cast<size_t>(params[i].value.numel()) * sizeof(float)) == 0);

  EvalResult again = linear_eval(ec, params, train, test, cfg, true);
  CHECK(again.scores.scores == r.scores.scores);
}

TEST_CASE("finetuning also leaves the caller parameters alone") {
  EncoderConfig ec = tiny_encoder();
  ParameterSet params = init_encoder_params(ec, 17);
  ParameterSet snapshot;
  for (const NamedParam& p : params) snapshot.add(p.name, p.value.clone());

  LabeledDataset train = scale_split_dataset(4, 31, "train");
  LabeledDataset test = scale_split_dataset(2, 32, "test");
  EvalConfig cfg = quick_eval();
  cfg.epochs = 2;
  EvalResult r = linear_eval(ec, params, train, test, cfg, false);
  CHECK(r.scores.scores.size() == 4);
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(std::memcmp(params[i].value.data(), snapshot[i].value.data(),
                      static_cast<size_t>(params[i].value.numel()) * sizeof(float)) == 0);
}

TEST_CASE("linear eval input contracts") {
  EncoderConfig ec = tiny_encoder();
  ParameterSet params = init_encoder_params(ec, 17);
  LabeledDataset train = scale_split_dataset(3, 41, "train");
  LabeledDataset test = scale_split_dataset(2, 42, "test");
  EvalConfig cfg = quick_eval();

  LabeledDataset mismatched = test;
  mismatched.num_classes = 3;
  CHECK_THROWS_AS(linear_eval(ec, params, train, mismatched, cfg, true), ContractError);
  CHECK_THROWS_AS(linear_eval(ec, params, LabeledDataset{}, test, cfg, true), DegenerateError);

  LabeledDataset bad_label = train;
  bad_label.labels[0] = 7;
  CHECK_THROWS_AS(linear_eval(ec, params, bad_label, test, cfg, true), ContractError);
}

TEST_CASE("knn over the backbone classifies the easy split") {
  EncoderConfig ec = tiny_encoder();
  ParameterSet params = init_encoder_params(ec, 17);
  LabeledDataset train = scale_split_dataset(6, 51, "train");
  LabeledDataset test = scale_split_dataset(3, 52, "test");
  EvalConfig cfg;
  cfg.knn_k = 3;
  EvalResult r = knn_eval(ec, params, train, test, cfg);
  CHECK(r.accuracy >= 0.9f);
  CHECK(r.scores.scores.size() == 6);
  CHECK(r.scores.num_classes == 2);
}
