#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "dmmg/errors.hpp"
#include "dmmg/skeleton.hpp"

using namespace dmmg;

namespace {

std::string temp_path(const char* name) {
  return std::string("skl_test_") + name + ".bin";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace

TEST_CASE("sequence construction and validation") {
  SkeletonSequence s = make_sequence(2, 3);
  CHECK(s.coords.size() == 18);
  s.at(1, 2, 0) = 5.0f;
  CHECK(s.coords[(1 * 3 + 2) * 3 + 0] == 5.0f);
  CHECK_THROWS_AS(make_sequence(0, 3), ContractError);

  s.coords[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("sequence tensor round trip") {
  SkeletonSequence s = make_sequence(2, 4);
  s.at(0, 1, 2) = 7.0f;
  Tensor t = sequence_tensor(s);
  CHECK(t.shape() == Shape{2, 3, 4});
  SkeletonSequence back = tensor_sequence(t);
  CHECK(back.at(0, 1, 2) == 7.0f);
  CHECK_THROWS_AS(tensor_sequence(Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("motion stream is frame differences with zero first frame") {
  SkeletonSequence s = make_sequence(1, 3);
  s.at(0, 0, 0) = 1.0f;
  s.at(0, 0, 1) = 4.0f;
  s.at(0, 0, 2) = 9.0f;
  SkeletonSequence m = motion_stream(s);
  CHECK(m.at(0, 0, 0) == 0.0f);
  CHECK(m.at(0, 0, 1) == 3.0f);
  CHECK(m.at(0, 0, 2) == 5.0f);
}

TEST_CASE("temporal resampling preserves endpoints") {
  SkeletonSequence s = make_sequence(1, 3);
  s.at(0, 0, 0) = 0.0f;
  s.at(0, 0, 1) = 1.0f;
  s.at(0, 0, 2) = 4.0f;
  SkeletonSequence r = resample_temporal(s, 5);
  CHECK(r.frames == 5);
  CHECK(r.at(0, 0, 0) == 0.0f);
  CHECK(r.at(0, 0, 4) == 4.0f);
  CHECK(r.at(0, 0, 1) == doctest::Approx(0.5f));  // position 0.5 between frames 0 and 1
  CHECK_THROWS_AS(resample_temporal(s, 0), ConfigError);
}

TEST_CASE("centering subtracts the root trajectory") {
  SkeletonSequence s = make_sequence(2, 2);
  s.at(0, 0, 0) = 1.0f;
  s.at(1, 0, 0) = 3.0f;
  s.at(0, 0, 1) = -2.0f;
  s.at(1, 0, 1) = 0.5f;
  SkeletonSequence c = center_sequence(s, 0);
  CHECK(c.at(0, 0, 0) == 0.0f);
  CHECK(c.at(1, 0, 0) == 2.0f);
  CHECK(c.at(1, 0, 1) == 2.5f);
  CHECK_THROWS_AS(center_sequence(s, 5), ConfigError);
}

TEST_CASE("synthetic generator shapes, split, and determinism") {
  SyntheticConfig cfg;
  cfg.seed = 11;
  cfg.num_classes = 4;
  cfg.sequences_per_class = 9;
  cfg.frames = 16;
  auto [train, test] = generate_synthetic_dataset(cfg);
  // stratified 2:1 split per class
  CHECK(train.size() == 4 * 6);
  CHECK(test.size() == 4 * 3);
  CHECK(train.num_classes == 4);
  CHECK(train.split_tag == "train");
  for (const auto& s : train.sequences) {
    CHECK(s.joints == 11);
    CHECK(s.frames == 16);
    s.validate();
  }
  int per_class = 0;
  for (int l : test.labels)
    if (l == 2) ++per_class;
  CHECK(per_class == 3);

  auto [train2, test2] = generate_synthetic_dataset(cfg);
  CHECK(train2.sequences[5].coords == train.sequences[5].coords);

  cfg.seed = 12;
  auto [train3, test3] = generate_synthetic_dataset(cfg);
  CHECK(train3.sequences[5].coords != train.sequences[5].coords);
}

TEST_CASE("generator config validation") {
  SyntheticConfig cfg;
  cfg.num_classes = 1;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg.num_classes = 9;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg.num_classes = 8;
  cfg.joints = 12;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg.joints = 11;
  cfg.noise_std = -1.0f;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
}

TEST_CASE("per-sample style varies even without view or noise") {
  SyntheticConfig cfg;
  cfg.num_classes = 2;
  cfg.sequences_per_class = 3;
  cfg.frames = 8;
  cfg.viewpoint_jitter = 0.0f;
  cfg.noise_std = 0.0f;
  auto [train, test] = generate_synthetic_dataset(cfg);
  // same class, different performer: amplitude/tempo/phase make them distinct
  CHECK(train.sequences[0].coords != train.sequences[1].coords);
  // the root stays planted at the origin regardless of style
  for (int t = 0; t < 8; ++t) {
    CHECK(train.sequences[0].at(0, 0, t) == 0.0f);
    CHECK(train.sequences[0].at(0, 1, t) == 0.0f);
  }
}

TEST_CASE("class names") {
  auto names = synthetic_class_names(3);
  CHECK(names.size() == 3);
  CHECK(names[2] == "march");
  CHECK_THROWS_AS(synthetic_class_names(0), ConfigError);
  CHECK_THROWS_AS(synthetic_class_names(99), ConfigError);
}

TEST_CASE("body tree") {
  const auto& parents = body_tree_parents();
  CHECK(parents.size() == 11);
  CHECK(parents[0] == -1);
  for (size_t j = 1; j < parents.size(); ++j) {
    CHECK(parents[j] >= 0);
    CHECK(parents[j] < static_cast<int>(j));
  }
}

TEST_CASE("skl round trip is exact") {
  SyntheticConfig cfg;
  cfg.num_classes = 3;
  cfg.sequences_per_class = 4;
  cfg.frames = 6;
  auto [train, test] = generate_synthetic_dataset(cfg);
  std::string path = temp_path("roundtrip");
  encode_skl(train, path);
  LabeledDataset back = decode_skl(path);
  CHECK(back.size() == train.size());
  CHECK(back.num_classes == 3);
  CHECK(back.labels == train.labels);
  for (size_t i = 0; i < back.size(); ++i) CHECK(back.sequences[i].coords == train.sequences[i].coords);

  encode_skl(train, path);  // rewrite

  std::string once = slurp(path);
  encode_skl(train, path);
  CHECK(slurp(path) == once);  // byte-stable
  std::remove(path.c_str());
}

TEST_CASE("skl decode rejects damage") {
  SyntheticConfig cfg;
  cfg.num_classes = 2;
  cfg.sequences_per_class = 2;
  cfg.frames = 4;
  auto [train, test] = generate_synthetic_dataset(cfg);
  std::string path = temp_path("damage");
  encode_skl(train, path);
  std::string good = slurp(path);

  spit(path, good.substr(0, 10));
  CHECK_THROWS_AS(decode_skl(path), FormatError);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  spit(path, bad_magic);
  CHECK_THROWS_AS(decode_skl(path), FormatError);

  std::string bad_version = good;
  bad_version[4] = 9;
  spit(path, bad_version);
  CHECK_THROWS_AS(decode_skl(path), FormatError);

  std::string truncated = good.substr(0, good.size() - 3);
  spit(path, truncated);
  CHECK_THROWS_AS(decode_skl(path), FormatError);

  std::string trailing = good + "zz";
  spit(path, trailing);
  CHECK_THROWS_AS(decode_skl(path), FormatError);

  CHECK_THROWS_AS(decode_skl("no_such_file.skl"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("dataset validation") {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.sequences.push_back(make_sequence(2, 2));
  CHECK_THROWS_AS(ds.validate(), ContractError);
  ds.labels.push_back(5);
  CHECK_THROWS_AS(ds.validate(), ContractError);
  ds.labels[0] = 1;
  CHECK_NOTHROW(ds.validate());
}
