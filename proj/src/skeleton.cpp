#include "dmmg/skeleton.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dmmg/errors.hpp"
#include "dmmg/graph.hpp"
#include "dmmg/rng.hpp"

namespace dmmg {

void SkeletonSequence::validate() const {
  if (joints < 1 || frames < 1)
    throw ContractError("sequence needs at least one joint and one frame");
  if (channels != 3) throw ContractError("sequence channels must be 3");
  if (coords.size() != static_cast<size_t>(joints) * 3 * static_cast<size_t>(frames))
    throw ContractError("sequence buffer does not match joints*3*frames");
  for (float v : coords)
    if (!std::isfinite(v)) throw ContractError("sequence contains a non-finite coordinate");
}

SkeletonSequence make_sequence(int joints, int frames) {
  if (joints < 1 || frames < 1)
    throw ContractError("sequence needs at least one joint and one frame");
  SkeletonSequence s;
  s.joints = joints;
  s.frames = frames;
  s.coords.assign(static_cast<size_t>(joints) * 3 * static_cast<size_t>(frames), 0.0f);
  return s;
}

Tensor sequence_tensor(const SkeletonSequence& x) {
  return Tensor::from_data({x.joints, 3, x.frames}, x.coords);
}

SkeletonSequence tensor_sequence(const Tensor& t) {
  if (t.rank() != 3 || t.dim(1) != 3)
    throw ShapeError("tensor_sequence: expected [J,3,T] tensor");
  SkeletonSequence s;
  s.joints = t.dim(0);
  s.frames = t.dim(2);
  s.coords = t.values();
  return s;
}

void LabeledDataset::validate() const {
  if (sequences.size() != labels.size())
    throw ContractError("dataset has " + std::to_string(sequences.size()) + " sequences but " +
                        std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw ContractError("dataset label " + std::to_string(l) + " outside " +
                          std::to_string(num_classes) + " classes");
}

SkeletonSequence motion_stream(const SkeletonSequence& x) {
  SkeletonSequence out = make_sequence(x.joints, x.frames);
  for (int j = 0; j < x.joints; ++j)
    for (int c = 0; c < 3; ++c)
      for (int t = 1; t < x.frames; ++t) out.at(j, c, t) = x.at(j, c, t) - x.at(j, c, t - 1);
  return out;
}

SkeletonSequence resample_temporal(const SkeletonSequence& x, int target_t) {
  if (target_t < 1) throw ConfigError("resample_temporal: target frame count must be positive");
  SkeletonSequence out = make_sequence(x.joints, target_t);
  for (int i = 0; i < target_t; ++i) {
    float pos = 0.0f;
    if (target_t > 1 && x.frames > 1)
      pos = static_cast<float>(i) * static_cast<float>(x.frames - 1) /
            static_cast<float>(target_t - 1);
    int lo = static_cast<int>(pos);
    if (lo > x.frames - 1) lo = x.frames - 1;
    int hi = lo + 1 < x.frames ? lo + 1 : lo;
    float frac = pos - static_cast<float>(lo);
    for (int j = 0; j < x.joints; ++j)
      for (int c = 0; c < 3; ++c)
        out.at(j, c, i) = (1.0f - frac) * x.at(j, c, lo) + frac * x.at(j, c, hi);
  }
  return out;
}

SkeletonSequence center_sequence(const SkeletonSequence& x, int root_joint) {
  if (root_joint < 0 || root_joint >= x.joints)
    throw ConfigError("center_sequence: root joint " + std::to_string(root_joint) +
                      " outside " + std::to_string(x.joints) + " joints");
  SkeletonSequence out = x;
  for (int t = 0; t < x.frames; ++t) {
    float rx = x.at(root_joint, 0, t), ry = x.at(root_joint, 1, t), rz = x.at(root_joint, 2, t);
    for (int j = 0; j < x.joints; ++j) {
      out.at(j, 0, t) = x.at(j, 0, t) - rx;
      out.at(j, 1, t) = x.at(j, 1, t) - ry;
      out.at(j, 2, t) = x.at(j, 2, t) - rz;
    }
  }
  return out;
}

// ---- synthetic generator ----------------------------------------------------

const std::vector<int>& body_tree_parents() {
  static const std::vector<int> parents = {-1, 0, 1, 1, 3, 1, 5, 0, 7, 0, 9};
  return parents;
}

namespace {

constexpr int kJoints = 11;
constexpr int kClasses = 8;
constexpr float kPi = 3.14159265358979323846f;
constexpr float kHalfPi = kPi / 2.0f;

struct Vec3 {
  float x, y, z;
};

struct Mat3 {
  float m[9];
  Vec3 apply(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 compose(const Mat3& o) const {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        float s = 0.0f;
        for (int k = 0; k < 3; ++k) s += m[3 * i + k] * o.m[3 * k + j];
        r.m[3 * i + j] = s;
      }
    return r;
  }
};

Mat3 axis_angle(Vec3 u, float angle) {
  float c = std::cos(angle), s = std::sin(angle), t = 1.0f - c;
  return {{t * u.x * u.x + c,       t * u.x * u.y - s * u.z, t * u.x * u.z + s * u.y,
           t * u.x * u.y + s * u.z, t * u.y * u.y + c,       t * u.y * u.z - s * u.x,
           t * u.x * u.z - s * u.y, t * u.y * u.z + s * u.x, t * u.z * u.z + c}};
}

Mat3 basis_rotation(int axis, float angle) {
  Vec3 u = axis == 0 ? Vec3{1, 0, 0} : axis == 1 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
  return axis_angle(u, angle);
}

Vec3 normalized(Vec3 v) {
  float n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  return {v.x / n, v.y / n, v.z / n};
}

// bone from parent to joint: rest direction (normalized at use) and length
const Vec3 kRestDir[kJoints] = {
    {0, 0, 0},        {0, 1, 0},         {0, 1, 0},        {1, -0.2f, 0},
    {1, -0.3f, 0},    {-1, -0.2f, 0},    {-1, -0.3f, 0},   {0.25f, -1, 0},
    {0, -1, 0},       {-0.25f, -1, 0},   {0, -1, 0}};
const float kBoneLen[kJoints] = {0, 0.25f, 0.20f, 0.30f, 0.28f, 0.30f, 0.28f,
                                 0.40f, 0.38f, 0.40f, 0.38f};

struct JointWave {
  float amp;    // radians
  float freq;   // cycles over the sequence
  float phase;  // radians
  int axis;     // 0=x 1=y 2=z
};

// one movement pattern per class: which joints oscillate, how fast, about
// which axis; class identity lives in the dynamics, not the rest pose
const JointWave kPatterns[kClasses][kJoints] = {
    // 0: right-arm wave
    {{0, 1, 0, 0}, {0.05f, 1, 0, 0}, {0, 1, 0, 0}, {0.9f, 2, 0, 2}, {1.1f, 2, kHalfPi, 2},
     {0.1f, 1, 0, 2}, {0.1f, 1, kHalfPi, 2}, {0.05f, 1, 0, 0}, {0, 1, 0, 0}, {0.05f, 1, kPi, 0},
     {0, 1, 0, 0}},
    // 1: left-arm wave
    {{0, 1, 0, 0}, {0.05f, 1, 0, 0}, {0, 1, 0, 0}, {0.1f, 1, 0, 2}, {0.1f, 1, kHalfPi, 2},
     {0.9f, 2, kPi, 2}, {1.1f, 2, -kHalfPi, 2}, {0.05f, 1, 0, 0}, {0, 1, 0, 0},
     {0.05f, 1, kPi, 0}, {0, 1, 0, 0}},
    // 2: march
    {{0, 1, 0, 0}, {0.05f, 2, 0, 0}, {0, 1, 0, 0}, {0.3f, 2, kPi, 1}, {0.2f, 2, kPi, 1},
     {0.3f, 2, 0, 1}, {0.2f, 2, 0, 1}, {0.7f, 2, 0, 0}, {0.5f, 2, kHalfPi, 0},
     {0.7f, 2, kPi, 0}, {0.5f, 2, kPi + kHalfPi, 0}},
    // 3: squat
    {{0, 1, 0, 0}, {0.25f, 1, kPi, 0}, {0, 1, 0, 0}, {0.3f, 1, 0, 1}, {0.1f, 1, 0, 1},
     {0.3f, 1, kPi, 1}, {0.1f, 1, kPi, 1}, {0.6f, 1, 0, 0}, {0.9f, 1, kPi, 0}, {0.6f, 1, 0, 0},
     {0.9f, 1, kPi, 0}},
    // 4: bow
    {{0, 1, 0, 0}, {0.7f, 1, 0, 0}, {0.3f, 1, 0, 0}, {0.1f, 1, 0, 2}, {0.1f, 1, 0, 2},
     {0.1f, 1, kPi, 2}, {0.1f, 1, kPi, 2}, {0, 1, 0, 0}, {0, 1, 0, 0}, {0, 1, 0, 0},
     {0, 1, 0, 0}},
    // 5: jumping jack
    {{0, 1, 0, 0}, {0, 1, 0, 0}, {0, 1, 0, 0}, {1.2f, 1, 0, 2}, {0.3f, 1, 0, 2},
     {1.2f, 1, kPi, 2}, {0.3f, 1, kPi, 2}, {0.35f, 1, kPi, 2}, {0, 1, 0, 0}, {0.35f, 1, 0, 2},
     {0, 1, 0, 0}},
    // 6: torso twist
    {{0, 1, 0, 0}, {0.8f, 1, 0, 1}, {0.4f, 1, 0, 1}, {0.15f, 1, 0, 2}, {0.1f, 1, 0, 2},
     {0.15f, 1, kPi, 2}, {0.1f, 1, kPi, 2}, {0.05f, 1, 0, 0}, {0, 1, 0, 0}, {0.05f, 1, kPi, 0},
     {0, 1, 0, 0}},
    // 7: right kick
    {{0, 1, 0, 0}, {0.1f, 1, kPi, 0}, {0, 1, 0, 0}, {0.2f, 1, 0, 1}, {0.1f, 1, 0, 1},
     {0.2f, 1, kPi, 1}, {0.1f, 1, kPi, 1}, {1.0f, 1, 0, 0}, {0.6f, 1, kHalfPi, 0},
     {0.05f, 1, 0, 0}, {0, 1, 0, 0}}};

SkeletonSequence synthesize_sample(const SyntheticConfig& cfg, int class_id, int index) {
  SkeletonSequence seq = make_sequence(cfg.joints, cfg.frames);
  const auto& parents = body_tree_parents();
  const JointWave* waves = kPatterns[class_id];

  // per-performer style: every sample executes the class pattern with its own
  // vigor, tempo, and starting point in the cycle
  Rng rng(cfg.seed, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(index));
  const float amp_scale = rng.uniform(0.85f, 1.15f);
  const float freq_scale = rng.uniform(0.92f, 1.08f);
  const float phase_off = rng.uniform(-0.6f, 0.6f);

  for (int t = 0; t < cfg.frames; ++t) {
    float u = static_cast<float>(t) / static_cast<float>(cfg.frames);
    std::array<Mat3, kJoints> world_rot;
    std::array<Vec3, kJoints> pos;
    world_rot[0] = basis_rotation(0, 0.0f);
    pos[0] = {0, 0, 0};
    for (int j = 1; j < kJoints; ++j) {
      const JointWave& w = waves[j];
      float angle =
          amp_scale * w.amp * std::sin(2.0f * kPi * freq_scale * w.freq * u + w.phase + phase_off);
      Mat3 local = basis_rotation(w.axis, angle);
      int p = parents[static_cast<size_t>(j)];
      world_rot[static_cast<size_t>(j)] = world_rot[static_cast<size_t>(p)].compose(local);
      Vec3 dir = normalized(kRestDir[j]);
      Vec3 bone = world_rot[static_cast<size_t>(j)].apply(
          {dir.x * kBoneLen[j], dir.y * kBoneLen[j], dir.z * kBoneLen[j]});
      pos[static_cast<size_t>(j)] = {pos[static_cast<size_t>(p)].x + bone.x,
                                     pos[static_cast<size_t>(p)].y + bone.y,
                                     pos[static_cast<size_t>(p)].z + bone.z};
    }
    for (int j = 0; j < kJoints; ++j) {
      seq.at(j, 0, t) = pos[static_cast<size_t>(j)].x;
      seq.at(j, 1, t) = pos[static_cast<size_t>(j)].y;
      seq.at(j, 2, t) = pos[static_cast<size_t>(j)].z;
    }
  }

  // per-sample view change and sensor noise, from the same sample-local stream
  Vec3 axis{0, 0, 1};
  for (;;) {
    Vec3 v{static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
           static_cast<float>(rng.normal())};
    float n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    if (n > 1e-6f) {
      axis = {v.x / n, v.y / n, v.z / n};
      break;
    }
  }
  float angle = static_cast<float>(rng.uniform(0.0, static_cast<double>(cfg.viewpoint_jitter)));
  Mat3 view = axis_angle(axis, angle);
  for (int t = 0; t < cfg.frames; ++t)
    for (int j = 0; j < kJoints; ++j) {
      Vec3 p{seq.at(j, 0, t), seq.at(j, 1, t), seq.at(j, 2, t)};
      Vec3 q = view.apply(p);
      seq.at(j, 0, t) = q.x;
      seq.at(j, 1, t) = q.y;
      seq.at(j, 2, t) = q.z;
    }
  if (cfg.noise_std > 0.0f)
    for (auto& v : seq.coords)
      v += static_cast<float>(rng.normal(0.0, static_cast<double>(cfg.noise_std)));
  return seq;
}

const char* kPatternNames[kClasses] = {"right-arm-wave", "left-arm-wave", "march",   "squat",
                                       "bow",            "jumping-jack",  "torso-twist",
                                       "right-kick"};

}  // namespace

std::vector<std::string> synthetic_class_names(int num_classes) {
  if (num_classes < 1 || num_classes > kClasses)
    throw ConfigError("generator defines " + std::to_string(kClasses) + " classes, asked for " +
                      std::to_string(num_classes));
  return std::vector<std::string>(kPatternNames, kPatternNames + num_classes);
}

std::pair<LabeledDataset, LabeledDataset> generate_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("generator needs at least 2 classes");
  if (cfg.num_classes > kClasses)
    throw ConfigError("generator defines " + std::to_string(kClasses) +
                      " movement patterns, asked for " + std::to_string(cfg.num_classes));
  if (cfg.sequences_per_class < 1)
    throw ConfigError("generator needs at least 1 sequence per class");
  if (cfg.joints != kJoints)
    throw ConfigError("generator's body tree has " + std::to_string(kJoints) +
                      " joints, asked for " + std::to_string(cfg.joints));
  if (cfg.frames < 1) throw ConfigError("generator needs at least 1 frame");
  if (cfg.noise_std < 0.0f) throw ConfigError("noise_std must be nonnegative");
  if (cfg.viewpoint_jitter < 0.0f) throw ConfigError("viewpoint_jitter must be nonnegative");

  LabeledDataset train, test;
  train.num_classes = test.num_classes = cfg.num_classes;
  train.split_tag = "train";
  test.split_tag = "test";
  const int test_per_class = cfg.sequences_per_class / 3;
  const int train_per_class = cfg.sequences_per_class - test_per_class;
  for (int c = 0; c < cfg.num_classes; ++c)
    for (int i = 0; i < cfg.sequences_per_class; ++i) {
      SkeletonSequence s = synthesize_sample(cfg, c, i);
      if (i < train_per_class) {
        train.sequences.push_back(std::move(s));
        train.labels.push_back(c);
      } else {
        test.sequences.push_back(std::move(s));
        test.labels.push_back(c);
      }
    }
  return {std::move(train), std::move(test)};
}

// ---- SKL1 container -----------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[offset + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

}  // namespace

void encode_skl(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  int j = 0, t = 0;
  if (!ds.sequences.empty()) {
    j = ds.sequences[0].joints;
    t = ds.sequences[0].frames;
    for (const auto& s : ds.sequences) {
      s.validate();
      if (s.joints != j || s.frames != t)
        throw ShapeError("encode_skl: sequences disagree on joints or frames");
    }
  }
  std::string buf;
  buf.append("SKL1");
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(ds.sequences.size()));
  put_u32(buf, static_cast<std::uint32_t>(j));
  put_u32(buf, 3);
  put_u32(buf, static_cast<std::uint32_t>(t));
  put_u32(buf, static_cast<std::uint32_t>(ds.num_classes));
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    put_u32(buf, static_cast<std::uint32_t>(ds.labels[i]));
    const auto& coords = ds.sequences[i].coords;
    size_t pos = buf.size();
    buf.resize(pos + coords.size() * 4);
    std::memcpy(buf.data() + pos, coords.data(), coords.size() * 4);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write to '" + path + "' failed");
}

LabeledDataset decode_skl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 28)
    throw FormatError("file ends at offset " + std::to_string(buf.size()) +
                      ", header needs 28 bytes");
  if (buf.compare(0, 4, "SKL1") != 0) throw FormatError("bad magic at offset 0");
  std::uint32_t version = get_u32(buf, 4);
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version) + " at offset 4");
  std::uint32_t count = get_u32(buf, 8);
  std::uint32_t j = get_u32(buf, 12);
  std::uint32_t c = get_u32(buf, 16);
  std::uint32_t t = get_u32(buf, 20);
  std::uint32_t classes = get_u32(buf, 24);
  if (c != 3) throw FormatError("channel count " + std::to_string(c) + " at offset 16, expected 3");
  if (count > 0 && (j == 0 || t == 0))
    throw FormatError("zero joint or frame extent at offset 12");
  std::uint64_t per_seq = 4 + static_cast<std::uint64_t>(j) * 3 * t * 4;
  std::uint64_t expected = 28 + per_seq * count;
  if (buf.size() < expected)
    throw FormatError("file ends at offset " + std::to_string(buf.size()) + ", expected " +
                      std::to_string(expected) + " bytes");
  if (buf.size() > expected)
    throw FormatError("trailing data at offset " + std::to_string(expected));
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(classes);
  size_t off = 28;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t label = get_u32(buf, off);
    if (label >= classes)
      throw FormatError("label " + std::to_string(label) + " at offset " + std::to_string(off) +
                        " outside " + std::to_string(classes) + " classes");
    off += 4;
    SkeletonSequence s = make_sequence(static_cast<int>(j), static_cast<int>(t));
    std::memcpy(s.coords.data(), buf.data() + off, s.coords.size() * 4);
    for (size_t k = 0; k < s.coords.size(); ++k)
      if (!std::isfinite(s.coords[k]))
        throw FormatError("non-finite coordinate at offset " + std::to_string(off + k * 4));
    off += s.coords.size() * 4;
    ds.sequences.push_back(std::move(s));
    ds.labels.push_back(static_cast<int>(label));
  }
  return ds;
}

}  // namespace dmmg
