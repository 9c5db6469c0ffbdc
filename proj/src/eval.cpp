#include "dmmg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "dmmg/errors.hpp"
#include "dmmg/graph.hpp"
#include "dmmg/parallel.hpp"
#include "dmmg/rng.hpp"

namespace dmmg {

namespace {

using nlohmann::json;

void check_dataset(const LabeledDataset& d, const char* role) {
  if (d.sequences.empty())
    throw DegenerateError(std::string(role) + " dataset is empty");
  if (d.num_classes < 2)
    throw ConfigError(std::string(role) + " dataset declares " + std::to_string(d.num_classes) +
                      " classes, need at least 2");
  for (size_t i = 0; i < d.labels.size(); ++i)
    if (d.labels[i] < 0 || d.labels[i] >= d.num_classes)
      throw ContractError(std::string(role) + " dataset label " + std::to_string(d.labels[i]) +
                          " at index " + std::to_string(i) + " is outside [0, " +
                          std::to_string(d.num_classes) + ")");
}

Tensor eval_adjacency(int joints) {
  if (joints != 11)
    throw ConfigError("evaluation uses the 11-joint body graph, got " + std::to_string(joints) +
                      " joints");
  return normalize_adjacency(body_graph().adjacency);
}

ParameterSet clone_params(const ParameterSet& src) {
  ParameterSet out;
  for (const NamedParam& p : src) out.add(p.name, p.value.clone());
  return out;
}

int argmax_lowest(const std::vector<float>& row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

Tensor rows_tensor(const std::vector<std::vector<float>>& feats, const std::vector<int>& idx) {
  const int d = static_cast<int>(feats[0].size());
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), d});
  float* dst = out.mutable_data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(dst + r * static_cast<size_t>(d), feats[static_cast<size_t>(idx[r])].data(),
                sizeof(float) * static_cast<size_t>(d));
  return out;
}

/// Per-dimension affine standardization fitted on train features. Raw
/// backbone activations have arbitrary scale; the head trains on z-scored
/// inputs (the same fixed transform for every protocol arm).
struct FeatureAffine {
  std::vector<float> neg_mean, inv_std;

  static FeatureAffine fit(const std::vector<std::vector<float>>& feats) {
    const size_t d = feats[0].size();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (const auto& row : feats)
      for (size_t c = 0; c < d; ++c) mean[c] += row[c];
    for (double& m : mean) m /= static_cast<double>(feats.size());
    for (const auto& row : feats)
      for (size_t c = 0; c < d; ++c) {
        double v = row[c] - mean[c];
        var[c] += v * v;
      }
    FeatureAffine a;
    a.neg_mean.resize(d);
    a.inv_std.resize(d);
    for (size_t c = 0; c < d; ++c) {
      double sd = std::sqrt(var[c] / static_cast<double>(feats.size()));
      a.neg_mean[c] = static_cast<float>(-mean[c]);
      a.inv_std[c] = static_cast<float>(1.0 / std::max(sd, 1e-6));
    }
    return a;
  }

  void apply(std::vector<std::vector<float>>& feats) const {
    for (auto& row : feats)
      for (size_t c = 0; c < row.size(); ++c) row[c] = (row[c] + neg_mean[c]) * inv_std[c];
  }

  // differentiable pass-through of the same transform for finetuning
  Tensor apply(const Tensor& feats) const {
    const int d = static_cast<int>(neg_mean.size());
    Tensor nm = Tensor::from_data({d}, neg_mean);
    Tensor scale = Tensor::zeros({feats.dim(0), d});
    float* s = scale.mutable_data();
    for (int r = 0; r < feats.dim(0); ++r)
      std::memcpy(s + static_cast<size_t>(r) * d, inv_std.data(), sizeof(float) * inv_std.size());
    return mul(add_rowvec(feats, nm), scale);
  }
};

std::vector<std::vector<int>> shuffled_batches(Rng& rng, int n, int batch_size) {
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int s = 0; s < n; s += batch_size)
    batches.emplace_back(order.begin() + s, order.begin() + std::min(s + batch_size, n));
  return batches;
}

ClassScores scores_from_logits(const Tensor& logits, const std::vector<int>& labels,
                               int num_classes) {
  std::vector<float> probs = softmax_rows(logits);
  ClassScores s;
  s.num_classes = num_classes;
  s.labels = labels;
  s.scores.resize(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    s.scores[i].assign(probs.begin() + static_cast<std::ptrdiff_t>(i) * num_classes,
                       probs.begin() + static_cast<std::ptrdiff_t>(i + 1) * num_classes);
  return s;
}

}  // namespace

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Linear: return "linear";
    case Protocol::Finetune: return "finetune";
    case Protocol::Knn: return "knn";
    case Protocol::Semi: return "semi";
  }
  throw ConfigError("unknown protocol value");
}

Protocol parse_protocol(const std::string& name) {
  if (name == "linear") return Protocol::Linear;
  if (name == "finetune") return Protocol::Finetune;
  if (name == "knn") return Protocol::Knn;
  if (name == "semi") return Protocol::Semi;
  throw ConfigError("unknown protocol '" + name + "', expected linear, finetune, knn or semi");
}

void EvalConfig::validate() const {
  if (knn_k < 1) throw ConfigError("knn_k must be at least 1, got " + std::to_string(knn_k));
  if (!(knn_temperature > 0.0f))
    throw ConfigError("knn_temperature must be positive, got " + std::to_string(knn_temperature));
  if (!(label_fraction > 0.0f && label_fraction <= 1.0f))
    throw ConfigError("label_fraction must lie in (0, 1], got " + std::to_string(label_fraction));
  if (epochs < 0) throw ConfigError("epochs must be nonnegative, got " + std::to_string(epochs));
  if (!(lr > 0.0f)) throw ConfigError("lr must be positive, got " + std::to_string(lr));
  if (lr_drop_epoch < 0)
    throw ConfigError("lr_drop_epoch must be nonnegative, got " + std::to_string(lr_drop_epoch));
  if (!(lr_drop_factor > 0.0f))
    throw ConfigError("lr_drop_factor must be positive, got " + std::to_string(lr_drop_factor));
  if (batch_size < 1)
    throw ConfigError("batch_size must be at least 1, got " + std::to_string(batch_size));
}

float ClassScores::accuracy() const {
  if (scores.empty()) throw DegenerateError("accuracy of an empty score matrix");
  if (scores.size() != labels.size())
    throw ContractError("score matrix has " + std::to_string(scores.size()) + " rows but " +
                        std::to_string(labels.size()) + " labels");
  std::int64_t hits = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    if (argmax_lowest(scores[i]) == labels[i]) hits += 1;
  return static_cast<float>(static_cast<double>(hits) / static_cast<double>(scores.size()));
}

json scores_json(const ClassScores& s) {
  return json{{"num_classes", s.num_classes}, {"labels", s.labels}, {"scores", s.scores}};
}

ClassScores scores_from_json(const json& j) {
  ClassScores s;
  try {
    s.num_classes = j.at("num_classes").get<int>();
    s.labels = j.at("labels").get<std::vector<int>>();
    s.scores = j.at("scores").get<std::vector<std::vector<float>>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("score file is malformed: ") + e.what());
  }
  if (s.scores.size() != s.labels.size())
    throw FormatError("score file has " + std::to_string(s.scores.size()) + " rows but " +
                      std::to_string(s.labels.size()) + " labels");
  for (const auto& row : s.scores)
    if (static_cast<int>(row.size()) != s.num_classes)
      throw FormatError("score row width " + std::to_string(row.size()) +
                        " does not match num_classes " + std::to_string(s.num_classes));
  return s;
}

std::vector<std::vector<float>> embed_dataset(const EncoderConfig& ec, const ParameterSet& params,
                                              const LabeledDataset& data) {
  check_dataset(data, "embed");
  Tensor a_norm = eval_adjacency(data.sequences[0].joints);
  const std::vector<Tensor> base_a = {a_norm};
  std::vector<std::vector<float>> feats(data.sequences.size());
  parallel_for(static_cast<std::int64_t>(data.sequences.size()), [&](std::int64_t i) {
    Tensor x = sequence_tensor(data.sequences[static_cast<size_t>(i)]);
    Tensor z = encode_batch(ec, params, {x}, base_a);
    feats[static_cast<size_t>(i)].assign(z.data(), z.data() + z.numel());
  });
  return feats;
}

EvalResult linear_eval(const EncoderConfig& ec, const ParameterSet& encoder_params,
                       const LabeledDataset& train, const LabeledDataset& test,
                       const EvalConfig& cfg, bool freeze) {
  cfg.validate();
  check_dataset(train, "train");
  check_dataset(test, "test");
  if (train.num_classes != test.num_classes)
    throw ContractError("train and test class counts disagree: " +
                        std::to_string(train.num_classes) + " vs " +
                        std::to_string(test.num_classes));
  const int num_classes = train.num_classes;
  const int d = ec.embed_dim;

  ParameterSet enc = clone_params(encoder_params);
  enc.set_requires_grad(!freeze);

  Rng rng(cfg.seed, 200, 0);
  Tensor head_w = Tensor::zeros({d, num_classes});
  {
    float bound = std::sqrt(6.0f / static_cast<float>(d));
    float* w = head_w.mutable_data();
    for (std::int64_t i = 0; i < head_w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  }
  ParameterSet head;
  head.add("head.w", head_w);
  head.add("head.b", Tensor::zeros({num_classes}));

  ParameterSet trained;
  if (!freeze)
    for (NamedParam& p : enc) trained.add(p.name, p.value);
  for (NamedParam& p : head) trained.add(p.name, p.value);

  OptimizerState opt = OptimizerState::adam(cfg.lr);
  const int n_train = static_cast<int>(train.sequences.size());
  std::vector<double> curve;
  curve.reserve(static_cast<size_t>(cfg.epochs));

  Tensor a_norm = eval_adjacency(train.sequences[0].joints);
  const std::vector<Tensor> base_a = {a_norm};

  std::vector<std::vector<float>> train_feats = embed_dataset(ec, enc, train);
  FeatureAffine affine = FeatureAffine::fit(train_feats);
  std::vector<Tensor> train_x;
  if (freeze) {
    affine.apply(train_feats);
  } else {
    train_feats.clear();
    train_x.reserve(train.sequences.size());
    for (const SkeletonSequence& s : train.sequences) train_x.push_back(sequence_tensor(s));
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.learning_rate = epoch >= cfg.lr_drop_epoch ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
    double loss_sum = 0.0;
    std::int64_t loss_cnt = 0;
    for (const std::vector<int>& idx : shuffled_batches(rng, n_train, cfg.batch_size)) {
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (int i : idx) labels.push_back(train.labels[static_cast<size_t>(i)]);
      Tape tape;
      Tensor feats;
      if (freeze) {
        feats = rows_tensor(train_feats, idx);
      } else {
        std::vector<Tensor> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(train_x[static_cast<size_t>(i)]);
        feats = affine.apply(encode_batch(ec, enc, batch, base_a));
      }
      Tensor logits = add_rowvec(matmul(feats, *head.find("head.w")), *head.find("head.b"));
      Tensor loss = softmax_cross_entropy(logits, labels);
      tape.backward(loss);
      optimizer_step(opt, trained, StepMode::Descent);
      loss_sum += static_cast<double>(loss.item());
      loss_cnt += 1;
    }
    curve.push_back(loss_cnt > 0 ? loss_sum / static_cast<double>(loss_cnt) : 0.0);
  }

  std::vector<std::vector<float>> test_feats = embed_dataset(ec, enc, test);
  affine.apply(test_feats);
  std::vector<int> all(test_feats.size());
  std::iota(all.begin(), all.end(), 0);
  Tensor logits = add_rowvec(matmul(rows_tensor(test_feats, all), *head.find("head.w")),
                             *head.find("head.b"));
  EvalResult r;
  r.scores = scores_from_logits(logits, test.labels, num_classes);
  r.accuracy = r.scores.accuracy();
  r.epoch_curve = std::move(curve);
  return r;
}

EvalResult knn_on_features(const std::vector<std::vector<float>>& train_feats,
                           const std::vector<int>& train_labels,
                           const std::vector<std::vector<float>>& test_feats,
                           const std::vector<int>& test_labels, int num_classes,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (train_feats.empty() || test_feats.empty())
    throw DegenerateError("knn needs non-empty train and test feature sets");
  if (train_feats.size() != train_labels.size() || test_feats.size() != test_labels.size())
    throw ContractError("feature row count does not match label count");
  if (cfg.knn_k > static_cast<int>(train_feats.size()))
    throw ConfigError("knn_k " + std::to_string(cfg.knn_k) + " exceeds the train set of " +
                      std::to_string(train_feats.size()) + " samples");

  auto normalized = [](const std::vector<std::vector<float>>& rows) {
    std::vector<std::vector<float>> out = rows;
    for (auto& r : out) {
      double n2 = 0.0;
      for (float v : r) n2 += static_cast<double>(v) * v;
      if (n2 > 1e-24) {
        float inv = static_cast<float>(1.0 / std::sqrt(n2));
        for (float& v : r) v *= inv;
      }
    }
    return out;
  };
  std::vector<std::vector<float>> tr = normalized(train_feats), te = normalized(test_feats);

  ClassScores s;
  s.num_classes = num_classes;
  s.labels = test_labels;
  s.scores.assign(te.size(), {});
  parallel_for(static_cast<std::int64_t>(te.size()), [&](std::int64_t ti) {
    const std::vector<float>& q = te[static_cast<size_t>(ti)];
    std::vector<std::pair<float, int>> sims(tr.size());
    for (size_t j = 0; j < tr.size(); ++j) {
      double dot = 0.0;
      for (size_t c = 0; c < q.size(); ++c) dot += static_cast<double>(q[c]) * tr[j][c];
      sims[j] = {static_cast<float>(dot), static_cast<int>(j)};
    }
    auto nearer = [](const std::pair<float, int>& a, const std::pair<float, int>& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    };
    std::partial_sort(sims.begin(), sims.begin() + cfg.knn_k, sims.end(), nearer);
    std::vector<double> votes(static_cast<size_t>(num_classes), 0.0);
    for (int r = 0; r < cfg.knn_k; ++r)
      votes[static_cast<size_t>(train_labels[static_cast<size_t>(sims[r].second)])] +=
          std::exp(static_cast<double>(sims[r].first) / cfg.knn_temperature);
    double total = std::accumulate(votes.begin(), votes.end(), 0.0);
    std::vector<float>& row = s.scores[static_cast<size_t>(ti)];
    row.resize(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
      row[static_cast<size_t>(c)] = static_cast<float>(votes[static_cast<size_t>(c)] / total);
  });

  EvalResult r;
  r.accuracy = s.accuracy();
  r.scores = std::move(s);
  return r;
}

EvalResult knn_eval(const EncoderConfig& ec, const ParameterSet& encoder_params,
                    const LabeledDataset& train, const LabeledDataset& test,
                    const EvalConfig& cfg) {
  check_dataset(train, "train");
  check_dataset(test, "test");
  if (train.num_classes != test.num_classes)
    throw ContractError("train and test class counts disagree: " +
                        std::to_string(train.num_classes) + " vs " +
                        std::to_string(test.num_classes));
  std::vector<std::vector<float>> tr = embed_dataset(ec, encoder_params, train);
  std::vector<std::vector<float>> te = embed_dataset(ec, encoder_params, test);
  return knn_on_features(tr, train.labels, te, test.labels, train.num_classes, cfg);
}

std::vector<int> semi_supervised_split(const LabeledDataset& data, float fraction,
                                       std::uint64_t seed) {
  check_dataset(data, "split");
  if (!(fraction > 0.0f && fraction <= 1.0f))
    throw ConfigError("label_fraction must lie in (0, 1], got " + std::to_string(fraction));
  std::vector<std::vector<int>> by_class(static_cast<size_t>(data.num_classes));
  for (size_t i = 0; i < data.labels.size(); ++i)
    by_class[static_cast<size_t>(data.labels[i])].push_back(static_cast<int>(i));
  std::vector<int> picked;
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<int>& pool = by_class[static_cast<size_t>(c)];
    if (pool.empty())
      throw ConfigError("class " + std::to_string(c) +
                        " has no samples, stratified split impossible");
    int take = static_cast<int>(
        std::ceil(static_cast<double>(fraction) * static_cast<double>(pool.size())));
    take = std::min(take, static_cast<int>(pool.size()));
    Rng rng(seed, 201, static_cast<std::uint64_t>(c));
    rng.shuffle(pool);
    picked.insert(picked.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

LabeledDataset subset_dataset(const LabeledDataset& data, const std::vector<int>& indices) {
  LabeledDataset out;
  out.num_classes = data.num_classes;
  out.split_tag = data.split_tag;
  out.sequences.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= static_cast<int>(data.sequences.size()))
      throw ContractError("subset index " + std::to_string(i) + " is outside the dataset of " +
                          std::to_string(data.sequences.size()) + " sequences");
    out.sequences.push_back(data.sequences[static_cast<size_t>(i)]);
    out.labels.push_back(data.labels[static_cast<size_t>(i)]);
  }
  return out;
}

FuseResult fuse_streams(const ClassScores& a, const ClassScores& b) {
  if (a.num_classes != b.num_classes)
    throw ShapeError("fuse_streams: class counts disagree, " + std::to_string(a.num_classes) +
                     " vs " + std::to_string(b.num_classes));
  if (a.scores.size() != b.scores.size())
    throw ShapeError("fuse_streams: sample counts disagree, " + std::to_string(a.scores.size()) +
                     " vs " + std::to_string(b.scores.size()));
  for (size_t i = 0; i < a.labels.size(); ++i)
    if (a.labels[i] != b.labels[i])
      throw ContractError("fuse_streams: sample " + std::to_string(i) + " is labeled " +
                          std::to_string(a.labels[i]) + " in one stream and " +
                          std::to_string(b.labels[i]) + " in the other");
  ClassScores fused;
  fused.num_classes = a.num_classes;
  fused.labels = a.labels;
  fused.scores.resize(a.scores.size());
  for (size_t i = 0; i < a.scores.size(); ++i) {
    std::vector<float>& row = fused.scores[i];
    row.resize(static_cast<size_t>(a.num_classes));
    double sum = 0.0;
    for (int c = 0; c < a.num_classes; ++c) {
      double m = 0.5 * (static_cast<double>(a.scores[i][static_cast<size_t>(c)]) +
                        static_cast<double>(b.scores[i][static_cast<size_t>(c)]));
      row[static_cast<size_t>(c)] = static_cast<float>(m);
      sum += m;
    }
    if (sum <= 0.0)
      throw DegenerateError("fuse_streams: score row " + std::to_string(i) + " sums to zero");
    for (float& v : row) v = static_cast<float>(static_cast<double>(v) / sum);
  }
  FuseResult r;
  r.accuracy = fused.accuracy();
  r.scores = std::move(fused);
  return r;
}

std::vector<std::array<float, 2>> pca_2d(const std::vector<std::vector<float>>& feats) {
  if (feats.empty()) throw DegenerateError("pca_2d on an empty feature set");
  const size_t n = feats.size(), d = feats[0].size();
  for (const auto& row : feats)
    if (row.size() != d) throw ShapeError("pca_2d: ragged feature rows");
  std::vector<double> mean(d, 0.0);
  for (const auto& row : feats)
    for (size_t c = 0; c < d; ++c) mean[c] += row[c];
  for (double& m : mean) m /= static_cast<double>(n);

  // covariance, then two rounds of power iteration with deflation
  std::vector<double> cov(d * d, 0.0);
  for (const auto& row : feats)
    for (size_t i = 0; i < d; ++i) {
      double vi = row[i] - mean[i];
      for (size_t j = 0; j < d; ++j) cov[i * d + j] += vi * (row[j] - mean[j]);
    }
  double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (double& v : cov) v /= denom;

  Rng rng(0, 301, 0);
  auto power_top = [&](const std::vector<double>& m) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      std::vector<double> w(d, 0.0);
      for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) w[i] += m[i * d + j] * v[j];
      double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
      if (norm < 1e-30) return std::pair<std::vector<double>, double>(v, 0.0);
      for (size_t i = 0; i < d; ++i) v[i] = w[i] / norm;
      lambda = norm;
    }
    // sign convention: largest-magnitude component positive
    size_t top = 0;
    for (size_t i = 1; i < d; ++i)
      if (std::fabs(v[i]) > std::fabs(v[top])) top = i;
    if (v[top] < 0.0)
      for (double& x : v) x = -x;
    return std::pair<std::vector<double>, double>(v, lambda);
  };

  auto [v1, l1] = power_top(cov);
  std::vector<double> deflated = cov;
  for (size_t i = 0; i < d; ++i)
    for (size_t j = 0; j < d; ++j) deflated[i * d + j] -= l1 * v1[i] * v1[j];
  auto [v2, l2] = power_top(deflated);
  (void)l2;

  std::vector<std::array<float, 2>> out(n);
  for (size_t r = 0; r < n; ++r) {
    double p1 = 0.0, p2 = 0.0;
    for (size_t c = 0; c < d; ++c) {
      double v = feats[r][c] - mean[c];
      p1 += v * v1[c];
      p2 += v * v2[c];
    }
    out[r] = {static_cast<float>(p1), static_cast<float>(p2)};
  }
  return out;
}

}  // namespace dmmg
