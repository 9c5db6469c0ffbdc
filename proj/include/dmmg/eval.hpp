#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmmg/encoder.hpp"
#include "dmmg/optimizer.hpp"
#include "dmmg/skeleton.hpp"

namespace dmmg {

enum class Protocol { Linear, Finetune, Knn, Semi };

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& name);

struct EvalConfig {
  Protocol protocol = Protocol::Linear;
  float label_fraction = 0.1f;  // semi only
  int knn_k = 20;
  float knn_temperature = 0.1f;
  int epochs = 80;
  float lr = 0.001f;
  int lr_drop_epoch = 60;
  float lr_drop_factor = 0.1f;
  int batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Per-sample class scores with ground-truth labels; rows are nonnegative
/// and sum to 1, so score matrices from different protocols fuse uniformly.
struct ClassScores {
  int num_classes = 0;
  std::vector<int> labels;
  std::vector<std::vector<float>> scores;

  float accuracy() const;  // argmax per row, ties to the lowest class id
};

nlohmann::json scores_json(const ClassScores& s);
ClassScores scores_from_json(const nlohmann::json& j);

struct EvalResult {
  float accuracy = 0.0f;
  ClassScores scores;
  std::vector<double> epoch_curve;  // mean train loss per epoch; empty for knn
};

/// Embeds every sequence with the frozen backbone (projector excluded),
/// parallel across samples. Row i is the d-dim feature of sequence i.
std::vector<std::vector<float>> embed_dataset(const EncoderConfig& ec, const ParameterSet& params,
                                              const LabeledDataset& data);

/// Softmax classification head on backbone features, adam-trained with the
/// step drop schedule. freeze=true caches features once and trains only the
/// head; freeze=false finetunes the whole backbone. The caller's parameters
/// are never mutated (training runs on a deep copy).
EvalResult linear_eval(const EncoderConfig& ec, const ParameterSet& encoder_params,
                       const LabeledDataset& train, const LabeledDataset& test,
                       const EvalConfig& cfg, bool freeze);

/// Cosine-similarity KNN with exp(sim/tau) vote weights over L2-normalized
/// features. Tie order: neighbors by lower train index, classes by lower id.
EvalResult knn_eval(const EncoderConfig& ec, const ParameterSet& encoder_params,
                    const LabeledDataset& train, const LabeledDataset& test,
                    const EvalConfig& cfg);

/// KNN on already-extracted feature rows; knn_eval delegates here.
EvalResult knn_on_features(const std::vector<std::vector<float>>& train_feats,
                           const std::vector<int>& train_labels,
                           const std::vector<std::vector<float>>& test_feats,
                           const std::vector<int>& test_labels, int num_classes,
                           const EvalConfig& cfg);

/// Stratified label subset: ceil(fraction * count_c) samples per class c,
/// without replacement, deterministic in seed. Returns sorted indices.
std::vector<int> semi_supervised_split(const LabeledDataset& data, float fraction,
                                       std::uint64_t seed);

LabeledDataset subset_dataset(const LabeledDataset& data, const std::vector<int>& indices);

struct FuseResult {
  float accuracy = 0.0f;
  ClassScores scores;
};

/// Elementwise mean of two score matrices over the same samples,
/// renormalized per row.
FuseResult fuse_streams(const ClassScores& a, const ClassScores& b);

/// Top-2 principal components via power iteration on the feature
/// covariance; deterministic. Rows align with the input features.
std::vector<std::array<float, 2>> pca_2d(const std::vector<std::vector<float>>& feats);

}  // namespace dmmg
