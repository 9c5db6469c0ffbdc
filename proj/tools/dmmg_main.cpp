#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmmg/checkpoint.hpp"
#include "dmmg/errors.hpp"
#include "dmmg/eval.hpp"
#include "dmmg/skeleton.hpp"
#include "dmmg/trainer.hpp"

using nlohmann::json;

namespace {

json read_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw dmmg::IoError("cannot open config '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw dmmg::FormatError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw dmmg::FormatError("config '" + path + "' must be a JSON object");
  return j;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw dmmg::ConfigError("unknown key '" + key + "' in " + context + " config");
}

template <typename T>
void assign(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw dmmg::ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

std::vector<dmmg::Game> parse_game_list(const json& arr, const char* key, bool ablation_names) {
  if (!arr.is_array())
    throw dmmg::ConfigError(std::string("config key '") + key + "' must be an array");
  std::vector<dmmg::Game> out;
  for (const auto& g : arr) {
    if (!g.is_string())
      throw dmmg::ConfigError(std::string("config key '") + key + "' must hold strings");
    out.push_back(ablation_names ? dmmg::parse_ablation(g.get<std::string>())
                                 : dmmg::parse_game(g.get<std::string>()));
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (start <= s.size()) {
    size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    parts.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return parts;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw dmmg::IoError("cannot open '" + path + "' for writing");
  return f;
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
  std::ofstream f = open_out(path);
  for (const json& rec : records) f << rec.dump() << "\n";
  if (!f) throw dmmg::IoError("write to '" + path + "' failed");
}

std::string fmt_float(float v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

// ---- gen-data ------------------------------------------------------------------

int cmd_gen_data(const std::string& config_path) {
  json j = read_config(config_path);
  reject_unknown_keys(j,
                      {"seed", "num_classes", "sequences_per_class", "joints", "frames",
                       "viewpoint_jitter", "noise_std", "train_out", "test_out", "summary_out"},
                      "gen-data");
  dmmg::SyntheticConfig cfg;
  assign(j, "seed", cfg.seed);
  assign(j, "num_classes", cfg.num_classes);
  assign(j, "sequences_per_class", cfg.sequences_per_class);
  assign(j, "joints", cfg.joints);
  assign(j, "frames", cfg.frames);
  assign(j, "viewpoint_jitter", cfg.viewpoint_jitter);
  assign(j, "noise_std", cfg.noise_std);

  std::string train_out, test_out, summary_out;
  assign(j, "train_out", train_out);
  assign(j, "test_out", test_out);
  assign(j, "summary_out", summary_out);
  if (train_out.empty() || test_out.empty() || summary_out.empty())
    throw dmmg::ConfigError("gen-data config needs train_out, test_out and summary_out paths");

  auto [train, test] = dmmg::generate_synthetic_dataset(cfg);
  dmmg::encode_skl(train, train_out);
  dmmg::encode_skl(test, test_out);

  json summary{{"seed", cfg.seed},
               {"num_classes", cfg.num_classes},
               {"class_names", dmmg::synthetic_class_names(cfg.num_classes)},
               {"joints", cfg.joints},
               {"frames", cfg.frames},
               {"train_sequences", train.size()},
               {"test_sequences", test.size()}};
  std::ofstream f = open_out(summary_out);
  f << summary.dump(2) << "\n";
  if (!f) throw dmmg::IoError("write to '" + summary_out + "' failed");

  std::cout << "wrote " << train.size() << " train and " << test.size() << " test sequences\n";
  return 0;
}

// ---- pretrain ------------------------------------------------------------------

int cmd_pretrain(const std::string& config_path, const std::string& games_flag,
                 const std::string& stream_flag, const std::string& ablation_flag,
                 std::int64_t seed_flag) {
  json j = read_config(config_path);
  reject_unknown_keys(j,
                      {"train_data", "checkpoint_out", "metrics_out", "epochs", "batch_size",
                       "encoder_lr", "encoder_wd", "encoder_momentum", "augmenter_lr",
                       "momentum_coef", "margin", "gamma", "hard_mining", "games", "game_order",
                       "ablation", "stream", "seed", "encoder"},
                      "pretrain");

  dmmg::PretrainConfig cfg;
  assign(j, "epochs", cfg.epochs);
  assign(j, "batch_size", cfg.batch_size);
  assign(j, "encoder_lr", cfg.encoder_lr);
  assign(j, "encoder_wd", cfg.encoder_wd);
  assign(j, "encoder_momentum", cfg.encoder_momentum);
  assign(j, "augmenter_lr", cfg.augmenter_lr);
  assign(j, "momentum_coef", cfg.momentum_coef);
  assign(j, "margin", cfg.triplet.margin);
  assign(j, "gamma", cfg.triplet.gamma);
  assign(j, "hard_mining", cfg.triplet.hard_mining);
  if (j.contains("games")) cfg.games = parse_game_list(j["games"], "games", false);
  if (j.contains("game_order")) cfg.game_order = parse_game_list(j["game_order"], "game_order", false);
  if (j.contains("ablation")) cfg.ablation = parse_game_list(j["ablation"], "ablation", true);
  if (j.contains("stream")) cfg.stream = dmmg::parse_stream(j["stream"].get<std::string>());
  assign(j, "seed", cfg.seed);
  if (j.contains("encoder")) {
    const json& enc = j["encoder"];
    reject_unknown_keys(enc, {"blocks", "embed_dim", "proj_dim"}, "pretrain encoder");
    if (enc.contains("blocks")) {
      cfg.encoder.blocks.clear();
      for (const auto& b : enc["blocks"]) {
        if (!b.is_array() || b.size() != 4)
          throw dmmg::ConfigError("encoder block must be [in, out, kernel, stride]");
        cfg.encoder.blocks.push_back(
            {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
      }
    }
    assign(enc, "embed_dim", cfg.encoder.embed_dim);
    assign(enc, "proj_dim", cfg.encoder.proj_dim);
  }

  if (!games_flag.empty()) {
    cfg.games.clear();
    for (const std::string& name : split_commas(games_flag))
      cfg.games.push_back(dmmg::parse_game(name));
  }
  if (!ablation_flag.empty()) {
    cfg.ablation.clear();
    if (ablation_flag != "none")
      for (const std::string& name : split_commas(ablation_flag))
        cfg.ablation.push_back(dmmg::parse_ablation(name));
  }
  if (!stream_flag.empty()) cfg.stream = dmmg::parse_stream(stream_flag);
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);

  std::string train_data, checkpoint_out, metrics_out;
  assign(j, "train_data", train_data);
  assign(j, "checkpoint_out", checkpoint_out);
  assign(j, "metrics_out", metrics_out);
  if (train_data.empty() || checkpoint_out.empty() || metrics_out.empty())
    throw dmmg::ConfigError("pretrain config needs train_data, checkpoint_out and metrics_out");

  dmmg::LabeledDataset data = dmmg::decode_skl(train_data);
  if (data.sequences.empty()) throw dmmg::DegenerateError("training dataset is empty");
  int joints = data.sequences[0].joints;
  int frames = data.sequences[0].frames;

  dmmg::PretrainResult result = dmmg::pretrain(cfg, data);
  dmmg::save_checkpoint(checkpoint_out, dmmg::pretrain_manifest_config(cfg, joints, frames),
                        result.state.step, dmmg::checkpoint_params(result.state));
  write_jsonl(metrics_out, result.metrics);

  std::cout << "pretrained " << cfg.epochs << " epochs (" << result.state.step << " steps) on "
            << data.size() << " sequences\ncheckpoint: " << checkpoint_out << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------------

dmmg::LabeledDataset apply_stream(const dmmg::LabeledDataset& ds, dmmg::Stream stream) {
  if (stream == dmmg::Stream::Joint) return ds;
  dmmg::LabeledDataset out = ds;
  for (auto& s : out.sequences) s = dmmg::motion_stream(s);
  return out;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& protocol_flag, double label_fraction_flag,
             const std::string& dump_path) {
  json j = read_config(config_path);
  reject_unknown_keys(j,
                      {"train_data", "test_data", "metrics_out", "scores_out", "protocol",
                       "label_fraction", "knn_k", "knn_temperature", "epochs", "lr",
                       "lr_drop_epoch", "lr_drop_factor", "batch_size", "seed"},
                      "eval");

  dmmg::EvalConfig cfg;
  assign(j, "label_fraction", cfg.label_fraction);
  assign(j, "knn_k", cfg.knn_k);
  assign(j, "knn_temperature", cfg.knn_temperature);
  assign(j, "epochs", cfg.epochs);
  assign(j, "lr", cfg.lr);
  assign(j, "lr_drop_epoch", cfg.lr_drop_epoch);
  assign(j, "lr_drop_factor", cfg.lr_drop_factor);
  assign(j, "batch_size", cfg.batch_size);
  assign(j, "seed", cfg.seed);

  std::string protocol_name_str;
  assign(j, "protocol", protocol_name_str);
  if (!protocol_flag.empty()) protocol_name_str = protocol_flag;
  if (protocol_name_str.empty())
    throw dmmg::ConfigError("no protocol given; pass --protocol or set it in the config");
  cfg.protocol = dmmg::parse_protocol(protocol_name_str);
  if (label_fraction_flag >= 0.0) cfg.label_fraction = static_cast<float>(label_fraction_flag);

  std::string train_data, test_data, metrics_out, scores_out;
  assign(j, "train_data", train_data);
  assign(j, "test_data", test_data);
  assign(j, "metrics_out", metrics_out);
  assign(j, "scores_out", scores_out);
  if (train_data.empty() || test_data.empty() || metrics_out.empty())
    throw dmmg::ConfigError("eval config needs train_data, test_data and metrics_out");

  dmmg::CheckpointData ck = dmmg::load_checkpoint(checkpoint_path);
  dmmg::TrainState st = dmmg::state_from_checkpoint(ck.config, ck.params);
  const dmmg::EncoderConfig& ec = st.cfg.encoder;

  dmmg::LabeledDataset train = apply_stream(dmmg::decode_skl(train_data), st.cfg.stream);
  dmmg::LabeledDataset test = apply_stream(dmmg::decode_skl(test_data), st.cfg.stream);

  dmmg::EvalResult result;
  switch (cfg.protocol) {
    case dmmg::Protocol::Linear:
      result = dmmg::linear_eval(ec, st.encoder.online, train, test, cfg, true);
      break;
    case dmmg::Protocol::Finetune:
      result = dmmg::linear_eval(ec, st.encoder.online, train, test, cfg, false);
      break;
    case dmmg::Protocol::Knn:
      result = dmmg::knn_eval(ec, st.encoder.online, train, test, cfg);
      break;
    case dmmg::Protocol::Semi: {
      std::vector<int> keep = dmmg::semi_supervised_split(train, cfg.label_fraction, cfg.seed);
      dmmg::LabeledDataset subset = dmmg::subset_dataset(train, keep);
      result = dmmg::linear_eval(ec, st.encoder.online, subset, test, cfg, false);
      break;
    }
  }

  json rec{{"protocol", dmmg::protocol_name(cfg.protocol)},
           {"stream", dmmg::stream_name(st.cfg.stream)},
           {"seed", cfg.seed},
           {"accuracy", result.accuracy},
           {"epoch_curve", result.epoch_curve}};
  write_jsonl(metrics_out, {rec});
  if (!scores_out.empty()) {
    std::ofstream f = open_out(scores_out);
    f << dmmg::scores_json(result.scores).dump() << "\n";
    if (!f) throw dmmg::IoError("write to '" + scores_out + "' failed");
  }

  if (!dump_path.empty()) {
    std::vector<std::vector<float>> feats = dmmg::embed_dataset(ec, st.encoder.online, test);
    std::vector<std::array<float, 2>> proj = dmmg::pca_2d(feats);
    std::ofstream f = open_out(dump_path);
    f << "label";
    for (size_t d = 0; d < feats[0].size(); ++d) f << ",f" << d;
    f << ",pc1,pc2\n";
    for (size_t i = 0; i < feats.size(); ++i) {
      f << test.labels[i];
      for (float v : feats[i]) f << "," << fmt_float(v);
      f << "," << fmt_float(proj[i][0]) << "," << fmt_float(proj[i][1]) << "\n";
    }
    if (!f) throw dmmg::IoError("write to '" + dump_path + "' failed");
  }

  std::cout << dmmg::protocol_name(cfg.protocol) << " accuracy: " << result.accuracy << "\n";
  return 0;
}

// ---- fuse ----------------------------------------------------------------------

dmmg::ClassScores read_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw dmmg::IoError("cannot open score file '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw dmmg::FormatError("score file '" + path + "' is not valid JSON: " + e.what());
  }
  return dmmg::scores_from_json(j);
}

int cmd_fuse(const std::vector<std::string>& score_paths, const std::string& out_path) {
  dmmg::FuseResult fused = dmmg::fuse_streams(read_scores(score_paths[0]),
                                              read_scores(score_paths[1]));
  json out = dmmg::scores_json(fused.scores);
  out["accuracy"] = fused.accuracy;
  std::ofstream f = open_out(out_path);
  f << out.dump() << "\n";
  if (!f) throw dmmg::IoError("write to '" + out_path + "' failed");
  std::cout << "fused accuracy: " << fused.accuracy << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial skeleton contrastive pretraining"};
  app.require_subcommand(1);

  std::string config_path, games_flag, stream_flag, ablation_flag;
  std::string checkpoint_path, protocol_flag, dump_path, fuse_out;
  std::vector<std::string> score_paths;
  std::int64_t seed_flag = -1;
  double label_fraction_flag = -1.0;

  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a labeled skeleton dataset");
  gen->add_option("--config", config_path, "JSON config file")->required();

  CLI::App* pre = app.add_subcommand("pretrain", "run the adversarial pretraining loop");
  pre->add_option("--config", config_path, "JSON config file")->required();
  pre->add_option("--games", games_flag, "comma list of games (vmmg,emmg)");
  pre->add_option("--stream", stream_flag, "input stream (joint|motion)");
  pre->add_option("--ablation", ablation_flag, "none or comma list of r_view,r_edge");
  pre->add_option("--seed", seed_flag, "override the config seed");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--config", config_path, "JSON config file")->required();
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  ev->add_option("--protocol", protocol_flag, "linear|finetune|knn|semi");
  ev->add_option("--label-fraction", label_fraction_flag, "labeled fraction for semi");
  ev->add_option("--dump-embeddings", dump_path, "write test features + 2-D projection CSV");

  CLI::App* fu = app.add_subcommand("fuse", "average two score files");
  fu->add_option("--scores", score_paths, "two score files")->expected(2);
  fu->add_option("--out", fuse_out, "fused score file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path);
    if (pre->parsed())
      return cmd_pretrain(config_path, games_flag, stream_flag, ablation_flag, seed_flag);
    if (ev->parsed())
      return cmd_eval(config_path, checkpoint_path, protocol_flag, label_fraction_flag, dump_path);
    if (fu->parsed()) {
      if (score_paths.size() != 2) throw dmmg::ConfigError("fuse needs exactly two --scores files");
      return cmd_fuse(score_paths, fuse_out);
    }
  } catch (const dmmg::Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error[format]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
