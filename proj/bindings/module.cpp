#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "dmmg/checkpoint.hpp"
#include "dmmg/errors.hpp"
#include "dmmg/eval.hpp"
#include "dmmg/trainer.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

dmmg::SkeletonSequence sequence_from_array(const FloatArray& arr, size_t row) {
  auto buf = arr.unchecked<4>();
  dmmg::SkeletonSequence s = dmmg::make_sequence(static_cast<int>(buf.shape(1)),
                                                 static_cast<int>(buf.shape(3)));
  for (int j = 0; j < s.joints; ++j)
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t < s.frames; ++t)
        s.at(j, c, t) = buf(static_cast<py::ssize_t>(row), j, c, t);
  return s;
}

dmmg::LabeledDataset dataset_from_arrays(const FloatArray& x, const std::vector<int>& y,
                                         int num_classes) {
  if (x.ndim() != 4 || x.shape(2) != 3)
    throw dmmg::ShapeError("sequence array must have shape [n, joints, 3, frames]");
  if (static_cast<size_t>(x.shape(0)) != y.size())
    throw dmmg::ShapeError("label count " + std::to_string(y.size()) +
                           " does not match sequence count " + std::to_string(x.shape(0)));
  dmmg::LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.labels = y;
  ds.sequences.reserve(y.size());
  for (size_t i = 0; i < y.size(); ++i) ds.sequences.push_back(sequence_from_array(x, i));
  ds.validate();
  return ds;
}

py::array dataset_to_array(const dmmg::LabeledDataset& ds) {
  const int j = ds.sequences.empty() ? 0 : ds.sequences[0].joints;
  const int t = ds.sequences.empty() ? 0 : ds.sequences[0].frames;
  py::array_t<float> out({static_cast<py::ssize_t>(ds.sequences.size()),
                          static_cast<py::ssize_t>(j), static_cast<py::ssize_t>(3),
                          static_cast<py::ssize_t>(t)});
  auto buf = out.mutable_unchecked<4>();
  for (size_t i = 0; i < ds.sequences.size(); ++i)
    for (int jj = 0; jj < j; ++jj)
      for (int c = 0; c < 3; ++c)
        for (int tt = 0; tt < t; ++tt)
          buf(static_cast<py::ssize_t>(i), jj, c, tt) = ds.sequences[i].at(jj, c, tt);
  return out;
}

dmmg::PretrainConfig make_pretrain_config(int epochs, int batch_size, float encoder_lr,
                                          float encoder_wd, float encoder_momentum,
                                          float augmenter_lr, float momentum_coef, float margin,
                                          float gamma, bool hard_mining,
                                          const std::vector<std::string>& games,
                                          const std::vector<std::string>& ablation,
                                          const std::string& stream, std::uint64_t seed) {
  dmmg::PretrainConfig pc;
  pc.epochs = epochs;
  pc.batch_size = batch_size;
  pc.encoder_lr = encoder_lr;
  pc.encoder_wd = encoder_wd;
  pc.encoder_momentum = encoder_momentum;
  pc.augmenter_lr = augmenter_lr;
  pc.momentum_coef = momentum_coef;
  pc.triplet.margin = margin;
  pc.triplet.gamma = gamma;
  pc.triplet.hard_mining = hard_mining;
  pc.games.clear();
  for (const std::string& g : games) pc.games.push_back(dmmg::parse_game(g));
  pc.ablation.clear();
  for (const std::string& g : ablation) pc.ablation.push_back(dmmg::parse_ablation(g));
  pc.stream = dmmg::parse_stream(stream);
  pc.seed = seed;
  return pc;
}

py::dict scores_dict(const dmmg::EvalResult& r) {
  py::dict out;
  out["accuracy"] = r.accuracy;
  out["epoch_curve"] = r.epoch_curve;
  py::array_t<float> scores({static_cast<py::ssize_t>(r.scores.scores.size()),
                             static_cast<py::ssize_t>(r.scores.num_classes)});
  auto buf = scores.mutable_unchecked<2>();
  for (size_t i = 0; i < r.scores.scores.size(); ++i)
    for (int c = 0; c < r.scores.num_classes; ++c)
      buf(static_cast<py::ssize_t>(i), c) = r.scores.scores[i][static_cast<size_t>(c)];
  out["scores"] = scores;
  out["labels"] = r.scores.labels;
  return out;
}

}  // namespace

PYBIND11_MODULE(_dmmg, m) {
  m.doc() = "Adversarial dual-game contrastive pretraining over skeleton graphs";

  py::register_exception<dmmg::Error>(m, "DmmgError");

  m.def(
      "generate_dataset",
      [](std::uint64_t seed, int num_classes, int sequences_per_class, int joints, int frames,
         float viewpoint_jitter, float noise_std) {
        dmmg::SyntheticConfig sc;
        sc.seed = seed;
        sc.num_classes = num_classes;
        sc.sequences_per_class = sequences_per_class;
        sc.joints = joints;
        sc.frames = frames;
        sc.viewpoint_jitter = viewpoint_jitter;
        sc.noise_std = noise_std;
        auto [train, test] = dmmg::generate_synthetic_dataset(sc);
        py::dict out;
        out["train_x"] = dataset_to_array(train);
        out["train_y"] = train.labels;
        out["test_x"] = dataset_to_array(test);
        out["test_y"] = test.labels;
        out["class_names"] = dmmg::synthetic_class_names(num_classes);
        return out;
      },
      py::arg("seed") = 1, py::arg("num_classes") = 8, py::arg("sequences_per_class") = 37,
      py::arg("joints") = 11, py::arg("frames") = 32, py::arg("viewpoint_jitter") = 3.1415927f,
      py::arg("noise_std") = 0.01f);

  m.def("load_skl", [](const std::string& path) {
    dmmg::LabeledDataset ds = dmmg::decode_skl(path);
    py::dict out;
    out["x"] = dataset_to_array(ds);
    out["y"] = ds.labels;
    out["num_classes"] = ds.num_classes;
    return out;
  });

  m.def("save_skl",
        [](const std::string& path, const FloatArray& x, const std::vector<int>& y,
           int num_classes) { dmmg::encode_skl(dataset_from_arrays(x, y, num_classes), path); });

  m.def(
      "pretrain",
      [](const FloatArray& train_x, const std::vector<int>& train_y, int num_classes,
         const std::string& checkpoint_out, int epochs, int batch_size, float encoder_lr,
         float encoder_wd, float encoder_momentum, float augmenter_lr, float momentum_coef,
         float margin, float gamma, bool hard_mining, const std::vector<std::string>& games,
         const std::vector<std::string>& ablation, const std::string& stream,
         std::uint64_t seed) {
        dmmg::LabeledDataset train = dataset_from_arrays(train_x, train_y, num_classes);
        dmmg::PretrainConfig pc = make_pretrain_config(
            epochs, batch_size, encoder_lr, encoder_wd, encoder_momentum, augmenter_lr,
            momentum_coef, margin, gamma, hard_mining, games, ablation, stream, seed);
        dmmg::PretrainResult r;
        {
          py::gil_scoped_release release;
          r = dmmg::pretrain(pc, train);
          if (!checkpoint_out.empty()) {
            const int joints = train.sequences[0].joints;
            const int frames = train.sequences[0].frames;
            dmmg::save_checkpoint(checkpoint_out,
                                  dmmg::pretrain_manifest_config(pc, joints, frames),
                                  r.state.step, dmmg::checkpoint_params(r.state));
          }
        }
        std::vector<std::string> metrics;
        metrics.reserve(r.metrics.size());
        for (const auto& rec : r.metrics) metrics.push_back(rec.dump());
        py::dict out;
        out["metrics"] = metrics;
        out["steps"] = r.state.step;
        return out;
      },
      py::arg("train_x"), py::arg("train_y"), py::arg("num_classes"),
      py::arg("checkpoint_out") = "", py::arg("epochs") = 30, py::arg("batch_size") = 32,
      py::arg("encoder_lr") = 0.1f, py::arg("encoder_wd") = 1e-4f,
      py::arg("encoder_momentum") = 0.9f, py::arg("augmenter_lr") = 0.01f,
      py::arg("momentum_coef") = 0.999f, py::arg("margin") = 1.0f, py::arg("gamma") = 10.0f,
      py::arg("hard_mining") = true,
      py::arg("games") = std::vector<std::string>{"vmmg", "emmg"},
      py::arg("ablation") = std::vector<std::string>{}, py::arg("stream") = "joint",
      py::arg("seed") = 1);

  m.def(
      "evaluate",
      [](const std::string& checkpoint_path, const FloatArray& train_x,
         const std::vector<int>& train_y, const FloatArray& test_x,
         const std::vector<int>& test_y, int num_classes, const std::string& protocol,
         float label_fraction, int knn_k, float knn_temperature, int epochs, float lr,
         std::uint64_t seed) {
        dmmg::CheckpointData cp = dmmg::load_checkpoint(checkpoint_path);
        dmmg::TrainState state = dmmg::state_from_checkpoint(cp.config, cp.params);
        dmmg::LabeledDataset train = dataset_from_arrays(train_x, train_y, num_classes);
        dmmg::LabeledDataset test = dataset_from_arrays(test_x, test_y, num_classes);
        if (state.cfg.stream == dmmg::Stream::Motion) {
          for (auto& s : train.sequences) s = dmmg::motion_stream(s);
          for (auto& s : test.sequences) s = dmmg::motion_stream(s);
        }
        dmmg::EvalConfig ec;
        ec.protocol = dmmg::parse_protocol(protocol);
        ec.label_fraction = label_fraction;
        ec.knn_k = knn_k;
        ec.knn_temperature = knn_temperature;
        ec.epochs = epochs;
        ec.lr = lr;
        ec.seed = seed;
        dmmg::EvalResult r;
        {
          py::gil_scoped_release release;
          switch (ec.protocol) {
            case dmmg::Protocol::Linear:
              r = dmmg::linear_eval(state.cfg.encoder, state.encoder.online, train, test, ec,
                                    true);
              break;
            case dmmg::Protocol::Finetune:
              r = dmmg::linear_eval(state.cfg.encoder, state.encoder.online, train, test, ec,
                                    false);
              break;
            case dmmg::Protocol::Knn:
              r = dmmg::knn_eval(state.cfg.encoder, state.encoder.online, train, test, ec);
              break;
            case dmmg::Protocol::Semi: {
              std::vector<int> idx =
                  dmmg::semi_supervised_split(train, ec.label_fraction, ec.seed);
              r = dmmg::linear_eval(state.cfg.encoder, state.encoder.online,
                                    dmmg::subset_dataset(train, idx), test, ec, false);
              break;
            }
          }
        }
        return scores_dict(r);
      },
      py::arg("checkpoint_path"), py::arg("train_x"), py::arg("train_y"), py::arg("test_x"),
      py::arg("test_y"), py::arg("num_classes"), py::arg("protocol") = "linear",
      py::arg("label_fraction") = 0.1f, py::arg("knn_k") = 20,
      py::arg("knn_temperature") = 0.1f, py::arg("epochs") = 80, py::arg("lr") = 0.001f,
      py::arg("seed") = 1);

  m.def(
      "embed",
      [](const std::string& checkpoint_path, const FloatArray& x, const std::vector<int>& y,
         int num_classes) {
        dmmg::CheckpointData cp = dmmg::load_checkpoint(checkpoint_path);
        dmmg::TrainState state = dmmg::state_from_checkpoint(cp.config, cp.params);
        dmmg::LabeledDataset data = dataset_from_arrays(x, y, num_classes);
        if (state.cfg.stream == dmmg::Stream::Motion)
          for (auto& s : data.sequences) s = dmmg::motion_stream(s);
        std::vector<std::vector<float>> feats;
        {
          py::gil_scoped_release release;
          feats = dmmg::embed_dataset(state.cfg.encoder, state.encoder.online, data);
        }
        py::array_t<float> out({static_cast<py::ssize_t>(feats.size()),
                                static_cast<py::ssize_t>(feats.empty() ? 0 : feats[0].size())});
        auto buf = out.mutable_unchecked<2>();
        for (size_t i = 0; i < feats.size(); ++i)
          for (size_t c = 0; c < feats[i].size(); ++c)
            buf(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(c)) = feats[i][c];
        return out;
      },
      py::arg("checkpoint_path"), py::arg("x"), py::arg("y"), py::arg("num_classes"));

  m.def("fuse", [](const FloatArray& scores_a, const FloatArray& scores_b,
                   const std::vector<int>& labels) {
    if (scores_a.ndim() != 2 || scores_b.ndim() != 2)
      throw dmmg::ShapeError("score arrays must be 2-dimensional");
    auto to_scores = [&](const FloatArray& arr) {
      dmmg::ClassScores s;
      s.num_classes = static_cast<int>(arr.shape(1));
      s.labels = labels;
      auto buf = arr.unchecked<2>();
      s.scores.resize(static_cast<size_t>(arr.shape(0)));
      for (py::ssize_t i = 0; i < arr.shape(0); ++i) {
        s.scores[static_cast<size_t>(i)].resize(static_cast<size_t>(arr.shape(1)));
        for (py::ssize_t c = 0; c < arr.shape(1); ++c)
          s.scores[static_cast<size_t>(i)][static_cast<size_t>(c)] = buf(i, c);
      }
      return s;
    };
    dmmg::FuseResult fused = dmmg::fuse_streams(to_scores(scores_a), to_scores(scores_b));
    py::dict out;
    out["accuracy"] = fused.accuracy;
    py::array_t<float> scores({static_cast<py::ssize_t>(fused.scores.scores.size()),
                               static_cast<py::ssize_t>(fused.scores.num_classes)});
    auto buf = scores.mutable_unchecked<2>();
    for (size_t i = 0; i < fused.scores.scores.size(); ++i)
      for (int c = 0; c < fused.scores.num_classes; ++c)
        buf(static_cast<py::ssize_t>(i), c) = fused.scores.scores[i][static_cast<size_t>(c)];
    out["scores"] = scores;
    return out;
  });

  m.def("rotate", [](const FloatArray& x, float w, float qx, float qy, float qz) {
    if (x.ndim() != 3 || x.shape(1) != 3)
      throw dmmg::ShapeError("sequence array must have shape [joints, 3, frames]");
    dmmg::SkeletonSequence s =
        dmmg::make_sequence(static_cast<int>(x.shape(0)), static_cast<int>(x.shape(2)));
    auto buf = x.unchecked<3>();
    for (int j = 0; j < s.joints; ++j)
      for (int c = 0; c < 3; ++c)
        for (int t = 0; t < s.frames; ++t) s.at(j, c, t) = buf(j, c, t);
    dmmg::SkeletonSequence r = dmmg::rotate_sequence(s, dmmg::Quaternion{w, qx, qy, qz});
    py::array_t<float> out({static_cast<py::ssize_t>(r.joints), static_cast<py::ssize_t>(3),
                            static_cast<py::ssize_t>(r.frames)});
    auto ob = out.mutable_unchecked<3>();
    for (int j = 0; j < r.joints; ++j)
      for (int c = 0; c < 3; ++c)
        for (int t = 0; t < r.frames; ++t) ob(j, c, t) = r.at(j, c, t);
    return out;
  });

  m.attr("__version__") = "0.1.0";
}
