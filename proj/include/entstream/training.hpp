#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "entstream/adam.hpp"
#include "entstream/checkpoint.hpp"
#include "entstream/dataset.hpp"
#include "entstream/errors.hpp"
#include "entstream/rng.hpp"

namespace entstream {

struct TrainConfig {
  std::string model_kind;  // rn | cnn | rfs | rfsh
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  std::string train_data;
  std::string test_data;  // empty: skip evaluation during training
  std::string out_dir;
  int eval_every = 1;      // epochs between evaluations (and checkpoints)
  double clip_norm = 0.0;  // 0 disables the gradient-norm safeguard

  void validate(bool batch_norm_enabled) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (batch_norm_enabled && batch_size < 2)
      throw ConfigError(
          "batch_size must be >= 2 while batch normalization is enabled");
    if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
    if (eval_every < 1) throw ConfigError("eval cadence must be >= 1");
    if (clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
    if (train_data.empty()) throw ConfigError("no training dataset given");
    if (out_dir.empty()) throw ConfigError("no output directory given");
  }
};

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0;
  bool evaluated = false;
  double test_acc = 0, nonrel_acc = 0, birel_acc = 0;
  std::int64_t nonrel_count = 0, birel_count = 0;
  double seconds = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["train_loss"] = train_loss;
    if (evaluated) {
      j["test_acc"] = test_acc;
      j["nonrel_acc"] = nonrel_acc;
      j["birel_acc"] = birel_acc;
      j["nonrel_count"] = nonrel_count;
      j["birel_count"] = birel_count;
    } else {
      j["test_acc"] = nullptr;
      j["nonrel_acc"] = nullptr;
      j["birel_acc"] = nullptr;
      j["nonrel_count"] = 0;
      j["birel_count"] = 0;
    }
    j["seconds"] = seconds;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Batch assembly

struct Batch {
  Tensor images;     // [B,3,75,75]
  Tensor questions;  // [B,11]
  std::vector<int> answers;
  std::vector<std::uint8_t> categories;
};

inline Batch load_batch(soc::DatasetReader& reader,
                        const std::vector<std::uint64_t>& order,
                        std::size_t begin, std::size_t end) {
  const int nb = static_cast<int>(end - begin);
  Batch b;
  b.images = Tensor::zeros({nb, soc::kChannels, soc::kImageSize, soc::kImageSize});
  b.questions = Tensor::zeros({nb, soc::kQuestionDims});
  b.answers.resize(static_cast<std::size_t>(nb));
  b.categories.resize(static_cast<std::size_t>(nb));
  for (int i = 0; i < nb; ++i) {
    std::uint8_t answer = 0, category = 0;
    reader.read_into(order[begin + static_cast<std::size_t>(i)],
                     b.images.data().data() + static_cast<std::size_t>(i) * soc::kImageFloats,
                     b.questions.data().data() + static_cast<std::size_t>(i) * soc::kQuestionDims,
                     answer, category);
    b.answers[static_cast<std::size_t>(i)] = answer;
    b.categories[static_cast<std::size_t>(i)] = category;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Evaluation: argmax classification, accuracy split by question category.
// Stochastic (hard-attention) models draw fresh Gumbel noise from the
// evaluation seed, so results are reproducible per seed.

struct EvalResult {
  double overall = 0, nonrel = 0, birel = 0;
  std::int64_t total = 0, nonrel_count = 0, birel_count = 0;
};

namespace detail {
// Independent sub-streams derived from one user-facing seed.
inline constexpr std::uint64_t kStreamInit = 0;
inline constexpr std::uint64_t kStreamShuffle = 1;
inline constexpr std::uint64_t kStreamModel = 2;
inline constexpr std::uint64_t kStreamEval = 3;
}  // namespace detail

inline EvalResult evaluate(const ModelVariant& model,
                           soc::DatasetReader& reader, std::uint64_t eval_seed,
                           int batch_size) {
  Rng rng(Rng::derive(eval_seed, detail::kStreamEval));
  std::vector<std::uint64_t> order(reader.size());
  std::iota(order.begin(), order.end(), 0);
  EvalResult res;
  std::int64_t correct = 0, nonrel_correct = 0, birel_correct = 0;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    Batch b = load_batch(reader, order, at, end);
    Tensor logits = model_forward(model, b.images, b.questions, false, rng);
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool hit = pred[i] == b.answers[i];
      correct += hit;
      if (b.categories[i] == 0) {
        ++res.nonrel_count;
        nonrel_correct += hit;
      } else {
        ++res.birel_count;
        birel_correct += hit;
      }
    }
  }
  res.total = static_cast<std::int64_t>(order.size());
  res.overall = res.total ? static_cast<double>(correct) / res.total : 0.0;
  res.nonrel = res.nonrel_count ? static_cast<double>(nonrel_correct) / res.nonrel_count : 0.0;
  res.birel = res.birel_count ? static_cast<double>(birel_correct) / res.birel_count : 0.0;
  return res;
}

/// Mean accuracy over k evaluation seeds (hard attention is stochastic at
/// test time; soft models give identical results every seed).
inline EvalResult evaluate_mean(const ModelVariant& model,
                                soc::DatasetReader& reader,
                                std::uint64_t base_seed, int k,
                                int batch_size) {
  EvalResult mean;
  for (int i = 0; i < k; ++i) {
    EvalResult r = evaluate(model, reader, base_seed + static_cast<std::uint64_t>(i), batch_size);
    mean.overall += r.overall / k;
    mean.nonrel += r.nonrel / k;
    mean.birel += r.birel / k;
    mean.total = r.total;
    mean.nonrel_count = r.nonrel_count;
    mean.birel_count = r.birel_count;
  }
  return mean;
}

// ---------------------------------------------------------------------------
// Training loop

namespace detail {

inline double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0;
  for (const auto& p : params)
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

inline void scale_grads(const std::vector<Tensor>& params, double s) {
  for (const auto& p : params)
    for (float& g : p.grad()) g = static_cast<float>(g * s);
}

}  // namespace detail

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::string final_checkpoint;
  std::string metrics_path;
};

/// Shuffled mini-batch Adam over the training set; appends one JSONL metrics
/// record per epoch, checkpoints at the evaluation cadence and at the end.
/// Fully deterministic given (model parameters, config seed).
inline TrainResult train(ModelVariant& model, const TrainConfig& cfg) {
  const bool bn = std::visit(
      [](const auto& m) { return m.config().use_batch_norm; }, model);
  cfg.validate(bn);
  const nlohmann::json model_cfg =
      std::visit([](const auto& m) { return to_json(m.config()); }, model);

  soc::DatasetReader train_reader(cfg.train_data);
  std::unique_ptr<soc::DatasetReader> test_reader;
  if (!cfg.test_data.empty())
    test_reader = std::make_unique<soc::DatasetReader>(cfg.test_data);
  if (train_reader.size() == 0)
    throw ConfigError("training dataset '" + cfg.train_data + "' is empty");

  std::filesystem::create_directories(cfg.out_dir);
  const std::string metrics_path =
      (std::filesystem::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics_out(metrics_path, std::ios::trunc);
  if (!metrics_out)
    throw FileError("cannot open metrics log '" + metrics_path + "'");

  std::vector<Tensor> params = trainable(model);
  AdamState<float> opt(cfg.learning_rate);
  Rng shuffle_rng(Rng::derive(cfg.seed, detail::kStreamShuffle));
  Rng model_rng(Rng::derive(cfg.seed, detail::kStreamModel));

  const CheckpointMeta meta{cfg.model_kind, cfg.seed, model_cfg};
  auto write_ckpt = [&](const std::string& name) {
    const std::string path =
        (std::filesystem::path(cfg.out_dir) / name).string();
    save_checkpoint(path, meta, named_tensors(model));
    return path;
  };

  TrainResult result;
  result.metrics_path = metrics_path;
  std::vector<std::uint64_t> order(train_reader.size());
  std::iota(order.begin(), order.end(), 0);
  const auto t_start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    std::int64_t loss_n = 0;
    int batch_index = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      // A trailing single-sample batch cannot be batch-normalized; skip it.
      if (bn && end - at < 2) continue;
      Batch b = load_batch(train_reader, order, at, end);
      // Numeric failures inside the forward pass (an overflowed softmax, say)
      // are training divergence; report them with their location.
      Tensor loss = [&] {
        try {
          Tensor logits =
              model_forward(model, b.images, b.questions, true, model_rng);
          return cross_entropy(logits, b.answers);
        } catch (const NumericError& e) {
          throw DivergenceError("non-finite loss at epoch " +
                                std::to_string(epoch) + ", batch " +
                                std::to_string(batch_index) + ": " + e.what());
        }
      }();
      const double loss_val = static_cast<double>(loss.item());
      if (!std::isfinite(loss_val))
        throw DivergenceError("non-finite loss at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index));
      loss_sum += loss_val * static_cast<double>(end - at);
      loss_n += static_cast<std::int64_t>(end - at);
      zero_grads(params);
      loss.backward();
      if (cfg.clip_norm > 0) {
        const double norm = detail::global_grad_norm(params);
        if (norm > cfg.clip_norm)
          detail::scale_grads(params, cfg.clip_norm / norm);
      }
      adam_step(params, opt);
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0;
    const bool cadence = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
    if (cadence && test_reader) {
      EvalResult ev = evaluate(model, *test_reader, cfg.seed, cfg.batch_size);
      rec.evaluated = true;
      rec.test_acc = ev.overall;
      rec.nonrel_acc = ev.nonrel;
      rec.birel_acc = ev.birel;
      rec.nonrel_count = ev.nonrel_count;
      rec.birel_count = ev.birel_count;
    }
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t_start)
                      .count();
    metrics_out << rec.to_json().dump() << "\n";
    metrics_out.flush();
    result.metrics.push_back(rec);
    if (cadence) write_ckpt("checkpoint_epoch" + std::to_string(epoch) + ".esc");
  }

  result.final_checkpoint = write_ckpt("checkpoint.esc");
  return result;
}

}  // namespace entstream
