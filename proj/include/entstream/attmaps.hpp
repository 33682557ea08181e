#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "entstream/checkpoint.hpp"
#include "entstream/training.hpp"

namespace entstream {

/// Binary portable graymap, maxval 255, one byte per pixel row-major.
inline void write_pgm(const std::string& path, int width, int height,
                      const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw ShapeError("pgm pixel buffer does not match " +
                     std::to_string(width) + "x" + std::to_string(height));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw FileError("short write to '" + path + "'");
}

/// Min-max scales one attention grid to [0,255]; a constant grid maps to 0.
inline std::vector<std::uint8_t> scale_to_gray(const std::vector<float>& w) {
  float lo = w.empty() ? 0.f : w[0], hi = lo;
  for (float v : w) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<std::uint8_t> px(w.size(), 0);
  if (hi > lo) {
    const float scale = 255.0f / (hi - lo);
    for (std::size_t i = 0; i < w.size(); ++i)
      px[i] = static_cast<std::uint8_t>(
          std::lround((w[i] - lo) * scale));
  }
  return px;
}

struct AttmapsResult {
  int samples = 0;
  int pgms_per_sample = 0;
  std::vector<std::string> json_files;
  std::vector<std::string> pgm_files;
};

/// For the first `count` dataset samples, runs the attention model and writes
/// one JSON trace record per sample plus one PGM heatmap per timestep.
/// Deterministic given `eval_seed`. Only stream checkpoints carry a trace.
inline AttmapsResult export_attention_maps(const std::string& checkpoint_path,
                                           const std::string& data_path,
                                           const std::string& out_dir,
                                           int count,
                                           std::uint64_t eval_seed = 0) {
  if (count < 1) throw ConfigError("count must be >= 1");
  ModelVariant model = load_checkpoint(checkpoint_path);
  const auto* stream = std::get_if<StreamModel<float>>(&model);
  if (!stream)
    throw CompatibilityError(
        "checkpoint '" + checkpoint_path +
        "' holds a model without attention maps; need kind rfs or rfsh");
  const int grid = stream->config().grid_size();
  const int steps = stream->config().stream_len;
  const bool hard = stream->config().attention == AttentionMode::hard;

  soc::DatasetReader reader(data_path);
  if (static_cast<std::uint64_t>(count) > reader.size())
    throw ConfigError("count " + std::to_string(count) +
                      " exceeds dataset size " + std::to_string(reader.size()));

  std::filesystem::create_directories(out_dir);
  Rng rng(Rng::derive(eval_seed, detail::kStreamEval));
  std::vector<std::uint64_t> order(reader.size());
  std::iota(order.begin(), order.end(), 0);

  AttmapsResult result;
  result.samples = count;
  result.pgms_per_sample = steps;
  for (int i = 0; i < count; ++i) {
    Batch b = load_batch(reader, order, static_cast<std::size_t>(i),
                         static_cast<std::size_t>(i) + 1);
    std::vector<AttentionStep<float>> trace;
    Tensor logits = stream->forward(b.images, b.questions, false, rng, &trace);
    const int prediction = argmax_rows(logits)[0];

    std::array<float, soc::kQuestionDims> qvec{};
    for (int d = 0; d < soc::kQuestionDims; ++d)
      qvec[static_cast<std::size_t>(d)] = b.questions.data()[static_cast<std::size_t>(d)];
    const soc::QuestionSpec spec = soc::decode_question(qvec);

    std::ostringstream stem;
    stem << "sample_" << std::setw(3) << std::setfill('0') << i;

    nlohmann::json rec;
    rec["sample_index"] = i;
    rec["question"] = qvec;
    rec["question_decoded"] = {
        {"color", soc::color_name(spec.color)},
        {"family", spec.family == soc::Family::nonrel ? "nonrelational"
                                                      : "binary-relational"},
        {"subtype", spec.subtype}};
    rec["answer"] = b.answers[0];
    rec["answer_name"] = soc::answer_name(b.answers[0]);
    rec["prediction"] = prediction;
    rec["prediction_name"] = soc::answer_name(prediction);

    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json hard_indices = nlohmann::json::array();
    nlohmann::json pgms = nlohmann::json::array();
    for (int t = 0; t < steps; ++t) {
      const auto& step = trace[static_cast<std::size_t>(t)];
      nlohmann::json grid_json = nlohmann::json::array();
      for (int r = 0; r < grid; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < grid; ++c)
          row.push_back(step.weights[static_cast<std::size_t>(r * grid + c)]);
        grid_json.push_back(row);
      }
      weights.push_back(grid_json);
      if (hard) hard_indices.push_back(step.hard_indices[0]);

      std::ostringstream pgm_name;
      pgm_name << stem.str() << "_step" << std::setw(2) << std::setfill('0')
               << t << ".pgm";
      const std::string pgm_path =
          (std::filesystem::path(out_dir) / pgm_name.str()).string();
      write_pgm(pgm_path, grid, grid, scale_to_gray(step.weights));
      pgms.push_back(pgm_name.str());
      result.pgm_files.push_back(pgm_path);
    }
    rec["weights"] = weights;
    rec["hard_indices"] = hard_indices;
    rec["pgm_files"] = pgms;

    const std::string json_path =
        (std::filesystem::path(out_dir) / (stem.str() + ".json")).string();
    std::ofstream jout(json_path, std::ios::trunc);
    if (!jout) throw FileError("cannot open '" + json_path + "' for writing");
    jout << rec.dump(2) << "\n";
    result.json_files.push_back(json_path);
  }
  return result;
}

}  // namespace entstream
