#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "entstream/baselines.hpp"
#include "entstream/errors.hpp"
#include "entstream/model.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

// Archive layout: magic "ESC1", u64 manifest length, manifest JSON, then the
// tensor payload as raw little-endian f32 buffers. Manifest offsets are
// relative to the payload start.
inline constexpr char kCheckpointMagic[4] = {'E', 'S', 'C', '1'};

// ---------------------------------------------------------------------------
// Config <-> JSON

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"stream_len", c.stream_len},
          {"attention", attention_mode_name(c.attention)},
          {"gumbel_temperature", c.gumbel_temperature},
          {"use_batch_norm", c.use_batch_norm},
          {"answer_classes", c.answer_classes},
          {"image_size", c.image_size},
          {"conv_layers", c.conv_layers}};
}

inline ModelConfig stream_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.stream_len = j.at("stream_len").get<int>();
  c.attention = attention_mode_from(j.at("attention").get<std::string>());
  c.gumbel_temperature = j.at("gumbel_temperature").get<double>();
  c.use_batch_norm = j.at("use_batch_norm").get<bool>();
  c.answer_classes = j.at("answer_classes").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.conv_layers = j.at("conv_layers").get<int>();
  return c;
}

inline nlohmann::json to_json(const RnConfig& c) {
  return {{"g_layers", c.g_layers},
          {"f_layers", c.f_layers},
          {"dropout_rate", c.dropout_rate},
          {"use_batch_norm", c.use_batch_norm},
          {"image_size", c.image_size},
          {"conv_layers", c.conv_layers}};
}

inline RnConfig rn_config_from_json(const nlohmann::json& j) {
  RnConfig c;
  c.g_layers = j.at("g_layers").get<std::vector<int>>();
  c.f_layers = j.at("f_layers").get<std::vector<int>>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.use_batch_norm = j.at("use_batch_norm").get<bool>();
  c.image_size = j.at("image_size").get<int>();
  c.conv_layers = j.at("conv_layers").get<int>();
  return c;
}

inline nlohmann::json to_json(const CnnConfig& c) {
  return {{"hidden_layers", c.hidden_layers},
          {"use_batch_norm", c.use_batch_norm},
          {"image_size", c.image_size},
          {"conv_layers", c.conv_layers},
          {"answer_classes", c.answer_classes}};
}

inline CnnConfig cnn_config_from_json(const nlohmann::json& j) {
  CnnConfig c;
  c.hidden_layers = j.at("hidden_layers").get<std::vector<int>>();
  c.use_batch_norm = j.at("use_batch_norm").get<bool>();
  c.image_size = j.at("image_size").get<int>();
  c.conv_layers = j.at("conv_layers").get<int>();
  c.answer_classes = j.at("answer_classes").get<int>();
  return c;
}

// ---------------------------------------------------------------------------
// Model variant: one runtime type covering the four CLI model kinds
// ("rfs"/"rfsh" share StreamModel and differ only in configuration).

using ModelVariant = std::variant<StreamModel<float>, RnModel<float>, CnnModel<float>>;

inline ModelVariant make_model(const std::string& kind,
                               const nlohmann::json& config, Rng& rng) {
  if (kind == "rfs" || kind == "rfsh")
    return StreamModel<float>(stream_config_from_json(config), rng);
  if (kind == "rn") return RnModel<float>(rn_config_from_json(config), rng);
  if (kind == "cnn") return CnnModel<float>(cnn_config_from_json(config), rng);
  throw ConfigError("unknown model kind '" + kind + "'");
}

inline std::vector<std::pair<std::string, Tensor>> named_tensors(
    const ModelVariant& m) {
  return std::visit([](const auto& model) { return model.named_tensors(); }, m);
}

inline std::vector<Tensor> trainable(const ModelVariant& m) {
  return std::visit([](const auto& model) { return model.trainable(); }, m);
}

inline Tensor model_forward(const ModelVariant& m, const Tensor& images,
                            const Tensor& questions, bool training, Rng& rng) {
  return std::visit(
      [&](const auto& model) {
        return model.forward(images, questions, training, rng);
      },
      m);
}

// ---------------------------------------------------------------------------
// Save / load

struct CheckpointMeta {
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const std::vector<std::pair<std::string, Tensor>>& tensors) {
  nlohmann::json manifest;
  manifest["kind"] = meta.kind;
  manifest["seed"] = meta.seed;
  manifest["config"] = meta.config;
  // Convenience duplicates for quick inspection of stream checkpoints.
  manifest["hidden_dim"] = meta.config.value("hidden_dim", 0);
  manifest["stream_len"] = meta.config.value("stream_len", 0);
  std::uint64_t offset = 0;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  manifest["tensors"] = std::move(list);
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open checkpoint '" + path + "' for writing");
  out.write(kCheckpointMagic, 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * 4));
  out.flush();
  if (!out) throw FileError("write failure on checkpoint '" + path + "'");
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path,
                                           nlohmann::json* manifest_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("'" + path + "': bad checkpoint magic at byte offset 0");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in) throw FormatError("'" + path + "': truncated manifest length at byte offset 4");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("'" + path + "': truncated manifest at byte offset 12");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': manifest parse failure: " + e.what());
  }
  CheckpointMeta meta;
  try {
    meta.kind = manifest.at("kind").get<std::string>();
    meta.seed = manifest.at("seed").get<std::uint64_t>();
    meta.config = manifest.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': manifest missing fields: " + e.what());
  }
  if (manifest_out) *manifest_out = std::move(manifest);
  return meta;
}

/// Rebuilds the model named by the manifest and fills every tensor from the
/// payload. Missing/extra/mis-shaped tensors are compatibility errors.
inline ModelVariant load_checkpoint(const std::string& path,
                                    CheckpointMeta* meta_out = nullptr) {
  nlohmann::json manifest;
  CheckpointMeta meta = read_checkpoint_meta(path, &manifest);
  Rng init_rng(0);  // weights are overwritten below
  ModelVariant model = make_model(meta.kind, meta.config, init_rng);

  std::ifstream in(path, std::ios::binary);
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());

  // Payload starts after magic, length field, and the stored manifest text.
  in.seekg(4);
  std::uint64_t stored_len = 0;
  in.read(reinterpret_cast<char*>(&stored_len), 8);
  const std::uint64_t base = 4 + 8 + stored_len;

  auto tensors = named_tensors(model);
  const auto& list = manifest.at("tensors");
  if (list.size() != tensors.size())
    throw CompatibilityError("'" + path + "' stores " +
                             std::to_string(list.size()) + " tensors; a " +
                             meta.kind + " model has " +
                             std::to_string(tensors.size()));
  std::uint64_t used = 0;
  for (const auto& entry : list) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    Tensor* target = nullptr;
    for (auto& [tname, t] : tensors)
      if (tname == name) target = &t;
    if (!target)
      throw CompatibilityError("'" + path + "': model has no tensor named '" +
                               name + "'");
    if (target->shape() != shape)
      throw CompatibilityError("'" + path + "': tensor '" + name + "' shape " +
                               detail::shape_str(shape) + " does not match model " +
                               detail::shape_str(target->shape()));
    const std::uint64_t bytes = static_cast<std::uint64_t>(target->size()) * 4;
    if (base + offset + bytes > file_size)
      throw FormatError("'" + path + "': tensor '" + name +
                        "' extends past end of file at byte offset " +
                        std::to_string(base + offset));
    in.seekg(static_cast<std::streamoff>(base + offset));
    in.read(reinterpret_cast<char*>(target->data().data()),
            static_cast<std::streamsize>(bytes));
    if (!in)
      throw FormatError("'" + path + "': read failure at byte offset " +
                        std::to_string(base + offset));
    used += bytes;
  }
  if (base + used != file_size)
    throw FormatError("'" + path + "': payload has " +
                      std::to_string(file_size - base) + " bytes, manifest uses " +
                      std::to_string(used));
  if (meta_out) *meta_out = std::move(meta);
  return model;
}

}  // namespace entstream
