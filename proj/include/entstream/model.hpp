#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "entstream/attention.hpp"
#include "entstream/errors.hpp"
#include "entstream/nn.hpp"
#include "entstream/rng.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

// Encoder geometry: every conv layer is 3x3, stride 2, padding 1, 24
// channels; each patch's 24-dim vector splits into a 14-dim key part and a
// 10-dim value part, and both get the patch's 2 normalized grid coordinates.
inline constexpr int kEncoderChannels = 24;
inline constexpr int kKeySplit = 14;
inline constexpr int kValueSplit = kEncoderChannels - kKeySplit;  // 10
inline constexpr int kKeyDims = kKeySplit + 2;                    // 16
inline constexpr int kValueDims = kValueSplit + 2;                // 12
inline constexpr int kQuestionDims = 11;
inline constexpr int kConvKernel = 3;
inline constexpr int kConvStride = 2;
inline constexpr int kConvPad = 1;

enum class AttentionMode { soft, hard };

inline const char* attention_mode_name(AttentionMode m) {
  return m == AttentionMode::soft ? "soft" : "hard";
}

inline AttentionMode attention_mode_from(const std::string& s) {
  if (s == "soft") return AttentionMode::soft;
  if (s == "hard") return AttentionMode::hard;
  throw ConfigError("unknown attention mode '" + s + "'");
}

struct ModelConfig {
  int hidden_dim = 32;
  int stream_len = 8;
  AttentionMode attention = AttentionMode::soft;
  double gumbel_temperature = 1.0;
  bool use_batch_norm = true;
  int answer_classes = 10;
  // Shrunken variants (small images, fewer conv layers) exist for fast
  // gradient checking; the production geometry is 75x75 with 4 layers.
  int image_size = 75;
  int conv_layers = 4;

  int grid_size() const {
    int g = image_size;
    for (int l = 0; l < conv_layers; ++l)
      g = (g + 2 * kConvPad - kConvKernel) / kConvStride + 1;
    return g;
  }

  int patches() const { return grid_size() * grid_size(); }

  void validate() const {
    if (hidden_dim < kQuestionDims)
      throw ConfigError("hidden_dim must be >= " +
                        std::to_string(kQuestionDims) +
                        " so the question fits, got " +
                        std::to_string(hidden_dim));
    if (stream_len < 1)
      throw ConfigError("stream_len must be >= 1, got " +
                        std::to_string(stream_len));
    if (gumbel_temperature <= 0.0)
      throw ConfigError("gumbel_temperature must be positive, got " +
                        std::to_string(gumbel_temperature));
    if (answer_classes < 2)
      throw ConfigError("answer_classes must be >= 2, got " +
                        std::to_string(answer_classes));
    if (conv_layers < 1)
      throw ConfigError("conv_layers must be >= 1, got " +
                        std::to_string(conv_layers));
    if (grid_size() < 2)
      throw ConfigError("a " + std::to_string(image_size) + "x" +
                        std::to_string(image_size) + " image leaves a " +
                        std::to_string(grid_size()) +
                        "-wide patch grid; need at least 2");
  }
};

// ---------------------------------------------------------------------------
// Patch extraction: x [B,C,G,G] -> [B, G*G, (c1-c0)+2]; per patch (i,j) the
// channel slice [c0,c1) plus coordinates (2j/(G-1)-1, 2i/(G-1)-1). The
// coordinate dims are constants and receive no gradient.

template <class S>
TensorT<S> patch_slice(const TensorT<S>& x, int c0, int c1) {
  if (x.ndim() != 4 || x.dim(2) != x.dim(3))
    throw ShapeError("patch_slice: expected [B,C,G,G] maps, got " +
                     detail::shape_str(x.shape()));
  const int nb = x.dim(0), ch = x.dim(1), g = x.dim(2);
  if (c0 < 0 || c1 > ch || c0 >= c1)
    throw ShapeError("patch_slice: channel range [" + std::to_string(c0) +
                     "," + std::to_string(c1) + ") invalid for " +
                     std::to_string(ch) + " channels");
  if (g < 2) throw ShapeError("patch_slice: grid must be at least 2x2");
  const int nd = c1 - c0 + 2;
  const int np = g * g;
  std::vector<S> out(static_cast<std::size_t>(nb) * np * nd);
  for (int b = 0; b < nb; ++b)
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j) {
        const std::size_t o =
            (static_cast<std::size_t>(b) * np + static_cast<std::size_t>(i) * g + j) * nd;
        for (int c = c0; c < c1; ++c)
          out[o + static_cast<std::size_t>(c - c0)] =
              x.data()[((static_cast<std::size_t>(b) * ch + c) * g + i) * g + j];
        out[o + static_cast<std::size_t>(nd) - 2] =
            static_cast<S>(2.0 * j / (g - 1) - 1.0);
        out[o + static_cast<std::size_t>(nd) - 1] =
            static_cast<S>(2.0 * i / (g - 1) - 1.0);
      }
  return TensorT<S>::make_op(
      {nb, np, nd}, std::move(out), {x},
      [x, c0, c1, nb, ch, g, nd, np](detail::Node<S>& self) {
        auto& gx = x.grad();
        for (int b = 0; b < nb; ++b)
          for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j) {
              const std::size_t o = (static_cast<std::size_t>(b) * np +
                                     static_cast<std::size_t>(i) * g + j) *
                                    nd;
              for (int c = c0; c < c1; ++c)
                gx[((static_cast<std::size_t>(b) * ch + c) * g + i) * g + j] +=
                    self.grad[o + static_cast<std::size_t>(c - c0)];
            }
      });
}

// ---------------------------------------------------------------------------
// Shared convolutional front end: conv_layers x (conv 3x3 s2 p1 -> optional
// batch norm -> ReLU).

template <class S = float>
struct ConvEncoder {
  std::vector<Conv2d<S>> convs;
  std::vector<BatchNorm<S>> norms;  // empty when batch norm is disabled
  int in_channels = 3;

  static ConvEncoder init(int layers, bool use_batch_norm, Rng& rng,
                          int in_channels = 3) {
    ConvEncoder e;
    e.in_channels = in_channels;
    for (int l = 0; l < layers; ++l) {
      e.convs.push_back(Conv2d<S>::init(l == 0 ? in_channels : kEncoderChannels,
                                        kEncoderChannels, kConvKernel,
                                        kConvStride, kConvPad, rng));
      if (use_batch_norm) e.norms.push_back(BatchNorm<S>::init(kEncoderChannels));
    }
    return e;
  }

  TensorT<S> operator()(const TensorT<S>& images, bool training) const {
    TensorT<S> x = images;
    for (std::size_t l = 0; l < convs.size(); ++l) {
      x = convs[l](x);
      if (!norms.empty()) x = norms[l](x, training);
      x = relu(x);
    }
    return x;
  }

  void collect(std::vector<TensorT<S>>& out) const {
    for (const auto& c : convs) c.collect(out);
    for (const auto& n : norms) n.collect(out);
  }

  void named(std::vector<std::pair<std::string, TensorT<S>>>& out) const {
    for (std::size_t l = 0; l < convs.size(); ++l) {
      out.emplace_back("conv" + std::to_string(l) + ".w", convs[l].w);
      out.emplace_back("conv" + std::to_string(l) + ".b", convs[l].b);
    }
    for (std::size_t l = 0; l < norms.size(); ++l) {
      out.emplace_back("bn" + std::to_string(l) + ".gamma", norms[l].gamma);
      out.emplace_back("bn" + std::to_string(l) + ".beta", norms[l].beta);
      out.emplace_back("bn" + std::to_string(l) + ".rmean", norms[l].running_mean);
      out.emplace_back("bn" + std::to_string(l) + ".rvar", norms[l].running_var);
    }
  }
};

template <class S>
struct PatchFieldT {
  TensorT<S> keys;    // [B, P, 16]
  TensorT<S> values;  // [B, P, 12]
};

/// One Entity Stream timestep as recorded for inspection, batch-major.
template <class S = float>
struct AttentionStep {
  std::vector<S> weights;        // [B,P] pre-hardening softmax of the logits
  std::vector<int> hard_indices;  // [B] argmax of noisy logits; empty in soft
  std::vector<S> entities;       // [B,12] the attended entity vectors
  std::vector<S> applied;        // [B,P] weights combined into the values
                                 // (one-hot rows under hard attention)
};

template <class S>
std::pair<std::int64_t, std::int64_t> count_parameters(
    const std::vector<TensorT<S>>& trainable) {
  std::int64_t count = 0;
  for (const auto& t : trainable) count += t.size();
  return {count, count * 4};  // parameters are stored as 32-bit floats
}

// ---------------------------------------------------------------------------
// The attention model: encoder -> key/value patch field; an entity-finder
// (EF) two-layer GRU whose top hidden state queries the patches each
// timestep; the attended entity feeds back as the next EF input and extends
// the Entity Stream; a relationship-finder (RF) two-layer GRU consumes the
// stream; a linear head maps RF's final top hidden state to answer logits.
// All four GRU layers start from [question | trainable padding].

template <class S = float>
class StreamModel {
 public:
  StreamModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    encoder_ = ConvEncoder<S>::init(cfg_.conv_layers, cfg_.use_batch_norm, rng);
    ef0_ = GruParams<S>::init(kValueDims, cfg_.hidden_dim, rng);
    ef1_ = GruParams<S>::init(cfg_.hidden_dim, cfg_.hidden_dim, rng);
    rf0_ = GruParams<S>::init(kValueDims, cfg_.hidden_dim, rng);
    rf1_ = GruParams<S>::init(cfg_.hidden_dim, cfg_.hidden_dim, rng);
    const int pad = cfg_.hidden_dim - kQuestionDims;
    for (TensorT<S>* t : {&pad_ef0_, &pad_ef1_, &pad_rf0_, &pad_rf1_})
      *t = TensorT<S>::zeros({pad}, true);
    start_token_ = TensorT<S>::zeros({kValueDims}, true);
    proj_ = Linear<S>::init(cfg_.hidden_dim, kKeyDims, rng);
    head_ = Linear<S>::init(cfg_.hidden_dim, cfg_.answer_classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  /// Patch field from images [B,3,H,W].
  PatchFieldT<S> encode(const TensorT<S>& images, bool training) const {
    if (images.ndim() != 4 || images.dim(1) != encoder_.in_channels ||
        images.dim(2) != cfg_.image_size || images.dim(3) != cfg_.image_size)
      throw ShapeError("expected images [B," +
                       std::to_string(encoder_.in_channels) + "," +
                       std::to_string(cfg_.image_size) + "," +
                       std::to_string(cfg_.image_size) + "], got " +
                       detail::shape_str(images.shape()));
    TensorT<S> maps = encoder_(images, training);
    return {patch_slice(maps, 0, kKeySplit),
            patch_slice(maps, kKeySplit, kEncoderChannels)};
  }

  /// Initial hidden state [question | pad] for one GRU layer.
  TensorT<S> init_hidden(const TensorT<S>& questions,
                         const TensorT<S>& pad) const {
    return concat_cols(questions, broadcast_row(pad, questions.dim(0)));
  }

  /// Full forward pass. `frozen_noise`, when given, supplies the Gumbel
  /// draws for all timesteps (stream_len * B * P values) instead of `rng`;
  /// `surrogate_forward` swaps the hard one-hot output for its
  /// straight-through surrogate distribution (gradient-check mode).
  TensorT<S> forward(const TensorT<S>& images, const TensorT<S>& questions,
                     bool training, Rng& rng,
                     std::vector<AttentionStep<S>>* trace = nullptr,
                     const std::vector<S>* frozen_noise = nullptr,
                     bool surrogate_forward = false) const {
    PatchFieldT<S> field = encode(images, training);
    return forward_from_patches(field, questions, training, rng, trace,
                                frozen_noise, surrogate_forward);
  }

  /// Seam below the encoder; also used to probe patch-order invariance.
  TensorT<S> forward_from_patches(
      const PatchFieldT<S>& field, const TensorT<S>& questions, bool training,
      Rng& rng, std::vector<AttentionStep<S>>* trace = nullptr,
      const std::vector<S>* frozen_noise = nullptr,
      bool surrogate_forward = false) const {
    (void)training;
    if (questions.ndim() != 2 || questions.dim(1) != kQuestionDims)
      throw ShapeError("expected questions [B," +
                       std::to_string(kQuestionDims) + "], got " +
                       detail::shape_str(questions.shape()));
    const int nb = questions.dim(0);
    if (field.keys.dim(0) != nb)
      throw ShapeError("batch mismatch: " + std::to_string(field.keys.dim(0)) +
                       " images vs " + std::to_string(nb) + " questions");
    const int np = field.keys.dim(1);
    const bool hard = cfg_.attention == AttentionMode::hard;
    if (frozen_noise &&
        frozen_noise->size() != static_cast<std::size_t>(cfg_.stream_len) *
                                    static_cast<std::size_t>(nb) * np)
      throw ShapeError("frozen noise must hold stream_len*B*P draws");
    if (trace) trace->clear();

    TensorT<S> h_ef0 = init_hidden(questions, pad_ef0_);
    TensorT<S> h_ef1 = init_hidden(questions, pad_ef1_);
    TensorT<S> ef_in = broadcast_row(start_token_, nb);
    const S logit_scale = static_cast<S>(1.0 / std::sqrt(double(kKeyDims)));

    std::vector<TensorT<S>> stream;
    stream.reserve(static_cast<std::size_t>(cfg_.stream_len));
    for (int t = 0; t < cfg_.stream_len; ++t) {
      h_ef0 = gru_cell(ef_in, h_ef0, ef0_);
      h_ef1 = gru_cell(h_ef0, h_ef1, ef1_);
      TensorT<S> logits = scale(attn_scores(proj_(h_ef1), field.keys), logit_scale);
      TensorT<S> grid = softmax(logits);  // pre-hardening weights

      TensorT<S> weights;
      std::vector<int> hard_idx;
      if (hard) {
        std::vector<S> noise;
        if (frozen_noise) {
          const auto off = static_cast<std::size_t>(t) *
                           static_cast<std::size_t>(nb) * np;
          noise.assign(frozen_noise->begin() + static_cast<std::ptrdiff_t>(off),
                       frozen_noise->begin() +
                           static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(nb) * np));
        } else {
          noise = sample_gumbel<S>(rng, static_cast<std::size_t>(nb) * np);
        }
        weights = hard_one_hot(logits, noise, cfg_.gumbel_temperature,
                               surrogate_forward);
        hard_idx = noisy_argmax(logits, noise);
      } else {
        weights = grid;
      }
      TensorT<S> entity = attn_combine(weights, field.values);
      if (trace)
        trace->push_back(AttentionStep<S>{grid.data(), hard_idx, entity.data(),
                                          weights.data()});
      stream.push_back(entity);
      ef_in = entity;
    }

    TensorT<S> h_rf0 = init_hidden(questions, pad_rf0_);
    TensorT<S> h_rf1 = init_hidden(questions, pad_rf1_);
    for (const auto& entity : stream) {
      h_rf0 = gru_cell(entity, h_rf0, rf0_);
      h_rf1 = gru_cell(h_rf0, h_rf1, rf1_);
    }
    return head_(h_rf1);
  }

  std::vector<TensorT<S>> trainable() const {
    std::vector<TensorT<S>> out;
    encoder_.collect(out);
    ef0_.collect(out);
    ef1_.collect(out);
    rf0_.collect(out);
    rf1_.collect(out);
    for (const TensorT<S>* t :
         {&pad_ef0_, &pad_ef1_, &pad_rf0_, &pad_rf1_, &start_token_})
      if (t->size() > 0) out.push_back(*t);
    proj_.collect(out);
    head_.collect(out);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<S>>> named_tensors() const {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    encoder_.named(out);
    const char* grus[4] = {"ef0", "ef1", "rf0", "rf1"};
    const GruParams<S>* gp[4] = {&ef0_, &ef1_, &rf0_, &rf1_};
    for (int i = 0; i < 4; ++i) {
      const std::string base(grus[i]);
      out.emplace_back(base + ".wr", gp[i]->wr);
      out.emplace_back(base + ".br", gp[i]->br);
      out.emplace_back(base + ".wz", gp[i]->wz);
      out.emplace_back(base + ".bz", gp[i]->bz);
      out.emplace_back(base + ".wh", gp[i]->wh);
      out.emplace_back(base + ".bh", gp[i]->bh);
    }
    out.emplace_back("pad.ef0", pad_ef0_);
    out.emplace_back("pad.ef1", pad_ef1_);
    out.emplace_back("pad.rf0", pad_rf0_);
    out.emplace_back("pad.rf1", pad_rf1_);
    out.emplace_back("start_token", start_token_);
    out.emplace_back("proj.w", proj_.w);
    out.emplace_back("proj.b", proj_.b);
    out.emplace_back("head.w", head_.w);
    out.emplace_back("head.b", head_.b);
    return out;
  }

 private:
  ModelConfig cfg_;
  ConvEncoder<S> encoder_;
  GruParams<S> ef0_, ef1_, rf0_, rf1_;
  TensorT<S> pad_ef0_, pad_ef1_, pad_rf0_, pad_rf1_;
  TensorT<S> start_token_;
  Linear<S> proj_;
  Linear<S> head_;
};

}  // namespace entstream
