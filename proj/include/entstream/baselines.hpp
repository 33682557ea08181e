#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/model.hpp"
#include "entstream/nn.hpp"
#include "entstream/rng.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

// ---------------------------------------------------------------------------
// Pairwise row construction: patches [B,P,D], question [B,Q] ->
// [B*P*P, 2D+Q] where row (b,i,j) = [patch_i | patch_j | question_b].

template <class S>
TensorT<S> rn_pairs(const TensorT<S>& patches, const TensorT<S>& question) {
  if (patches.ndim() != 3 || question.ndim() != 2 ||
      patches.dim(0) != question.dim(0))
    throw ShapeError("rn_pairs: patches " + detail::shape_str(patches.shape()) +
                     " do not match question " +
                     detail::shape_str(question.shape()));
  const int nb = patches.dim(0), np = patches.dim(1), nd = patches.dim(2);
  const int nq = question.dim(1);
  const int row = 2 * nd + nq;
  std::vector<S> out(static_cast<std::size_t>(nb) * np * np * row);
  for (int b = 0; b < nb; ++b)
    for (int i = 0; i < np; ++i)
      for (int j = 0; j < np; ++j) {
        S* dst = out.data() +
                 ((static_cast<std::size_t>(b) * np + i) * np + j) * row;
        const S* pi = patches.data().data() +
                      (static_cast<std::size_t>(b) * np + i) * nd;
        const S* pj = patches.data().data() +
                      (static_cast<std::size_t>(b) * np + j) * nd;
        const S* q = question.data().data() + static_cast<std::size_t>(b) * nq;
        std::copy(pi, pi + nd, dst);
        std::copy(pj, pj + nd, dst + nd);
        std::copy(q, q + nq, dst + 2 * nd);
      }
  return TensorT<S>::make_op(
      {nb * np * np, row}, std::move(out), {patches, question},
      [patches, question, nb, np, nd, nq, row](detail::Node<S>& self) {
        for (int b = 0; b < nb; ++b)
          for (int i = 0; i < np; ++i)
            for (int j = 0; j < np; ++j) {
              const S* g = self.grad.data() +
                           ((static_cast<std::size_t>(b) * np + i) * np + j) *
                               row;
              if (patches.requires_grad()) {
                auto& gp = patches.grad();
                S* gi = gp.data() + (static_cast<std::size_t>(b) * np + i) * nd;
                S* gj = gp.data() + (static_cast<std::size_t>(b) * np + j) * nd;
                for (int d = 0; d < nd; ++d) {
                  gi[d] += g[d];
                  gj[d] += g[nd + d];
                }
              }
              if (question.requires_grad()) {
                S* gq = question.grad().data() +
                        static_cast<std::size_t>(b) * nq;
                for (int d = 0; d < nq; ++d) gq[d] += g[2 * nd + d];
              }
            }
      });
}

/// Sums each contiguous block of `group` rows: [N,D] -> [N/group, D].
template <class S>
TensorT<S> sum_groups(const TensorT<S>& x, int group) {
  detail::check_matrix(x, "sum_groups");
  if (group < 1 || x.dim(0) % group != 0)
    throw ShapeError("sum_groups: cannot split " + std::to_string(x.dim(0)) +
                     " rows into groups of " + std::to_string(group));
  const int ng = x.dim(0) / group, nd = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(ng) * nd);
  for (int g = 0; g < ng; ++g)
    for (int d = 0; d < nd; ++d) {
      double acc = 0;
      for (int r = 0; r < group; ++r)
        acc += static_cast<double>(
            x.data()[(static_cast<std::size_t>(g) * group + r) * nd + d]);
      out[static_cast<std::size_t>(g) * nd + d] = static_cast<S>(acc);
    }
  return TensorT<S>::make_op(
      {ng, nd}, std::move(out), {x},
      [x, ng, nd, group](detail::Node<S>& self) {
        auto& gx = x.grad();
        for (int g = 0; g < ng; ++g)
          for (int r = 0; r < group; ++r)
            for (int d = 0; d < nd; ++d)
              gx[(static_cast<std::size_t>(g) * group + r) * nd + d] +=
                  self.grad[static_cast<std::size_t>(g) * nd + d];
      });
}

// ---------------------------------------------------------------------------
// Relation-network baseline: every ordered patch pair (625 for the 5x5 grid,
// i = j included) runs through the pairwise MLP g conditioned on the
// question; the summed result runs through f with dropout before the output
// layer.

struct RnConfig {
  std::vector<int> g_layers = {256, 256, 256, 256};
  std::vector<int> f_layers = {256, 256, 10};  // last width = answer classes
  double dropout_rate = 0.5;
  bool use_batch_norm = true;
  int image_size = 75;
  int conv_layers = 4;

  int answer_classes() const { return f_layers.back(); }

  int grid_size() const {
    int g = image_size;
    for (int l = 0; l < conv_layers; ++l)
      g = (g + 2 * kConvPad - kConvKernel) / kConvStride + 1;
    return g;
  }

  void validate() const {
    if (g_layers.empty() || f_layers.empty())
      throw ConfigError("relation network needs non-empty g and f layer lists");
    if (f_layers.back() != 10)
      throw ConfigError("final f layer width must be 10, got " +
                        std::to_string(f_layers.back()));
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout_rate must be in [0,1)");
    if (conv_layers < 1 || grid_size() < 2)
      throw ConfigError("encoder geometry leaves no usable patch grid");
  }
};

template <class S = float>
class RnModel {
 public:
  RnModel(const RnConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    encoder_ = ConvEncoder<S>::init(cfg_.conv_layers, cfg_.use_batch_norm, rng);
    const int patch_dims = kEncoderChannels + 2;
    int in = 2 * patch_dims + kQuestionDims;
    for (int width : cfg_.g_layers) {
      g_.push_back(Linear<S>::init(in, width, rng));
      in = width;
    }
    for (int width : cfg_.f_layers) {
      f_.push_back(Linear<S>::init(in, width, rng));
      in = width;
    }
  }

  const RnConfig& config() const { return cfg_; }

  /// Ordered pairs evaluated per sample (P^2).
  std::int64_t pairs_per_sample() const {
    const std::int64_t p = cfg_.grid_size() * cfg_.grid_size();
    return p * p;
  }

  /// Rows most recently pushed through g (B * P^2); test instrumentation.
  std::int64_t last_pair_rows() const { return last_pair_rows_; }

  TensorT<S> forward(const TensorT<S>& images, const TensorT<S>& questions,
                     bool training, Rng& rng) const {
    if (images.ndim() != 4 || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size)
      throw ShapeError("expected images [B,3," + std::to_string(cfg_.image_size) +
                       "," + std::to_string(cfg_.image_size) + "], got " +
                       detail::shape_str(images.shape()));
    TensorT<S> maps = encoder_(images, training);
    TensorT<S> patches = patch_slice(maps, 0, kEncoderChannels);  // [B,P,26]
    return forward_from_patches(patches, questions, training, rng);
  }

  /// Seam below the encoder for patch-permutation probes.
  TensorT<S> forward_from_patches(const TensorT<S>& patches,
                                  const TensorT<S>& questions, bool training,
                                  Rng& rng) const {
    TensorT<S> x = rn_pairs(patches, questions);
    last_pair_rows_ = x.dim(0);
    for (const auto& layer : g_) x = relu(layer(x));
    x = sum_groups(x, patches.dim(1) * patches.dim(1));  // [B, g_out]
    for (std::size_t l = 0; l + 1 < f_.size(); ++l) x = relu(f_[l](x));
    x = dropout(x, cfg_.dropout_rate, training, rng);
    return f_.back()(x);
  }

  std::vector<TensorT<S>> trainable() const {
    std::vector<TensorT<S>> out;
    encoder_.collect(out);
    for (const auto& l : g_) l.collect(out);
    for (const auto& l : f_) l.collect(out);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<S>>> named_tensors() const {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    encoder_.named(out);
    for (std::size_t l = 0; l < g_.size(); ++l) {
      out.emplace_back("g" + std::to_string(l) + ".w", g_[l].w);
      out.emplace_back("g" + std::to_string(l) + ".b", g_[l].b);
    }
    for (std::size_t l = 0; l < f_.size(); ++l) {
      out.emplace_back("f" + std::to_string(l) + ".w", f_[l].w);
      out.emplace_back("f" + std::to_string(l) + ".b", f_[l].b);
    }
    return out;
  }

 private:
  RnConfig cfg_;
  ConvEncoder<S> encoder_;
  std::vector<Linear<S>> g_, f_;
  mutable std::int64_t last_pair_rows_ = 0;
};

// ---------------------------------------------------------------------------
// CNN+MLP baseline: flattened encoder output concatenated with the question,
// then a 2-hidden-layer MLP.

struct CnnConfig {
  std::vector<int> hidden_layers = {256, 256};
  bool use_batch_norm = true;
  int image_size = 75;
  int conv_layers = 4;
  int answer_classes = 10;

  int grid_size() const {
    int g = image_size;
    for (int l = 0; l < conv_layers; ++l)
      g = (g + 2 * kConvPad - kConvKernel) / kConvStride + 1;
    return g;
  }

  void validate() const {
    if (hidden_layers.empty())
      throw ConfigError("cnn baseline needs at least one hidden layer");
    if (answer_classes < 2)
      throw ConfigError("answer_classes must be >= 2");
    if (conv_layers < 1 || grid_size() < 1)
      throw ConfigError("encoder geometry leaves no feature map");
  }
};

template <class S = float>
class CnnModel {
 public:
  CnnModel(const CnnConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    encoder_ = ConvEncoder<S>::init(cfg_.conv_layers, cfg_.use_batch_norm, rng);
    const int g = cfg_.grid_size();
    int in = kEncoderChannels * g * g + kQuestionDims;
    for (int width : cfg_.hidden_layers) {
      mlp_.push_back(Linear<S>::init(in, width, rng));
      in = width;
    }
    mlp_.push_back(Linear<S>::init(in, cfg_.answer_classes, rng));
  }

  const CnnConfig& config() const { return cfg_; }

  TensorT<S> forward(const TensorT<S>& images, const TensorT<S>& questions,
                     bool training, Rng& rng) const {
    (void)rng;
    if (images.ndim() != 4 || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size)
      throw ShapeError("expected images [B,3," + std::to_string(cfg_.image_size) +
                       "," + std::to_string(cfg_.image_size) + "], got " +
                       detail::shape_str(images.shape()));
    TensorT<S> maps = encoder_(images, training);
    const int g = cfg_.grid_size();
    TensorT<S> x = reshape(maps, {images.dim(0), kEncoderChannels * g * g});
    x = concat_cols(x, questions);
    for (std::size_t l = 0; l + 1 < mlp_.size(); ++l) x = relu(mlp_[l](x));
    return mlp_.back()(x);
  }

  std::vector<TensorT<S>> trainable() const {
    std::vector<TensorT<S>> out;
    encoder_.collect(out);
    for (const auto& l : mlp_) l.collect(out);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<S>>> named_tensors() const {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    encoder_.named(out);
    for (std::size_t l = 0; l < mlp_.size(); ++l) {
      out.emplace_back("mlp" + std::to_string(l) + ".w", mlp_[l].w);
      out.emplace_back("mlp" + std::to_string(l) + ".b", mlp_[l].b);
    }
    return out;
  }

 private:
  CnnConfig cfg_;
  ConvEncoder<S> encoder_;
  std::vector<Linear<S>> mlp_;
};

}  // namespace entstream
