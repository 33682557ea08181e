#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/rng.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

/// Batched query/key dot products: q [B,K], keys [B,P,K] -> scores [B,P].
/// Callers apply their own 1/sqrt(K) scaling.
template <class S>
TensorT<S> attn_scores(const TensorT<S>& q, const TensorT<S>& keys) {
  if (q.ndim() != 2 || keys.ndim() != 3 || q.dim(0) != keys.dim(0) ||
      q.dim(1) != keys.dim(2))
    throw ShapeError("attn_scores: query " + detail::shape_str(q.shape()) +
                     " does not match keys " + detail::shape_str(keys.shape()));
  const int nb = q.dim(0), np = keys.dim(1), nk = q.dim(1);
  std::vector<S> out(static_cast<std::size_t>(nb) * np);
  for (int b = 0; b < nb; ++b)
    for (int p = 0; p < np; ++p) {
      double acc = 0;
      const std::size_t qo = static_cast<std::size_t>(b) * nk;
      const std::size_t ko = (static_cast<std::size_t>(b) * np + p) * nk;
      for (int k = 0; k < nk; ++k)
        acc += static_cast<double>(q.data()[qo + k]) *
               static_cast<double>(keys.data()[ko + k]);
      out[static_cast<std::size_t>(b) * np + p] = static_cast<S>(acc);
    }
  return TensorT<S>::make_op(
      {nb, np}, std::move(out), {q, keys},
      [q, keys, nb, np, nk](detail::Node<S>& self) {
        for (int b = 0; b < nb; ++b)
          for (int p = 0; p < np; ++p) {
            const S gs = self.grad[static_cast<std::size_t>(b) * np + p];
            const std::size_t qo = static_cast<std::size_t>(b) * nk;
            const std::size_t ko = (static_cast<std::size_t>(b) * np + p) * nk;
            if (q.requires_grad()) {
              auto& gq = q.grad();
              for (int k = 0; k < nk; ++k)
                gq[qo + k] += gs * keys.data()[ko + k];
            }
            if (keys.requires_grad()) {
              auto& gk = keys.grad();
              for (int k = 0; k < nk; ++k)
                gk[ko + k] += gs * q.data()[qo + k];
            }
          }
      });
}

/// Weighted sum of value rows: weights [B,P], values [B,P,D] -> [B,D].
/// 64-bit accumulation keeps one-hot weights exact: the result is then the
/// selected value row verbatim.
template <class S>
TensorT<S> attn_combine(const TensorT<S>& weights, const TensorT<S>& values) {
  if (weights.ndim() != 2 || values.ndim() != 3 ||
      weights.dim(0) != values.dim(0) || weights.dim(1) != values.dim(1))
    throw ShapeError("attn_combine: weights " +
                     detail::shape_str(weights.shape()) +
                     " do not match values " +
                     detail::shape_str(values.shape()));
  const int nb = weights.dim(0), np = weights.dim(1), nd = values.dim(2);
  std::vector<S> out(static_cast<std::size_t>(nb) * nd);
  for (int b = 0; b < nb; ++b)
    for (int d = 0; d < nd; ++d) {
      double acc = 0;
      for (int p = 0; p < np; ++p)
        acc += static_cast<double>(
                   weights.data()[static_cast<std::size_t>(b) * np + p]) *
               static_cast<double>(
                   values.data()[(static_cast<std::size_t>(b) * np + p) * nd +
                                 d]);
      out[static_cast<std::size_t>(b) * nd + d] = static_cast<S>(acc);
    }
  return TensorT<S>::make_op(
      {nb, nd}, std::move(out), {weights, values},
      [weights, values, nb, np, nd](detail::Node<S>& self) {
        for (int b = 0; b < nb; ++b) {
          const std::size_t go = static_cast<std::size_t>(b) * nd;
          if (weights.requires_grad()) {
            auto& gw = weights.grad();
            for (int p = 0; p < np; ++p) {
              double acc = 0;
              const std::size_t vo = (static_cast<std::size_t>(b) * np + p) * nd;
              for (int d = 0; d < nd; ++d)
                acc += static_cast<double>(self.grad[go + d]) *
                       static_cast<double>(values.data()[vo + d]);
              gw[static_cast<std::size_t>(b) * np + p] += static_cast<S>(acc);
            }
          }
          if (values.requires_grad()) {
            auto& gv = values.grad();
            for (int p = 0; p < np; ++p) {
              const S w = weights.data()[static_cast<std::size_t>(b) * np + p];
              const std::size_t vo = (static_cast<std::size_t>(b) * np + p) * nd;
              for (int d = 0; d < nd; ++d)
                gv[vo + d] += w * self.grad[go + d];
            }
          }
        }
      });
}

/// Draws n standard Gumbel variates g = -log(-log(u)), u in (0,1).
template <class S>
std::vector<S> sample_gumbel(Rng& rng, std::size_t n) {
  std::vector<S> g(n);
  for (auto& v : g) v = static_cast<S>(rng.gumbel());
  return g;
}

/// Straight-through hard selection over noisy logits.
///
/// Forward (hard): weights[b] = onehot(argmax(logits[b] + noise[b])).
/// Backward: gradients are those of the surrogate softmax((logits+noise)/T).
/// With surrogate_forward the op *outputs* the surrogate distribution instead
/// of the one-hot — a check-only mode that makes the straight-through
/// backward finite-difference testable (the hard forward is piecewise
/// constant, so its true derivative is zero almost everywhere).
template <class S>
TensorT<S> hard_one_hot(const TensorT<S>& logits, const std::vector<S>& noise,
                        double temperature, bool surrogate_forward = false) {
  if (logits.ndim() != 2)
    throw ShapeError("hard_one_hot: expected [B,P] logits, got " +
                     detail::shape_str(logits.shape()));
  if (temperature <= 0.0)
    throw ConfigError("hard_one_hot: temperature must be positive, got " +
                      std::to_string(temperature));
  const int nb = logits.dim(0), np = logits.dim(1);
  if (noise.size() != logits.data().size())
    throw ShapeError("hard_one_hot: " + std::to_string(noise.size()) +
                     " noise draws for " + std::to_string(logits.size()) +
                     " logits");

  // Surrogate distribution softmax((logits + noise)/T), shared by the
  // backward pass and by the surrogate forward mode.
  std::vector<S> noisy(logits.data());
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += noise[i];
  std::vector<S> surrogate(noisy.size());
  for (int b = 0; b < nb; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * np;
    S mx = noisy[off];
    for (int p = 1; p < np; ++p) mx = std::max(mx, noisy[off + p]);
    double norm = 0;
    for (int p = 0; p < np; ++p) {
      const double e =
          std::exp(static_cast<double>(noisy[off + p] - mx) / temperature);
      surrogate[off + p] = static_cast<S>(e);
      norm += e;
    }
    for (int p = 0; p < np; ++p)
      surrogate[off + p] = static_cast<S>(surrogate[off + p] / norm);
  }

  std::vector<S> out;
  if (surrogate_forward) {
    out = surrogate;
  } else {
    out.assign(noisy.size(), S(0));
    for (int b = 0; b < nb; ++b) {
      const std::size_t off = static_cast<std::size_t>(b) * np;
      int best = 0;
      for (int p = 1; p < np; ++p)
        if (noisy[off + p] > noisy[off + best]) best = p;
      out[off + static_cast<std::size_t>(best)] = S(1);
    }
  }

  return TensorT<S>::make_op(
      {nb, np}, std::move(out), {logits},
      [logits, surrogate = std::move(surrogate), temperature, nb,
       np](detail::Node<S>& self) {
        // d logits = (s * (dy - dot(dy, s))) / T with s the surrogate.
        auto& g = logits.grad();
        for (int b = 0; b < nb; ++b) {
          const std::size_t off = static_cast<std::size_t>(b) * np;
          double dot = 0;
          for (int p = 0; p < np; ++p)
            dot += static_cast<double>(self.grad[off + p]) *
                   static_cast<double>(surrogate[off + p]);
          for (int p = 0; p < np; ++p)
            g[off + p] += static_cast<S>(
                static_cast<double>(surrogate[off + p]) *
                (static_cast<double>(self.grad[off + p]) - dot) / temperature);
        }
      });
}

/// Argmax per row of logits + noise: the hard selection indices.
template <class S>
std::vector<int> noisy_argmax(const TensorT<S>& logits,
                              const std::vector<S>& noise) {
  const int nb = logits.dim(0), np = logits.dim(1);
  std::vector<int> idx(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * np;
    int best = 0;
    for (int p = 1; p < np; ++p)
      if (logits.data()[off + p] + noise[off + p] >
          logits.data()[off + static_cast<std::size_t>(best)] +
              noise[off + static_cast<std::size_t>(best)])
        best = p;
    idx[static_cast<std::size_t>(b)] = best;
  }
  return idx;
}

}  // namespace entstream
