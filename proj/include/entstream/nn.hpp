#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "entstream/rng.hpp"
#include "entstream/tensor.hpp"

namespace entstream {

// ---------------------------------------------------------------------------
// Parameter initialization: uniform in +-1/sqrt(fan_in) for weights, zero
// biases.

template <class S>
void fill_uniform(const TensorT<S>& t, Rng& rng, double bound) {
  for (auto& v : t.data())
    v = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
}

template <class S = float>
struct Linear {
  TensorT<S> w;  // [in, out]
  TensorT<S> b;  // [out]

  static Linear init(int in, int out, Rng& rng) {
    Linear l;
    l.w = TensorT<S>::zeros({in, out}, true);
    l.b = TensorT<S>::zeros({out}, true);
    fill_uniform(l.w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    return l;
  }

  TensorT<S> operator()(const TensorT<S>& x) const { return linear(x, w, b); }

  void collect(std::vector<TensorT<S>>& out) const {
    out.push_back(w);
    out.push_back(b);
  }
};

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation) via im2col + matrix product.

namespace detail {

template <class S>
void im2col(const S* x, S* col, int n_batch, int ch, int h, int w, int kh,
            int kw, int stride, int pad, int oh, int ow) {
  std::size_t idx = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int c = 0; c < ch; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              col[idx++] =
                  (iy >= 0 && iy < h && ix >= 0 && ix < w)
                      ? x[((static_cast<std::size_t>(n) * ch + c) * h + iy) *
                              w +
                          ix]
                      : S(0);
            }
}

template <class S>
void col2im_add(const S* col, S* dx, int n_batch, int ch, int h, int w, int kh,
                int kw, int stride, int pad, int oh, int ow) {
  std::size_t idx = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int c = 0; c < ch; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                dx[((static_cast<std::size_t>(n) * ch + c) * h + iy) * w +
                   ix] += col[idx];
              ++idx;
            }
}

}  // namespace detail

/// x: [N,C,H,W] (or [C,H,W] for a single sample), w: [OC,C,KH,KW], b: [OC].
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                  int stride, int pad) {
  const bool batched = x.ndim() == 4;
  if (!batched && x.ndim() != 3)
    throw ShapeError("conv2d: expected [N,C,H,W] or [C,H,W] input, got " +
                     detail::shape_str(x.shape()));
  if (w.ndim() != 4)
    throw ShapeError("conv2d: expected 4-d kernel, got " +
                     detail::shape_str(w.shape()));
  const int n_batch = batched ? x.dim(0) : 1;
  const int ch = x.dim(batched ? 1 : 0);
  const int h = x.dim(batched ? 2 : 1);
  const int wid = x.dim(batched ? 3 : 2);
  const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ch)
    throw ShapeError("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                     " input channels, image has " + std::to_string(ch));
  if (b.ndim() != 1 || b.dim(0) != oc)
    throw ShapeError("conv2d: bias " + detail::shape_str(b.shape()) +
                     " does not match " + std::to_string(oc) + " kernels");
  if (stride < 1 || pad < 0)
    throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wid + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || wid + 2 * pad < kw || oh < 1 || ow < 1)
    throw ShapeError("conv2d: kernel does not fit a " + std::to_string(h) +
                     "x" + std::to_string(wid) + " image with padding " +
                     std::to_string(pad));

  const int ckk = ch * kh * kw;
  const std::int64_t rows = static_cast<std::int64_t>(n_batch) * oh * ow;
  auto col = std::make_shared<std::vector<S>>(
      static_cast<std::size_t>(rows) * ckk);
  detail::im2col(x.data().data(), col->data(), n_batch, ch, h, wid, kh, kw,
                 stride, pad, oh, ow);

  // out_rows[(n,oy,ox), oc] = col . w^T, then scatter to [N,OC,OH,OW].
  std::vector<S> out_rows(static_cast<std::size_t>(rows) * oc, S(0));
  detail::gemm_nt(col->data(), w.data().data(), out_rows.data(),
                  static_cast<int>(rows), oc, ckk);
  std::vector<S> out(static_cast<std::size_t>(n_batch) * oc * oh * ow);
  for (int n = 0; n < n_batch; ++n)
    for (int o = 0; o < oc; ++o) {
      const S bias = b.data()[static_cast<std::size_t>(o)];
      for (int p = 0; p < oh * ow; ++p)
        out[(static_cast<std::size_t>(n) * oc + o) * oh * ow + p] =
            out_rows[(static_cast<std::size_t>(n) * oh * ow + p) * oc + o] +
            bias;
    }

  std::vector<int> out_shape =
      batched ? std::vector<int>{n_batch, oc, oh, ow}
              : std::vector<int>{oc, oh, ow};
  return TensorT<S>::make_op(
      std::move(out_shape), std::move(out), {x, w, b},
      [x, w, b, col, n_batch, ch, h, wid, oc, kh, kw, stride, pad, oh, ow,
       ckk, rows](detail::Node<S>& self) {
        std::vector<S> d_rows(static_cast<std::size_t>(rows) * oc);
        for (int n = 0; n < n_batch; ++n)
          for (int o = 0; o < oc; ++o)
            for (int p = 0; p < oh * ow; ++p)
              d_rows[(static_cast<std::size_t>(n) * oh * ow + p) * oc + o] =
                  self.grad[(static_cast<std::size_t>(n) * oc + o) * oh * ow +
                            p];
        if (w.requires_grad())  // dW += d_rows^T . col
          detail::gemm_tn(d_rows.data(), col->data(), w.grad().data(), oc,
                          ckk, static_cast<int>(rows));
        if (b.requires_grad()) {
          auto& g = b.grad();
          for (int o = 0; o < oc; ++o) {
            double acc = 0;
            for (std::int64_t r = 0; r < rows; ++r)
              acc += static_cast<double>(
                  d_rows[static_cast<std::size_t>(r) * oc + o]);
            g[static_cast<std::size_t>(o)] += static_cast<S>(acc);
          }
        }
        if (x.requires_grad()) {  // dCol = d_rows . W, then scatter-add
          std::vector<S> d_col(static_cast<std::size_t>(rows) * ckk, S(0));
          detail::gemm_nn(d_rows.data(), w.data().data(), d_col.data(),
                          static_cast<int>(rows), ckk, oc);
          detail::col2im_add(d_col.data(), x.grad().data(), n_batch, ch, h,
                             wid, kh, kw, stride, pad, oh, ow);
        }
      });
}

template <class S = float>
struct Conv2d {
  TensorT<S> w;  // [oc, ic, k, k]
  TensorT<S> b;  // [oc]
  int stride = 1;
  int pad = 0;

  static Conv2d init(int ic, int oc, int k, int stride, int pad, Rng& rng) {
    Conv2d c;
    c.w = TensorT<S>::zeros({oc, ic, k, k}, true);
    c.b = TensorT<S>::zeros({oc}, true);
    c.stride = stride;
    c.pad = pad;
    fill_uniform(c.w, rng, 1.0 / std::sqrt(static_cast<double>(ic) * k * k));
    return c;
  }

  TensorT<S> operator()(const TensorT<S>& x) const {
    return conv2d(x, w, b, stride, pad);
  }

  void collect(std::vector<TensorT<S>>& out) const {
    out.push_back(w);
    out.push_back(b);
  }
};

// ---------------------------------------------------------------------------
// Batch normalization over the channel dimension of [N,C,...] activations.

template <class S>
TensorT<S> batch_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, const TensorT<S>& running_mean,
                      const TensorT<S>& running_var, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
  if (x.ndim() < 2)
    throw ShapeError("batch_norm: expected [N,C,...] input, got " +
                     detail::shape_str(x.shape()));
  const int n_batch = x.dim(0);
  const int ch = x.dim(1);
  const auto spatial = x.size() / (static_cast<std::int64_t>(n_batch) * ch);
  if (gamma.size() != ch || beta.size() != ch || running_mean.size() != ch ||
      running_var.size() != ch)
    throw ShapeError("batch_norm: per-channel parameters must have length " +
                     std::to_string(ch));
  if (training && n_batch < 2)
    throw ConfigError(
        "batch_norm: training mode requires batch size >= 2, got " +
        std::to_string(n_batch));

  const std::int64_t per_ch = n_batch * spatial;
  std::vector<double> mean(static_cast<std::size_t>(ch)),
      invstd(static_cast<std::size_t>(ch));
  const S* xd = x.data().data();
  auto at = [ch, spatial](int n, int c, std::int64_t s) -> std::size_t {
    return (static_cast<std::size_t>(n) * ch + c) * spatial + s;
  };
  if (training) {
    for (int c = 0; c < ch; ++c) {
      double sum = 0, sq = 0;
      for (int n = 0; n < n_batch; ++n)
        for (std::int64_t s = 0; s < spatial; ++s) {
          const double v = static_cast<double>(xd[at(n, c, s)]);
          sum += v;
          sq += v * v;
        }
      const double m = sum / per_ch;
      const double var = std::max(0.0, sq / per_ch - m * m);
      mean[static_cast<std::size_t>(c)] = m;
      invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
      auto& rm = running_mean.data()[static_cast<std::size_t>(c)];
      auto& rv = running_var.data()[static_cast<std::size_t>(c)];
      rm = static_cast<S>((1.0 - momentum) * rm + momentum * m);
      rv = static_cast<S>((1.0 - momentum) * rv + momentum * var);
    }
  } else {
    for (int c = 0; c < ch; ++c) {
      mean[static_cast<std::size_t>(c)] =
          static_cast<double>(running_mean.data()[static_cast<std::size_t>(c)]);
      invstd[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(static_cast<double>(
                              running_var.data()[static_cast<std::size_t>(c)]) +
                          eps);
    }
  }

  std::vector<S> out(x.data().size());
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < ch; ++c) {
      const double m = mean[static_cast<std::size_t>(c)];
      const double is = invstd[static_cast<std::size_t>(c)];
      const double g = static_cast<double>(gamma.data()[static_cast<std::size_t>(c)]);
      const double bt = static_cast<double>(beta.data()[static_cast<std::size_t>(c)]);
      for (std::int64_t s = 0; s < spatial; ++s) {
        const std::size_t i = at(n, c, s);
        out[i] = static_cast<S>(
            (static_cast<double>(xd[i]) - m) * is * g + bt);
      }
    }

  return TensorT<S>::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, invstd, n_batch, ch, spatial, training,
       at](detail::Node<S>& self) {
        const S* xv = x.data().data();
        const double n_elem = static_cast<double>(n_batch) * spatial;
        for (int c = 0; c < ch; ++c) {
          const double m = mean[static_cast<std::size_t>(c)];
          const double is = invstd[static_cast<std::size_t>(c)];
          const double g =
              static_cast<double>(gamma.data()[static_cast<std::size_t>(c)]);
          double sum_dy = 0, sum_dy_xhat = 0;
          for (int n = 0; n < n_batch; ++n)
            for (std::int64_t s = 0; s < spatial; ++s) {
              const std::size_t i = at(n, c, s);
              const double dy = static_cast<double>(self.grad[i]);
              sum_dy += dy;
              sum_dy_xhat += dy * (static_cast<double>(xv[i]) - m) * is;
            }
          if (gamma.requires_grad())
            gamma.grad()[static_cast<std::size_t>(c)] +=
                static_cast<S>(sum_dy_xhat);
          if (beta.requires_grad())
            beta.grad()[static_cast<std::size_t>(c)] += static_cast<S>(sum_dy);
          if (x.requires_grad()) {
            auto& gx = x.grad();
            for (int n = 0; n < n_batch; ++n)
              for (std::int64_t s = 0; s < spatial; ++s) {
                const std::size_t i = at(n, c, s);
                const double dy = static_cast<double>(self.grad[i]);
                const double xhat = (static_cast<double>(xv[i]) - m) * is;
                // Batch statistics depend on x in train mode only.
                const double dx =
                    training ? g * is *
                                   (dy - sum_dy / n_elem -
                                    xhat * sum_dy_xhat / n_elem)
                             : g * is * dy;
                gx[i] += static_cast<S>(dx);
              }
          }
        }
      });
}

template <class S = float>
struct BatchNorm {
  TensorT<S> gamma, beta;              // trainable, [C]
  TensorT<S> running_mean, running_var;  // buffers, [C]

  static BatchNorm init(int channels) {
    BatchNorm bn;
    bn.gamma = TensorT<S>::full({channels}, S(1), true);
    bn.beta = TensorT<S>::zeros({channels}, true);
    bn.running_mean = TensorT<S>::zeros({channels});
    bn.running_var = TensorT<S>::full({channels}, S(1));
    return bn;
  }

  TensorT<S> operator()(const TensorT<S>& x, bool training) const {
    return batch_norm(x, gamma, beta, running_mean, running_var, training);
  }

  void collect(std::vector<TensorT<S>>& out) const {
    out.push_back(gamma);
    out.push_back(beta);
  }
};

// ---------------------------------------------------------------------------
// Inverted dropout: active only in training mode, identity otherwise.

template <class S>
TensorT<S> dropout(const TensorT<S>& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0,1), got " +
                      std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  std::vector<S> mask(x.data().size());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : S(0);
  std::vector<S> out(x.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return TensorT<S>::make_op(x.shape(), std::move(out), {x},
                             [x, mask = std::move(mask)](detail::Node<S>& self) {
                               auto& g = x.grad();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i] * mask[i];
                             });
}

// ---------------------------------------------------------------------------
// GRU cell: r = sigma(W_r.[x,h]+b_r), z = sigma(W_z.[x,h]+b_z),
// candidate = tanh(W_h.[x, r*h]+b_h), out = (1-z)*h + z*candidate.

template <class S = float>
struct GruParams {
  TensorT<S> wr, br, wz, bz, wh, bh;  // w: [(d_in+d_h), d_h], b: [d_h]

  static GruParams init(int d_in, int d_h, Rng& rng) {
    GruParams p;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in + d_h));
    for (TensorT<S>* w : {&p.wr, &p.wz, &p.wh}) {
      *w = TensorT<S>::zeros({d_in + d_h, d_h}, true);
      fill_uniform(*w, rng, bound);
    }
    for (TensorT<S>* b : {&p.br, &p.bz, &p.bh})
      *b = TensorT<S>::zeros({d_h}, true);
    return p;
  }

  void collect(std::vector<TensorT<S>>& out) const {
    for (const TensorT<S>* t : {&wr, &br, &wz, &bz, &wh, &bh})
      out.push_back(*t);
  }
};

template <class S>
TensorT<S> gru_cell(const TensorT<S>& x, const TensorT<S>& h,
                    const GruParams<S>& p) {
  auto xh = concat_cols(x, h);
  auto r = sigmoid(linear(xh, p.wr, p.br));
  auto z = sigmoid(linear(xh, p.wz, p.bz));
  auto candidate = tanh_t(linear(concat_cols(x, mul(r, h)), p.wh, p.bh));
  return add(sub(h, mul(z, h)), mul(z, candidate));
}

}  // namespace entstream
