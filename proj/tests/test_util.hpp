#pragma once

// Shared helpers for the test suites: random tensors and the independent
// brute-force oracles (naive convolution loops, dense attention, recounts).
// The oracles deliberately avoid the library's kernels.

#include <cmath>
#include <cstddef>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/data_io.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet::test {

template <typename S>
Tensor<S> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  return Tensor<S>::uniform(std::move(shape), rng, lo, hi, requires_grad);
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.value()[i]) -
                                     static_cast<double>(b.value()[i])));
  return worst;
}

template <typename S>
double max_abs_diff(const std::vector<S>& a, const std::vector<S>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return worst;
}

/// Naive matmul oracle: plain triple loop over materialized values.
template <typename S>
std::vector<S> matmul_oracle(const std::vector<S>& a, const std::vector<S>& b, std::size_t m,
                             std::size_t k, std::size_t n) {
  std::vector<S> c(m * n, S(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

/// Quadruple-loop conv2d oracle working on an explicitly zero-padded copy.
template <typename S>
std::vector<S> conv2d_oracle(const std::vector<S>& x, std::size_t c, std::size_t h, std::size_t w,
                             const std::vector<S>& k, std::size_t f, std::size_t kh,
                             std::size_t kw, std::size_t stride, bool same,
                             std::size_t* oh_out = nullptr, std::size_t* ow_out = nullptr) {
  std::size_t oh, ow, pad_top = 0, pad_left = 0, ph = h, pw = w;
  if (same) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    const std::size_t need_h = (oh - 1) * stride + kh;
    const std::size_t need_w = (ow - 1) * stride + kw;
    const std::size_t tot_h = need_h > h ? need_h - h : 0;
    const std::size_t tot_w = need_w > w ? need_w - w : 0;
    pad_top = tot_h / 2;
    pad_left = tot_w / 2;
    ph = h + tot_h;
    pw = w + tot_w;
  } else {
    oh = (h - kh) / stride + 1;
    ow = (w - kw) / stride + 1;
  }
  std::vector<S> padded(c * ph * pw, S(0));
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        padded[(ci * ph + y + pad_top) * pw + xx + pad_left] = x[(ci * h + y) * w + xx];

  std::vector<S> out(f * oh * ow, S(0));
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              out[(fo * oh + oy) * ow + ox] +=
                  padded[(ci * ph + oy * stride + ky) * pw + ox * stride + kx] *
                  k[((fo * c + ci) * kh + ky) * kw + kx];
  if (oh_out) *oh_out = oh;
  if (ow_out) *ow_out = ow;
  return out;
}

/// Quintuple-loop conv3d oracle with materialized zero padding.
template <typename S>
std::vector<S> conv3d_oracle(const std::vector<S>& x, std::size_t c, std::size_t b, std::size_t h,
                             std::size_t w, const std::vector<S>& k, std::size_t f, std::size_t kb,
                             std::size_t kh, std::size_t kw, std::size_t stride, bool same) {
  std::size_t ob, oh, ow, pad_b = 0, pad_top = 0, pad_left = 0, pb = b, ph = h, pw = w;
  auto ext = [&](std::size_t in, std::size_t kern, std::size_t& out, std::size_t& pad,
                 std::size_t& padded) {
    if (same) {
      out = (in + stride - 1) / stride;
      const std::size_t need = (out - 1) * stride + kern;
      const std::size_t tot = need > in ? need - in : 0;
      pad = tot / 2;
      padded = in + tot;
    } else {
      out = (in - kern) / stride + 1;
      pad = 0;
      padded = in;
    }
  };
  ext(b, kb, ob, pad_b, pb);
  ext(h, kh, oh, pad_top, ph);
  ext(w, kw, ow, pad_left, pw);

  std::vector<S> padded(c * pb * ph * pw, S(0));
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t z = 0; z < b; ++z)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          padded[((ci * pb + z + pad_b) * ph + y + pad_top) * pw + xx + pad_left] =
              x[((ci * b + z) * h + y) * w + xx];

  std::vector<S> out(f * ob * oh * ow, S(0));
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t oz = 0; oz < ob; ++oz)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t kz = 0; kz < kb; ++kz)
              for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx)
                  out[((fo * ob + oz) * oh + oy) * ow + ox] +=
                      padded[((ci * pb + oz * stride + kz) * ph + oy * stride + ky) * pw +
                             ox * stride + kx] *
                      k[(((fo * c + ci) * kb + kz) * kh + ky) * kw + kx];
  return out;
}

/// Dense scaled-dot-product attention oracle: softmax(Q K^T / sqrt(D)) V,
/// written as straight loops over the raw buffers.
template <typename S>
std::vector<S> dense_attention_oracle(const std::vector<S>& q, const std::vector<S>& k,
                                      const std::vector<S>& v, std::size_t n, std::size_t d) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<S> out(n * d, S(0));
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t p = 0; p < d; ++p)
        dot += static_cast<double>(q[i * d + p]) * static_cast<double>(k[j * d + p]);
      logits[j] = dot * inv_sqrt_d;
      mx = std::max(mx, logits[j]);
    }
    double denom = 0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(logits[j] - mx);
    for (std::size_t j = 0; j < n; ++j) {
      const double wgt = std::exp(logits[j] - mx) / denom;
      for (std::size_t p = 0; p < d; ++p)
        out[i * d + p] += static_cast<S>(wgt * static_cast<double>(v[j * d + p]));
    }
  }
  return out;
}

/// Affine projection oracle: y = x W + b (plain loops).
template <typename S>
std::vector<S> linear_oracle(const std::vector<S>& x, const std::vector<S>& w,
                             const std::vector<S>& b, std::size_t n, std::size_t din,
                             std::size_t dout) {
  std::vector<S> y(n * dout);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dout; ++j) {
      S acc = b[j];
      for (std::size_t p = 0; p < din; ++p) acc += x[i * din + p] * w[p * dout + j];
      y[i * dout + j] = acc;
    }
  return y;
}

/// Nearest-centroid classifier over raw per-pixel feature vectors. Used to
/// establish that the synthetic fixture needs both sources: the joint oracle
/// should score high while single-source oracles stay low.
template <typename S>
double centroid_accuracy(const RasterPair<S>& rp, bool use_hsi, bool use_aux,
                         double train_fraction, std::uint64_t seed) {
  const std::size_t hw = rp.height() * rp.width();
  const std::size_t nb = rp.bands(), na = rp.aux_channels();
  const std::size_t dim = (use_hsi ? nb : 0) + (use_aux ? na : 0);
  auto feature = [&](std::size_t px, std::vector<double>& out) {
    out.clear();
    if (use_hsi)
      for (std::size_t b = 0; b < nb; ++b)
        out.push_back(static_cast<double>(rp.hsi.value()[b * hw + px]));
    if (use_aux)
      for (std::size_t c = 0; c < na; ++c)
        out.push_back(static_cast<double>(rp.aux.value()[c * hw + px]));
  };

  auto split = stratified_split(rp.labels, train_fraction, seed);
  const std::size_t n_classes = rp.n_classes();
  std::vector<std::vector<double>> centroids(n_classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(n_classes, 0);
  std::vector<double> f;
  for (auto px : split.train_indices) {
    feature(px, f);
    const std::size_t c = rp.labels[px] - 1;
    ++counts[c];
    for (std::size_t j = 0; j < dim; ++j) centroids[c][j] += f[j];
  }
  for (std::size_t c = 0; c < n_classes; ++c)
    for (auto& v : centroids[c]) v /= static_cast<double>(std::max<std::size_t>(counts[c], 1));

  std::size_t correct = 0;
  for (auto px : split.test_indices) {
    feature(px, f);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < n_classes; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = f[j] - centroids[c][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best + 1 == rp.labels[px]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.test_indices.size());
}

}  // namespace sfnet::test
