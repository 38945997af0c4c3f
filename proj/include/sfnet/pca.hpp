#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n x n).
/// Returns eigenvalues and the column-eigenvector matrix, unsorted.
inline void jacobi_eigen_sym(std::vector<double>& a, std::size_t n,
                             std::vector<double>& eigvals, std::vector<double>& eigvecs) {
  eigvecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a[i * n + i]));
  scale = std::max(scale, 1.0);

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (std::sqrt(off) < 1e-14 * scale * static_cast<double>(n)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i * n + p];
          const double aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a[p * n + i];
          const double aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = eigvecs[i * n + p];
          const double viq = eigvecs[i * n + q];
          eigvecs[i * n + p] = c * vip - s * viq;
          eigvecs[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

}  // namespace detail

/// Fitted PCA basis: per-band mean and orthonormal components ordered by
/// descending explained variance.
template <typename S>
struct PcaModel {
  Tensor<S> mean;        // [bands]
  Tensor<S> components;  // [bands x r], orthonormal columns
  std::vector<S> explained_variance;  // [r], non-increasing

  std::size_t bands() const { return mean.numel(); }
  std::size_t retained() const { return components.extent(1); }
};

/// Mean-centered covariance eigendecomposition keeping the top-r components.
/// Each component is sign-normalized so its largest-magnitude entry is
/// positive. Internals run at 64-bit regardless of the tensor precision.
template <typename S>
PcaModel<S> pca_fit(const Tensor<S>& samples, std::size_t r) {
  detail::check_rank(samples, 2, "pca_fit");
  const std::size_t m = samples.extent(0), bands = samples.extent(1);
  if (r < 1 || r > bands)
    throw ConfigError("pca_fit: retained components " + std::to_string(r) +
                      " out of range [1, " + std::to_string(bands) + "]");
  if (m <= r)
    throw ConfigError("pca_fit: need more than " + std::to_string(r) + " samples, got " +
                      std::to_string(m));

  const auto& xv = samples.value();
  std::vector<double> mean(bands, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < bands; ++j) mean[j] += static_cast<double>(xv[i * bands + j]);
  for (double& v : mean) v /= static_cast<double>(m);

  // Sample covariance (1 / (m - 1)).
  std::vector<double> cov(bands * bands, 0.0);
  std::vector<double> centered(bands);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < bands; ++j)
      centered[j] = static_cast<double>(xv[i * bands + j]) - mean[j];
    for (std::size_t p = 0; p < bands; ++p)
      for (std::size_t q = p; q < bands; ++q) cov[p * bands + q] += centered[p] * centered[q];
  }
  const double inv = 1.0 / static_cast<double>(m - 1);
  for (std::size_t p = 0; p < bands; ++p)
    for (std::size_t q = p; q < bands; ++q) {
      cov[p * bands + q] *= inv;
      cov[q * bands + p] = cov[p * bands + q];
    }

  std::vector<double> eigvals, eigvecs;
  detail::jacobi_eigen_sym(cov, bands, eigvals, eigvecs);

  std::vector<std::size_t> order(bands);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (eigvals[a] != eigvals[b]) return eigvals[a] > eigvals[b];
    return a < b;
  });

  PcaModel<S> model;
  std::vector<S> mean_s(bands);
  for (std::size_t j = 0; j < bands; ++j) mean_s[j] = static_cast<S>(mean[j]);
  model.mean = Tensor<S>::from({bands}, std::move(mean_s));

  std::vector<S> comp(bands * r);
  model.explained_variance.resize(r);
  for (std::size_t c = 0; c < r; ++c) {
    const std::size_t src = order[c];
    // Sign convention: largest-magnitude entry positive.
    double best = 0.0;
    double sign = 1.0;
    for (std::size_t j = 0; j < bands; ++j) {
      const double v = eigvecs[j * bands + src];
      if (std::abs(v) > best) {
        best = std::abs(v);
        sign = v >= 0 ? 1.0 : -1.0;
      }
    }
    for (std::size_t j = 0; j < bands; ++j)
      comp[j * r + c] = static_cast<S>(sign * eigvecs[j * bands + src]);
    model.explained_variance[c] = static_cast<S>(std::max(eigvals[src], 0.0));
  }
  model.components = Tensor<S>::from({bands, r}, std::move(comp));
  return model;
}

/// (x - mean) * components, rows independent.
template <typename S>
Tensor<S> pca_transform(const PcaModel<S>& model, const Tensor<S>& x) {
  detail::check_rank(x, 2, "pca_transform");
  const std::size_t bands = model.bands(), r = model.retained();
  if (x.extent(1) != bands)
    throw ShapeError("pca_transform: input " + shape_str(x.shape()) + " does not match " +
                     std::to_string(bands) + " bands");
  const std::size_t m = x.extent(0);
  const auto& xv = x.value();
  const auto& mv = model.mean.value();
  const auto& cv = model.components.value();
  std::vector<S> out(m * r, S(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < bands; ++j) {
      const S c = xv[i * bands + j] - mv[j];
      const S* crow = cv.data() + j * r;
      for (std::size_t k = 0; k < r; ++k) out[i * r + k] += c * crow[k];
    }
  return Tensor<S>::from({m, r}, std::move(out));
}

}  // namespace sfnet
