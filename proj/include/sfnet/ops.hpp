#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

namespace detail {

// Matrix kernels. Loop orders keep the innermost stride unit-length and the
// accumulation order of every output element fixed, so results are identical
// for any thread count. All kernels accumulate (+=) into c.

template <typename S>
void mm_nn_acc(std::size_t m, std::size_t k, std::size_t n,
               const S* a, const S* b, S* c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
#endif
  for (std::size_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const S aip = arow[p];
      const S* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
// Dot products run over four fixed-lane partial sums; the split is
// data-independent, so results stay deterministic.
template <typename S>
void mm_nt_acc(std::size_t m, std::size_t k, std::size_t n,
               const S* a, const S* b, S* c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
#endif
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc0 = S(0), acc1 = S(0), acc2 = S(0), acc3 = S(0);
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        acc0 += arow[p] * brow[p];
        acc1 += arow[p + 1] * brow[p + 1];
        acc2 += arow[p + 2] * brow[p + 2];
        acc3 += arow[p + 3] * brow[p + 3];
      }
      S acc = (acc0 + acc1) + (acc2 + acc3);
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename S>
void mm_tn_acc(std::size_t m, std::size_t k, std::size_t n,
               const S* a, const S* b, S* c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
#endif
  for (std::size_t p = 0; p < k; ++p) {
    S* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const S aip = a[i * k + p];
      const S* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename S>
void check_rank(const Tensor<S>& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make(a.shape(), std::move(out), {a, b},
                         [an, bn](typename Tensor<S>::Node& nd) {
                           if (an->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               an->grad[i] += nd.grad[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               bn->grad[i] += nd.grad[i];
                         });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make(a.shape(), std::move(out), {a, b},
                         [an, bn](typename Tensor<S>::Node& nd) {
                           if (an->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               an->grad[i] += nd.grad[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               bn->grad[i] -= nd.grad[i];
                         });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make(a.shape(), std::move(out), {a, b},
                         [an, bn](typename Tensor<S>::Node& nd) {
                           if (an->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               an->grad[i] += nd.grad[i] * bn->value[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               bn->grad[i] += nd.grad[i] * an->value[i];
                         });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  std::vector<S> out(a.numel());
  const auto& av = a.value();
  const S cs = static_cast<S>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * cs;
  auto an = a.node();
  return Tensor<S>::make(a.shape(), std::move(out), {a},
                         [an, cs](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < nd.grad.size(); ++i)
                             an->grad[i] += nd.grad[i] * cs;
                         });
}

/// out = x * w[idx], with w a rank-1 weight vector. Used for the learnable
/// per-branch mixing weights.
template <typename S>
Tensor<S> scale_by_entry(const Tensor<S>& x, const Tensor<S>& w, std::size_t idx) {
  detail::check_rank(w, 1, "scale_by_entry");
  if (idx >= w.numel())
    throw ConfigError("scale_by_entry: index " + std::to_string(idx) + " out of range for " +
                      shape_str(w.shape()));
  const S wi = w.value()[idx];
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * wi;
  auto xn = x.node();
  auto wn = w.node();
  return Tensor<S>::make(x.shape(), std::move(out), {x, w},
                         [xn, wn, wi, idx](typename Tensor<S>::Node& nd) {
                           if (xn->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               xn->grad[i] += nd.grad[i] * wi;
                           if (wn->requires_grad) {
                             S acc = S(0);
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               acc += nd.grad[i] * xn->value[i];
                             wn->grad[idx] += acc;
                           }
                         });
}

/// Broadcast-adds a rank-1 bias [D] to every row of x [N x D].
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& b) {
  detail::check_rank(x, 2, "add_rowwise");
  detail::check_rank(b, 1, "add_rowwise");
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (b.numel() != d)
    throw ShapeError("add_rowwise: bias " + shape_str(b.shape()) + " does not match columns of " +
                     shape_str(x.shape()));
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
  auto xn = x.node();
  auto bn = b.node();
  return Tensor<S>::make(x.shape(), std::move(out), {x, b},
                         [xn, bn, n, d](typename Tensor<S>::Node& nd) {
                           if (xn->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               xn->grad[i] += nd.grad[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < d; ++j)
                                 bn->grad[j] += nd.grad[i * d + j];
                         });
}

/// Adds a per-channel bias [C] to a tensor whose leading axis is channels.
template <typename S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() < 2) throw ShapeError("add_channel_bias: need rank >= 2, got " + shape_str(x.shape()));
  detail::check_rank(b, 1, "add_channel_bias");
  const std::size_t c = x.extent(0);
  if (b.numel() != c)
    throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) +
                     " does not match channels of " + shape_str(x.shape()));
  const std::size_t inner = x.numel() / c;
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  const auto& bv = b.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] = xv[ch * inner + i] + bv[ch];
  auto xn = x.node();
  auto bn = b.node();
  return Tensor<S>::make(x.shape(), std::move(out), {x, b},
                         [xn, bn, c, inner](typename Tensor<S>::Node& nd) {
                           if (xn->requires_grad)
                             for (std::size_t i = 0; i < nd.grad.size(); ++i)
                               xn->grad[i] += nd.grad[i];
                           if (bn->requires_grad)
                             for (std::size_t ch = 0; ch < c; ++ch) {
                               S acc = S(0);
                               for (std::size_t i = 0; i < inner; ++i)
                                 acc += nd.grad[ch * inner + i];
                               bn->grad[ch] += acc;
                             }
                         });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank(a, 2, "matmul");
  detail::check_rank(b, 2, "matmul");
  if (a.extent(1) != b.extent(0))
    throw ShapeError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<S> out(m * n, S(0));
  detail::mm_nn_acc(m, k, n, a.value().data(), b.value().data(), out.data());
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make({m, n}, std::move(out), {a, b},
                         [an, bn, m, k, n](typename Tensor<S>::Node& nd) {
                           if (an->requires_grad)  // dA += G * B^T
                             detail::mm_nt_acc(m, n, k, nd.grad.data(), bn->value.data(),
                                               an->grad.data());
                           if (bn->requires_grad)  // dB += A^T * G
                             detail::mm_tn_acc(m, k, n, an->value.data(), nd.grad.data(),
                                               bn->grad.data());
                         });
}

/// out[m x n] = a[m x k] * b[n x k]^T without materializing the transpose.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank(a, 2, "matmul_nt");
  detail::check_rank(b, 2, "matmul_nt");
  if (a.extent(1) != b.extent(1))
    throw ShapeError("matmul_nt: inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  std::vector<S> out(m * n, S(0));
  detail::mm_nt_acc(m, k, n, a.value().data(), b.value().data(), out.data());
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make({m, n}, std::move(out), {a, b},
                         [an, bn, m, k, n](typename Tensor<S>::Node& nd) {
                           if (an->requires_grad)  // dA += G * B
                             detail::mm_nn_acc(m, n, k, nd.grad.data(), bn->value.data(),
                                               an->grad.data());
                           if (bn->requires_grad)  // dB += G^T * A
                             detail::mm_tn_acc(m, n, k, nd.grad.data(), an->value.data(),
                                               bn->grad.data());
                         });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  detail::check_rank(x, 2, "transpose");
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<S> out(m * n);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  auto xn = x.node();
  return Tensor<S>::make({n, m}, std::move(out), {x},
                         [xn, m, n](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               xn->grad[i * n + j] += nd.grad[j * m + i];
                         });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
  auto xn = x.node();
  return Tensor<S>::make(x.shape(), std::move(out), {x},
                         [xn](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < nd.grad.size(); ++i)
                             if (xn->value[i] > S(0)) xn->grad[i] += nd.grad[i];
                         });
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    out[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  auto xn = x.node();
  return Tensor<S>::make(x.shape(), std::move(out), {x},
                         [xn](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                             const double v = static_cast<double>(xn->value[i]);
                             const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                             const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                             xn->grad[i] += nd.grad[i] * static_cast<S>(cdf + v * pdf);
                           }
                         });
}

/// Row-wise softmax with max subtraction. Entries equal to the mask sentinel
/// are treated as -inf and map to exactly 0. A row with no unmasked entry is
/// a degenerate-row error.
template <typename S>
Tensor<S> row_softmax(const Tensor<S>& x) {
  detail::check_rank(x, 2, "row_softmax");
  const std::size_t m = x.extent(0), n = x.extent(1);
  const S sent = mask_sentinel<S>();
  std::vector<S> out(m * n);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    const S* row = xv.data() + i * n;
    S mx = sent;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (row[j] != sent) {
        any = true;
        if (row[j] > mx || mx == sent) mx = row[j];
      }
    }
    if (!any)
      throw NumericError("row_softmax: degenerate row " + std::to_string(i) +
                         " (all entries masked)");
    S denom = S(0);
    for (std::size_t j = 0; j < n; ++j) {
      const S e = row[j] == sent ? S(0) : std::exp(row[j] - mx);
      out[i * n + j] = e;
      denom += e;
    }
    const S inv = S(1) / denom;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= inv;
  }
  auto xn = x.node();
  return Tensor<S>::make(x.shape(), std::move(out), {x},
                         [xn, m, n](typename Tensor<S>::Node& nd) {
                           // dx_j = y_j * (g_j - sum_k g_k y_k); masked entries have y = 0.
                           for (std::size_t i = 0; i < m; ++i) {
                             const S* y = nd.value.data() + i * n;
                             const S* g = nd.grad.data() + i * n;
                             S dot = S(0);
                             for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                             for (std::size_t j = 0; j < n; ++j)
                               xn->grad[i * n + j] += y[j] * (g[j] - dot);
                           }
                         });
}

/// Per-row standardization with population variance, then affine scale/shift.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = 1e-5) {
  detail::check_rank(x, 2, "layer_norm");
  detail::check_rank(gamma, 1, "layer_norm");
  detail::check_rank(beta, 1, "layer_norm");
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match columns of " + shape_str(x.shape()));
  if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");

  std::vector<S> out(n * d), xhat(n * d), inv_std(n);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i) {
    const S* row = xv.data() + i * d;
    S mean = S(0);
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (std::size_t j = 0; j < d; ++j) {
      const S c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const S xh = (row[j] - mean) * inv;
      xhat[i * d + j] = xh;
      out[i * d + j] = gv[j] * xh + bv[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return Tensor<S>::make(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, n, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](typename Tensor<S>::Node& nd) {
        for (std::size_t i = 0; i < n; ++i) {
          const S* g = nd.grad.data() + i * d;
          const S* xh = xhat.data() + i * d;
          if (gn->requires_grad)
            for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[j] * xh[j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[j];
          if (xn->requires_grad) {
            // dxhat = g * gamma; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            S mean_dxh = S(0), mean_dxh_xh = S(0);
            for (std::size_t j = 0; j < d; ++j) {
              const S dxh = g[j] * gn->value[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= static_cast<S>(d);
            mean_dxh_xh /= static_cast<S>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const S dxh = g[j] * gn->value[j];
              xn->grad[i * d + j] += inv_std[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
          }
        }
      });
}

enum class Padding { valid, same };

namespace detail {

struct ConvDims {
  std::size_t out;   // output extent
  std::size_t pad;   // leading pad
};

inline ConvDims conv_extent(std::size_t in, std::size_t kern, std::size_t stride, Padding pad,
                            const char* op) {
  if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (pad == Padding::valid) {
    if (kern > in)
      throw ShapeError(std::string(op) + ": kernel extent " + std::to_string(kern) +
                       " exceeds input extent " + std::to_string(in));
    return {(in - kern) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;  // ceil(in / stride)
  const std::size_t needed = (out - 1) * stride + kern;
  const std::size_t total = needed > in ? needed - in : 0;
  if (kern > in + total)
    throw ShapeError(std::string(op) + ": kernel extent " + std::to_string(kern) +
                     " exceeds padded input extent " + std::to_string(in + total));
  return {out, total / 2};
}

}  // namespace detail

/// 2-D cross-correlation: x [C x H x W], kernels [F x C x kh x kw].
/// "same" pads with zeros; output extents follow the standard formula.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernels, std::size_t stride = 1,
                 Padding padding = Padding::valid) {
  detail::check_rank(x, 3, "conv2d");
  detail::check_rank(kernels, 4, "conv2d");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t f = kernels.extent(0), kc = kernels.extent(1), kh = kernels.extent(2),
                    kw = kernels.extent(3);
  if (kc != c)
    throw ShapeError("conv2d: kernel channels " + shape_str(kernels.shape()) +
                     " do not match input " + shape_str(x.shape()));
  const auto dh = detail::conv_extent(h, kh, stride, padding, "conv2d");
  const auto dw = detail::conv_extent(w, kw, stride, padding, "conv2d");
  const std::size_t oh = dh.out, ow = dw.out;

  std::vector<S> out(f * oh * ow, S(0));
  const auto& xv = x.value();
  const auto& kv = kernels.value();
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        S acc = S(0);
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(dh.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(dw.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += xv[(ci * h + iy) * w + ix] * kv[((fo * c + ci) * kh + ky) * kw + kx];
            }
          }
        out[(fo * oh + oy) * ow + ox] = acc;
      }

  auto xn = x.node();
  auto kn = kernels.node();
  const std::size_t ph = dh.pad, pw = dw.pad;
  return Tensor<S>::make(
      {f, oh, ow}, std::move(out), {x, kernels},
      [xn, kn, c, h, w, f, kh, kw, oh, ow, stride, ph, pw](typename Tensor<S>::Node& nd) {
        for (std::size_t fo = 0; fo < f; ++fo)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const S g = nd.grad[(fo * oh + oy) * ow + ox];
              if (g == S(0)) continue;
              for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                            static_cast<std::ptrdiff_t>(ph);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                              static_cast<std::ptrdiff_t>(pw);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    const std::size_t xi = (ci * h + iy) * w + ix;
                    const std::size_t ki = ((fo * c + ci) * kh + ky) * kw + kx;
                    if (xn->requires_grad) xn->grad[xi] += g * kn->value[ki];
                    if (kn->requires_grad) kn->grad[ki] += g * xn->value[xi];
                  }
                }
            }
      });
}

/// 3-D cross-correlation: x [C x B x H x W], kernels [F x C x kb x kh x kw].
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& kernels, std::size_t stride = 1,
                 Padding padding = Padding::valid) {
  detail::check_rank(x, 4, "conv3d");
  detail::check_rank(kernels, 5, "conv3d");
  const std::size_t c = x.extent(0), b = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t f = kernels.extent(0), kc = kernels.extent(1), kb = kernels.extent(2),
                    kh = kernels.extent(3), kw = kernels.extent(4);
  if (kc != c)
    throw ShapeError("conv3d: kernel channels " + shape_str(kernels.shape()) +
                     " do not match input " + shape_str(x.shape()));
  const auto db = detail::conv_extent(b, kb, stride, padding, "conv3d");
  const auto dh = detail::conv_extent(h, kh, stride, padding, "conv3d");
  const auto dw = detail::conv_extent(w, kw, stride, padding, "conv3d");
  const std::size_t ob = db.out, oh = dh.out, ow = dw.out;

  std::vector<S> out(f * ob * oh * ow, S(0));
  const auto& xv = x.value();
  const auto& kv = kernels.value();
  for (std::size_t fo = 0; fo < f; ++fo)
    for (std::size_t oz = 0; oz < ob; ++oz)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          S acc = S(0);
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t kz = 0; kz < kb; ++kz) {
              const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * stride + kz) -
                                        static_cast<std::ptrdiff_t>(db.pad);
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(b)) continue;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(dh.pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                            static_cast<std::ptrdiff_t>(dw.pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  acc += xv[((ci * b + iz) * h + iy) * w + ix] *
                         kv[(((fo * c + ci) * kb + kz) * kh + ky) * kw + kx];
                }
              }
            }
          out[((fo * ob + oz) * oh + oy) * ow + ox] = acc;
        }

  auto xn = x.node();
  auto kn = kernels.node();
  const std::size_t pb = db.pad, ph = dh.pad, pw = dw.pad;
  return Tensor<S>::make(
      {f, ob, oh, ow}, std::move(out), {x, kernels},
      [xn, kn, c, b, h, w, f, kb, kh, kw, ob, oh, ow, stride, pb, ph,
       pw](typename Tensor<S>::Node& nd) {
        for (std::size_t fo = 0; fo < f; ++fo)
          for (std::size_t oz = 0; oz < ob; ++oz)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const S g = nd.grad[((fo * ob + oz) * oh + oy) * ow + ox];
                if (g == S(0)) continue;
                for (std::size_t ci = 0; ci < c; ++ci)
                  for (std::size_t kz = 0; kz < kb; ++kz) {
                    const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * stride + kz) -
                                              static_cast<std::ptrdiff_t>(pb);
                    if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(b)) continue;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                static_cast<std::ptrdiff_t>(ph);
                      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                      for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pw);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t xi = ((ci * b + iz) * h + iy) * w + ix;
                        const std::size_t ki = (((fo * c + ci) * kb + kz) * kh + ky) * kw + kx;
                        if (xn->requires_grad) xn->grad[xi] += g * kn->value[ki];
                        if (kn->requires_grad) kn->grad[ki] += g * xn->value[xi];
                      }
                    }
                  }
              }
      });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  auto xn = x.node();
  return Tensor<S>::make(std::move(new_shape), x.value(), {x},
                         [xn](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < nd.grad.size(); ++i)
                             xn->grad[i] += nd.grad[i];
                         });
}

/// Concatenates two matrices along the feature (column) axis.
template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank(a, 2, "concat_cols");
  detail::check_rank(b, 2, "concat_cols");
  if (a.extent(0) != b.extent(0))
    throw ShapeError("concat_cols: row counts differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t n = a.extent(0), da = a.extent(1), db = b.extent(1);
  std::vector<S> out(n * (da + db));
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < da; ++j) out[i * (da + db) + j] = av[i * da + j];
    for (std::size_t j = 0; j < db; ++j) out[i * (da + db) + da + j] = bv[i * db + j];
  }
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make({n, da + db}, std::move(out), {a, b},
                         [an, bn, n, da, db](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < n; ++i) {
                             if (an->requires_grad)
                               for (std::size_t j = 0; j < da; ++j)
                                 an->grad[i * da + j] += nd.grad[i * (da + db) + j];
                             if (bn->requires_grad)
                               for (std::size_t j = 0; j < db; ++j)
                                 bn->grad[i * db + j] += nd.grad[i * (da + db) + da + j];
                           }
                         });
}

/// Mean over rows: [N x D] -> [1 x D].
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  detail::check_rank(x, 2, "mean_rows");
  const std::size_t n = x.extent(0), d = x.extent(1);
  std::vector<S> out(d, S(0));
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  const S inv = S(1) / static_cast<S>(n);
  for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
  auto xn = x.node();
  return Tensor<S>::make({1, d}, std::move(out), {x},
                         [xn, n, d, inv](typename Tensor<S>::Node& nd) {
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < d; ++j)
                               xn->grad[i * d + j] += nd.grad[j] * inv;
                         });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.value()) acc += v;
  auto xn = x.node();
  return Tensor<S>::make({1}, {acc}, {x},
                         [xn](typename Tensor<S>::Node& nd) {
                           const S g = nd.grad[0];
                           for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
                         });
}

/// x [N x In] * w [In x Out] + b [Out]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_rowwise(matmul(x, w), b);
}

}  // namespace sfnet
