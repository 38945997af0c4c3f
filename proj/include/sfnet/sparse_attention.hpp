#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

inline constexpr double kLayerNormEps = 1e-5;

/// The four-level sparsity schedule used throughout the network.
inline std::vector<double> default_alphas() { return {0.5, 2.0 / 3.0, 0.75, 0.8}; }

template <typename S>
struct LayerNormParams {
  Tensor<S> gamma, beta;

  static LayerNormParams identity(std::size_t d, bool trainable = true) {
    return {Tensor<S>::ones({d}, trainable), Tensor<S>::zeros({d}, trainable)};
  }
};

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const LayerNormParams<S>& p) {
  return layer_norm(x, p.gamma, p.beta, kLayerNormEps);
}

namespace detail {

/// Glorot-uniform matrix: bound sqrt(6 / (fan_in + fan_out)).
template <typename S>
Tensor<S> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<S>::uniform(std::move(shape), rng, -bound, bound, true);
}

}  // namespace detail

/// Two-layer feed-forward with GELU in between.
template <typename S>
struct FfnParams {
  Tensor<S> w1, b1, w2, b2;

  static FfnParams glorot(std::size_t d, std::size_t d_ff, Rng& rng) {
    if (d_ff < d) throw ConfigError("FfnParams: hidden width must be >= token width");
    FfnParams p;
    p.w1 = detail::glorot<S>({d, d_ff}, d, d_ff, rng);
    p.b1 = Tensor<S>::zeros({d_ff}, true);
    p.w2 = detail::glorot<S>({d_ff, d}, d_ff, d, rng);
    p.b2 = Tensor<S>::zeros({d}, true);
    return p;
  }
};

template <typename S>
Tensor<S> ffn_forward(const Tensor<S>& x, const FfnParams<S>& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

/// Parameters of one multi-branch sparse self-attention: shared Q/K/V
/// projections, the sparsity fractions alpha, and the learnable per-branch
/// mixing weights Wt.
template <typename S>
struct SparseAttentionParams {
  Tensor<S> w_q, b_q, w_k, b_k, w_v, b_v;
  std::vector<double> alphas;
  Tensor<S> branch_weights;  // [n], initialized to 1/n each
  double scale = 0;          // 1/sqrt(D)

  static SparseAttentionParams glorot(std::size_t d, std::vector<double> alphas, Rng& rng) {
    SparseAttentionParams p;
    p.w_q = detail::glorot<S>({d, d}, d, d, rng);
    p.b_q = Tensor<S>::zeros({d}, true);
    p.w_k = detail::glorot<S>({d, d}, d, d, rng);
    p.b_k = Tensor<S>::zeros({d}, true);
    p.w_v = detail::glorot<S>({d, d}, d, d, rng);
    p.b_v = Tensor<S>::zeros({d}, true);
    p.alphas = std::move(alphas);
    const std::size_t n = p.alphas.size();
    p.branch_weights = Tensor<S>::full({n}, static_cast<S>(1.0 / static_cast<double>(n)), true);
    p.scale = 1.0 / std::sqrt(static_cast<double>(d));
    p.validate();
    return p;
  }

  std::size_t dim() const { return w_q.extent(0); }

  void validate() const {
    if (alphas.empty()) throw ConfigError("SparseAttentionParams: empty alpha schedule");
    if (branch_weights.numel() != alphas.size())
      throw ConfigError("SparseAttentionParams: branch weight count " +
                        std::to_string(branch_weights.numel()) + " != alpha count " +
                        std::to_string(alphas.size()));
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (!(alphas[i] > 0.0) || alphas[i] > 1.0)
        throw ConfigError("SparseAttentionParams: alpha " + std::to_string(alphas[i]) +
                          " outside (0, 1]");
      if (i > 0 && !(alphas[i] > alphas[i - 1]))
        throw ConfigError("SparseAttentionParams: alphas must be strictly increasing");
    }
  }
};

/// k_gamma = floor(alpha_gamma * n_tokens), clamped to n_tokens.
/// Any level reaching 0 is a configuration error.
inline std::vector<std::size_t> sparsity_levels(std::size_t n_tokens,
                                                const std::vector<double>& alphas) {
  if (n_tokens < 2)
    throw ConfigError("sparsity_levels: need at least 2 tokens, got " + std::to_string(n_tokens));
  std::vector<std::size_t> ks;
  ks.reserve(alphas.size());
  for (double a : alphas) {
    const double raw = std::floor(a * static_cast<double>(n_tokens));
    std::size_t k = raw < 0 ? 0 : static_cast<std::size_t>(raw);
    if (k > n_tokens) k = n_tokens;
    if (k == 0)
      throw ConfigError("sparsity_levels: alpha " + std::to_string(a) + " gives k = 0 at " +
                        std::to_string(n_tokens) + " tokens");
    ks.push_back(k);
  }
  return ks;
}

/// Score = Q K^T / sqrt(D)
template <typename S>
Tensor<S> attention_scores(const Tensor<S>& q, const Tensor<S>& k) {
  detail::check_rank(q, 2, "attention_scores");
  detail::check_rank(k, 2, "attention_scores");
  if (q.extent(1) != k.extent(1))
    throw ShapeError("attention_scores: widths differ: " + shape_str(q.shape()) + " vs " +
                     shape_str(k.shape()));
  return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.extent(1))));
}

namespace detail {

/// Builds the masked score tensor for every requested sparsity level with a
/// single per-row argsort. Ties keep the lowest column index; the selection
/// is a constant in backward, so gradients flow only through kept entries.
template <typename S>
std::vector<Tensor<S>> sparse_row_masks(const Tensor<S>& score,
                                        const std::vector<std::size_t>& ks) {
  check_rank(score, 2, "sparse_row_mask");
  const std::size_t m = score.extent(0), n = score.extent(1);
  for (std::size_t k : ks)
    if (k < 1 || k > n)
      throw ConfigError("sparse_row_mask: k = " + std::to_string(k) + " out of range [1, " +
                        std::to_string(n) + "]");
  const S sent = mask_sentinel<S>();
  const auto& sv = score.value();
  std::vector<std::vector<S>> outs(ks.size(), std::vector<S>(m * n, sent));
  std::vector<std::vector<char>> kepts(ks.size(), std::vector<char>(m * n, 0));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < m; ++i) {
    const S* row = sv.data() + i * n;
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Strict weak order: larger value first, lower index first among equals.
    std::sort(idx.begin(), idx.end(), [row](std::size_t a, std::size_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    for (std::size_t g = 0; g < ks.size(); ++g)
      for (std::size_t r = 0; r < ks[g]; ++r) {
        const std::size_t j = idx[r];
        outs[g][i * n + j] = row[j];
        kepts[g][i * n + j] = 1;
      }
  }
  std::vector<Tensor<S>> masks;
  masks.reserve(ks.size());
  auto sn = score.node();
  for (std::size_t g = 0; g < ks.size(); ++g) {
    masks.push_back(
        Tensor<S>::make(score.shape(), std::move(outs[g]), {score},
                        [sn, kept = std::move(kepts[g])](typename Tensor<S>::Node& nd) {
                          for (std::size_t i = 0; i < nd.grad.size(); ++i)
                            if (kept[i]) sn->grad[i] += nd.grad[i];
                        }));
  }
  return masks;
}

}  // namespace detail

/// Keeps the k largest entries of each row and sets the rest to the mask
/// sentinel.
template <typename S>
Tensor<S> sparse_row_mask(const Tensor<S>& score, std::size_t k) {
  return detail::sparse_row_masks(score, {k})[0];
}

/// Multi-branch sparse self-attention, the whole of Eqs. (2)-(5):
/// Q,K,V projections, per-branch top-k masking and row softmax, then the
/// weighted sum Z = sum_gamma Wt_gamma * (M_gamma V).
template <typename S>
Tensor<S> sparse_attention(const Tensor<S>& x, const SparseAttentionParams<S>& p) {
  detail::check_rank(x, 2, "sparse_attention");
  p.validate();
  if (x.extent(1) != p.dim())
    throw ShapeError("sparse_attention: input " + shape_str(x.shape()) +
                     " does not match projection width " + std::to_string(p.dim()));
  const auto levels = sparsity_levels(x.extent(0), p.alphas);

  const Tensor<S> q = linear(x, p.w_q, p.b_q);
  const Tensor<S> k = linear(x, p.w_k, p.b_k);
  const Tensor<S> v = linear(x, p.w_v, p.b_v);
  const Tensor<S> score = attention_scores(q, k);

  const auto masks = detail::sparse_row_masks(score, levels);
  Tensor<S> z;
  for (std::size_t g = 0; g < levels.size(); ++g) {
    const Tensor<S> m = row_softmax(masks[g]);
    const Tensor<S> contrib = scale_by_entry(matmul(m, v), p.branch_weights, g);
    z = g == 0 ? contrib : add(z, contrib);
  }
  return z;
}

/// Sparse Transformer Block parameters: pre-norm attention with an output
/// projection, then a pre-norm GELU feed-forward.
template <typename S>
struct StbParams {
  SparseAttentionParams<S> attn;
  Tensor<S> attn_out_w, attn_out_b;
  LayerNormParams<S> ln1, ln2;
  FfnParams<S> ffn;

  static StbParams glorot(std::size_t d, std::size_t d_ff, std::vector<double> alphas, Rng& rng) {
    StbParams p;
    p.attn = SparseAttentionParams<S>::glorot(d, std::move(alphas), rng);
    p.attn_out_w = detail::glorot<S>({d, d}, d, d, rng);
    p.attn_out_b = Tensor<S>::zeros({d}, true);
    p.ln1 = LayerNormParams<S>::identity(d);
    p.ln2 = LayerNormParams<S>::identity(d);
    p.ffn = FfnParams<S>::glorot(d, d_ff, rng);
    return p;
  }
};

/// y = x + proj(sparse_attention(LN1(x))); out = y + FFN(LN2(y))
template <typename S>
Tensor<S> stb_forward(const Tensor<S>& x, const StbParams<S>& p) {
  const Tensor<S> attn_out =
      linear(sparse_attention(layer_norm(x, p.ln1), p.attn), p.attn_out_w, p.attn_out_b);
  const Tensor<S> y = add(x, attn_out);
  return add(y, ffn_forward(layer_norm(y, p.ln2), p.ffn));
}

}  // namespace sfnet
