#pragma once

#include <utility>

#include "sfnet/common.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/sparse_attention.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

/// Cross-Attention Fusion Block parameters: per-stream layer norms, Q/K/V
/// projections, and per-stream feed-forwards.
template <typename S>
struct CafbParams {
  LayerNormParams<S> ln_h, ln_x;    // before cross-attention
  Tensor<S> w_qh, b_qh, w_kh, b_kh, w_vh, b_vh;
  Tensor<S> w_qx, b_qx, w_kx, b_kx, w_vx, b_vx;
  LayerNormParams<S> ln2_h, ln2_x;  // before the feed-forwards
  FfnParams<S> ffn_h, ffn_x;

  static CafbParams glorot(std::size_t d, std::size_t d_ff, Rng& rng) {
    CafbParams p;
    p.ln_h = LayerNormParams<S>::identity(d);
    p.ln_x = LayerNormParams<S>::identity(d);
    p.w_qh = detail::glorot<S>({d, d}, d, d, rng);
    p.b_qh = Tensor<S>::zeros({d}, true);
    p.w_kh = detail::glorot<S>({d, d}, d, d, rng);
    p.b_kh = Tensor<S>::zeros({d}, true);
    p.w_vh = detail::glorot<S>({d, d}, d, d, rng);
    p.b_vh = Tensor<S>::zeros({d}, true);
    p.w_qx = detail::glorot<S>({d, d}, d, d, rng);
    p.b_qx = Tensor<S>::zeros({d}, true);
    p.w_kx = detail::glorot<S>({d, d}, d, d, rng);
    p.b_kx = Tensor<S>::zeros({d}, true);
    p.w_vx = detail::glorot<S>({d, d}, d, d, rng);
    p.b_vx = Tensor<S>::zeros({d}, true);
    p.ln2_h = LayerNormParams<S>::identity(d);
    p.ln2_x = LayerNormParams<S>::identity(d);
    p.ffn_h = FfnParams<S>::glorot(d, d_ff, rng);
    p.ffn_x = FfnParams<S>::glorot(d, d_ff, rng);
    return p;
  }
};

/// Cross attention exactly as printed:
///   T_H' = softmax(Q_X K_H^T / sqrt(D)) V_H
///   T_X' = softmax(Q_H K_X^T / sqrt(D)) V_X
/// Q/K/V are projections of the given (already normalized) inputs.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> cross_attention(const Tensor<S>& t_h, const Tensor<S>& t_x,
                                                const CafbParams<S>& p) {
  detail::check_same_shape(t_h, t_x, "cross_attention");
  const Tensor<S> qh = linear(t_h, p.w_qh, p.b_qh);
  const Tensor<S> kh = linear(t_h, p.w_kh, p.b_kh);
  const Tensor<S> vh = linear(t_h, p.w_vh, p.b_vh);
  const Tensor<S> qx = linear(t_x, p.w_qx, p.b_qx);
  const Tensor<S> kx = linear(t_x, p.w_kx, p.b_kx);
  const Tensor<S> vx = linear(t_x, p.w_vx, p.b_vx);
  const Tensor<S> th_out = matmul(row_softmax(attention_scores(qx, kh)), vh);
  const Tensor<S> tx_out = matmul(row_softmax(attention_scores(qh, kx)), vx);
  return {th_out, tx_out};
}

/// Full CAFB: cross-attention on normalized streams, residual adds, per-stream
/// feed-forwards, and feature-axis concatenation to [N x 2D].
///
/// The printed form of the X-stream residual adds (T_H + T_H'); by default the
/// symmetric reading (T_X + T_X') is used, with `paper_literal_eq8` restoring
/// the printed formula for comparison.
template <typename S>
Tensor<S> cafb_forward(const Tensor<S>& t_h, const Tensor<S>& t_x, const CafbParams<S>& p,
                       bool paper_literal_eq8 = false) {
  detail::check_same_shape(t_h, t_x, "cafb_forward");
  const auto [dh, dx] = cross_attention(layer_norm(t_h, p.ln_h), layer_norm(t_x, p.ln_x), p);
  const Tensor<S> ah = add(t_h, dh);
  const Tensor<S> ax = add(t_x, dx);
  const Tensor<S> hh = add(ffn_forward(layer_norm(ah, p.ln2_h), p.ffn_h), ah);
  const Tensor<S> x_residual = paper_literal_eq8 ? ah : ax;
  const Tensor<S> xx = add(ffn_forward(layer_norm(ax, p.ln2_x), p.ffn_x), x_residual);
  return concat_cols(hh, xx);
}

}  // namespace sfnet
