#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/cross_fusion.hpp"
#include "sfnet/data_io.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/pca.hpp"
#include "sfnet/serialize.hpp"
#include "sfnet/sparse_attention.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

/// Every architecture hyperparameter in one record.
struct ModelConfig {
  std::size_t patch_size = 11;       // odd
  std::size_t pca_components = 30;   // r
  std::size_t hsi_stem_filters = 8;
  std::size_t hsi_stem_kernel = 3;
  std::size_t aux_stem_filters = 16;
  std::size_t aux_stem_kernel = 3;
  std::size_t aux_channels = 2;      // from the dataset
  std::size_t token_dim = 64;        // D
  std::vector<double> alphas = default_alphas();
  std::size_t stb_depth = 3;
  std::size_t ffn_multiplier = 2;
  std::size_t n_classes = 0;
  bool positional_embeddings = false;
  bool paper_literal_eq8 = false;
  Precision precision = Precision::standard;
  std::uint64_t seed = 0;

  std::size_t n_tokens() const { return patch_size * patch_size; }
  std::size_t ffn_width() const { return ffn_multiplier * token_dim; }

  void validate() const {
    if (patch_size % 2 == 0) throw ConfigError("ModelConfig: patch_size must be odd");
    if (n_tokens() < 2) throw ConfigError("ModelConfig: derived token count must be >= 2");
    if (pca_components < 1) throw ConfigError("ModelConfig: pca_components must be >= 1");
    if (token_dim < 1) throw ConfigError("ModelConfig: token_dim must be >= 1");
    if (stb_depth < 1) throw ConfigError("ModelConfig: stb_depth must be >= 1");
    if (ffn_multiplier < 1) throw ConfigError("ModelConfig: ffn_multiplier must be >= 1");
    if (n_classes < 2) throw ConfigError("ModelConfig: n_classes must be >= 2");
    if (hsi_stem_filters < 1 || aux_stem_filters < 1 || hsi_stem_kernel < 1 ||
        aux_stem_kernel < 1 || aux_channels < 1)
      throw ConfigError("ModelConfig: stem extents must be >= 1");
    sparsity_levels(n_tokens(), alphas);  // throws if any level is empty
  }
};

/// One labeled pixel's co-registered neighborhood from both sources.
template <typename S>
struct PatchSample {
  Tensor<S> hsi;  // [bands x p x p]
  Tensor<S> aux;  // [channels x p x p]
  std::uint16_t label = 0;
  std::uint32_t row = 0, col = 0;
  std::uint32_t pixel = 0;  // row * W + col
};

namespace detail {

// Mirror index without repeating the edge sample.
inline std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) i = -i;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = 2 * static_cast<std::ptrdiff_t>(n) - 2 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// One sample per labeled pixel, mirror-padded at the borders.
template <typename S>
std::vector<PatchSample<S>> extract_patches(const RasterPair<S>& raster, std::size_t patch_size) {
  if (patch_size % 2 == 0) throw ConfigError("extract_patches: patch_size must be odd");
  const std::size_t h = raster.height(), w = raster.width();
  const std::size_t half = patch_size / 2;
  if (half >= h || half >= w)
    throw ConfigError("extract_patches: patch " + std::to_string(patch_size) +
                      " too large for raster " + std::to_string(h) + "x" + std::to_string(w));
  const std::size_t bands = raster.bands(), channels = raster.aux_channels();
  const auto& hv = raster.hsi.value();
  const auto& av = raster.aux.value();

  std::vector<PatchSample<S>> samples;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint16_t label = raster.labels[y * w + x];
      if (label == 0) continue;
      PatchSample<S> s;
      s.label = label;
      s.row = static_cast<std::uint32_t>(y);
      s.col = static_cast<std::uint32_t>(x);
      s.pixel = static_cast<std::uint32_t>(y * w + x);
      std::vector<S> hp(bands * patch_size * patch_size);
      std::vector<S> ap(channels * patch_size * patch_size);
      for (std::size_t dy = 0; dy < patch_size; ++dy) {
        const std::size_t sy = detail::mirror_index(
            static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(half), h);
        for (std::size_t dx = 0; dx < patch_size; ++dx) {
          const std::size_t sx = detail::mirror_index(
              static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(half), w);
          for (std::size_t b = 0; b < bands; ++b)
            hp[(b * patch_size + dy) * patch_size + dx] = hv[(b * h + sy) * w + sx];
          for (std::size_t c = 0; c < channels; ++c)
            ap[(c * patch_size + dy) * patch_size + dx] = av[(c * h + sy) * w + sx];
        }
      }
      s.hsi = Tensor<S>::from({bands, patch_size, patch_size}, std::move(hp));
      s.aux = Tensor<S>::from({channels, patch_size, patch_size}, std::move(ap));
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw DataError("extract_patches: no labeled pixels");
  return samples;
}

/// The full SF-Net: dual conv stems, token projections, three STBs per
/// stream, one CAFB, and a linear classifier over mean-pooled tokens.
template <typename S>
struct SfNetModel {
  ModelConfig config;
  PcaModel<S> pca;

  Tensor<S> hsi_stem_k, hsi_stem_b;      // [F1 x 1 x k x k x k], [F1]
  Tensor<S> aux_stem_k, aux_stem_b;      // [F2 x c x k x k], [F2]
  Tensor<S> tok_proj_h_w, tok_proj_h_b;  // [F1*r x D], [D]
  Tensor<S> tok_proj_x_w, tok_proj_x_b;  // [F2 x D], [D]
  Tensor<S> pos_h, pos_x;                // [N x D] when enabled
  std::vector<StbParams<S>> stb_h, stb_x;
  CafbParams<S> cafb;
  Tensor<S> cls_w, cls_b;                // [2D x C], [C]

  static SfNetModel init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SfNetModel m;
    m.config = cfg;
    const std::size_t r = cfg.pca_components, d = cfg.token_dim, n = cfg.n_tokens();
    const std::size_t f1 = cfg.hsi_stem_filters, k1 = cfg.hsi_stem_kernel;
    const std::size_t f2 = cfg.aux_stem_filters, k2 = cfg.aux_stem_kernel;
    const std::size_t c = cfg.aux_channels;

    const std::size_t kvol1 = k1 * k1 * k1;
    m.hsi_stem_k = detail::glorot<S>({f1, 1, k1, k1, k1}, kvol1, f1 * kvol1, rng);
    m.hsi_stem_b = Tensor<S>::zeros({f1}, true);
    const std::size_t kvol2 = k2 * k2;
    m.aux_stem_k = detail::glorot<S>({f2, c, k2, k2}, c * kvol2, f2 * kvol2, rng);
    m.aux_stem_b = Tensor<S>::zeros({f2}, true);

    m.tok_proj_h_w = detail::glorot<S>({f1 * r, d}, f1 * r, d, rng);
    m.tok_proj_h_b = Tensor<S>::zeros({d}, true);
    m.tok_proj_x_w = detail::glorot<S>({f2, d}, f2, d, rng);
    m.tok_proj_x_b = Tensor<S>::zeros({d}, true);

    if (cfg.positional_embeddings) {
      m.pos_h = detail::glorot<S>({n, d}, n, d, rng);
      m.pos_x = detail::glorot<S>({n, d}, n, d, rng);
    }

    for (std::size_t i = 0; i < cfg.stb_depth; ++i)
      m.stb_h.push_back(StbParams<S>::glorot(d, cfg.ffn_width(), cfg.alphas, rng));
    for (std::size_t i = 0; i < cfg.stb_depth; ++i)
      m.stb_x.push_back(StbParams<S>::glorot(d, cfg.ffn_width(), cfg.alphas, rng));
    m.cafb = CafbParams<S>::glorot(d, cfg.ffn_width(), rng);

    m.cls_w = detail::glorot<S>({2 * d, cfg.n_classes}, 2 * d, cfg.n_classes, rng);
    m.cls_b = Tensor<S>::zeros({cfg.n_classes}, true);
    return m;
  }

  std::vector<std::pair<std::string, Tensor<S>*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    auto put = [&out](const std::string& name, Tensor<S>& t) { out.emplace_back(name, &t); };
    auto put_ln = [&put](const std::string& p, LayerNormParams<S>& ln) {
      put(p + ".gamma", ln.gamma);
      put(p + ".beta", ln.beta);
    };
    auto put_ffn = [&put](const std::string& p, FfnParams<S>& f) {
      put(p + ".w1", f.w1);
      put(p + ".b1", f.b1);
      put(p + ".w2", f.w2);
      put(p + ".b2", f.b2);
    };
    auto put_stb = [&](const std::string& p, StbParams<S>& s) {
      put(p + ".attn.w_q", s.attn.w_q);
      put(p + ".attn.b_q", s.attn.b_q);
      put(p + ".attn.w_k", s.attn.w_k);
      put(p + ".attn.b_k", s.attn.b_k);
      put(p + ".attn.w_v", s.attn.w_v);
      put(p + ".attn.b_v", s.attn.b_v);
      put(p + ".attn.branch_weights", s.attn.branch_weights);
      put(p + ".attn_out.w", s.attn_out_w);
      put(p + ".attn_out.b", s.attn_out_b);
      put_ln(p + ".ln1", s.ln1);
      put_ln(p + ".ln2", s.ln2);
      put_ffn(p + ".ffn", s.ffn);
    };

    put("hsi_stem.kernels", hsi_stem_k);
    put("hsi_stem.bias", hsi_stem_b);
    put("aux_stem.kernels", aux_stem_k);
    put("aux_stem.bias", aux_stem_b);
    put("tok_proj_h.w", tok_proj_h_w);
    put("tok_proj_h.b", tok_proj_h_b);
    put("tok_proj_x.w", tok_proj_x_w);
    put("tok_proj_x.b", tok_proj_x_b);
    if (config.positional_embeddings) {
      put("pos_emb.h", pos_h);
      put("pos_emb.x", pos_x);
    }
    for (std::size_t i = 0; i < stb_h.size(); ++i)
      put_stb("stb_h." + std::to_string(i), stb_h[i]);
    for (std::size_t i = 0; i < stb_x.size(); ++i)
      put_stb("stb_x." + std::to_string(i), stb_x[i]);
    put_ln("cafb.ln_h", cafb.ln_h);
    put_ln("cafb.ln_x", cafb.ln_x);
    put("cafb.w_qh", cafb.w_qh);
    put("cafb.b_qh", cafb.b_qh);
    put("cafb.w_kh", cafb.w_kh);
    put("cafb.b_kh", cafb.b_kh);
    put("cafb.w_vh", cafb.w_vh);
    put("cafb.b_vh", cafb.b_vh);
    put("cafb.w_qx", cafb.w_qx);
    put("cafb.b_qx", cafb.b_qx);
    put("cafb.w_kx", cafb.w_kx);
    put("cafb.b_kx", cafb.b_kx);
    put("cafb.w_vx", cafb.w_vx);
    put("cafb.b_vx", cafb.b_vx);
    put_ln("cafb.ln2_h", cafb.ln2_h);
    put_ln("cafb.ln2_x", cafb.ln2_x);
    put_ffn("cafb.ffn_h", cafb.ffn_h);
    put_ffn("cafb.ffn_x", cafb.ffn_x);
    put("classifier.w", cls_w);
    put("classifier.b", cls_b);
    return out;
  }

  std::vector<Tensor<S>*> parameters() {
    std::vector<Tensor<S>*> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }
};

/// Full forward pass: stems, tokenization, STB stacks, CAFB, classifier.
/// Returns logits [n_classes].
template <typename S>
Tensor<S> sfnet_forward(const SfNetModel<S>& model, const Tensor<S>& hsi_patch,
                        const Tensor<S>& aux_patch) {
  const auto& cfg = model.config;
  const std::size_t p = cfg.patch_size, r = cfg.pca_components, n = cfg.n_tokens();
  const std::size_t d = cfg.token_dim;

  if (hsi_patch.shape() != Shape{r, p, p})
    throw ShapeError("sfnet_forward (hsi_stem): patch " + shape_str(hsi_patch.shape()) +
                     ", expected " + shape_str({r, p, p}));
  if (aux_patch.shape() != Shape{cfg.aux_channels, p, p})
    throw ShapeError("sfnet_forward (aux_stem): patch " + shape_str(aux_patch.shape()) +
                     ", expected " + shape_str({cfg.aux_channels, p, p}));

  // HSI stream: 3-D conv over the reduced spectral axis, flatten filters x
  // bands into the token feature width, one token per spatial position.
  const Tensor<S> h3 = reshape(hsi_patch, {1, r, p, p});
  const Tensor<S> hfeat =
      gelu(add_channel_bias(conv3d(h3, model.hsi_stem_k, 1, Padding::same), model.hsi_stem_b));
  const Tensor<S> htokens = transpose(reshape(hfeat, {cfg.hsi_stem_filters * r, n}));
  Tensor<S> th = linear(htokens, model.tok_proj_h_w, model.tok_proj_h_b);

  const Tensor<S> afeat =
      gelu(add_channel_bias(conv2d(aux_patch, model.aux_stem_k, 1, Padding::same),
                            model.aux_stem_b));
  const Tensor<S> atokens = transpose(reshape(afeat, {cfg.aux_stem_filters, n}));
  Tensor<S> tx = linear(atokens, model.tok_proj_x_w, model.tok_proj_x_b);

  if (th.shape() != tx.shape() || th.shape() != Shape{n, d})
    throw ShapeError("sfnet_forward (tokenization): streams " + shape_str(th.shape()) + " vs " +
                     shape_str(tx.shape()) + ", expected " + shape_str({n, d}));

  if (cfg.positional_embeddings) {
    th = add(th, model.pos_h);
    tx = add(tx, model.pos_x);
  }

  for (const auto& stb : model.stb_h) th = stb_forward(th, stb);
  for (const auto& stb : model.stb_x) tx = stb_forward(tx, stb);

  const Tensor<S> fused = cafb_forward(th, tx, model.cafb, cfg.paper_literal_eq8);
  const Tensor<S> pooled = mean_rows(fused);  // [1 x 2D]
  const Tensor<S> logits = linear(pooled, model.cls_w, model.cls_b);
  return reshape(logits, {cfg.n_classes});
}

// ---------------------------------------------------------------------------
// Checkpoint mapping (SFNM container).

namespace detail {

template <typename S>
TensorEntry to_entry(const std::string& name, const Tensor<S>& t) {
  TensorEntry e;
  e.name = name;
  e.shape = t.shape();
  e.data.assign(t.value().begin(), t.value().end());
  return e;
}

inline TensorEntry scalar_entry(const std::string& name, double v) {
  return TensorEntry{name, {1}, {v}};
}

}  // namespace detail

template <typename S>
std::vector<TensorEntry> model_to_entries(SfNetModel<S>& model,
                                          const std::vector<TensorEntry>& extras = {}) {
  const auto& cfg = model.config;
  std::vector<TensorEntry> entries;
  entries.push_back(detail::scalar_entry("config/patch_size", static_cast<double>(cfg.patch_size)));
  entries.push_back(
      detail::scalar_entry("config/pca_components", static_cast<double>(cfg.pca_components)));
  entries.push_back(
      detail::scalar_entry("config/hsi_stem_filters", static_cast<double>(cfg.hsi_stem_filters)));
  entries.push_back(
      detail::scalar_entry("config/hsi_stem_kernel", static_cast<double>(cfg.hsi_stem_kernel)));
  entries.push_back(
      detail::scalar_entry("config/aux_stem_filters", static_cast<double>(cfg.aux_stem_filters)));
  entries.push_back(
      detail::scalar_entry("config/aux_stem_kernel", static_cast<double>(cfg.aux_stem_kernel)));
  entries.push_back(
      detail::scalar_entry("config/aux_channels", static_cast<double>(cfg.aux_channels)));
  entries.push_back(detail::scalar_entry("config/token_dim", static_cast<double>(cfg.token_dim)));
  entries.push_back(TensorEntry{"config/alphas", {cfg.alphas.size()}, cfg.alphas});
  entries.push_back(detail::scalar_entry("config/stb_depth", static_cast<double>(cfg.stb_depth)));
  entries.push_back(
      detail::scalar_entry("config/ffn_multiplier", static_cast<double>(cfg.ffn_multiplier)));
  entries.push_back(detail::scalar_entry("config/n_classes", static_cast<double>(cfg.n_classes)));
  entries.push_back(detail::scalar_entry("config/positional_embeddings",
                                         cfg.positional_embeddings ? 1.0 : 0.0));
  entries.push_back(
      detail::scalar_entry("config/paper_literal_eq8", cfg.paper_literal_eq8 ? 1.0 : 0.0));
  entries.push_back(detail::scalar_entry(
      "config/precision", cfg.precision == Precision::verification ? 1.0 : 0.0));
  entries.push_back(detail::scalar_entry("config/seed", static_cast<double>(cfg.seed)));

  if (model.pca.mean.defined()) {
    entries.push_back(detail::to_entry("pca/mean", model.pca.mean));
    entries.push_back(detail::to_entry("pca/components", model.pca.components));
    TensorEntry ev{"pca/explained_variance", {model.pca.explained_variance.size()}, {}};
    ev.data.assign(model.pca.explained_variance.begin(), model.pca.explained_variance.end());
    entries.push_back(std::move(ev));
  }

  for (auto& [name, t] : model.named_parameters())
    entries.push_back(detail::to_entry("param/" + name, *t));
  for (const auto& e : extras) entries.push_back(e);
  return entries;
}

template <typename S>
void save_model(const std::string& path, SfNetModel<S>& model,
                const std::vector<TensorEntry>& extras = {}) {
  write_named_tensors(path, model_to_entries(model, extras));
}

template <typename S>
struct LoadedModel {
  SfNetModel<S> model;
  std::vector<TensorEntry> extras;  // non-config, non-param entries
};

template <typename S>
LoadedModel<S> load_model(const std::string& path) {
  const auto entries = read_named_tensors(path);
  std::map<std::string, const TensorEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  auto need = [&](const std::string& name) -> const TensorEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(path + ": missing entry " + name);
    return *it->second;
  };
  auto scalar = [&](const std::string& name) { return need(name).data.at(0); };

  ModelConfig cfg;
  cfg.patch_size = static_cast<std::size_t>(scalar("config/patch_size"));
  cfg.pca_components = static_cast<std::size_t>(scalar("config/pca_components"));
  cfg.hsi_stem_filters = static_cast<std::size_t>(scalar("config/hsi_stem_filters"));
  cfg.hsi_stem_kernel = static_cast<std::size_t>(scalar("config/hsi_stem_kernel"));
  cfg.aux_stem_filters = static_cast<std::size_t>(scalar("config/aux_stem_filters"));
  cfg.aux_stem_kernel = static_cast<std::size_t>(scalar("config/aux_stem_kernel"));
  cfg.aux_channels = static_cast<std::size_t>(scalar("config/aux_channels"));
  cfg.token_dim = static_cast<std::size_t>(scalar("config/token_dim"));
  cfg.alphas = need("config/alphas").data;
  cfg.stb_depth = static_cast<std::size_t>(scalar("config/stb_depth"));
  cfg.ffn_multiplier = static_cast<std::size_t>(scalar("config/ffn_multiplier"));
  cfg.n_classes = static_cast<std::size_t>(scalar("config/n_classes"));
  cfg.positional_embeddings = scalar("config/positional_embeddings") != 0.0;
  cfg.paper_literal_eq8 = scalar("config/paper_literal_eq8") != 0.0;
  cfg.precision =
      scalar("config/precision") != 0.0 ? Precision::verification : Precision::standard;
  cfg.seed = static_cast<std::uint64_t>(scalar("config/seed"));

  LoadedModel<S> loaded{SfNetModel<S>::init(cfg), {}};
  auto fill = [&](const std::string& name, Tensor<S>& t) {
    const TensorEntry& e = need(name);
    if (e.shape != t.shape())
      throw DataError(path + ": entry " + name + " has shape " + shape_str(e.shape) +
                      ", expected " + shape_str(t.shape()));
    auto& vals = t.raw_value();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<S>(e.data[i]);
  };
  for (auto& [name, t] : loaded.model.named_parameters()) fill("param/" + name, *t);

  if (by_name.count("pca/mean")) {
    const TensorEntry& mean = need("pca/mean");
    const TensorEntry& comp = need("pca/components");
    const TensorEntry& ev = need("pca/explained_variance");
    std::vector<S> mv(mean.data.begin(), mean.data.end());
    std::vector<S> cv(comp.data.begin(), comp.data.end());
    loaded.model.pca.mean = Tensor<S>::from(mean.shape, std::move(mv));
    loaded.model.pca.components = Tensor<S>::from(comp.shape, std::move(cv));
    loaded.model.pca.explained_variance.assign(ev.data.begin(), ev.data.end());
  }

  for (const auto& e : entries) {
    if (e.name.rfind("config/", 0) != 0 && e.name.rfind("param/", 0) != 0 &&
        e.name.rfind("pca/", 0) != 0)
      loaded.extras.push_back(e);
  }
  return loaded;
}

}  // namespace sfnet
