#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sfnet/backbone.hpp"
#include "sfnet/common.hpp"
#include "sfnet/data_io.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

/// -log softmax(logits)[label], stabilized with max subtraction.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::size_t label) {
  if (logits.rank() > 2 || (logits.rank() == 2 && logits.extent(0) != 1))
    throw ShapeError("cross_entropy: logits must be a vector, got " + shape_str(logits.shape()));
  const std::size_t c = logits.numel();
  if (label >= c)
    throw ConfigError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                      std::to_string(c) + ")");
  const auto& lv = logits.value();
  S mx = lv[0];
  for (S v : lv) mx = std::max(mx, v);
  S sum = S(0);
  for (S v : lv) sum += std::exp(v - mx);
  const S loss = std::log(sum) + mx - lv[label];
  auto ln = logits.node();
  return Tensor<S>::make(
      {1}, {loss}, {logits},
      [ln, label, mx, sum](typename Tensor<S>::Node& nd) {
        const S g = nd.grad[0];
        for (std::size_t j = 0; j < ln->value.size(); ++j) {
          const S soft = std::exp(ln->value[j] - mx) / sum;
          ln->grad[j] += g * (soft - (j == label ? S(1) : S(0)));
        }
      });
}

/// Adam with bias correction. Moment buffers share the parameter precision.
template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor<S>*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr < 0) throw ConfigError("AdamOptimizer: learning rate must be >= 0");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->numel(), S(0));
      v_[i].assign(params_[i]->numel(), S(0));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// One update from the currently accumulated gradients times grad_scale.
  void step(double grad_scale = 1.0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& vals = params_[i]->raw_value();
      const auto& grad = params_[i]->grad();
      for (std::size_t j = 0; j < vals.size(); ++j) {
        const S g = grad[j] * static_cast<S>(grad_scale);
        m_[i][j] = static_cast<S>(beta1_) * m_[i][j] + static_cast<S>(1.0 - beta1_) * g;
        v_[i][j] = static_cast<S>(beta2_) * v_[i][j] + static_cast<S>(1.0 - beta2_) * g * g;
        const S mhat = m_[i][j] / static_cast<S>(bc1);
        const S vhat = v_[i][j] / static_cast<S>(bc2);
        vals[j] -= static_cast<S>(lr_) * mhat / (std::sqrt(vhat) + static_cast<S>(eps_));
      }
    }
  }

 private:
  std::vector<Tensor<S>*> params_;
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // written after training when non-empty

  void validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (lr < 0) throw ConfigError("TrainConfig: learning rate must be >= 0");
  }
};

struct EpochStats {
  double loss = 0;
  double accuracy = 0;
};

/// Confusion-matrix metrics; rows index the true class.
struct Metrics {
  std::vector<std::vector<std::uint64_t>> confusion;  // [C][C]
  std::vector<double> per_class_acc;                  // [C], 0 for empty rows
  double oa = 0;
};

inline Metrics metrics_from_confusion(std::vector<std::vector<std::uint64_t>> confusion) {
  Metrics m;
  m.confusion = std::move(confusion);
  const std::size_t c = m.confusion.size();
  m.per_class_acc.assign(c, 0.0);
  std::uint64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < c; ++i) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < c; ++j) row += m.confusion[i][j];
    total += row;
    correct += m.confusion[i][i];
    if (row > 0)
      m.per_class_acc[i] =
          static_cast<double>(m.confusion[i][i]) / static_cast<double>(row);
  }
  m.oa = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return m;
}

/// Assembles metrics from parallel prediction/truth lists (labels 1..C).
inline Metrics confusion_metrics(const std::vector<std::uint16_t>& truths,
                                 const std::vector<std::uint16_t>& preds, std::size_t n_classes) {
  if (truths.size() != preds.size())
    throw ConfigError("confusion_metrics: prediction/label counts differ");
  std::vector<std::vector<std::uint64_t>> confusion(n_classes,
                                                    std::vector<std::uint64_t>(n_classes, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] == 0 || truths[i] > n_classes || preds[i] == 0 || preds[i] > n_classes)
      throw ConfigError("confusion_metrics: class id out of range");
    ++confusion[truths[i] - 1][preds[i] - 1];
  }
  return metrics_from_confusion(std::move(confusion));
}

namespace detail {

/// Lowest-index argmax.
template <typename S>
std::size_t argmax(const std::vector<S>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Maps pixel indices to positions in the extracted sample list.
template <typename S>
std::vector<std::size_t> sample_positions(const std::vector<PatchSample<S>>& samples,
                                          const std::vector<std::uint32_t>& pixels) {
  std::vector<std::uint32_t> keys(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) keys[i] = samples[i].pixel;
  std::vector<std::size_t> out;
  out.reserve(pixels.size());
  for (std::uint32_t px : pixels) {
    auto it = std::lower_bound(keys.begin(), keys.end(), px);
    if (it == keys.end() || *it != px)
      throw DataError("split references pixel " + std::to_string(px) +
                      " with no extracted sample");
    out.push_back(static_cast<std::size_t>(it - keys.begin()));
  }
  return out;
}

}  // namespace detail

/// Adam training over the train split: fixed shuffled order per (seed, epoch),
/// batched gradient accumulation, deterministic end to end. Aborts on a
/// non-finite loss. Writes the checkpoint when configured.
template <typename S>
std::vector<EpochStats> train(SfNetModel<S>& model, const std::vector<PatchSample<S>>& samples,
                              const SplitSpec& split, const TrainConfig& cfg) {
  cfg.validate();
  const auto positions = detail::sample_positions(samples, split.train_indices);
  if (positions.empty()) throw DataError("train: empty train split");

  AdamOptimizer<S> opt(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  std::vector<EpochStats> history;
  history.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = positions;
    Rng rng(mix_seed(cfg.seed, epoch));
    shuffle(order, rng);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bn = std::min(cfg.batch_size, order.size() - start);
      opt.zero_grad();
      for (std::size_t b = 0; b < bn; ++b) {
        const PatchSample<S>& s = samples[order[start + b]];
        const Tensor<S> logits = sfnet_forward(model, s.hsi, s.aux);
        const Tensor<S> loss = cross_entropy(logits, static_cast<std::size_t>(s.label - 1));
        const double l = static_cast<double>(loss.item());
        if (!std::isfinite(l))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(start / cfg.batch_size) + ", sample " +
                             std::to_string(order[start + b]));
        loss_sum += l;
        if (detail::argmax(logits.value()) == static_cast<std::size_t>(s.label - 1)) ++correct;
        loss.backward();
      }
      opt.step(1.0 / static_cast<double>(bn));
    }
    history.push_back({loss_sum / static_cast<double>(order.size()),
                       static_cast<double>(correct) / static_cast<double>(order.size())});
  }

  if (!cfg.checkpoint_path.empty()) {
    std::vector<TensorEntry> extras;
    extras.push_back(detail::scalar_entry("train/split_fraction", split.train_fraction));
    extras.push_back(
        detail::scalar_entry("train/split_seed", static_cast<double>(split.seed)));
    save_model(cfg.checkpoint_path, model, extras);
  }
  return history;
}

/// Classifies the test split (read-only model, samples may run concurrently,
/// aggregation in fixed order) and assembles the confusion metrics.
template <typename S>
Metrics evaluate(const SfNetModel<S>& model, const std::vector<PatchSample<S>>& samples,
                 const SplitSpec& split) {
  const auto positions = detail::sample_positions(samples, split.test_indices);
  if (positions.empty()) throw DataError("evaluate: empty test split");

  std::vector<std::uint16_t> preds(positions.size()), truths(positions.size());
#ifdef _OPENMP
#pragma omp parallel
  {
    NoGradGuard ng;
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const PatchSample<S>& s = samples[positions[i]];
      const Tensor<S> logits = sfnet_forward(model, s.hsi, s.aux);
      preds[i] = static_cast<std::uint16_t>(detail::argmax(logits.value()) + 1);
      truths[i] = s.label;
    }
  }
#else
  NoGradGuard ng;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const PatchSample<S>& s = samples[positions[i]];
    const Tensor<S> logits = sfnet_forward(model, s.hsi, s.aux);
    preds[i] = static_cast<std::uint16_t>(detail::argmax(logits.value()) + 1);
    truths[i] = s.label;
  }
#endif
  return confusion_metrics(truths, preds, model.config.n_classes);
}

/// Applies the model's fitted PCA to a raw raster, yielding the reduced pair
/// the network consumes.
template <typename S>
RasterPair<S> reduce_raster(const SfNetModel<S>& model, const RasterPair<S>& raster) {
  if (!model.pca.mean.defined()) throw ConfigError("reduce_raster: model has no fitted PCA");
  const std::size_t bands = raster.bands(), h = raster.height(), w = raster.width();
  const auto& hv = raster.hsi.value();
  std::vector<S> spectra(h * w * bands);
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t i = 0; i < h * w; ++i) spectra[i * bands + b] = hv[b * h * w + i];
  const Tensor<S> reduced =
      pca_transform(model.pca, Tensor<S>::from({h * w, bands}, std::move(spectra)));
  const std::size_t r = model.pca.retained();
  std::vector<S> cube(r * h * w);
  const auto& rv = reduced.value();
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < r; ++k) cube[k * h * w + i] = rv[i * r + k];
  RasterPair<S> out;
  out.hsi = Tensor<S>::from({r, h, w}, std::move(cube));
  out.aux = raster.aux;
  out.labels = raster.labels;
  out.class_names = raster.class_names;
  return out;
}

/// Fixed 20-entry class palette for classification maps.
inline const std::array<std::array<std::uint8_t, 3>, 20>& class_palette() {
  static const std::array<std::array<std::uint8_t, 3>, 20> palette = {{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},   {245, 130, 48},
      {145, 30, 180},  {70, 240, 240},  {240, 50, 230},  {210, 245, 60},  {250, 190, 190},
      {0, 128, 128},   {230, 190, 255}, {170, 110, 40},  {255, 250, 200}, {128, 0, 0},
      {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},     {128, 128, 128},
  }};
  return palette;
}

/// Classifies every labeled pixel and writes a binary P6 portable pixmap:
/// unlabeled pixels black, class c colored by the fixed palette.
template <typename S>
void export_map(const SfNetModel<S>& model, const RasterPair<S>& raster, const std::string& path) {
  const RasterPair<S> reduced = reduce_raster(model, raster);
  const auto samples = extract_patches(reduced, model.config.patch_size);
  const std::size_t h = raster.height(), w = raster.width();

  std::vector<std::uint16_t> pred_map(h * w, 0);
#ifdef _OPENMP
#pragma omp parallel
  {
    NoGradGuard ng;
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor<S> logits = sfnet_forward(model, samples[i].hsi, samples[i].aux);
      pred_map[samples[i].row * w + samples[i].col] =
          static_cast<std::uint16_t>(detail::argmax(logits.value()) + 1);
    }
  }
#else
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor<S> logits = sfnet_forward(model, samples[i].hsi, samples[i].aux);
      pred_map[samples[i].row * w + samples[i].col] =
          static_cast<std::uint16_t>(detail::argmax(logits.value()) + 1);
    }
  }
#endif

  std::vector<std::uint8_t> bytes;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (std::size_t i = 0; i < h * w; ++i) {
    if (pred_map[i] == 0) {
      bytes.insert(bytes.end(), {0, 0, 0});
    } else {
      const auto& rgb = class_palette()[(pred_map[i] - 1) % class_palette().size()];
      bytes.insert(bytes.end(), rgb.begin(), rgb.end());
    }
  }
  detail::write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------
// Reports.

inline std::string format_metrics_report(const Metrics& m,
                                         const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  for (std::size_t i = 0; i < m.per_class_acc.size(); ++i) {
    const std::string name = i < class_names.size() ? class_names[i] : "";
    std::uint64_t row = 0;
    for (std::uint64_t v : m.confusion[i]) row += v;
    out << "class " << (i + 1) << " (" << name << "): accuracy " << m.per_class_acc[i]
        << " over " << row << " samples\n";
  }
  out << "OA: " << m.oa << "\n";
  out << "confusion (rows = truth):\n";
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << "\n";
  }
  return out.str();
}

inline void write_metrics_csv(const std::string& path, const Metrics& m,
                              const std::vector<std::string>& class_names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "class,name,count,correct,accuracy\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  std::uint64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < m.per_class_acc.size(); ++i) {
    std::uint64_t row = 0;
    for (std::uint64_t v : m.confusion[i]) row += v;
    total += row;
    correct += m.confusion[i][i];
    out << (i + 1) << "," << (i < class_names.size() ? class_names[i] : "") << "," << row << ","
        << m.confusion[i][i] << "," << m.per_class_acc[i] << "\n";
  }
  out << "OA,overall," << total << "," << correct << "," << m.oa << "\n";
}

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "epoch,loss,accuracy\n";
  out.setf(std::ios::fixed);
  out.precision(9);
  for (std::size_t i = 0; i < history.size(); ++i)
    out << i << "," << history[i].loss << "," << history[i].accuracy << "\n";
}

}  // namespace sfnet
