#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sfnet/sfnet.hpp"
#include "test_util.hpp"

namespace sfnet {
namespace {

TEST(Metrics, IdentitiesHoldOnRandomConfusions) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t c = 2 + rng.below(5);
    std::vector<std::vector<std::uint64_t>> confusion(c, std::vector<std::uint64_t>(c, 0));
    std::uint64_t total = 0, diag = 0;
    for (auto& row : confusion)
      for (auto& v : row) {
        v = rng.below(20);
        total += v;
      }
    for (std::size_t i = 0; i < c; ++i) diag += confusion[i][i];
    if (total == 0) continue;
    auto m = metrics_from_confusion(confusion);
    EXPECT_DOUBLE_EQ(m.oa, static_cast<double>(diag) / static_cast<double>(total));
    for (std::size_t i = 0; i < c; ++i) {
      std::uint64_t row = 0;
      for (auto v : confusion[i]) row += v;
      if (row > 0)
        EXPECT_DOUBLE_EQ(m.per_class_acc[i],
                         static_cast<double>(confusion[i][i]) / static_cast<double>(row));
    }
  }
}

TEST(Metrics, HandCountedConfusion) {
  // confusion [[3,1],[0,4]] -> oa 7/8, per-class [0.75, 1.0]
  auto m = metrics_from_confusion({{3, 1}, {0, 4}});
  EXPECT_DOUBLE_EQ(m.oa, 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(m.per_class_acc[0], 0.75);
  EXPECT_DOUBLE_EQ(m.per_class_acc[1], 1.0);
}

TEST(Metrics, PerfectPredictionsGiveDiagonalConfusion) {
  std::vector<std::uint16_t> labels;
  for (std::uint16_t c = 1; c <= 3; ++c)
    for (int i = 0; i < 5; ++i) labels.push_back(c);
  auto m = confusion_metrics(labels, labels, 3);
  EXPECT_DOUBLE_EQ(m.oa, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m.confusion[i][i], 5u);
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) EXPECT_EQ(m.confusion[i][j], 0u);
  }
}

TEST(Metrics, MatchesBruteForceRecountOracle) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    const std::size_t c = 2 + rng.below(4);
    std::vector<std::uint16_t> truths(40), preds(40);
    for (std::size_t i = 0; i < 40; ++i) {
      truths[i] = static_cast<std::uint16_t>(1 + rng.below(c));
      preds[i] = static_cast<std::uint16_t>(1 + rng.below(c));
    }
    auto m = confusion_metrics(truths, preds, c);
    // Brute-force recount.
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 40; ++i)
      if (truths[i] == preds[i]) ++correct;
    EXPECT_EQ(m.oa, static_cast<double>(correct) / 40.0);
    for (std::size_t a = 1; a <= c; ++a)
      for (std::size_t b = 1; b <= c; ++b) {
        std::uint64_t count = 0;
        for (std::size_t i = 0; i < 40; ++i)
          if (truths[i] == a && preds[i] == b) ++count;
        EXPECT_EQ(m.confusion[a - 1][b - 1], count);
      }
  }
}

// Small end-to-end fixture shared by the training tests.
struct ToyPipeline {
  RasterPair<float> raster;
  std::vector<PatchSample<float>> samples;
  SplitSpec split;
  SfNetModel<float> model;
};

ToyPipeline make_toy(std::uint64_t seed, double fraction = 0.3) {
  ToyPipeline t;
  t.raster = synth_generate<float>(2, 10, 10, 6, 1, seed);

  ModelConfig cfg;
  cfg.patch_size = 3;
  cfg.pca_components = 2;
  cfg.hsi_stem_filters = 2;
  cfg.aux_stem_filters = 2;
  cfg.aux_channels = 1;
  cfg.token_dim = 6;
  cfg.stb_depth = 1;
  cfg.n_classes = 2;
  cfg.seed = seed;
  t.model = SfNetModel<float>::init(cfg);

  const std::size_t hw = 100, bands = 6;
  std::vector<float> spectra(hw * bands);
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t i = 0; i < hw; ++i) spectra[i * bands + b] = t.raster.hsi.value()[b * hw + i];
  t.model.pca = pca_fit(Tensor<float>::from({hw, bands}, std::move(spectra)), 2);

  t.samples = extract_patches(reduce_raster(t.model, t.raster), 3);
  t.split = stratified_split(t.raster.labels, fraction, seed);
  return t;
}

TEST(Train, ZeroLearningRateLeavesParametersBitIdentical) {
  auto t = make_toy(3);
  std::vector<std::vector<float>> before;
  for (auto* p : t.model.parameters()) before.push_back(p->value());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.lr = 0.0;
  cfg.seed = 3;
  train(t.model, t.samples, t.split, cfg);
  auto params = t.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    EXPECT_EQ(params[i]->value(), before[i]) << "parameter " << i;
}

TEST(Train, OverfitsOneSample) {
  auto t = make_toy(5);
  SplitSpec one;
  one.train_fraction = 0.01;
  one.seed = 5;
  one.train_indices = {t.samples[11].pixel};
  for (const auto& s : t.samples)
    if (s.pixel != t.samples[11].pixel) one.test_indices.push_back(s.pixel);

  TrainConfig cfg;
  cfg.epochs = 200;  // one sample per epoch -> 200 steps
  cfg.batch_size = 1;
  cfg.lr = 1e-3;
  cfg.seed = 5;
  auto history = train(t.model, t.samples, one, cfg);
  ASSERT_EQ(history.size(), 200u);
  EXPECT_LT(history.back().loss, 0.01);
}

TEST(Train, SameSeedGivesIdenticalHistoryAndWeights) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.seed = 11;

  auto t1 = make_toy(11);
  auto h1 = train(t1.model, t1.samples, t1.split, cfg);
  auto t2 = make_toy(11);
  auto h2 = train(t2.model, t2.samples, t2.split, cfg);

  ASSERT_EQ(h1.size(), h2.size());
  for (std::size_t e = 0; e < h1.size(); ++e) {
    EXPECT_EQ(h1[e].loss, h2[e].loss) << "epoch " << e;
    EXPECT_EQ(h1[e].accuracy, h2[e].accuracy) << "epoch " << e;
  }
  auto p1 = t1.model.parameters(), p2 = t2.model.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i]->value(), p2[i]->value());
}

TEST(Train, DivergenceAbortsWithNumericError) {
  auto t = make_toy(13);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.lr = 1e18;  // guaranteed blow-up at standard precision
  cfg.seed = 13;
  EXPECT_THROW(train(t.model, t.samples, t.split, cfg), NumericError);
}

TEST(Train, InvalidConfigRejected) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.batch_size = 1;
  cfg.lr = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Evaluate, ConfusionCoversTestSplitExactly) {
  auto t = make_toy(17);
  auto m = evaluate(t.model, t.samples, t.split);
  std::uint64_t total = 0;
  for (const auto& row : m.confusion)
    for (auto v : row) total += v;
  EXPECT_EQ(total, t.split.test_indices.size());
  // Determinism of evaluation.
  auto m2 = evaluate(t.model, t.samples, t.split);
  EXPECT_EQ(m.confusion, m2.confusion);
  EXPECT_EQ(m.oa, m2.oa);
}

TEST(Evaluate, LearnsToyTaskAboveChance) {
  auto t = make_toy(19);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.seed = 19;
  train(t.model, t.samples, t.split, cfg);
  auto m = evaluate(t.model, t.samples, t.split);
  EXPECT_GT(m.oa, 0.9);
}

TEST(ExportMap, ConstantModelPaintsPaletteColor) {
  auto t = make_toy(23);
  // Force constant class-1 predictions through the classifier bias.
  std::fill(t.model.cls_w.raw_value().begin(), t.model.cls_w.raw_value().end(), 0.0f);
  t.model.cls_b.raw_value() = {5.0f, -5.0f};

  // 4x4 raster, two labeled pixels of class 1, rest unlabeled.
  RasterPair<float> rp;
  Rng rng(23);
  rp.hsi = Tensor<float>::uniform({6, 4, 4}, rng, 0, 1);
  rp.aux = Tensor<float>::uniform({1, 4, 4}, rng, 0, 1);
  rp.labels.assign(16, 0);
  rp.labels[5] = 1;
  rp.labels[6] = 1;
  rp.class_names = {"one", "two"};

  const std::string path = testing::TempDir() + "/map.ppm";
  export_map(t.model, rp, path);
  auto bytes = detail::read_file_bytes(path);
  const std::string header = "P6\n4 4\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 16 * 3);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  const auto& palette = class_palette();
  for (std::size_t px = 0; px < 16; ++px) {
    const std::uint8_t* rgb = bytes.data() + header.size() + px * 3;
    if (px == 5 || px == 6) {
      EXPECT_EQ(rgb[0], palette[0][0]);
      EXPECT_EQ(rgb[1], palette[0][1]);
      EXPECT_EQ(rgb[2], palette[0][2]);
    } else {
      EXPECT_EQ(rgb[0], 0);
      EXPECT_EQ(rgb[1], 0);
      EXPECT_EQ(rgb[2], 0);
    }
  }

  // Byte-identical on a second run.
  const std::string path2 = testing::TempDir() + "/map2.ppm";
  export_map(t.model, rp, path2);
  EXPECT_EQ(detail::read_file_bytes(path2), bytes);
}

TEST(ExportMap, FullyLabeledTinyRasterIsUniform) {
  // 2x2 raster, all labels class 1, constant-class-1 model: four identical
  // palette-1 pixels.
  auto t = make_toy(29);
  std::fill(t.model.cls_w.raw_value().begin(), t.model.cls_w.raw_value().end(), 0.0f);
  t.model.cls_b.raw_value() = {3.0f, -3.0f};

  RasterPair<float> rp;
  Rng rng(29);
  rp.hsi = Tensor<float>::uniform({6, 2, 2}, rng, 0, 1);
  rp.aux = Tensor<float>::uniform({1, 2, 2}, rng, 0, 1);
  rp.labels.assign(4, 1);
  rp.class_names = {"one", "two"};

  const std::string path = testing::TempDir() + "/tiny_map.ppm";
  export_map(t.model, rp, path);
  auto bytes = detail::read_file_bytes(path);
  const std::string header = "P6\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 4 * 3);
  const auto& rgb = class_palette()[0];
  for (std::size_t px = 0; px < 4; ++px) {
    EXPECT_EQ(bytes[header.size() + px * 3 + 0], rgb[0]);
    EXPECT_EQ(bytes[header.size() + px * 3 + 1], rgb[1]);
    EXPECT_EQ(bytes[header.size() + px * 3 + 2], rgb[2]);
  }
}

TEST(Reports, CsvShapes) {
  auto m = metrics_from_confusion({{3, 1}, {0, 4}});
  const std::string path = testing::TempDir() + "/metrics.csv";
  write_metrics_csv(path, m, {"alpha", "beta"});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "class,name,count,correct,accuracy");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("1,alpha,4,3,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("2,beta,4,4,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("OA,overall,8,7,", 0), 0u);

  const std::string report = format_metrics_report(m, {"alpha", "beta"});
  EXPECT_NE(report.find("OA: 0.875"), std::string::npos);
}

}  // namespace
}  // namespace sfnet
