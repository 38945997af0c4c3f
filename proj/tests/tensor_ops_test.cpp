#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sfnet/ops.hpp"
#include "sfnet/tensor.hpp"
#include "test_util.hpp"

namespace sfnet {
namespace {

using test::conv2d_oracle;
using test::conv3d_oracle;
using test::matmul_oracle;
using test::max_abs_diff;
using test::random_tensor;

TEST(Matmul, IdentityLeavesInputUnchanged) {
  auto i2 = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto out = matmul(i2, m);
  EXPECT_EQ(out.value(), m.value());
}

TEST(Matmul, HandComputedProduct) {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  auto out = matmul(a, b);
  EXPECT_EQ(out.value(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, AgreesWithNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    auto a = random_tensor<double>({m, k}, rng);
    auto b = random_tensor<double>({k, n}, rng);
    auto out = matmul(a, b);
    auto want = matmul_oracle(a.value(), b.value(), m, k, n);
    EXPECT_LT(max_abs_diff(out.value(), want), 1e-12);
  }
}

TEST(Matmul, FloatAgreesWithOracleAtStandardTolerance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    auto a = random_tensor<float>({m, k}, rng);
    auto b = random_tensor<float>({k, n}, rng);
    auto out = matmul(a, b);
    auto want = matmul_oracle(a.value(), b.value(), m, k, n);
    EXPECT_LT(max_abs_diff(out.value(), want), 1e-6);
  }
}

TEST(RowSoftmax, SymmetricRow) {
  auto out = row_softmax(Tensor<double>::from({1, 2}, {0, 0}));
  EXPECT_NEAR(out.value()[0], 0.5, 1e-15);
  EXPECT_NEAR(out.value()[1], 0.5, 1e-15);
}

TEST(RowSoftmax, AnalyticRow) {
  auto out = row_softmax(Tensor<double>::from({1, 2}, {0, std::log(2.0)}));
  EXPECT_NEAR(out.value()[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(out.value()[1], 2.0 / 3.0, 1e-12);
}

TEST(RowSoftmax, ShiftInvariance) {
  for (double c : {-100.0, -1.0, 0.25, 7.0, 1e6}) {
    // Large shifts round c + ln2 itself; allow for that input granularity.
    const double tol = 1e-12 * std::max(1.0, std::abs(c));
    auto out = row_softmax(Tensor<double>::from({1, 2}, {c, c + std::log(2.0)}));
    EXPECT_NEAR(out.value()[0], 1.0 / 3.0, tol) << "shift " << c;
    EXPECT_NEAR(out.value()[1], 2.0 / 3.0, tol) << "shift " << c;
  }
}

TEST(RowSoftmax, SentinelMapsToExactZero) {
  const double sent = mask_sentinel<double>();
  auto out = row_softmax(Tensor<double>::from({1, 3}, {0.9, sent, 0.5}));
  EXPECT_EQ(out.value()[1], 0.0);
  // softmax over the unmasked entries: e^0.9 / (e^0.9 + e^0.5)
  EXPECT_NEAR(out.value()[0], 0.5987, 1e-4);
  EXPECT_NEAR(out.value()[2], 0.4013, 1e-4);
}

TEST(RowSoftmax, DegenerateRowIsAnError) {
  const double sent = mask_sentinel<double>();
  EXPECT_THROW(row_softmax(Tensor<double>::from({2, 2}, {0.0, 1.0, sent, sent})), NumericError);
}

TEST(RowSoftmax, RowsSumToOneAndStayInUnitInterval) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto x = random_tensor<double>({4, 7}, rng, -5, 5);
    auto out = row_softmax(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = out.value()[i * 7 + j];
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    auto xf = random_tensor<float>({4, 7}, rng, -5, 5);
    auto outf = row_softmax(xf);
    for (std::size_t i = 0; i < 4; ++i) {
      float sum = 0;
      for (std::size_t j = 0; j < 7; ++j) sum += outf.value()[i * 7 + j];
      EXPECT_NEAR(sum, 1.0f, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  auto x = Tensor<double>::full({1, 4}, 3.25);
  auto out = layer_norm(x, Tensor<double>::ones({4}), Tensor<double>::zeros({4}), 1e-5);
  for (double v : out.value()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LayerNorm, StandardizesRow) {
  auto x = Tensor<double>::from({1, 2}, {1, 3});
  auto out = layer_norm(x, Tensor<double>::ones({2}), Tensor<double>::zeros({2}), 1e-12);
  EXPECT_NEAR(out.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(out.value()[1], 1.0, 1e-9);
}

TEST(LayerNorm, AffineScaleAndShift) {
  auto x = Tensor<double>::from({1, 2}, {1, 3});
  auto out = layer_norm(x, Tensor<double>::from({2}, {2, 2}), Tensor<double>::from({2}, {1, 1}),
                        1e-12);
  EXPECT_NEAR(out.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(out.value()[1], 3.0, 1e-9);
}

TEST(Conv2d, OnesKernel1x1SumsChannels) {
  Rng rng(3);
  auto x = random_tensor<double>({3, 4, 5}, rng);
  auto k = Tensor<double>::ones({2, 3, 1, 1});
  auto out = conv2d(x, k, 1, Padding::valid);
  ASSERT_EQ(out.shape(), (Shape{2, 4, 5}));
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t i = 0; i < 20; ++i) {
      double want = 0;
      for (std::size_t c = 0; c < 3; ++c) want += x.value()[c * 20 + i];
      EXPECT_NEAR(out.value()[f * 20 + i], want, 1e-12);
    }
}

TEST(Conv2d, CountingKernelOnOnes) {
  auto x = Tensor<double>::ones({1, 5, 5});
  auto k = Tensor<double>::ones({1, 1, 3, 3});
  auto out = conv2d(x, k, 1, Padding::valid);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3}));
  for (double v : out.value()) EXPECT_EQ(v, 9.0);
}

TEST(Conv2d, MatchesQuadrupleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto x = random_tensor<double>({2, 4, 4}, rng);
    auto k = random_tensor<double>({3, 2, 2, 2}, rng);
    for (bool same : {false, true}) {
      for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
        auto out = conv2d(x, k, stride, same ? Padding::same : Padding::valid);
        auto want = conv2d_oracle(x.value(), 2, 4, 4, k.value(), 3, 2, 2, stride, same);
        EXPECT_LT(max_abs_diff(out.value(), want), 1e-6) << "same=" << same << " s=" << stride;
      }
    }
  }
}

TEST(Conv2d, KernelLargerThanInputIsShapeError) {
  auto x = Tensor<double>::ones({1, 3, 3});
  auto k = Tensor<double>::ones({1, 1, 4, 4});
  EXPECT_THROW(conv2d(x, k, 1, Padding::valid), ShapeError);
}

TEST(Conv3d, UnitKernelSumsChannels) {
  Rng rng(5);
  auto x = random_tensor<double>({2, 3, 3, 3}, rng);
  auto k = Tensor<double>::ones({1, 2, 1, 1, 1});
  auto out = conv3d(x, k, 1, Padding::valid);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3, 3}));
  for (std::size_t i = 0; i < 27; ++i)
    EXPECT_NEAR(out.value()[i], x.value()[i] + x.value()[27 + i], 1e-12);
}

TEST(Conv3d, CountingKernelOnOnes) {
  auto x = Tensor<double>::ones({1, 4, 4, 4});
  auto k = Tensor<double>::ones({1, 1, 2, 2, 2});
  auto out = conv3d(x, k, 1, Padding::valid);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3, 3}));
  for (double v : out.value()) EXPECT_EQ(v, 8.0);
}

TEST(Conv3d, MatchesQuintupleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    auto x = random_tensor<double>({2, 3, 4, 3}, rng);
    auto k = random_tensor<double>({2, 2, 2, 2, 2}, rng);
    for (bool same : {false, true}) {
      auto out = conv3d(x, k, 1, same ? Padding::same : Padding::valid);
      auto want = conv3d_oracle(x.value(), 2, 3, 4, 3, k.value(), 2, 2, 2, 2, 1, same);
      EXPECT_LT(max_abs_diff(out.value(), want), 1e-6) << "same=" << same;
    }
  }
}

TEST(ForwardOps, DeterministicAcrossRepeatedCalls) {
  Rng rng(11);
  auto x = random_tensor<double>({5, 6}, rng, -2, 2);
  auto w = random_tensor<double>({6, 6}, rng);
  auto once = row_softmax(matmul(x, w));
  auto twice = row_softmax(matmul(x, w));
  EXPECT_EQ(once.value(), twice.value());
}

TEST(ForwardOps, OutputsStayFinite) {
  Rng rng(13);
  auto x = random_tensor<double>({4, 4}, rng, -50, 50);
  EXPECT_TRUE(all_finite(row_softmax(x)));
  EXPECT_TRUE(all_finite(gelu(x)));
  EXPECT_TRUE(
      all_finite(layer_norm(x, Tensor<double>::ones({4}), Tensor<double>::zeros({4}), 1e-5)));
}

TEST(Elementwise, AddMulSubScaleBasics) {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(add(a, b).value(), (std::vector<double>{6, 8, 10, 12}));
  EXPECT_EQ(sub(b, a).value(), (std::vector<double>{4, 4, 4, 4}));
  EXPECT_EQ(mul(a, b).value(), (std::vector<double>{5, 12, 21, 32}));
  EXPECT_EQ(scale(a, -2.0).value(), (std::vector<double>{-2, -4, -6, -8}));
  EXPECT_THROW(add(a, Tensor<double>::zeros({2, 3})), ShapeError);
}

TEST(Reshape, RoundTripAndTranspose) {
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = transpose(x);
  ASSERT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t.value(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  auto r = reshape(x, {3, 2});
  EXPECT_EQ(r.value(), x.value());
  EXPECT_THROW(reshape(x, {4, 2}), ShapeError);
}

TEST(ConcatMean, ColumnsAndMeanRows) {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from({2, 1}, {9, 10});
  auto c = concat_cols(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(c.value(), (std::vector<double>{1, 2, 9, 3, 4, 10}));
  auto m = mean_rows(a);
  ASSERT_EQ(m.shape(), (Shape{1, 2}));
  EXPECT_EQ(m.value(), (std::vector<double>{2, 3}));
}

}  // namespace
}  // namespace sfnet
