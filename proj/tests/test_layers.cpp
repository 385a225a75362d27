#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace cstnet;
using namespace testing_support;

namespace {

Tensor identity_w() { return ColorMatrix::identity().to_tensor<float>(); }

}  // namespace

// ---------------------------------------------------------------------------
// Color transform

TEST(ColorTransform, IdentityIsExact) {
  std::mt19937_64 gen(1);
  const Tensor x = uniform_tensor<float>({2, 3, 5, 4}, -3, 3, gen);
  EXPECT_EQ(color_transform_forward(x, identity_w()), x);
}

TEST(ColorTransform, CyclicPermutation) {
  const Tensor w({3, 3}, {0, 1, 0, 0, 0, 1, 1, 0, 0});
  const Tensor x({1, 3, 1, 1}, {1, 2, 3});
  EXPECT_EQ(color_transform_forward(x, w), Tensor({1, 3, 1, 1}, {2, 3, 1}));
}

TEST(ColorTransform, MatchesPerPixelLoop) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = uniform_tensor<float>({2, 3, 4, 4}, 0, 1, gen);
    const Tensor w = uniform_tensor<float>({3, 3}, -2, 2, gen);
    EXPECT_LE(max_abs_diff(as_doubles(color_transform_forward(x, w)), per_pixel_transform(x, w)), 1e-6);
    const Tensor ws = uniform_tensor<float>({2, 3, 3}, -2, 2, gen);
    EXPECT_LE(max_abs_diff(as_doubles(color_transform_forward(x, ws)), per_pixel_transform(x, ws)), 1e-6);
  }
}

TEST(ColorTransform, Linearity) {
  std::mt19937_64 gen(3);
  const TensorD x1 = uniform_tensor<double>({2, 3, 3, 3}, -1, 1, gen);
  const TensorD x2 = uniform_tensor<double>({2, 3, 3, 3}, -1, 1, gen);
  const TensorD w = uniform_tensor<double>({3, 3}, -1, 1, gen);
  const double a = 0.7, b = -1.3;
  TensorD mix(x1.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + b * x2[i];
  const TensorD y = color_transform_forward(mix, w);
  const TensorD y1 = color_transform_forward(x1, w), y2 = color_transform_forward(x2, w);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], a * y1[i] + b * y2[i], 1e-12);
}

TEST(ColorTransform, CompositionIsMatrixProduct) {
  std::mt19937_64 gen(4);
  const TensorD x = uniform_tensor<double>({1, 3, 4, 4}, -1, 1, gen);
  const TensorD a = uniform_tensor<double>({3, 3}, -1, 1, gen), b = uniform_tensor<double>({3, 3}, -1, 1, gen);
  const TensorD ab = color_transform_forward(color_transform_forward(x, b), a);
  const TensorD direct = color_transform_forward(x, matmul(a, b));
  EXPECT_LE(max_abs_diff(as_doubles(ab), as_doubles(direct)), 1e-12);
}

TEST(ColorTransform, ZeroUpstreamGradient) {
  std::mt19937_64 gen(5);
  const Tensor x = uniform_tensor<float>({2, 3, 3, 3}, -1, 1, gen);
  const Tensor w = uniform_tensor<float>({3, 3}, -1, 1, gen);
  const auto g = color_transform_backward(x, w, Tensor(x.shape()));
  for (const float v : g.dx.data()) EXPECT_EQ(v, 0.0f);
  for (const float v : g.dw.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ColorTransform, IdentityPassesGradientThrough) {
  std::mt19937_64 gen(6);
  const Tensor x = uniform_tensor<float>({2, 3, 3, 3}, -1, 1, gen);
  const Tensor dy = uniform_tensor<float>({2, 3, 3, 3}, -1, 1, gen);
  EXPECT_EQ(color_transform_backward(x, identity_w(), dy).dx, dy);
}

TEST(ColorTransform, GlobalGradientIsSumOfPerSample) {
  std::mt19937_64 gen(7);
  const TensorD x = uniform_tensor<double>({3, 3, 2, 2}, -1, 1, gen);
  const TensorD dy = uniform_tensor<double>({3, 3, 2, 2}, -1, 1, gen);
  const TensorD w = uniform_tensor<double>({3, 3}, -1, 1, gen);
  TensorD ws({3, 3, 3});
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 9; ++i) ws[s * 9 + i] = w[i];
  const auto g = color_transform_backward(x, w, dy);
  const auto gs = color_transform_backward(x, ws, dy);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(g.dw[i], gs.dw[i] + gs.dw[9 + i] + gs.dw[18 + i], 1e-12);
  EXPECT_LE(max_abs_diff(as_doubles(g.dx), as_doubles(gs.dx)), 1e-12);
}

TEST(ColorTransform, RejectsBadOperands) {
  EXPECT_THROW(color_transform_forward(Tensor({1, 4, 2, 2}), identity_w()), ShapeError);
  EXPECT_THROW(color_transform_forward(Tensor({2, 3, 2, 2}), Tensor({3, 3, 3})), ShapeError);
  EXPECT_THROW(color_transform_forward(Tensor({2, 3, 2, 2}), Tensor({3, 2})), ShapeError);
  Tensor bad = identity_w();
  bad[4] = NAN;
  EXPECT_THROW(color_transform_forward(Tensor({1, 3, 2, 2}), bad), NumericError);
}

TEST(ColorMatrix, TextRoundTripIsExact) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> d(-5, 5);
  ColorMatrix m;
  for (auto& v : m.m) v = d(gen);
  EXPECT_EQ(parse_color_matrix(format_color_matrix(m)), m);
  EXPECT_THROW(parse_color_matrix("1 2 3"), FormatError);
  EXPECT_THROW(parse_color_matrix("1 2 3 4 5 6 7 8 9 10"), FormatError);
  EXPECT_THROW(parse_color_matrix("1 2 3 4 x 6 7 8 9"), FormatError);
}

// ---------------------------------------------------------------------------
// Convolution

TEST(Conv2d, OneByOneIdentity) {
  std::mt19937_64 gen(9);
  const Tensor x = uniform_tensor<float>({2, 3, 4, 4}, -1, 1, gen);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1;
  EXPECT_EQ(conv2d_forward(x, w, Tensor({3})), x);
}

TEST(Conv2d, BiasOnly) {
  std::mt19937_64 gen(10);
  const Tensor x = uniform_tensor<float>({2, 3, 5, 5}, -1, 1, gen);
  const Tensor y = conv2d_forward(x, Tensor({4, 3, 3, 3}), Tensor::constant({4}, 0.25f), 1, 1);
  ASSERT_EQ(y.shape(), Shape({2, 4, 5, 5}));
  for (const float v : y.data()) EXPECT_EQ(v, 0.25f);
}

TEST(Conv2d, MatchesDirectLoops) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = uniform_tensor<float>({2, 3, 8, 8}, -1, 1, gen);
    const Tensor w = uniform_tensor<float>({4, 3, 3, 3}, -1, 1, gen);
    const Tensor b = uniform_tensor<float>({4}, -1, 1, gen);
    EXPECT_LE(max_abs_diff(as_doubles(conv2d_forward(x, w, b, 1, 1)), direct_conv(x, w, b, 1, 1)), 1e-5);
  }
}

TEST(Conv2d, StridedAndFiveByFiveMatchDirectLoops) {
  std::mt19937_64 gen(12);
  const Tensor x = uniform_tensor<float>({2, 3, 9, 9}, -1, 1, gen);
  const Tensor w = uniform_tensor<float>({4, 3, 3, 3}, -1, 1, gen);
  const Tensor b = uniform_tensor<float>({4}, -1, 1, gen);
  EXPECT_LE(max_abs_diff(as_doubles(conv2d_forward(x, w, b, 2, 1)), direct_conv(x, w, b, 2, 1)), 1e-5);
  const Tensor x5 = uniform_tensor<float>({1, 2, 8, 8}, -1, 1, gen);
  const Tensor w5 = uniform_tensor<float>({3, 2, 5, 5}, -1, 1, gen);
  const Tensor b5 = uniform_tensor<float>({3}, -1, 1, gen);
  EXPECT_LE(max_abs_diff(as_doubles(conv2d_forward(x5, w5, b5, 1, 2)), direct_conv(x5, w5, b5, 1, 2)), 1e-5);
}

TEST(Conv2d, RejectsMismatchedOperands) {
  EXPECT_THROW(conv2d_forward(Tensor({1, 3, 4, 4}), Tensor({2, 2, 3, 3}), Tensor({2}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 3, 4, 4}), Tensor({2, 3, 3, 3}), Tensor({3}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 3, 4, 4}), Tensor({2, 3, 3, 3}), Tensor({2}), 2, 0), ShapeError);
}

// ---------------------------------------------------------------------------
// Pooling, activations, dense

TEST(MaxPool, ConstantInput) {
  const Tensor y = maxpool2_forward(Tensor::constant({1, 2, 4, 4}, 1.5f)).y;
  ASSERT_EQ(y.shape(), Shape({1, 2, 2, 2}));
  for (const float v : y.data()) EXPECT_EQ(v, 1.5f);
}

TEST(MaxPool, StrictMaxRoutesGradient) {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto r = maxpool2_forward(x);
  EXPECT_EQ(r.y[0], 4.0f);
  const Tensor dx = maxpool2_backward<float>(x.shape(), r.argmax, Tensor({1, 1, 1, 1}, {1.0f}));
  EXPECT_EQ(dx, Tensor({1, 1, 2, 2}, {0, 0, 0, 1}));
}

TEST(MaxPool, TiesGoToFirstElement) {
  const auto r = maxpool2_forward(Tensor::constant({1, 1, 2, 2}, 3.0f));
  EXPECT_EQ(r.argmax[0], 0u);
}

TEST(MaxPool, MatchesWindowScan) {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = uniform_tensor<float>({1, 2, 6, 6}, -1, 1, gen);
    EXPECT_EQ(as_doubles(maxpool2_forward(x).y), window_scan_maxpool(x));
  }
}

TEST(MaxPool, OddExtentIsShapeError) { EXPECT_THROW(maxpool2_forward(Tensor({1, 1, 3, 4})), ShapeError); }

TEST(AvgPool, AveragesBlocks) {
  Tensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  const Tensor y = avgpool_forward(x, 2);
  EXPECT_EQ(y, Tensor({1, 1, 2, 2}, {2.5f, 4.5f, 10.5f, 12.5f}));
  const Tensor dx = avgpool_backward<float>(x.shape(), Tensor::constant({1, 1, 2, 2}, 1.0f), 2);
  for (const float v : dx.data()) EXPECT_EQ(v, 0.25f);
}

TEST(Relu, SignCases) {
  EXPECT_EQ(relu_forward(Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2}));
  const Tensor pos({4}, {0.5f, 1, 2, 3});
  EXPECT_EQ(relu_forward(pos), pos);
  EXPECT_EQ(relu_backward(Tensor({3}, {-1, 0, 2}), Tensor({3}, {5, 5, 5})), Tensor({3}, {0, 0, 5}));
}

TEST(Dense, IdentityAndZeroInput) {
  std::mt19937_64 gen(14);
  const Tensor x = uniform_tensor<float>({3, 4}, -1, 1, gen);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1;
  EXPECT_EQ(dense_forward(x, eye, Tensor({4})), x);
  const Tensor b({4}, {1, 2, 3, 4});
  const Tensor y = dense_forward(Tensor({2, 4}), uniform_tensor<float>({4, 4}, -1, 1, gen), b);
  EXPECT_EQ(y, Tensor({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4}));
}

TEST(Dense, MatchesMatmulOracle) {
  std::mt19937_64 gen(15);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD x = uniform_tensor<double>({3, 6}, -1, 1, gen);
    const TensorD w = uniform_tensor<double>({6, 5}, -1, 1, gen);
    const TensorD b = uniform_tensor<double>({5}, -1, 1, gen);
    auto ref = naive_matmul(as_doubles(x), as_doubles(w), 3, 6, 5);
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += b[i % 5];
    EXPECT_LE(max_abs_diff(as_doubles(dense_forward(x, w, b)), ref), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

TEST(SoftmaxXent, UniformLogitsGiveLogTen) {
  const std::vector<int> labels{0, 3, 9};
  const auto r = softmax_cross_entropy(Tensor({3, 10}), labels);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-6);
  EXPECT_NEAR(r.loss, 2.302585, 1e-6);
}

TEST(SoftmaxXent, SaturatedCorrectClass) {
  Tensor z({1, 10});
  z[4] = 1000;
  const std::vector<int> labels{4};
  const auto r = softmax_cross_entropy(z, labels);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (const float g : r.dlogits.data()) EXPECT_TRUE(std::isfinite(g));
}

TEST(SoftmaxXent, MatchesDirectFormula) {
  std::mt19937_64 gen(16);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD z = uniform_tensor<double>({5, 10}, -8, 8, gen);
    std::vector<int> labels(5);
    for (auto& l : labels) l = static_cast<int>(gen() % 10);
    const auto r = softmax_cross_entropy(z, labels);
    const auto ref = direct_xent(z, labels);
    EXPECT_LE(std::abs(r.loss - ref.loss) / std::max(std::abs(ref.loss), 1e-12), 1e-6);
    for (std::size_t i = 0; i < ref.dlogits.size(); ++i) {
      EXPECT_LE(std::abs(r.dlogits[i] - ref.dlogits[i]), 1e-6 * std::max(std::abs(ref.dlogits[i]), 1e-3));
    }
  }
}

TEST(SoftmaxXent, RowsSumToOneAndGradientRowsToZero) {
  std::mt19937_64 gen(17);
  const Tensor z = uniform_tensor<float>({4, 10}, -30, 30, gen);
  const Tensor p = softmax(z);
  const std::vector<int> labels{1, 2, 3, 4};
  const auto r = softmax_cross_entropy(z, labels);
  for (std::size_t s = 0; s < 4; ++s) {
    double sp = 0, sg = 0;
    for (std::size_t j = 0; j < 10; ++j) {
      sp += p[s * 10 + j];
      sg += r.dlogits[s * 10 + j];
    }
    EXPECT_NEAR(sp, 1.0, 1e-6);
    EXPECT_NEAR(sg, 0.0, 1e-7);
  }
}

TEST(SoftmaxXent, BadLabelIsInputError) {
  const std::vector<int> labels{10};
  EXPECT_THROW(softmax_cross_entropy(Tensor({1, 10}), labels), InputError);
  const std::vector<int> two{1, 2};
  EXPECT_THROW(softmax_cross_entropy(Tensor({1, 10}), two), ShapeError);
}
