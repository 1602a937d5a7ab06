#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lesionnet/error.hpp"
#include "lesionnet/gradcheck.hpp"
#include "lesionnet/layers.hpp"

namespace ln = lesionnet;
using T = ln::Tensor<double>;

namespace {

T random_tensor(ln::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (double& v : t.data()) v = u(gen);
  return t;
}

// Direct four-loop valid convolution in long double.
T naive_conv(const T& x, const T& w, const T& b, std::size_t stride) {
  const std::size_t c = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t o = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const std::size_t oh = (h - kh) / stride + 1, ow = (wd - kw) / stride + 1;
  T y(ln::Shape{o, oh, ow});
  for (std::size_t f = 0; f < o; ++f)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        long double s = b[f];
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t bb = 0; bb < kw; ++bb)
              s += static_cast<long double>(w[((f * c + ch) * kh + a) * kw + bb]) *
                   x.at(ch, i * stride + a, j * stride + bb);
        y.at(f, i, j) = static_cast<double>(s);
      }
  return y;
}

// Central differences of L(x) = sum(f(x) * r), computed here rather than by
// the library's checker.
template <typename F>
std::vector<double> fd_gradient(F f, T x, const T& r, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const T up = f(x);
    x[i] = keep - eps;
    const T down = f(x);
    x[i] = keep;
    long double d = 0;
    for (std::size_t k = 0; k < r.size(); ++k) d += (up[k] - down[k]) * r[k];
    g[i] = static_cast<double>(d / (2 * eps));
  }
  return g;
}

double max_rel(const std::vector<double>& a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-4}));
  }
  return worst;
}

}  // namespace

// ---- conv2d ----------------------------------------------------------------

TEST(Conv2d, HandExample) {
  const T x(ln::Shape{1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const T w(ln::Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  const T b(ln::Shape{1}, {0});
  const T y = ln::conv2d(x, w, b);
  EXPECT_EQ(y.shape(), (ln::Shape{1, 2, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{6, 8, 12, 14}));
}

TEST(Conv2d, OneByOneIdentity) {
  const T x = random_tensor({1, 4, 5}, 3);
  const T y = ln::conv2d(x, T(ln::Shape{1, 1, 1, 1}, 1.0), T(ln::Shape{1}, 0.0));
  EXPECT_EQ(y, x);
}

TEST(Conv2d, OutputShapeAtFullResolution) {
  EXPECT_EQ(ln::conv2d_output_shape({3, 512, 512}, {32, 3, 3, 3}), (ln::Shape{32, 510, 510}));
  EXPECT_EQ(ln::conv2d_output_shape({32, 510, 510}, {32, 32, 3, 3}), (ln::Shape{32, 508, 508}));
  EXPECT_EQ(ln::conv2d_output_shape({7, 11, 9}, {2, 7, 3, 2}, 2), (ln::Shape{2, 5, 4}));
}

TEST(Conv2d, MatchesNaiveLoops) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const T x = random_tensor({3, 9, 8}, seed);
    const T w = random_tensor({4, 3, 3, 2}, seed + 100);
    const T b = random_tensor({4}, seed + 200);
    for (std::size_t stride : {1u, 2u}) {
      const T y = ln::conv2d(x, w, b, stride);
      const T ref = naive_conv(x, w, b, stride);
      ASSERT_EQ(y.shape(), ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv2d, Errors) {
  const T b(ln::Shape{1});
  EXPECT_THROW(ln::conv2d(T({2, 4, 4}), T({1, 3, 3, 3}), b), ln::Error);  // channels
  EXPECT_THROW(ln::conv2d(T({1, 2, 2}), T({1, 1, 3, 3}), b), ln::Error);  // kernel too big
}

TEST(Conv2d, IsLinearInInput) {
  const T x1 = random_tensor({2, 6, 6}, 1), x2 = random_tensor({2, 6, 6}, 2);
  const T w = random_tensor({3, 2, 3, 3}, 3), b = random_tensor({3}, 4);
  const double a = 0.7, c = -1.3;
  T mix(x1.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + c * x2[i];
  const T zero_b(ln::Shape{3});
  const T lhs = ln::conv2d(mix, w, zero_b);
  const T y1 = ln::conv2d(x1, w, zero_b), y2 = ln::conv2d(x2, w, zero_b);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * y1[i] + c * y2[i], 1e-9);
  // With a bias, f(x) - b is linear.
  const T yb = ln::conv2d(x1, w, b);
  for (std::size_t i = 0; i < yb.size(); ++i) EXPECT_NEAR(yb[i] - b[i / 16], y1[i], 1e-12);
}

TEST(Conv2dBackward, ScalarChainRule) {
  const auto g = ln::conv2d_backward(T({1, 1, 1}, {2.0}), T({1, 1, 1, 1}, {3.0}), T({1, 1, 1}, {1.0}));
  EXPECT_EQ(g.param_grads[0].values(), std::vector<double>{2.0});
  EXPECT_EQ(g.input_grad.values(), std::vector<double>{3.0});
  EXPECT_EQ(g.param_grads[1].values(), std::vector<double>{1.0});
}

TEST(Conv2dBackward, ZeroOutputGradGivesZeroGradients) {
  const T x = random_tensor({2, 5, 5}, 1), w = random_tensor({3, 2, 3, 3}, 2);
  const auto g = ln::conv2d_backward(x, w, T({3, 3, 3}));
  for (double v : g.input_grad.data()) EXPECT_EQ(v, 0.0);
  for (const T& p : g.param_grads)
    for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, RejectsWrongOutputGradShape) {
  EXPECT_THROW(ln::conv2d_backward(T({2, 5, 5}), T({3, 2, 3, 3}), T({3, 4, 4})), ln::Error);
}

TEST(Conv2dBackward, MatchesTestSideFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const T x = random_tensor({2, 5, 5}, seed), w = random_tensor({3, 2, 3, 3}, seed + 10);
    const T b = random_tensor({3}, seed + 20), r = random_tensor({3, 3, 3}, seed + 30);
    const auto g = ln::conv2d_backward(x, w, r);
    const auto fx = fd_gradient([&](const T& v) { return naive_conv(v, w, b, 1); }, x, r);
    const auto fw = fd_gradient([&](const T& v) { return naive_conv(x, v, b, 1); }, w, r);
    const auto fb = fd_gradient([&](const T& v) { return naive_conv(x, w, v, 1); }, b, r);
    EXPECT_LT(max_rel(fx, g.input_grad.data()), 1e-6);
    EXPECT_LT(max_rel(fw, g.param_grads[0].data()), 1e-6);
    EXPECT_LT(max_rel(fb, g.param_grads[1].data()), 1e-6);
  }
}

// ---- relu / sigmoid / softmax ----------------------------------------------

TEST(Relu, SignCases) {
  EXPECT_EQ(ln::relu(T({3}, {-1.0, 0.0, 2.0})).values(), (std::vector<double>{0, 0, 2}));
  const T pos = random_tensor({10}, 5, 0.1, 3.0);
  EXPECT_EQ(ln::relu(pos), pos);
}

TEST(Relu, BackwardUsesZeroSubgradientAtZero) {
  const T g = ln::relu_backward(T({3}, {-1.0, 0.0, 2.0}), T({3}, {5.0, 5.0, 5.0}));
  EXPECT_EQ(g.values(), (std::vector<double>{0, 0, 5}));
}

TEST(Sigmoid, Symmetry) {
  EXPECT_EQ(ln::sigmoid(T({1}, {0.0}))[0], 0.5);
  const T y = ln::sigmoid(T({2}, {3.0, -3.0}));
  EXPECT_NEAR(y[0] + y[1], 1.0, 1e-15);
  EXPECT_NEAR(y[0], 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
}

TEST(Softmax, UniformOnEqualLogits) {
  EXPECT_EQ(ln::softmax(T({2}, {0.0, 0.0})).values(), (std::vector<double>{0.5, 0.5}));
}

TEST(Softmax, MatchesLongDoubleEvaluation) {
  const T y = ln::softmax(T({3}, {1.0, 2.0, 3.0}));
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  EXPECT_NEAR(y[0], static_cast<double>(std::exp(1.0L) / z), 1e-15);
  EXPECT_NEAR(y[1], static_cast<double>(std::exp(2.0L) / z), 1e-15);
  EXPECT_NEAR(y[2], static_cast<double>(std::exp(3.0L) / z), 1e-15);
  EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-12);
}

TEST(Softmax, SumsToOneAndIgnoresConstantShift) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const T x = random_tensor({7}, seed, -30.0, 30.0);
    T shifted = x;
    for (double& v : shifted.data()) v += 123.25;
    const T a = ln::softmax(x), b = ln::softmax(shifted);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_GT(a[i], 0.0);
      EXPECT_NEAR(a[i], b[i], 1e-12);
      s += a[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const T y = ln::softmax(T({2}, {1000.0, 0.0}));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_TRUE(std::isfinite(y[1]));
}

// ---- pooling ---------------------------------------------------------------

TEST(MaxPool, WindowMaximum) {
  const auto r = ln::maxpool2d(T({1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(r.output.values(), std::vector<double>{4});
  EXPECT_EQ(ln::maxpool2d_output_shape({32, 506, 506}), (ln::Shape{32, 253, 253}));
}

TEST(MaxPool, OddExtentsAreFloored) {
  EXPECT_EQ(ln::maxpool2d(random_tensor({2, 5, 7}, 1)).output.shape(), (ln::Shape{2, 2, 3}));
  EXPECT_THROW(ln::maxpool2d(T({1, 1, 4})), ln::Error);
}

TEST(MaxPool, TieGoesToFirstRowMajorElement) {
  const auto r = ln::maxpool2d(T({1, 2, 2}, {5, 5, 5, 5}));
  const T g = ln::maxpool2d_backward<double>({1, 2, 2}, r.argmax, T({1, 1, 1}, {1.0}));
  EXPECT_EQ(g.values(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool, MatchesBruteForceScanUpTo8x8) {
  std::uint64_t seed = 0;
  for (std::size_t h = 2; h <= 8; ++h) {
    for (std::size_t w = 2; w <= 8; ++w) {
      // Small integer values make ties common.
      T x = random_tensor({2, h, w}, ++seed, 0.0, 4.0);
      for (double& v : x.data()) v = std::floor(v);
      const auto r = ln::maxpool2d(x);
      const T og = random_tensor(r.output.shape(), seed + 1000);
      const T g = ln::maxpool2d_backward<double>(x.shape(), r.argmax, og);
      T ref_g(x.shape());
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < h / 2; ++i)
          for (std::size_t j = 0; j < w / 2; ++j) {
            double best = -1e300;
            std::size_t bi = 0, bj = 0;
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b)
                if (x.at(c, 2 * i + a, 2 * j + b) > best) {
                  best = x.at(c, 2 * i + a, 2 * j + b);
                  bi = 2 * i + a;
                  bj = 2 * j + b;
                }
            EXPECT_EQ(r.output.at(c, i, j), best);
            ref_g.at(c, bi, bj) += og.at(c, i, j);
          }
      EXPECT_EQ(g, ref_g) << h << "x" << w;
    }
  }
}

TEST(GlobalPool, AverageAndMax) {
  const T x({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ln::global_pool(x, ln::PoolMode::kAverage).values(), std::vector<double>{2.5});
  EXPECT_EQ(ln::global_pool(x, ln::PoolMode::kMax).values(), std::vector<double>{4.0});
  const T c({3, 5, 5}, 0.375);
  EXPECT_EQ(ln::global_pool(c).values(), (std::vector<double>{0.375, 0.375, 0.375}));
  EXPECT_EQ(ln::GlobalPoolLayer<double>().output_shape({256, 53, 53}), (ln::Shape{256}));
}

// ---- dense -----------------------------------------------------------------

TEST(Dense, HandExample) {
  const T y = ln::dense(T({2}, {1, 2}), T({2, 2}, {1, 1, 0, 1}), T({2}, {0, 1}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 3}));
}

TEST(Dense, IdentityAndShapes) {
  const T x = random_tensor({4}, 9);
  T eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  EXPECT_EQ(ln::dense(x, eye, T({4})), x);
  const ln::DenseLayer<double> big(T({4096, 256}), T({4096}));
  EXPECT_EQ(big.output_shape({256}), (ln::Shape{4096}));
  EXPECT_THROW(ln::dense(T({3}), T({2, 2}), T({2})), ln::Error);
}

TEST(Dense, IsLinearInInput) {
  const T x1 = random_tensor({6}, 1), x2 = random_tensor({6}, 2), w = random_tensor({4, 6}, 3);
  const T zero_b({4});
  T mix({6});
  for (std::size_t i = 0; i < 6; ++i) mix[i] = 2.5 * x1[i] - 0.5 * x2[i];
  const T lhs = ln::dense(mix, w, zero_b);
  const T y1 = ln::dense(x1, w, zero_b), y2 = ln::dense(x2, w, zero_b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(lhs[i], 2.5 * y1[i] - 0.5 * y2[i], 1e-9);
}

// ---- dropout ---------------------------------------------------------------

TEST(Dropout, IdentityCases) {
  const T x = random_tensor({100}, 1);
  EXPECT_EQ(ln::dropout(x, 0.0, 7, true), x);
  EXPECT_EQ(ln::dropout(x, 0.5, 7, false), x);
  EXPECT_THROW(ln::dropout(x, 1.0, 7, true), ln::Error);
}

TEST(Dropout, InvertedScalingKeepsMean) {
  const T ones({1000000}, 1.0);
  const T y = ln::dropout(ones, 0.5, 42, true);
  double sum = 0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    sum += v;
    zeros += v == 0.0;
    EXPECT_TRUE(v == 0.0 || v == 2.0);
  }
  EXPECT_NEAR(sum / 1e6, 1.0, 0.01);
  EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.5, 0.01);
}

TEST(Dropout, MaskIsSeededAndSharedWithBackward) {
  const T x = random_tensor({64}, 2);
  EXPECT_EQ(ln::dropout(x, 0.3, 11, true), ln::dropout(x, 0.3, 11, true));
  EXPECT_NE(ln::dropout(x, 0.3, 11, true), ln::dropout(x, 0.3, 12, true));
  const T y = ln::dropout(T({64}, 1.0), 0.3, 11, true);
  const T g = ln::dropout_backward(T({64}, 1.0), 0.3, 11, true);
  EXPECT_EQ(y, g);
}

// ---- gradient checker ------------------------------------------------------

TEST(GradientCheck, DenseIsExactUpToRounding) {
  ln::DenseLayer<double> layer(random_tensor({5, 7}, 1), random_tensor({5}, 2));
  const auto r = ln::gradient_check(layer, random_tensor({7}, 3), 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.checked, 7u + 35u + 5u);
}

TEST(GradientCheck, ConvOnRandomInput) {
  ln::Conv2dLayer<double> layer(random_tensor({3, 2, 3, 3}, 1), random_tensor({3}, 2));
  EXPECT_LT(ln::gradient_check(layer, random_tensor({2, 5, 5}, 3), 1e-5).max_relative_error, 1e-4);
}

TEST(GradientCheck, ReluSkipsExactZero) {
  ln::ReluLayer<double> layer;
  T x = random_tensor({10}, 4);
  x[3] = 0.0;
  const auto r = ln::gradient_check(layer, x, 1e-5);
  EXPECT_GE(r.skipped, 1u);
  EXPECT_EQ(r.checked + r.skipped, 10u);
  EXPECT_LT(r.max_relative_error, 1e-9);
}

TEST(GradientCheck, ValidatesEpsilonAndFiniteness) {
  ln::ReluLayer<double> layer;
  EXPECT_THROW(ln::gradient_check(layer, T({2}, 1.0), 0.0), ln::Error);
  EXPECT_THROW(ln::gradient_check(layer, T({2}, 1.0), 0.1), ln::Error);
  try {
    ln::gradient_check(layer, T({2}, {1.0, std::nan("")}), 1e-5);
    FAIL();
  } catch (const ln::Error& e) {
    EXPECT_EQ(e.kind(), ln::ErrorKind::kNumeric);
  }
}

class LayerGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(LayerGradients, AllLayerKindsMatchFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  ln::GradCheckOptions opt;
  opt.seed = seed;
  std::vector<std::pair<std::unique_ptr<ln::Layer<double>>, T>> cases;
  cases.emplace_back(std::make_unique<ln::Conv2dLayer<double>>(random_tensor({3, 2, 3, 3}, seed),
                                                                random_tensor({3}, seed + 1)),
                     random_tensor({2, 6, 5}, seed + 2));
  cases.emplace_back(std::make_unique<ln::Conv2dLayer<double>>(
                         random_tensor({2, 3, 2, 3}, seed + 3), random_tensor({2}, seed + 4), 2),
                     random_tensor({3, 7, 7}, seed + 5));
  cases.emplace_back(std::make_unique<ln::DenseLayer<double>>(random_tensor({6, 9}, seed + 6),
                                                               random_tensor({6}, seed + 7)),
                     random_tensor({9}, seed + 8));
  cases.emplace_back(std::make_unique<ln::MaxPoolLayer<double>>(), random_tensor({2, 6, 6}, seed + 9));
  cases.emplace_back(std::make_unique<ln::GlobalPoolLayer<double>>(ln::PoolMode::kAverage),
                     random_tensor({3, 4, 4}, seed + 10));
  cases.emplace_back(std::make_unique<ln::GlobalPoolLayer<double>>(ln::PoolMode::kMax),
                     random_tensor({3, 4, 4}, seed + 11));
  cases.emplace_back(std::make_unique<ln::ReluLayer<double>>(), random_tensor({40}, seed + 12));
  cases.emplace_back(std::make_unique<ln::SigmoidLayer<double>>(), random_tensor({8}, seed + 13));
  cases.emplace_back(std::make_unique<ln::SoftmaxLayer<double>>(), random_tensor({7}, seed + 14));
  cases.emplace_back(std::make_unique<ln::DropoutLayer<double>>(0.5), random_tensor({16}, seed + 15));
  for (auto& [layer, x] : cases) {
    const auto r = ln::gradient_check(*layer, x, opt);
    EXPECT_LT(r.max_relative_error, 1e-4) << layer->name() << " seed " << seed;
    EXPECT_GT(r.checked, 0u) << layer->name();
  }
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, LayerGradients, ::testing::Range<std::uint64_t>(0, 10));
