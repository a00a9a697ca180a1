#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "labelforge/numerics.hpp"

namespace lf = labelforge;

namespace {

lf::Matrix random_matrix(lf::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  lf::Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(-scale, scale);
  return m;
}

// Reference product, written independently of gemm.
lf::Matrix naive_product(const lf::Matrix& a, const lf::Matrix& b) {
  lf::Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      out(i, j) = s;
    }
  return out;
}

lf::Matrix transposed(const lf::Matrix& m) {
  lf::Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

void expect_near(const lf::Matrix& a, const lf::Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], tol) << "at " << i;
}

}  // namespace

TEST(Gemm, IdentityAndHandArithmetic) {
  const lf::Matrix m{{1, 2}, {3, 4}};
  EXPECT_EQ(lf::gemm(lf::Matrix::identity(2), m), m);
  const auto r = lf::gemm(lf::Matrix{{1, 2}}, lf::Matrix{{3}, {4}});
  ASSERT_EQ(r.rows(), 1u);
  ASSERT_EQ(r.cols(), 1u);
  EXPECT_EQ(r(0, 0), 11.0);
}

TEST(Gemm, MatchesNaiveLoopOnRandom5x7x3) {
  lf::Rng rng(11);
  const auto a = random_matrix(rng, 5, 7);
  const auto b = random_matrix(rng, 7, 3);
  expect_near(lf::gemm(a, b), naive_product(a, b), 1e-12);
}

TEST(Gemm, AllTransposeCombinationsMatchNaive) {
  lf::Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.below(16), k = 1 + rng.below(16), n = 1 + rng.below(16);
    const auto a = random_matrix(rng, m, k);
    const auto b = random_matrix(rng, k, n);
    const auto want = naive_product(a, b);
    expect_near(lf::gemm(a, b), want, 1e-12);
    expect_near(lf::gemm(transposed(a), b, true, false), want, 1e-12);
    expect_near(lf::gemm(a, transposed(b), false, true), want, 1e-12);
    expect_near(lf::gemm(transposed(a), transposed(b), true, true), want, 1e-12);
  }
}

TEST(Gemm, DimensionMismatchThrowsWithShapes) {
  try {
    lf::gemm(lf::Matrix(2, 3), lf::Matrix(4, 2));
    FAIL() << "expected ShapeError";
  } catch (const lf::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2x3)"), std::string::npos);
  }
}

TEST(Softmax, ClosedForms) {
  const auto u = lf::softmax_rows(lf::Matrix{{0, 0, 0}});
  for (double v : u.row(0)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto p = lf::softmax_rows(lf::Matrix{{std::log(2.0), 0}});
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeInputsStayFinite) {
  const auto p = lf::softmax_rows(lf::Matrix{{1000, 0}, {-1e4, 1e4}});
  EXPECT_TRUE(p.all_finite());
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_LT(p(0, 1), 1e-300);
  EXPECT_EQ(p(1, 1), 1.0);
}

TEST(Softmax, NanInputThrows) {
  EXPECT_THROW(lf::softmax_rows(lf::Matrix{{0, std::nan("")}}), lf::NumericError);
  EXPECT_THROW(lf::log_softmax_rows(lf::Matrix{{std::nan(""), 1}}), lf::NumericError);
}

TEST(Softmax, RowsAreDistributionsForBoundedInputs) {
  lf::Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_matrix(rng, 1 + rng.below(4), 1 + rng.below(12), 1e4);
    const auto p = lf::softmax_rows(m);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LogSoftmax, ClosedFormsAndStability) {
  const auto l = lf::log_softmax_rows(lf::Matrix{{0, 0}});
  EXPECT_NEAR(l(0, 0), -std::numbers::ln2, 1e-15);
  EXPECT_NEAR(l(0, 1), -std::numbers::ln2, 1e-15);
  const auto big = lf::log_softmax_rows(lf::Matrix{{1000, 0}});
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(big(0, 1), -1000.0, 1e-12);
}

TEST(LogSoftmax, AgreesWithLogOfSoftmaxOnModerateInputs) {
  lf::Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_matrix(rng, 3, 1 + rng.below(10), 5.0);
    const auto fused = lf::log_softmax_rows(m);
    const auto p = lf::softmax_rows(m);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(fused.data()[i], std::log(p.data()[i]), 1e-12);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0.0;
      for (double v : fused.row(r)) s += std::exp(v);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(CrossEntropy, ClosedForms) {
  const std::vector<double> onehot{0, 1, 0, 0};
  const std::vector<double> uniform_log(4, -std::log(4.0));
  EXPECT_NEAR(lf::cross_entropy(onehot, uniform_log), std::log(4.0), 1e-15);

  const std::vector<double> p{0.5, 0.25, 0.25};
  std::vector<double> lp;
  for (double v : p) lp.push_back(std::log(v));
  EXPECT_NEAR(lf::cross_entropy(p, lp), lf::entropy(p), 1e-15);
}

TEST(CrossEntropy, MatchesHandComputation) {
  const std::vector<double> target{0.9, 0.05, 0.05};
  const auto lp = lf::log_softmax_rows(lf::Matrix{{1.0, -0.5, 2.0}});
  // hand: lse = log(e + e^-0.5 + e^2)
  const double lse = std::log(std::exp(1.0) + std::exp(-0.5) + std::exp(2.0));
  const double want = -(0.9 * (1.0 - lse) + 0.05 * (-0.5 - lse) + 0.05 * (2.0 - lse));
  EXPECT_NEAR(lf::cross_entropy(target, lp.row(0)), want, 1e-12);
}

TEST(CrossEntropy, Errors) {
  const std::vector<double> t{0.5, 0.5};
  const std::vector<double> lp{-1, -1, -1};
  EXPECT_THROW(lf::cross_entropy(t, lp), lf::ShapeError);
  const std::vector<double> bad{0.5, 0.6};
  EXPECT_THROW(lf::cross_entropy(bad, std::vector<double>{-1, -1}), lf::NumericError);
}

TEST(Rng, FixedSeedReproducesStream) {
  lf::Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

// Frozen reference values so ports of the generator can check themselves.
TEST(Rng, ReferenceStream) {
  lf::Rng r(0);
  std::uint64_t s = 0;
  const std::uint64_t seeded = lf::Rng::splitmix64(s);
  EXPECT_EQ(seeded, 0xE220A8397B1DCDAFULL);
  std::uint64_t x = seeded;
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  EXPECT_EQ(r.next(), x * 0x2545F4914F6CDD1DULL);
}

TEST(Rng, UniformAndNormalMoments) {
  lf::Rng rng(7);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  // 5 sigma bands
  EXPECT_NEAR(su / n, 0.5, 5 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 5 / std::sqrt(double(n)));
  EXPECT_NEAR(sn2 / n, 1.0, 5 * std::sqrt(2.0 / n));
}

TEST(Rng, BelowStaysInRangeAndShuffleIsPermutation) {
  lf::Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  rng.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(RelativeError, NormRatio) {
  const std::vector<double> a{3, 4}, b{3, 4}, z{0, 0};
  EXPECT_EQ(lf::relative_error(a, b), 0.0);
  EXPECT_EQ(lf::relative_error(z, z), 0.0);
  EXPECT_EQ(lf::relative_error(a, z), 1.0);
  const std::vector<double> c{0, 4};
  EXPECT_NEAR(lf::relative_error(a, c), 3.0 / 9.0, 1e-15);
  EXPECT_THROW(lf::relative_error(a, std::vector<double>{1}), lf::ShapeError);
}
