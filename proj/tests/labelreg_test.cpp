#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "labelforge/labelreg.hpp"

namespace lf = labelforge;

namespace {

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::vector<double> random_distribution(lf::Rng& rng, std::size_t k, double spread = 2.0) {
  std::vector<double> z(k);
  for (auto& v : z) v = rng.uniform(-spread, spread);
  return lf::softmax(z);
}

lf::CMatrix random_c(lf::Rng& rng, std::size_t k, double alpha, double spread = 2.0) {
  lf::CMatrix c(k, alpha);
  for (auto& v : c.logits().data()) v = rng.uniform(-spread, spread);
  return c;
}

// Central differences of term 2 with respect to row y of the C logits.
std::vector<double> fd_term2_row(lf::CMatrix c, std::size_t y, std::span<const double> probs, double h) {
  std::vector<double> out(c.num_classes() - 1);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double& v = c.logits()(y, j);
    const double saved = v;
    v = saved + h;
    const double plus = lf::term2_loss(probs, lf::lspp_target(c, y));
    v = saved - h;
    const double minus = lf::term2_loss(probs, lf::lspp_target(c, y));
    v = saved;
    out[j] = (plus - minus) / (2 * h);
  }
  return out;
}

}  // namespace

TEST(OnehotTarget, Definition) {
  EXPECT_EQ(lf::onehot_target(2, 4).vec(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(lf::onehot_target(0, 1).vec(), (std::vector<double>{1}));
  EXPECT_EQ(lf::entropy(lf::onehot_target(1, 5).probs()), 0.0);
  EXPECT_THROW(lf::onehot_target(4, 4), std::out_of_range);
}

TEST(LsTarget, ValuesAndCollapses) {
  const auto t = lf::ls_target(1, 4, 0.1);
  const std::vector<double> want{0.025, 0.925, 0.025, 0.025};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(t[i], want[i], 1e-12);
  EXPECT_EQ(lf::ls_target(3, 5, 0.0), lf::onehot_target(3, 5));
  const auto uniform = lf::ls_target(0, 4, 1.0);
  for (double v : uniform.vec()) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(lf::ls_target(0, 4, -0.1), std::invalid_argument);
  EXPECT_THROW(lf::ls_target(0, 4, 1.5), std::invalid_argument);
}

TEST(CMatrix, ExpandedHasZeroDiagonalAndRowDistributions) {
  lf::Rng rng(2);
  const auto c = random_c(rng, 6, 0.1, 5.0);
  const auto e = c.expanded();
  for (std::size_t y = 0; y < 6; ++y) {
    EXPECT_EQ(e(y, y), 0.0);
    EXPECT_NEAR(sum(e.row(y)), 1.0, 1e-12);
    const auto p = c.row_probs(y);
    EXPECT_EQ(p.size(), 5u);
    EXPECT_NEAR(sum(p), 1.0, 1e-12);
  }
  EXPECT_THROW(lf::CMatrix(1, 0.1), std::invalid_argument);
  EXPECT_THROW(lf::CMatrix(3, 1.0), std::invalid_argument);
  EXPECT_THROW(lf::CMatrix(lf::Matrix(3, 3), 0.1), lf::ShapeError);
}

TEST(LsppTarget, ZeroInitIsUniformOverNonTargets) {
  const lf::CMatrix c(4, 0.1);
  const auto t = lf::lspp_target(c, 0);
  EXPECT_NEAR(t[0], 0.9, 1e-12);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(t[i], 0.1 / 3.0, 1e-12);
}

TEST(LsppTarget, DirectEvaluation) {
  lf::CMatrix c(4, 0.1);
  const double l[3] = {std::log(0.5), std::log(0.3), std::log(0.2)};
  for (std::size_t j = 0; j < 3; ++j) c.logits()(0, j) = l[j];
  const auto t = lf::lspp_target(c, 0);
  const std::vector<double> want{0.9, 0.05, 0.03, 0.02};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(t[i], want[i], 1e-12);
  EXPECT_THROW(lf::lspp_target(c, 4), std::out_of_range);
}

TEST(LsppTarget, TargetMassFixedForAnyC) {
  lf::Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(12);
    const double alpha = rng.uniform(0.0, 0.49);
    const auto c = random_c(rng, k, alpha, 20.0);
    const std::size_t y = rng.below(k);
    const auto t = lf::lspp_target(c, y);
    EXPECT_EQ(t[y], 1.0 - alpha);
    EXPECT_EQ(lf::argmax(t.probs()), y);
    EXPECT_TRUE(t.is_valid());
  }
}

TEST(NetworkLogitGrad, ClosedFormsAndFiniteDifferences) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  const auto zero = lf::network_logit_grad(lf::TargetDistribution(p), p);
  for (double g : zero) EXPECT_EQ(g, 0.0);

  const std::vector<double> u(4, 0.25);
  const auto g = lf::network_logit_grad(lf::onehot_target(1, 4), u);
  EXPECT_EQ(g, (std::vector<double>{0.25, -0.75, 0.25, 0.25}));

  lf::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 3 + rng.below(6);
    std::vector<double> z(k);
    for (auto& v : z) v = rng.uniform(-3, 3);
    const lf::TargetDistribution t(random_distribution(rng, k));
    const auto analytic = lf::network_logit_grad(t, lf::softmax(z));
    const double h = 1e-6;
    for (std::size_t j = 0; j < k; ++j) {
      auto zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const auto lp = lf::log_softmax_rows(lf::Matrix(1, k, zp));
      const auto lm = lf::log_softmax_rows(lf::Matrix(1, k, zm));
      const double numeric = (lf::cross_entropy(t.probs(), lp.row(0)) - lf::cross_entropy(t.probs(), lm.row(0))) / (2 * h);
      EXPECT_NEAR(analytic[j], numeric, 1e-8);
    }
  }
  EXPECT_THROW(lf::network_logit_grad(lf::onehot_target(0, 3), u), lf::ShapeError);
}

TEST(CLogitGrad, SymmetricStationaryPoint) {
  const lf::CMatrix c(5, 0.1);
  const std::vector<double> u(5, 0.2);
  for (std::size_t y = 0; y < 5; ++y) {
    for (double g : lf::c_logit_grad(c, y, u)) EXPECT_NEAR(g, 0.0, 1e-16);
  }
}

TEST(CLogitGrad, WorkedExampleMatchesFiniteDifferences) {
  const lf::CMatrix c(3, 0.1);
  const std::vector<double> probs{0.6, 0.3, 0.1};
  const auto g = lf::c_logit_grad(c, 0, probs);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_NEAR(g[0], -0.1, 1e-15);
  EXPECT_NEAR(g[1], 0.1, 1e-15);
  const auto fd = fd_term2_row(c, 0, probs, 1e-5);
  EXPECT_NEAR(fd[0], -0.1, 1e-9);
  EXPECT_NEAR(fd[1], 0.1, 1e-9);
}

TEST(CLogitGrad, IndependentOfAlpha) {
  lf::Rng rng(10);
  auto c1 = random_c(rng, 6, 0.05);
  lf::CMatrix c2(c1.logits(), 0.2);
  const auto probs = random_distribution(rng, 6);
  for (std::size_t y = 0; y < 6; ++y) EXPECT_EQ(lf::c_logit_grad(c1, y, probs), lf::c_logit_grad(c2, y, probs));
}

TEST(CLogitGrad, MatchesFiniteDifferencesOnRandomProblems) {
  lf::Rng rng(12);
  double worst = 0.0;
  for (std::size_t k : {3, 5, 10}) {
    for (int trial = 0; trial < 30; ++trial) {
      const auto c = random_c(rng, k, rng.uniform(0.01, 0.5));
      const auto probs = random_distribution(rng, k);
      const std::size_t y = rng.below(k);
      const auto a = lf::c_logit_grad(c, y, probs);
      const auto n = fd_term2_row(c, y, probs, 1e-5);
      for (std::size_t j = 0; j < a.size(); ++j) {
        worst = std::max(worst, std::abs(a[j] - n[j]) / std::max(1e-8, std::abs(a[j]) + std::abs(n[j])));
      }
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(CLogitGrad, ClampedSlotsAreConstant) {
  // alpha = 0: every non-target entry sits under the clamp, so term 2 is flat in C.
  lf::Rng rng(1);
  auto c = random_c(rng, 4, 0.0);
  const auto probs = random_distribution(rng, 4);
  for (double g : lf::c_logit_grad(c, 2, probs)) EXPECT_EQ(g, 0.0);
  const auto fd = fd_term2_row(c, 2, probs, 1e-5);
  for (double g : fd) EXPECT_EQ(g, 0.0);
}

TEST(AblationGrads, MatchFiniteDifferences) {
  lf::Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 3 + rng.below(6);
    auto c = random_c(rng, k, 0.1);
    const std::size_t y = rng.below(k);
    std::vector<double> z(k);
    for (auto& v : z) v = rng.uniform(-3, 3);
    const auto lp_row = lf::log_softmax_rows(lf::Matrix(1, k, z));
    const std::vector<double> lp(lp_row.row(0).begin(), lp_row.row(0).end());
    const double h = 1e-5;

    // term 1 w.r.t. C logits
    const auto gc = lf::c_logit_grad_term1(c, y, lp);
    for (std::size_t j = 0; j + 1 < k; ++j) {
      double& v = c.logits()(y, j);
      const double saved = v;
      v = saved + h;
      const double plus = lf::term1_loss(lf::lspp_target(c, y), lp);
      v = saved - h;
      const double minus = lf::term1_loss(lf::lspp_target(c, y), lp);
      v = saved;
      EXPECT_NEAR(gc[j], (plus - minus) / (2 * h), 1e-8);
    }

    // term 2 w.r.t. network logits
    const auto t = lf::lspp_target(c, y);
    const auto gz = lf::network_logit_grad_term2(t, lf::softmax(z));
    for (std::size_t j = 0; j < k; ++j) {
      auto zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const double numeric = (lf::term2_loss(lf::softmax(zp), t) - lf::term2_loss(lf::softmax(zm), t)) / (2 * h);
      EXPECT_NEAR(gz[j], numeric, 1e-8);
    }
  }
}

TEST(CeGradOnC, PushesRowTowardLowEntropy) {
  // Following the plain cross-entropy gradient on C concentrates each row.
  lf::CMatrix c(4, 0.1);
  const std::vector<double> probs{0.7, 0.15, 0.1, 0.05};
  std::vector<double> lp;
  for (double p : probs) lp.push_back(std::log(p));
  double prev = lf::entropy(c.row_probs(0));
  for (int step = 0; step < 100; ++step) {
    const auto g = lf::c_logit_grad_term1(c, 0, lp);
    for (std::size_t j = 0; j < 3; ++j) c.logits()(0, j) -= 1.0 * g[j];
    const double h = lf::entropy(c.row_probs(0));
    EXPECT_LE(h, prev + 1e-15);
    prev = h;
  }
  EXPECT_LT(prev, std::log(3.0) - 0.1);
}

TEST(Ols, AccumulateSingleAndPair) {
  lf::OlsState s(3);
  const std::vector<double> a{0.7, 0.2, 0.1}, b{0.1, 0.6, 0.3};
  lf::ols_accumulate(s, a, 1);
  auto m = s.class_means();
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(m(1, j), a[j]);
  lf::ols_accumulate(s, b, 1);
  m = s.class_means();
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m(1, j), (a[j] + b[j]) / 2, 1e-12);
  EXPECT_EQ(s.counts, (std::vector<std::size_t>{0, 2, 0}));
}

TEST(Ols, AccumulateMatchesBruteForceMean) {
  lf::Rng rng(30);
  lf::OlsState s(5);
  std::vector<std::vector<double>> seen[5];
  for (int i = 0; i < 100; ++i) {
    const auto p = random_distribution(rng, 5);
    const std::size_t y = rng.below(5);
    lf::ols_accumulate(s, p, y);
    seen[y].push_back(p);
  }
  const auto m = s.class_means();
  for (std::size_t y = 0; y < 5; ++y) {
    if (seen[y].empty()) continue;
    EXPECT_NEAR(sum(m.row(y)), 1.0, 1e-9);
    for (std::size_t j = 0; j < 5; ++j) {
      double mean = 0.0;
      for (const auto& p : seen[y]) mean += p[j];
      mean /= double(seen[y].size());
      EXPECT_NEAR(m(y, j), mean, 1e-10);
    }
  }
}

TEST(Ols, TargetArithmeticAndFallback) {
  lf::Matrix means(4, 4, 0.25);
  const auto t = lf::ols_target(means, 2, 0.5);
  EXPECT_FALSE(t.fell_back_to_onehot);
  EXPECT_EQ(t.target.vec(), (std::vector<double>{0.125, 0.125, 0.625, 0.125}));
  EXPECT_EQ(lf::ols_target(means, 1, 0.0).target, lf::onehot_target(1, 4));

  lf::Matrix empty(4, 4);
  const auto f = lf::ols_target(empty, 3, 0.5);
  EXPECT_TRUE(f.fell_back_to_onehot);
  EXPECT_EQ(f.target, lf::onehot_target(3, 4));
  EXPECT_THROW(lf::ols_target(means, 0, 1.5), std::invalid_argument);
}

TEST(Ols, CollapsesToOnehotWhenMeansAreOnehot) {
  lf::Matrix means = lf::Matrix::identity(5);
  for (double mix : {0.0, 0.1, 0.25, 0.5, 0.9, 1.0}) {
    for (std::size_t y = 0; y < 5; ++y) EXPECT_EQ(lf::ols_target(means, y, mix).target, lf::onehot_target(y, 5));
  }
}

TEST(TeacherTargets, PassThroughAndProxy) {
  const std::vector<double> u(4, 0.25);
  EXPECT_EQ(lf::teacher_target(u).vec(), u);
  const std::vector<double> oh{0, 0, 1, 0};
  EXPECT_EQ(lf::teacher_target(oh).vec(), oh);
  lf::Rng rng(3);
  const auto p = random_distribution(rng, 7);
  EXPECT_EQ(lf::teacher_target(p).vec(), p);
  EXPECT_THROW(lf::teacher_target(std::vector<double>{0.5, 0.6}), lf::NumericError);

  const auto c = random_c(rng, 5, 0.1);
  for (std::size_t y = 0; y < 5; ++y) {
    EXPECT_EQ(lf::proxy_teacher_target(c, y, 5), lf::lspp_target(c, y));
    // per class: the same target no matter which sample asks
    EXPECT_EQ(lf::proxy_teacher_target(c, y, 5), lf::proxy_teacher_target(c, y, 5));
  }
  EXPECT_THROW(lf::proxy_teacher_target(c, 0, 6), std::invalid_argument);
}

TEST(TeacherTargets, ZeroLogitProxyEqualsLabelSmoothingWithRescaledAlpha) {
  // Uniform C spreads alpha over K-1 classes; LS spreads it over K. The two
  // coincide when the LS weight is alpha * K / (K - 1).
  const std::size_t k = 5;
  const lf::CMatrix c(k, 0.1);
  for (std::size_t y = 0; y < k; ++y) {
    const auto pt = lf::proxy_teacher_target(c, y, k);
    const auto ls = lf::ls_target(y, k, 0.1 * double(k) / double(k - 1));
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(pt[i], ls[i], 1e-12);
  }
}

TEST(AllStrategies, EmitValidDistributions) {
  lf::Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.below(10);
    const std::size_t y = rng.below(k);
    const auto c = random_c(rng, k, rng.uniform(0, 0.99), 30.0);
    lf::Matrix means(k, k);
    for (std::size_t r = 0; r < k; ++r) {
      const auto p = random_distribution(rng, k, 10.0);
      std::copy(p.begin(), p.end(), means.row(r).begin());
    }
    for (const auto& t : {lf::onehot_target(y, k), lf::ls_target(y, k, rng.uniform()), lf::lspp_target(c, y),
                          lf::ols_target(means, y, rng.uniform()).target,
                          lf::teacher_target(random_distribution(rng, k)), lf::proxy_teacher_target(c, y, k)}) {
      EXPECT_TRUE(t.is_valid());
    }
  }
}

TEST(Export, CsvHasHeaderAndZeroDiagonalAndJsonRoundTrips) {
  lf::Rng rng(5);
  const auto c = random_c(rng, 3, 0.2);
  const auto dir = std::filesystem::temp_directory_path();
  const auto csv = (dir / "lf_c.csv").string(), js = (dir / "lf_c.json").string();
  lf::export_cmatrix(c, csv, js, {{"epochs", 3}});
  std::ifstream in(csv);
  std::string header, row0;
  std::getline(in, header);
  std::getline(in, row0);
  EXPECT_EQ(header, "0,1,2");
  EXPECT_EQ(row0.substr(0, 2), "0,");
  EXPECT_EQ(lf::load_cmatrix(js), c);
  std::filesystem::remove(csv);
  std::filesystem::remove(js);
}
