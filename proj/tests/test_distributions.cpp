#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fipinn/distributions.hpp"
#include "oracles.hpp"

using namespace fipinn;

namespace {

const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

DomainSpec square() { return DomainSpec::box({{-1.0, 1.0}, {-1.0, 1.0}}); }

Eigen::MatrixXd mat2(double a, double b, double c, double d) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, c, d;
  return m;
}

/// MC estimate of the integral of p.density over `box` with its standard error.
std::pair<double, double> integrate_over(const Proposal& p, const DomainSpec& box, std::size_t n, std::uint64_t seed) {
  const PointCloud x = sample(Proposal::uniform(box), n, seed);
  Eigen::VectorXd v(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) v(j) = box.volume() * p.density(x.col(j));
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace

TEST(Sample, UniformMoments) {
  const PointCloud x = sample(Proposal::uniform(square()), 10000, 1);
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_LT(std::abs(x.row(i).mean()), 3.0 * (1.0 / std::sqrt(3.0)) / 100.0);
  EXPECT_LE(x.maxCoeff(), 1.0);
  EXPECT_GE(x.minCoeff(), -1.0);
}

TEST(Sample, EmptyAndDeterministic) {
  const Proposal p = Proposal::truncated_gaussian(Eigen::Vector2d(0.5, 0.5), 0.2 * Eigen::Matrix2d::Identity(), square(), 1);
  EXPECT_EQ(sample(p, 0, 3).cols(), 0);
  EXPECT_EQ(sample(p, 50, 3), sample(p, 50, 3));
  EXPECT_NE(sample(p, 50, 3), sample(p, 50, 4));
}

TEST(Sample, TruncatedSamplesStayInSupport) {
  const Proposal p = Proposal::truncated_gaussian(Eigen::Vector2d(0.9, -0.9), Eigen::Matrix2d::Identity(), square(), 2);
  const PointCloud x = sample(p, 5000, 5);
  for (Eigen::Index j = 0; j < x.cols(); ++j) EXPECT_TRUE(square().contains(x.col(j)));
  const Proposal g = Proposal::gmm({GaussianComponent::make(0.5, Eigen::Vector2d(-0.8, 0.8), 0.3 * Eigen::Matrix2d::Identity()),
                                    GaussianComponent::make(0.5, Eigen::Vector2d(2.0, 2.0), Eigen::Matrix2d::Identity())},
                                   square(), 3);
  const PointCloud y = sample(g, 5000, 5);
  for (Eigen::Index j = 0; j < y.cols(); ++j) EXPECT_TRUE(square().contains(y.col(j)));
}

TEST(Sample, RejectionCapReportsIllMatchedProposal) {
  const DomainSpec line = DomainSpec::box({{-1.0, 1.0}});
  Eigen::MatrixXd cov(1, 1);
  cov << 1.0;
  const Proposal p = Proposal::truncated_gaussian(Eigen::VectorXd::Constant(1, 3.5), cov, line, 1);
  ASSERT_GT(p.trunc_norm, 0.0);
  ASSERT_LT(p.trunc_norm, 0.02);
  Rng rng(1);
  EXPECT_THROW(sample(p, 100, rng, 5), SamplingError);
  Eigen::MatrixXd far(1, 1);
  far << 0.01;
  EXPECT_THROW(Proposal::truncated_gaussian(Eigen::VectorXd::Constant(1, 50.0), far, line, 1), SamplingError);
}

TEST(Density, ClosedForms) {
  Eigen::MatrixXd one(1, 1);
  one << 1.0;
  const Proposal g = Proposal::gaussian(Eigen::VectorXd::Zero(1), one);
  EXPECT_NEAR(g.density(Eigen::VectorXd::Zero(1)), kInvSqrt2Pi, 1e-15);
  const Proposal u = Proposal::uniform(square());
  EXPECT_EQ(u.density(Eigen::Vector2d(0.3, -0.2)), 0.25);
  EXPECT_EQ(u.density(Eigen::Vector2d(1.3, -0.2)), 0.0);
  const Proposal t = Proposal::truncated_gaussian(Eigen::Vector2d(0.0, 0.0), Eigen::Matrix2d::Identity(), square(), 1);
  EXPECT_EQ(t.density(Eigen::Vector2d(1.5, 0.0)), 0.0);
  EXPECT_GT(t.density(Eigen::Vector2d(0.5, 0.0)), 0.0);
}

TEST(Density, HalfNormalNormalizer) {
  const DomainSpec half = DomainSpec::box({{0.0, 1e6}});
  Eigen::MatrixXd one(1, 1);
  one << 1.0;
  const Proposal t = Proposal::truncated_gaussian(Eigen::VectorXd::Zero(1), one, half, 7);
  EXPECT_EQ(t.trunc_samples, kDefaultNormalizerSamples);
  EXPECT_LT(std::abs(t.trunc_norm - 0.5), 3.0 * t.trunc_norm_stderr);
  // density(0) = phi(0) / Z against 2 phi(0); the Z error propagates relatively.
  const double exact = 2.0 * kInvSqrt2Pi;
  const double rel_se = t.trunc_norm_stderr / t.trunc_norm;
  EXPECT_LT(std::abs(t.density(Eigen::VectorXd::Zero(1)) - exact), 3.0 * rel_se * exact);
}

TEST(Density, IntervalNormalizersMatchClosedForm) {
  Eigen::MatrixXd cov(1, 1);
  cov << 0.25;
  for (double mu : {-1.2, 0.0, 0.3, 0.9}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Proposal t = Proposal::truncated_gaussian(Eigen::VectorXd::Constant(1, mu), cov,
                                                      DomainSpec::box({{-1.0, 1.0}}), seed);
      const double exact = oracle::normal_cdf((1.0 - mu) / 0.5) - oracle::normal_cdf((-1.0 - mu) / 0.5);
      EXPECT_LT(std::abs(t.trunc_norm - exact), 3.0 * t.trunc_norm_stderr + 1e-12) << mu << " " << seed;
    }
  }
}

TEST(Density, IntegratesToOneOverSupport) {
  const Proposal t = Proposal::truncated_gaussian(Eigen::Vector2d(0.6, 0.4), mat2(0.1, 0.03, 0.03, 0.2), square(), 4);
  const Proposal g = Proposal::gmm({GaussianComponent::make(0.3, Eigen::Vector2d(-0.5, 0.5), 0.05 * Eigen::Matrix2d::Identity()),
                                    GaussianComponent::make(0.7, Eigen::Vector2d(0.5, -0.2), 0.3 * Eigen::Matrix2d::Identity())},
                                   square(), 4);
  for (const Proposal* p : {&t, &g}) {
    const auto [integral, se] = integrate_over(*p, square(), 200000, 9);
    const double z_rel = p->trunc_norm_stderr / p->trunc_norm;
    EXPECT_LT(std::abs(integral - 1.0), 3.0 * std::hypot(se, z_rel)) << to_string(p->kind);
  }
  const auto [u_int, u_se] = integrate_over(Proposal::uniform(square()), square(), 1000, 1);
  EXPECT_NEAR(u_int, 1.0, 1e-12);
  EXPECT_EQ(u_se, 0.0);
}

TEST(Density, SupportMatchesDomain) {
  const Proposal t = Proposal::truncated_gaussian(Eigen::Vector2d(0.0, 0.0), 4.0 * Eigen::Matrix2d::Identity(), square(), 1);
  const PointCloud probe = sample(Proposal::uniform(DomainSpec::box({{-2.0, 2.0}, {-2.0, 2.0}})), 2000, 3);
  for (Eigen::Index j = 0; j < probe.cols(); ++j) {
    EXPECT_EQ(t.density(probe.col(j)) > 0.0, square().contains(probe.col(j)));
  }
}

TEST(Density, InvalidCovariance) {
  EXPECT_THROW(Proposal::gaussian(Eigen::Vector2d::Zero(), mat2(1.0, 2.0, 2.0, 1.0)), NumericalError);
  EXPECT_THROW(Proposal::gaussian(Eigen::Vector2d::Zero(), mat2(1.0, 0.5, 0.0, 1.0)), NumericalError);
  EXPECT_THROW(Proposal::gaussian(Eigen::Vector2d::Zero(), Eigen::Matrix3d::Identity()), DimensionError);
}

TEST(Density, MixtureWeightsNormalized) {
  const Proposal g = Proposal::gmm({GaussianComponent::make(0.2, Eigen::Vector2d(0.0, 0.0), Eigen::Matrix2d::Identity()),
                                    GaussianComponent::make(0.6, Eigen::Vector2d(1.0, 0.0), Eigen::Matrix2d::Identity())},
                                   DomainSpec::unbounded(2), 1);
  EXPECT_NEAR(g.components[0].weight + g.components[1].weight, 1.0, 1e-12);
  EXPECT_NEAR(g.components[0].weight, 0.25, 1e-15);
  EXPECT_EQ(g.trunc_norm, 1.0);
}

TEST(FitMoments, HandExample) {
  PointCloud s(2, 2);
  s << 0.0, 2.0,
       0.0, 0.0;
  const MomentFit f = fit_moments(s);
  EXPECT_EQ(f.mean, Eigen::Vector2d(1.0, 0.0));
  EXPECT_EQ(f.cov, mat2(2.0 + kCovarianceJitter, 0.0, 0.0, kCovarianceJitter));
}

TEST(FitMoments, IdenticalSamplesGiveJitter) {
  const PointCloud s = Eigen::Vector2d(0.3, -0.4).replicate(1, 10);
  // The mean carries rounding error, so off-diagonals are ~1e-33 rather than 0.
  EXPECT_LT((fit_moments(s).cov - kCovarianceJitter * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-20);
  EXPECT_THROW(fit_moments(s.leftCols(1)), ConfigError);
}

TEST(FitMoments, PermutationInvariant) {
  const PointCloud s = sample(Proposal::uniform(square()), 40, 2);
  PointCloud r = s.rowwise().reverse();
  const MomentFit a = fit_moments(s), b = fit_moments(r);
  EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a.cov - b.cov).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FitMoments, MeanErrorShrinksWithSampleSize) {
  const Proposal g = Proposal::gaussian(Eigen::Vector2d(1.0, -2.0), mat2(1.0, 0.3, 0.3, 0.5));
  std::vector<double> medians;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    std::vector<double> errs;
    for (std::uint64_t seed : {11u, 12u, 13u}) errs.push_back((fit_moments(sample(g, n, seed)).mean - g.mean()).norm());
    std::sort(errs.begin(), errs.end());
    medians.push_back(errs[1]);
  }
  EXPECT_GT(medians[0], medians[1]);
  EXPECT_GT(medians[1], medians[2]);
}

TEST(FitWeightedCenter, Examples) {
  PointCloud s(1, 2);
  s << 0.0, 4.0;
  const MomentFit f = fit_weighted_center(s, Eigen::Vector2d(1.0, 3.0));
  EXPECT_EQ(f.mean(0), 3.0);
  // Covariance about the weighted center: ((0 - 3)^2 + (4 - 3)^2) / 1.
  EXPECT_EQ(f.cov(0, 0), 10.0);

  const PointCloud u = sample(Proposal::uniform(square()), 30, 4);
  const MomentFit c = fit_weighted_center(u, Proposal::uniform(square()));
  const MomentFit m = fit_moments(u);
  EXPECT_LT((c.mean - m.mean).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((c.cov - m.cov).cwiseAbs().maxCoeff(), 1e-15);

  const PointCloud same = Eigen::Vector2d(0.1, 0.2).replicate(1, 5);
  const Eigen::MatrixXd jit = fit_weighted_center(same, Eigen::VectorXd::Ones(5)).cov;
  EXPECT_LT((jit - kCovarianceJitter * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-20);
  EXPECT_THROW(fit_weighted_center(u, Eigen::VectorXd::Zero(30)), NumericalError);
}

TEST(Gmm, RecoversTwoClusters) {
  const Proposal a = Proposal::gaussian(Eigen::Vector2d(5.0, 5.0), 0.09 * Eigen::Matrix2d::Identity());
  const Proposal b = Proposal::gaussian(Eigen::Vector2d(-5.0, -5.0), 0.09 * Eigen::Matrix2d::Identity());
  PointCloud s(2, 1000);
  s << sample(a, 500, 1), sample(b, 500, 2);
  const GmmFit f = fit_gmm_em(s, 2, 3);
  ASSERT_EQ(f.components.size(), 2u);
  for (const Eigen::Vector2d& truth : {Eigen::Vector2d(5.0, 5.0), Eigen::Vector2d(-5.0, -5.0)}) {
    double best = 1e9;
    for (const auto& c : f.components) {
      if ((c.mean - truth).norm() < best) {
        best = (c.mean - truth).norm();
        EXPECT_NEAR(c.weight, 0.5, 0.05);
      }
    }
    EXPECT_LT(best, 0.1);
  }
  EXPECT_TRUE(f.converged);
}

TEST(Gmm, LogLikelihoodNonDecreasing) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const PointCloud s = sample(Proposal::uniform(square()), 300, seed);
    const GmmFit f = fit_gmm_em(s, 3, seed, 100, 1e-12);
    for (std::size_t i = 1; i < f.log_likelihood.size(); ++i) EXPECT_GE(f.log_likelihood[i], f.log_likelihood[i - 1]);
  }
}

TEST(Gmm, SingleComponentIsMomentFit) {
  const PointCloud s = sample(Proposal::gaussian(Eigen::Vector2d(0.2, 0.1), mat2(0.5, 0.1, 0.1, 0.3)), 200, 5);
  const GmmFit f = fit_gmm_em(s, 1, 1);
  const MomentFit m = fit_moments(s);
  ASSERT_EQ(f.components.size(), 1u);
  EXPECT_LT((f.components[0].mean - m.mean).cwiseAbs().maxCoeff(), 1e-12);
  // EM uses the maximum-likelihood divisor N.
  EXPECT_LT((f.components[0].cov * 200.0 / 199.0 - m.cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gmm, WeightedEmMatchesReplication) {
  // Integer sample weights are equivalent to repeating samples.
  const PointCloud s = sample(Proposal::uniform(square()), 20, 6);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(20);
  w.head(10).setConstant(2.0);
  PointCloud rep(2, 30);
  rep << s, s.leftCols(10);
  const GmmFit a = fit_gmm_em(s, 1, 1, 200, 1e-8, &w);
  const GmmFit b = fit_gmm_em(rep, 1, 1);
  EXPECT_LT((a.components[0].mean - b.components[0].mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.components[0].cov - b.components[0].cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gmm, Preconditions) {
  const PointCloud s = sample(Proposal::uniform(square()), 5, 1);
  EXPECT_THROW(fit_gmm_em(s, 0, 1), ConfigError);
  EXPECT_THROW(fit_gmm_em(s, 2, 1), ConfigError);
}
