#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fipinn/network.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"

using namespace fipinn;

namespace {

std::vector<int> seven_by_twenty() {
  std::vector<int> w{2};
  for (int i = 0; i < 7; ++i) w.push_back(20);
  w.push_back(1);
  return w;
}

std::vector<double> random_point(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(d);
  for (double& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST(Network, ParamCountSevenByTwenty) {
  // 2*20 + 20, six 20x20 blocks with biases, 20*1 + 1.
  const int by_hand = 2 * 20 + 20 + 6 * (20 * 20 + 20) + 20 * 1 + 1;
  EXPECT_EQ(by_hand, 2601);
  const auto widths = seven_by_twenty();
  EXPECT_EQ(param_count(widths), 2601u);
  EXPECT_EQ(init_network(widths, 3).params.size(), 2601u);
}

TEST(Network, BiasesStartAtZero) {
  const Network net = init_network({1, 1}, 42);
  EXPECT_EQ(net.biases(0)(0), 0.0);
  const Network deep = init_network({3, 7, 5, 1}, 9);
  for (std::size_t l = 0; l < deep.num_layers(); ++l) EXPECT_TRUE((deep.biases(l).array() == 0.0).all());
}

TEST(Network, GlorotBound) {
  const Network net = init_network({3, 7, 5, 1}, 9);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(net.in_width(l) + net.out_width(l)));
    EXPECT_LE(net.weights(l).cwiseAbs().maxCoeff(), bound);
  }
}

TEST(Network, InitIsReproducible) {
  const auto a = init_network({2, 20, 20, 1}, 77);
  const auto b = init_network({2, 20, 20, 1}, 77);
  const auto c = init_network({2, 20, 20, 1}, 78);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
}

TEST(Network, InvalidWidthsRejected) {
  EXPECT_THROW(init_network({2, 0, 1}, 1), ConfigError);
  EXPECT_THROW(init_network({2, -3, 1}, 1), ConfigError);
  EXPECT_THROW(init_network({2}, 1), ConfigError);
}

TEST(Network, DimensionMismatchRejected) {
  const Network net = init_network({2, 4, 1}, 1);
  const std::vector<double> x{0.1, 0.2, 0.3};
  EXPECT_THROW(forward(net, x), DimensionError);
  EXPECT_THROW(forward_jet(net, x, JetMode::grad), DimensionError);
}

TEST(Network, ZeroWeightsGiveFinalBias) {
  Network net = init_network({3, 6, 4, 1}, 5);
  std::fill(net.params.begin(), net.params.end(), 0.0);
  net.params.back() = 1.75;
  const std::vector<double> xs[] = {{0.0, 0.0, 0.0}, {-3.0, 2.0, 9.0}, {0.5, 0.25, -0.125}};
  for (const auto& x : xs) EXPECT_EQ(forward(net, x), 1.75);
}

TEST(Network, SingleHiddenUnitZeroInput) {
  // [1, 1, 1]: hidden w = 0, b = 0; output w = 1, b = 0 -> tanh(0) * 1 = 0.
  Network net = init_network({1, 1, 1}, 1);
  net.params = {0.0, 0.0, 1.0, 0.0};
  EXPECT_EQ(forward(net, std::vector<double>{0.7}), 0.0);
}

TEST(Network, MatchesLoopEvaluator) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + trial % 4;
    const Network net = oracle::random_net({static_cast<int>(d), 12, 9, 7, 1}, 100 + trial);
    const auto x = random_point(d, rng);
    EXPECT_NEAR(forward(net, x), oracle::reference_forward(net, x), 1e-12);
  }
}

TEST(Network, BatchMatchesSinglePoint) {
  const Network net = oracle::random_net({2, 16, 16, 1}, 4);
  std::mt19937_64 rng(5);
  PointCloud pts(2, 50);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const auto x = random_point(2, rng);
    pts.col(j) = Eigen::Vector2d(x[0], x[1]);
  }
  const Eigen::VectorXd batch = forward_batch(net, pts);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    EXPECT_EQ(batch(j), forward(net, std::span<const double>(pts.col(j).data(), 2)));
  }
}

TEST(Network, JetValueBitIdenticalAcrossModes) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 1 + trial % 3;
    const Network net = oracle::random_net({static_cast<int>(d), 10, 10, 1}, 200 + trial);
    const auto x = random_point(d, rng);
    const double v = forward(net, x);
    for (JetMode m : {JetMode::value, JetMode::grad, JetMode::hess_diag, JetMode::hess_full}) {
      EXPECT_EQ(forward_jet(net, x, m).value, v);
    }
  }
}

TEST(Network, InputGradientMatchesFiniteDifferences) {
  const Network net = oracle::random_net({3, 10, 10, 1}, 8);
  std::mt19937_64 rng(9);
  const oracle::ScalarFn u = [&](const std::vector<double>& y) { return forward(net, y); };
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_point(3, rng);
    const Jet2 jet = forward_jet(net, x, JetMode::grad);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_LT(oracle::rel_err(jet.grad(static_cast<Eigen::Index>(i)), oracle::central_diff(u, x, i, 1e-5)), 1e-6);
    }
  }
}

TEST(Network, HessianDiagonalMatchesFiniteDifferences) {
  const Network net = oracle::random_net({2, 10, 10, 1}, 12);
  std::mt19937_64 rng(13);
  const oracle::ScalarFn u = [&](const std::vector<double>& y) { return forward(net, y); };
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_point(2, rng);
    const Jet2 jet = forward_jet(net, x, JetMode::hess_diag);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_LT(oracle::rel_err(jet.hess_diag(static_cast<Eigen::Index>(i)), oracle::central_second(u, x, i, 1e-4)),
                1e-4);
    }
  }
}

TEST(Network, MixedPartialsMatchFiniteDifferences) {
  const Network net = oracle::random_net({3, 8, 8, 1}, 31);
  const std::vector<double> x{0.3, -0.2, 0.6};
  const Jet2 jet = forward_jet(net, x, JetMode::hess_full);
  for (std::size_t j = 0; j < 3; ++j) {
    const oracle::ScalarFn dj = [&](const std::vector<double>& y) {
      return forward_jet(net, y, JetMode::grad).grad(static_cast<Eigen::Index>(j));
    };
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_LT(oracle::rel_err(jet.hessian(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)),
                                oracle::central_diff(dj, x, k, 1e-5)),
                1e-6);
    }
  }
}

TEST(Network, NearlyLinearNetHasVanishingHessian) {
  Network net = oracle::random_net({2, 6, 6, 1}, 3);
  for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
    const std::size_t off = net.weight_offset(l);
    for (std::size_t i = 0; i < net.out_width(l) * net.in_width(l); ++i) net.params[off + i] *= 1e-6;
    const std::size_t boff = net.bias_offset(l);
    for (std::size_t i = 0; i < net.out_width(l); ++i) net.params[boff + i] = 0.0;
  }
  const Jet2 jet = forward_jet(net, std::vector<double>{0.4, -0.9}, JetMode::hess_full);
  EXPECT_LT(jet.hessian.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Network, FullHessianSymmetricAndMatchesDiagonalMode) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = oracle::random_net({3, 9, 9, 1}, 300 + trial);
    const auto x = random_point(3, rng);
    const Jet2 full = forward_jet(net, x, JetMode::hess_full);
    const Jet2 diag = forward_jet(net, x, JetMode::hess_diag);
    const double scale = std::max(1.0, full.hessian.cwiseAbs().maxCoeff());
    EXPECT_LE((full.hessian - full.hessian.transpose()).cwiseAbs().maxCoeff(), 1e-12 * scale);
    EXPECT_LE((full.hess_diag - diag.hess_diag).cwiseAbs().maxCoeff(), 1e-12 * scale);
    EXPECT_EQ(full.grad, diag.grad);
  }
}

TEST(Network, ParamGradientOfSquaredOutput) {
  const Network net = oracle::random_net({2, 12, 12, 1}, 17);
  const std::vector<double> x0{0.25, -0.4};
  const double u0 = forward(net, x0);
  const PointCloud pt = Eigen::Vector2d(x0[0], x0[1]);
  JetBatch seeds = JetBatch::zeros(JetMode::value, 2, 1);
  seeds.value(0) = 2.0 * u0;
  const auto g = param_gradient(net, pt, JetMode::value, seeds);
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<std::size_t> which(0, net.params.size() - 1);
  for (int c = 0; c < 20; ++c) {
    const std::size_t k = which(rng);
    Network probe = net;
    const oracle::ScalarFn loss = [&](const std::vector<double>& t) {
      probe.params[k] = t[0];
      const double v = forward(probe, x0);
      return v * v;
    };
    EXPECT_LT(oracle::rel_err(g[k], oracle::central_diff(loss, {net.params[k]}, 0, 1e-5)), 1e-5) << "param " << k;
  }
}

TEST(Network, ParamGradientThroughSecondOrderChannels) {
  // L = (u_xx + u_yy)^2 + 0.3 u_x at one point; FD on the parameters of the jet itself.
  const Network net = oracle::random_net({2, 8, 8, 1}, 23);
  const std::vector<double> x0{-0.3, 0.45};
  const PointCloud pt = Eigen::Vector2d(x0[0], x0[1]);
  auto objective = [&](const Network& n) {
    const Jet2 j = forward_jet(n, x0, JetMode::hess_diag);
    const double lap = j.hess_diag.sum();
    return lap * lap + 0.3 * j.grad(0);
  };
  const Jet2 j = forward_jet(net, x0, JetMode::hess_diag);
  JetBatch seeds = JetBatch::zeros(JetMode::hess_diag, 2, 1);
  seeds.grad(0, 0) = 0.3;
  seeds.second(0, 0) = seeds.second(1, 0) = 2.0 * j.hess_diag.sum();
  const auto g = param_gradient(net, pt, JetMode::hess_diag, seeds);
  for (std::size_t k = 0; k < net.params.size(); k += 7) {
    Network probe = net;
    const oracle::ScalarFn f = [&](const std::vector<double>& t) {
      probe.params[k] = t[0];
      return objective(probe);
    };
    EXPECT_LT(oracle::rel_err(g[k], oracle::central_diff(f, {net.params[k]}, 0, 1e-5)), 1e-5) << "param " << k;
  }
}

TEST(Network, ZeroSeedGivesZeroGradient) {
  const Network net = oracle::random_net({2, 5, 1}, 2);
  const PointCloud pts = PointCloud::Random(2, 4);
  const auto g = param_gradient(net, pts, JetMode::hess_diag, JetBatch::zeros(JetMode::hess_diag, 2, 4));
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Network, EmptyBatchRejected) {
  const Network net = oracle::random_net({2, 5, 1}, 2);
  EXPECT_THROW(param_gradient(net, PointCloud(2, 0), JetMode::value, JetBatch::zeros(JetMode::value, 2, 0)),
               ConfigError);
}

TEST(Network, DuplicatedPointDoublesGradient) {
  const Network net = oracle::random_net({2, 10, 10, 1}, 29);
  const Eigen::Vector2d x(0.1, 0.7);
  JetBatch one = JetBatch::zeros(JetMode::hess_diag, 2, 1);
  one.value(0) = 0.4;
  one.grad(1, 0) = -1.3;
  one.second(0, 0) = 0.8;
  PointCloud two_pts(2, 2);
  two_pts << x, x;
  JetBatch two = JetBatch::zeros(JetMode::hess_diag, 2, 2);
  for (Eigen::Index p = 0; p < 2; ++p) {
    two.value(p) = one.value(0);
    two.grad.col(p) = one.grad.col(0);
    two.second.col(p) = one.second.col(0);
  }
  const auto g1 = param_gradient(net, x, JetMode::hess_diag, one);
  const auto g2 = param_gradient(net, two_pts, JetMode::hess_diag, two);
  for (std::size_t k = 0; k < g1.size(); ++k) {
    EXPECT_NEAR(g2[k], 2.0 * g1[k], 1e-12 * std::max(1.0, std::abs(g1[k]))) << "param " << k;
  }
}

TEST(Network, DeterministicEvaluationAndGradient) {
  const Network a = init_network({2, 20, 20, 1}, 123);
  const Network b = init_network({2, 20, 20, 1}, 123);
  const PointCloud pts = PointCloud::Random(2, 33);
  JetBatch seeds = JetBatch::zeros(JetMode::hess_diag, 2, 33);
  seeds.second.setConstant(0.5);
  seeds.value.setConstant(-0.25);
  EXPECT_EQ(forward_batch(a, pts), forward_batch(b, pts));
  EXPECT_EQ(param_gradient(a, pts, JetMode::hess_diag, seeds), param_gradient(b, pts, JetMode::hess_diag, seeds));
}

TEST(Network, RandomizedGradientSweep) {
  const auto rep = oracle::run_gradient_checks(100, 2024);
  EXPECT_LT(rep.input_grad, 1e-6);
  EXPECT_LT(rep.hess_diag, 1e-4);
  EXPECT_LT(rep.param_grad, 1e-5);
}
