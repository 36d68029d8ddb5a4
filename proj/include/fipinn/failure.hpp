#pragma once

// Limit-state functions g(x) = |r(x)| - eps_r, failure-probability estimators
// and the self-adaptive importance sampling (SAIS) proposal loop.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fipinn/distributions.hpp"
#include "fipinn/error.hpp"
#include "fipinn/network.hpp"
#include "fipinn/parallel.hpp"
#include "fipinn/problems.hpp"
#include "fipinn/random.hpp"
#include "fipinn/training.hpp"

namespace fipinn {

/// |r| (or any nonnegative performance value) at every column of a point cloud.
using BatchResidual = std::function<Eigen::VectorXd(const PointCloud&)>;

struct LimitState {
  double eps_r = 0.1;
  BatchResidual residual_fn;

  Eigen::VectorXd eval(const PointCloud& x) const { return residual_fn(x).array() - eps_r; }
};

inline double lsf_eval(const LimitState& ls, std::span<const double> x) {
  const PointCloud pt = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return ls.eval(pt)(0);
}

/// LSF from an arbitrary pointwise performance function.
inline LimitState make_limit_state(std::function<double(std::span<const double>)> perf, double eps_r) {
  LimitState ls;
  ls.eps_r = eps_r;
  ls.residual_fn = [perf = std::move(perf)](const PointCloud& x) {
    Eigen::VectorXd out(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      out(j) = perf(std::span<const double>(x.col(j).data(), static_cast<std::size_t>(x.rows())));
    return out;
  };
  return ls;
}

namespace detail {

inline Eigen::VectorXd residual_parallel(const Network& net, const PdeProblem& problem, const PointCloud& x) {
  constexpr Eigen::Index chunk = 256;
  const Eigen::Index n = x.cols();
  Eigen::VectorXd out(n);
  const auto n_chunks = static_cast<std::size_t>((n + chunk - 1) / chunk);
  parallel_chunks(n_chunks, [&](std::size_t c) {
    const Eigen::Index s = static_cast<Eigen::Index>(c) * chunk;
    const Eigen::Index m = std::min(chunk, n - s);
    out.segment(s, m) = problem.residual_batch(net, x.middleCols(s, m));
  });
  return out;
}

}  // namespace detail

/// g = |r(x; theta)| - eps_r for a snapshot of `net`.
inline LimitState residual_limit_state(const Network& net, const PdeProblem& problem, double eps_r) {
  if (!(eps_r > 0.0)) throw ConfigError("eps_r must be positive");
  auto snap = std::make_shared<const Network>(net);
  auto prob = std::make_shared<const PdeProblem>(problem);
  LimitState ls;
  ls.eps_r = eps_r;
  ls.residual_fn = [snap, prob](const PointCloud& x) -> Eigen::VectorXd {
    return detail::residual_parallel(*snap, *prob, x).cwiseAbs();
  };
  return ls;
}

/// Q(x, t) = w_i |r(x, t)| with i the slab of t and w the given slab weights.
inline LimitState causal_limit_state_from_weights(const Network& net, const PdeProblem& problem,
                                                  std::vector<double> weights, double eps_r) {
  if (!problem.time_axis()) throw ConfigError(problem.id + " has no time coordinate");
  if (weights.empty()) throw ConfigError("causal limit state needs at least one slab weight");
  if (!(eps_r > 0.0)) throw ConfigError("eps_r must be positive");
  auto snap = std::make_shared<const Network>(net);
  auto prob = std::make_shared<const PdeProblem>(problem);
  const Interval tr = problem.domain.bounds[*problem.time_axis()];
  const auto axis = static_cast<Eigen::Index>(*problem.time_axis());
  LimitState ls;
  ls.eps_r = eps_r;
  ls.residual_fn = [snap, prob, w = std::move(weights), tr, axis](const PointCloud& x) -> Eigen::VectorXd {
    Eigen::VectorXd r = detail::residual_parallel(*snap, *prob, x).cwiseAbs();
    for (Eigen::Index j = 0; j < x.cols(); ++j) r(j) *= w[slab_index(x(axis, j), tr.lo, tr.hi, w.size())];
    return r;
  };
  return ls;
}

/// Causal LSF with weights from the current slab losses over `collocation`.
inline LimitState causal_limit_state(const Network& net, const PdeProblem& problem, const CausalConfig& cfg,
                                     double eps_r, const PointCloud& collocation) {
  if (!problem.time_axis()) throw ConfigError(problem.id + " has no time coordinate");
  const std::vector<double> losses = slab_losses(net, problem, collocation, cfg.n_slabs);
  return causal_limit_state_from_weights(net, problem, causal_weights(losses, cfg.epsilon), eps_r);
}

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  std::size_t n_fail = 0;
  double max_weight = 0.0;
  bool weight_warning = false;
};

inline constexpr double kWeightWarning = 1e6;

namespace detail {

inline Estimate summarize(const Eigen::VectorXd& terms, std::size_t n_fail, double max_weight) {
  Estimate e;
  e.n = static_cast<std::size_t>(terms.size());
  e.n_fail = n_fail;
  e.max_weight = max_weight;
  e.weight_warning = max_weight > kWeightWarning;
  if (e.n == 0) return e;
  e.value = terms.mean();
  if (e.n > 1) {
    const double var = (terms.array() - e.value).square().sum() / static_cast<double>(e.n - 1);
    e.std_error = std::sqrt(var / static_cast<double>(e.n));
  }
  return e;
}

/// Indicator-times-weight terms omega / h over draws from `proposal`.
inline Estimate importance_terms(const Eigen::VectorXd& g, const PointCloud& x, const Proposal& prior,
                                 const Proposal& proposal, std::vector<Eigen::Index>* failing) {
  Eigen::VectorXd terms = Eigen::VectorXd::Zero(x.cols());
  std::size_t n_fail = 0;
  double max_w = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (!(g(j) > 0.0)) continue;
    ++n_fail;
    if (failing) failing->push_back(j);
    const double lw = prior.log_density(x.col(j));
    if (lw == -std::numeric_limits<double>::infinity()) continue;
    const double lh = proposal.log_density(x.col(j));
    if (lh == -std::numeric_limits<double>::infinity()) {
      throw SupportError("proposal density vanishes at a failing point with positive prior density");
    }
    const double w = std::exp(lw - lh);
    terms(j) = w;
    max_w = std::max(max_w, w);
  }
  return summarize(terms, n_fail, max_w);
}

}  // namespace detail

/// (1/n) sum 1[g(x_i) > 0], x_i ~ prior.
inline Estimate pf_mc(const LimitState& ls, const Proposal& prior, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("pf_mc needs n >= 1");
  const PointCloud x = sample(prior, n, seed);
  const Eigen::VectorXd g = ls.eval(x);
  Eigen::VectorXd terms(x.cols());
  std::size_t n_fail = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    terms(j) = g(j) > 0.0 ? 1.0 : 0.0;
    n_fail += g(j) > 0.0;
  }
  return detail::summarize(terms, n_fail, n_fail ? 1.0 : 0.0);
}

/// (1/n) sum 1[g(x_i) > 0] omega(x_i) / h(x_i), x_i ~ proposal.
inline Estimate pf_is(const LimitState& ls, const Proposal& prior, const Proposal& proposal, std::size_t n,
                      std::uint64_t seed) {
  if (n < 1) throw ConfigError("pf_is needs n >= 1");
  detail::require_dim(proposal.dim(), prior.dim(), "proposal");
  const PointCloud x = sample(proposal, n, seed);
  return detail::importance_terms(ls.eval(x), x, prior, proposal, nullptr);
}

struct SaisConfig {
  enum class Model { truncated_gaussian, gmm };
  /// Points behind the final proposal when a round has N_eta >= N_p: every
  /// failing sample, or only the top N_p as in the plain algorithm.
  enum class FinalFit { all_failing, top_np };
  std::size_t n1 = 300;
  std::size_t n2 = 1000;
  double p0 = 0.1;
  std::size_t max_rounds = 10;
  Model model = Model::truncated_gaussian;
  std::size_t gmm_components = 2;
  std::size_t normalizer_samples = kDefaultNormalizerSamples;
  FinalFit final_fit = FinalFit::all_failing;

  std::size_t n_p() const { return static_cast<std::size_t>(std::floor(p0 * static_cast<double>(n1))); }
};

struct SaisRound {
  std::size_t round = 0;
  std::size_t n_eta = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd cov_diag;
};

struct SaisResult {
  enum class Termination { enough_failures, max_iters };
  double p_hat = 0.0;
  double std_error = 0.0;
  double max_weight = 0.0;
  bool weight_warning = false;
  PointCloud adaptive_points;
  Proposal final_proposal;
  std::size_t iterations_used = 0;
  Termination terminated_by = Termination::max_iters;
  std::vector<SaisRound> rounds;
};

inline const char* to_string(SaisResult::Termination t) {
  return t == SaisResult::Termination::enough_failures ? "enough_failures" : "max_iters";
}

namespace detail {

inline PointCloud select_columns(const PointCloud& x, std::span<const Eigen::Index> idx) {
  PointCloud out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = x.col(idx[i]);
  return out;
}

/// Indices sorted by g descending; ties keep draw order.
inline std::vector<Eigen::Index> rank_descending(const Eigen::VectorXd& g) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(g.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return g(a) > g(b); });
  return order;
}

inline Proposal fit_proposal(const PointCloud& elite, const Proposal& prior, const SaisConfig& cfg,
                             std::uint64_t seed, const Eigen::VectorXd* prior_weights) {
  const std::uint64_t z_seed = derive_seed(seed, Stream::normalizer);
  if (cfg.model == SaisConfig::Model::gmm) {
    const std::size_t k = std::min<std::size_t>(
        cfg.gmm_components, static_cast<std::size_t>(elite.cols()) / (static_cast<std::size_t>(elite.rows()) + 1));
    const GmmFit fit = fit_gmm_em(elite, std::max<std::size_t>(k, 1), seed, 200, 1e-8, prior_weights);
    return Proposal::gmm(fit.components, prior.domain, z_seed, cfg.normalizer_samples);
  }
  const MomentFit fit = prior_weights ? fit_weighted_center(elite, *prior_weights) : fit_moments(elite);
  return Proposal::truncated_gaussian(fit.mean, fit.cov, prior.domain, z_seed, cfg.normalizer_samples);
}

}  // namespace detail

/// Self-adaptive importance sampling. h_1 = prior; each round draws N1 points,
/// ranks them by g and either refits the proposal on the top N_p or stops once
/// N_eta >= N_p. The final proposal is centred by prior-weighted moments; N2
/// draws from it give p_hat and the adaptive (failing) points.
inline SaisResult sais(const LimitState& ls, const Proposal& prior, const SaisConfig& cfg, std::uint64_t seed) {
  if (cfg.n1 < 2) throw ConfigError("SAIS needs N1 >= 2");
  if (!(cfg.p0 > 0.0 && cfg.p0 < 1.0)) throw ConfigError("SAIS needs 0 < p0 < 1");
  if (cfg.n2 < 1) throw ConfigError("SAIS needs N2 >= 1");
  if (cfg.max_rounds < 1) throw ConfigError("SAIS needs at least one round");
  const std::size_t n_p = cfg.n_p();
  if (n_p == 0) throw ConfigError("SAIS elite count floor(p0 * N1) is zero");
  const std::size_t n_fit = std::max<std::size_t>(n_p, 2);

  SaisResult res;
  Proposal h = prior;
  PointCloud x;
  Eigen::VectorXd g;
  std::vector<Eigen::Index> order;
  std::size_t n_eta = 0;
  for (std::size_t k = 1; k <= cfg.max_rounds; ++k) {
    Rng rng(derive_seed(seed, Stream::sais, k));
    x = sample(h, cfg.n1, rng);
    g = ls.eval(x);
    order = detail::rank_descending(g);
    n_eta = static_cast<std::size_t>((g.array() > 0.0).count());
    res.rounds.push_back({k, n_eta, h.mean(), h.covariance().diagonal()});
    res.iterations_used = k;
    if (n_eta >= n_p) {
      res.terminated_by = SaisResult::Termination::enough_failures;
      break;
    }
    if (k == cfg.max_rounds) break;
    const std::span<const Eigen::Index> top(order.data(), n_fit);
    h = detail::fit_proposal(detail::select_columns(x, top), prior, cfg, derive_seed(seed, Stream::sais, 1000 + k),
                             nullptr);
  }

  const bool use_failing = res.terminated_by == SaisResult::Termination::enough_failures &&
                           cfg.final_fit == SaisConfig::FinalFit::all_failing;
  const std::size_t n_final = use_failing ? std::max<std::size_t>(n_eta, 2) : n_fit;
  const PointCloud elite = detail::select_columns(x, std::span<const Eigen::Index>(order.data(), n_final));
  Eigen::VectorXd omega(elite.cols());
  for (Eigen::Index j = 0; j < elite.cols(); ++j) omega(j) = prior.density(elite.col(j));
  res.final_proposal = detail::fit_proposal(elite, prior, cfg, derive_seed(seed, Stream::sais, 2000), &omega);

  const PointCloud y = sample(res.final_proposal, cfg.n2, derive_seed(seed, Stream::estimate));
  std::vector<Eigen::Index> failing;
  const Estimate est = detail::importance_terms(ls.eval(y), y, prior, res.final_proposal, &failing);
  res.p_hat = est.value;
  res.std_error = est.std_error;
  res.max_weight = est.max_weight;
  res.weight_warning = est.weight_warning;
  res.adaptive_points = detail::select_columns(y, failing);
  return res;
}

/// Per-round trace with header round,N_eta,mu_0..,sigma_diag_0..
inline void write_sais_trace_csv(const std::string& path, std::span<const SaisRound> rounds) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  const Eigen::Index d = rounds.empty() ? 0 : rounds.front().mean.size();
  out << "round,N_eta";
  for (Eigen::Index i = 0; i < d; ++i) out << ",mu_" << i;
  for (Eigen::Index i = 0; i < d; ++i) out << ",sigma_diag_" << i;
  out << '\n';
  for (const auto& r : rounds) {
    out << r.round << ',' << r.n_eta;
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << r.mean(i);
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << r.cov_diag(i);
    out << '\n';
  }
}

}  // namespace fipinn
