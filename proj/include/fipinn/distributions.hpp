#pragma once

// Sampleable, density-evaluable proposals: uniform on a box, Gaussian,
// Gaussian truncated to a domain, and Gaussian mixtures (also truncated).
// Truncation constants are Monte Carlo estimates cached at construction.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fipinn/domain.hpp"
#include "fipinn/error.hpp"
#include "fipinn/network.hpp"
#include "fipinn/random.hpp"

namespace fipinn {

inline constexpr double kCovarianceJitter = 1e-8;
inline constexpr std::size_t kDefaultNormalizerSamples = 20000;
inline constexpr std::size_t kDefaultMaxAttempts = 10000;

enum class ProposalKind { uniform_box, gaussian, truncated_gaussian, gmm };

inline const char* to_string(ProposalKind k) {
  switch (k) {
    case ProposalKind::uniform_box: return "uniform_box";
    case ProposalKind::gaussian: return "gaussian";
    case ProposalKind::truncated_gaussian: return "truncated_gaussian";
    case ProposalKind::gmm: return "gmm";
  }
  return "?";
}

/// One weighted Gaussian with its Cholesky factor cached.
struct GaussianComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd chol;  // lower triangular, cov = chol chol^T
  double log_norm = 0.0;

  static GaussianComponent make(double weight, Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    if (mean.size() != cov.rows() || cov.rows() != cov.cols()) {
      throw DimensionError("gaussian mean/covariance dimensions disagree");
    }
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if (!((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale)) {
      throw NumericalError("covariance is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    GaussianComponent c;
    c.weight = weight;
    c.mean = std::move(mean);
    c.cov = std::move(cov);
    c.chol = llt.matrixL();
    const auto d = static_cast<double>(c.mean.size());
    c.log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi) - c.chol.diagonal().array().log().sum();
    return c;
  }

  double log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd y = chol.triangularView<Eigen::Lower>().solve(x - mean);
    return log_norm - 0.5 * y.squaredNorm();
  }

  template <class Normal>
  Eigen::VectorXd draw(Rng& rng, Normal& normal) const {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    return mean + chol.triangularView<Eigen::Lower>() * z;
  }
};

/// log(sum exp(v)).
inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

struct Proposal {
  ProposalKind kind = ProposalKind::uniform_box;
  DomainSpec domain;
  std::vector<GaussianComponent> components;
  double trunc_norm = 1.0;
  double trunc_norm_stderr = 0.0;
  std::size_t trunc_samples = 0;

  std::size_t dim() const { return domain.dim(); }

  static Proposal uniform(const DomainSpec& domain) {
    if (!domain.bounded()) throw ConfigError("uniform proposal needs a bounded box domain");
    Proposal p;
    p.kind = ProposalKind::uniform_box;
    p.domain = domain;
    return p;
  }

  static Proposal gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    Proposal p;
    p.kind = ProposalKind::gaussian;
    p.domain = DomainSpec::unbounded(static_cast<std::size_t>(mean.size()));
    p.components.push_back(GaussianComponent::make(1.0, std::move(mean), std::move(cov)));
    return p;
  }

  /// N(mean, cov) restricted to `domain`; Z estimated from `n_z` draws seeded by `z_seed`.
  static Proposal truncated_gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov, const DomainSpec& domain,
                                     std::uint64_t z_seed, std::size_t n_z = kDefaultNormalizerSamples) {
    detail::require_dim(static_cast<std::size_t>(mean.size()), domain.dim(), "truncated gaussian");
    Proposal p;
    p.kind = ProposalKind::truncated_gaussian;
    p.domain = domain;
    p.components.push_back(GaussianComponent::make(1.0, std::move(mean), std::move(cov)));
    p.estimate_normalizer(z_seed, n_z);
    return p;
  }

  /// Mixture restricted to `domain` (Z = 1 exactly when the domain is all of R^d).
  static Proposal gmm(std::vector<GaussianComponent> comps, const DomainSpec& domain, std::uint64_t z_seed,
                      std::size_t n_z = kDefaultNormalizerSamples) {
    if (comps.empty()) throw ConfigError("mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : comps) {
      detail::require_dim(static_cast<std::size_t>(c.mean.size()), domain.dim(), "mixture component");
      if (!(c.weight > 0.0 && c.weight <= 1.0)) throw ConfigError("mixture weight outside (0, 1]");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      for (auto& c : comps) c.weight /= total;
    }
    Proposal p;
    p.kind = ProposalKind::gmm;
    p.domain = domain;
    p.components = std::move(comps);
    p.estimate_normalizer(z_seed, n_z);
    return p;
  }

  /// Mean of the untruncated Gaussian part (mixture mean for gmm).
  Eigen::VectorXd mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    if (kind == ProposalKind::uniform_box) {
      for (std::size_t i = 0; i < dim(); ++i)
        m(static_cast<Eigen::Index>(i)) = 0.5 * (domain.bounds[i].lo + domain.bounds[i].hi);
      return m;
    }
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
  }

  /// Covariance of the untruncated Gaussian part (mixture covariance for gmm).
  Eigen::MatrixXd covariance() const {
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
    if (kind == ProposalKind::uniform_box) {
      for (Eigen::Index i = 0; i < d; ++i) s(i, i) = std::pow(domain.bounds[i].length(), 2) / 12.0;
      return s;
    }
    const Eigen::VectorXd m = mean();
    for (const auto& c : components) {
      const Eigen::VectorXd dm = c.mean - m;
      s += c.weight * (c.cov + dm * dm.transpose());
    }
    return s;
  }

  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    detail::require_dim(static_cast<std::size_t>(x.size()), dim(), "proposal density");
    const double neg_inf = -std::numeric_limits<double>::infinity();
    switch (kind) {
      case ProposalKind::uniform_box: return domain.contains(x) ? -std::log(domain.volume()) : neg_inf;
      case ProposalKind::gaussian: return components.front().log_pdf(x);
      case ProposalKind::truncated_gaussian:
        return domain.contains(x) ? components.front().log_pdf(x) - std::log(trunc_norm) : neg_inf;
      case ProposalKind::gmm: {
        if (!domain.contains(x)) return neg_inf;
        std::vector<double> terms;
        terms.reserve(components.size());
        for (const auto& c : components) terms.push_back(std::log(c.weight) + c.log_pdf(x));
        return log_sum_exp(terms) - std::log(trunc_norm);
      }
    }
    return neg_inf;
  }

  double density(const Eigen::Ref<const Eigen::VectorXd>& x) const { return std::exp(log_density(x)); }

  /// One draw from the untruncated model (mixture component picked by weight).
  template <class Normal>
  Eigen::VectorXd draw_untruncated(Rng& rng, Normal& normal, std::uniform_real_distribution<double>& unit) const {
    if (components.size() == 1) return components.front().draw(rng, normal);
    double pick = unit(rng);
    std::size_t m = 0;
    while (m + 1 < components.size() && pick >= components[m].weight) {
      pick -= components[m].weight;
      ++m;
    }
    return components[m].draw(rng, normal);
  }

 private:
  void estimate_normalizer(std::uint64_t z_seed, std::size_t n_z) {
    if (domain.kind == DomainKind::unbounded) {
      trunc_norm = 1.0;
      trunc_norm_stderr = 0.0;
      trunc_samples = 0;
      return;
    }
    if (n_z == 0) throw ConfigError("normalizer needs at least one sample");
    Rng rng(z_seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n_z; ++i) {
      if (domain.contains(draw_untruncated(rng, normal, unit))) ++inside;
    }
    if (inside == 0) throw SamplingError("truncated proposal has no estimated mass inside the domain");
    const double z = static_cast<double>(inside) / static_cast<double>(n_z);
    trunc_norm = z;
    trunc_norm_stderr = std::sqrt(z * (1.0 - z) / static_cast<double>(n_z));
    trunc_samples = n_z;
  }

};

/// n i.i.d. draws. Truncated kinds reject against the untruncated model and
/// give up after `max_attempts` consecutive rejections for one point.
inline PointCloud sample(const Proposal& p, std::size_t n, Rng& rng,
                         std::size_t max_attempts = kDefaultMaxAttempts) {
  const auto d = static_cast<Eigen::Index>(p.dim());
  PointCloud out(d, static_cast<Eigen::Index>(n));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    switch (p.kind) {
      case ProposalKind::uniform_box:
        for (Eigen::Index i = 0; i < d; ++i) {
          const auto& b = p.domain.bounds[static_cast<std::size_t>(i)];
          out(i, j) = b.lo + unit(rng) * b.length();
        }
        break;
      case ProposalKind::gaussian: out.col(j) = p.components.front().draw(rng, normal); break;
      case ProposalKind::truncated_gaussian:
      case ProposalKind::gmm: {
        std::size_t attempts = 0;
        for (;;) {
          Eigen::VectorXd x = p.draw_untruncated(rng, normal, unit);
          if (p.domain.contains(x)) {
            out.col(j) = x;
            break;
          }
          if (++attempts >= max_attempts) {
            throw SamplingError(std::string(to_string(p.kind)) + " proposal is ill-matched to the domain: " +
                                std::to_string(max_attempts) + " consecutive rejections");
          }
        }
        break;
      }
    }
  }
  return out;
}

inline PointCloud sample(const Proposal& p, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample(p, n, rng);
}

inline Eigen::VectorXd log_density_batch(const Proposal& p, const PointCloud& x) {
  Eigen::VectorXd out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out(j) = p.log_density(x.col(j));
  return out;
}

struct MomentFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

namespace detail {

inline Eigen::MatrixXd apply_jitter(Eigen::MatrixXd cov) {
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < kCovarianceJitter) {
    cov.diagonal().array() += kCovarianceJitter;
  }
  return cov;
}

inline Eigen::MatrixXd scatter_about(const PointCloud& samples, const Eigen::VectorXd& center) {
  const PointCloud dev = samples.colwise() - center;
  return (dev * dev.transpose()) / static_cast<double>(samples.cols() - 1);
}

}  // namespace detail

/// Sample mean and unbiased covariance (divisor N - 1); jitter * I added when the
/// smallest eigenvalue falls below the floor.
inline MomentFit fit_moments(const PointCloud& samples) {
  if (samples.cols() < 2) throw ConfigError("fit_moments needs at least 2 samples");
  MomentFit fit;
  fit.mean = samples.rowwise().mean();
  fit.cov = detail::apply_jitter(detail::scatter_about(samples, fit.mean));
  return fit;
}

/// Prior-weighted center with the covariance taken about it (divisor N - 1,
/// unweighted deviations).
inline MomentFit fit_weighted_center(const PointCloud& samples, const Eigen::VectorXd& prior_weights) {
  if (samples.cols() < 2) throw ConfigError("fit_weighted_center needs at least 2 samples");
  detail::require_dim(static_cast<std::size_t>(prior_weights.size()), static_cast<std::size_t>(samples.cols()),
                      "prior weights");
  const double total = prior_weights.sum();
  if (!(total > 0.0)) throw NumericalError("all prior densities are zero at the weighted-center samples");
  MomentFit fit;
  fit.mean = (samples * prior_weights) / total;
  fit.cov = detail::apply_jitter(detail::scatter_about(samples, fit.mean));
  return fit;
}

inline MomentFit fit_weighted_center(const PointCloud& samples, const Proposal& prior) {
  Eigen::VectorXd w(samples.cols());
  for (Eigen::Index j = 0; j < samples.cols(); ++j) w(j) = prior.density(samples.col(j));
  return fit_weighted_center(samples, w);
}

struct GmmFit {
  std::vector<GaussianComponent> components;
  std::vector<double> log_likelihood;  // mean (weighted) log-likelihood per accepted iterate
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t pruned = 0;
};

/// EM for a K-component Gaussian mixture with k-means++ initialization.
/// Optional per-sample weights turn it into weighted EM. Iterates whose
/// log-likelihood drops are rejected and end the run.
inline GmmFit fit_gmm_em(const PointCloud& samples, std::size_t n_components, std::uint64_t seed,
                         std::size_t max_iters = 200, double tol = 1e-8,
                         const Eigen::VectorXd* sample_weights = nullptr) {
  const auto d = samples.rows();
  const auto n = samples.cols();
  if (n_components < 1) throw ConfigError("mixture needs at least one component");
  if (static_cast<std::size_t>(n) < n_components * static_cast<std::size_t>(d + 1)) {
    throw ConfigError("fit_gmm_em needs at least n_components * (d + 1) samples");
  }
  Eigen::VectorXd w = sample_weights ? *sample_weights : Eigen::VectorXd::Ones(n);
  detail::require_dim(static_cast<std::size_t>(w.size()), static_cast<std::size_t>(n), "EM sample weights");
  const double w_total = w.sum();
  if (!(w_total > 0.0)) throw NumericalError("EM sample weights sum to zero");

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick_weighted = [&](const Eigen::VectorXd& mass) {
    double u = unit(rng) * mass.sum();
    Eigen::Index i = 0;
    while (i + 1 < mass.size() && u >= mass(i)) u -= mass(i++);
    return i;
  };

  // k-means++ seeding of the means.
  std::vector<Eigen::VectorXd> means;
  means.push_back(samples.col(pick_weighted(w)));
  Eigen::VectorXd d2(n);
  while (means.size() < n_components) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : means) best = std::min(best, (samples.col(i) - m).squaredNorm());
      d2(i) = w(i) * best;
    }
    means.push_back(samples.col(d2.sum() > 0.0 ? pick_weighted(d2) : pick_weighted(w)));
  }
  const Eigen::VectorXd global_mean = (samples * w) / w_total;
  const PointCloud dev0 = samples.colwise() - global_mean;
  const Eigen::MatrixXd global_cov =
      detail::apply_jitter((dev0 * w.asDiagonal() * dev0.transpose()) / w_total);

  GmmFit fit;
  for (const auto& m : means) {
    fit.components.push_back(
        GaussianComponent::make(1.0 / static_cast<double>(n_components), m, global_cov));
  }

  auto e_step = [&](const std::vector<GaussianComponent>& comps, Eigen::MatrixXd& resp) {
    const auto k = static_cast<Eigen::Index>(comps.size());
    resp.resize(k, n);
    std::vector<double> terms(static_cast<std::size_t>(k));
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index m = 0; m < k; ++m) {
        terms[static_cast<std::size_t>(m)] =
            std::log(comps[static_cast<std::size_t>(m)].weight) +
            comps[static_cast<std::size_t>(m)].log_pdf(samples.col(i));
      }
      const double lse = log_sum_exp(terms);
      for (Eigen::Index m = 0; m < k; ++m) resp(m, i) = std::exp(terms[static_cast<std::size_t>(m)] - lse);
      ll += w(i) * lse;
    }
    return ll / w_total;
  };

  Eigen::MatrixXd resp;
  std::vector<GaussianComponent> previous;
  for (std::size_t it = 0; it <= max_iters; ++it) {
    const double ll = e_step(fit.components, resp);
    if (!fit.log_likelihood.empty()) {
      const double prev = fit.log_likelihood.back();
      if (ll < prev - 1e-12 * std::max(1.0, std::abs(prev))) {
        fit.components = previous;
        fit.converged = true;
        break;
      }
      fit.log_likelihood.push_back(ll);
      fit.iterations = it;
      if (ll - prev < tol) {
        fit.converged = true;
        break;
      }
    } else {
      fit.log_likelihood.push_back(ll);
    }
    if (it == max_iters) break;

    // M-step.
    std::vector<GaussianComponent> next;
    std::size_t dropped = 0;
    for (Eigen::Index m = 0; m < resp.rows(); ++m) {
      const Eigen::VectorXd rw = resp.row(m).transpose().cwiseProduct(w);
      const double nk = rw.sum();
      const double pi = nk / w_total;
      if (pi < 1e-6) {
        ++dropped;
        continue;
      }
      Eigen::VectorXd mu = (samples * rw) / nk;
      const PointCloud dev = samples.colwise() - mu;
      Eigen::MatrixXd cov = detail::apply_jitter((dev * rw.asDiagonal() * dev.transpose()) / nk);
      next.push_back(GaussianComponent::make(pi, std::move(mu), std::move(cov)));
    }
    if (next.empty()) throw NumericalError("EM collapsed every mixture component");
    if (dropped > 0) {
      double total = 0.0;
      for (const auto& c : next) total += c.weight;
      for (auto& c : next) c.weight /= total;
      fit.pruned += dropped;
    }
    previous = std::move(fit.components);
    fit.components = std::move(next);
  }
  return fit;
}

}  // namespace fipinn
