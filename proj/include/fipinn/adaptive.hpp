#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fipinn/distributions.hpp"
#include "fipinn/error.hpp"
#include "fipinn/failure.hpp"
#include "fipinn/network.hpp"
#include "fipinn/problems.hpp"
#include "fipinn/random.hpp"
#include "fipinn/training.hpp"

namespace fipinn {

enum class Strategy { sais, rar, uniform };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::sais: return "sais";
    case Strategy::rar: return "rar";
    case Strategy::uniform: return "uniform";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "sais") return Strategy::sais;
  if (s == "rar") return Strategy::rar;
  if (s == "uniform") return Strategy::uniform;
  throw ConfigError("unknown strategy '" + s + "' (expected sais, rar or uniform)");
}

/// The m points with the largest g among pool_size prior draws (ties by draw index).
inline PointCloud enrich_rar(const LimitState& ls, const Proposal& prior, std::size_t pool_size, std::size_t m,
                             std::uint64_t seed) {
  if (m > pool_size) throw ConfigError("RAR needs m <= pool_size");
  const PointCloud pool = sample(prior, pool_size, seed);
  if (m == 0) return PointCloud(pool.rows(), 0);
  const std::vector<Eigen::Index> order = detail::rank_descending(ls.eval(pool));
  return detail::select_columns(pool, std::span<const Eigen::Index>(order.data(), m));
}

inline PointCloud enrich_uniform(const Proposal& prior, std::size_t m, std::uint64_t seed) {
  return sample(prior, m, seed);
}

struct EnrichmentConfig {
  Strategy strategy = Strategy::sais;
  SaisConfig sais;
  std::size_t pool_size = 10000;
  std::size_t m = 100;
};

struct RoundRecord {
  std::size_t round = 0;
  std::size_t n_points = 0;
  double p_hat = 0.0;
  double p_hat_std_error = 0.0;
  double rel_l2 = std::numeric_limits<double>::quiet_NaN();
  double train_loss = 0.0;
  double seconds = 0.0;
  std::size_t n_added = 0;
  std::size_t stall_retries = 0;
  PointCloud added;
  std::vector<SaisRound> sais_rounds;
};

struct AdaptiveConfig {
  double eps_r = 0.1;
  double eps_p = 0.1;
  std::size_t max_outer = 6;
  EnrichmentConfig enrichment;
  AdamOptions train;
  std::optional<CausalConfig> causal;
  std::uint64_t seed = 0;
  /// Round 1 uses the given network as already trained on the initial set.
  bool pretrained = false;
  /// Baseline point schedule: round s adds schedule[s - 1] points, the run lasts
  /// schedule.size() + 1 rounds and ignores the tolerance test.
  std::optional<std::vector<std::size_t>> schedule;
  std::size_t max_stall_retries = 2;
  /// Optional error metric evaluated after each round's training.
  std::function<double(const Network&)> error_metric;
  /// Called after each round with its record and the round's trained network.
  std::function<void(const RoundRecord&, const Network&)> on_round;

  void validate() const {
    if (!(eps_r > 0.0)) throw ConfigError("eps_r must be positive");
    if (!(eps_p > 0.0)) throw ConfigError("eps_p must be positive");
    if (max_outer < 1) throw ConfigError("max_outer must be at least 1");
  }
};

struct AdaptiveTrace {
  enum class StopReason { pf_below_tol, max_outer };
  std::vector<RoundRecord> rounds;
  StopReason stop_reason = StopReason::max_outer;
};

inline const char* to_string(AdaptiveTrace::StopReason r) {
  return r == AdaptiveTrace::StopReason::pf_below_tol ? "pf_below_tol" : "max_outer";
}

struct AdaptiveResult {
  Network net;
  TrainingSet training_set;
  AdaptiveTrace trace;
  std::vector<LossRecord> loss_history;
};

namespace detail {

struct RoundEstimate {
  Estimate estimate;
  PointCloud points;
  std::vector<SaisRound> sais_rounds;
};

inline RoundEstimate estimate_and_enrich(const LimitState& ls, const Proposal& prior, const EnrichmentConfig& e,
                                         std::size_t m, std::uint64_t seed) {
  RoundEstimate out;
  switch (e.strategy) {
    case Strategy::sais: {
      SaisResult r = sais(ls, prior, e.sais, seed);
      out.estimate.value = r.p_hat;
      out.estimate.std_error = r.std_error;
      out.estimate.n = e.sais.n2;
      out.estimate.n_fail = static_cast<std::size_t>(r.adaptive_points.cols());
      out.points = std::move(r.adaptive_points);
      out.sais_rounds = std::move(r.rounds);
      break;
    }
    case Strategy::rar: {
      const std::uint64_t pool_seed = derive_seed(seed, Stream::rar);
      out.estimate = pf_mc(ls, prior, e.pool_size, pool_seed);
      out.points = enrich_rar(ls, prior, e.pool_size, std::min(m, e.pool_size), pool_seed);
      break;
    }
    case Strategy::uniform: {
      out.estimate = pf_mc(ls, prior, e.pool_size, derive_seed(seed, Stream::rar));
      out.points = enrich_uniform(prior, m, derive_seed(seed, Stream::uniform));
      break;
    }
  }
  return out;
}

inline Provenance provenance_of(Strategy s) {
  switch (s) {
    case Strategy::sais: return Provenance::sais;
    case Strategy::rar: return Provenance::rar;
    case Strategy::uniform: return Provenance::uniform;
  }
  return Provenance::initial;
}

}  // namespace detail

/// Outer loop: train, build the LSF, estimate P_F, stop below eps_p or add the
/// enrichment points and continue. Round seeds derive from cfg.seed and the round index.
inline AdaptiveResult run_fi_pinn(const PdeProblem& problem, Network net, TrainingSet ts, const AdaptiveConfig& cfg) {
  cfg.validate();
  if (ts.n_collocation() == 0 || ts.n_boundary() == 0) throw ConfigError("initial training set is empty");
  using Clock = std::chrono::steady_clock;
  AdaptiveResult res;
  const std::size_t rounds = cfg.schedule ? cfg.schedule->size() + 1 : cfg.max_outer;
  for (std::size_t s = 1; s <= rounds; ++s) {
    const auto t0 = Clock::now();
    RoundRecord rec;
    rec.round = s;
    rec.n_points = ts.n_collocation();
    AdamOptions opt = cfg.train;
    if (cfg.causal) opt.causal = cfg.causal;
    if (s == 1 && cfg.pretrained) {
      rec.train_loss = LossEvaluator(problem, ts).evaluate(net, opt.lambda, opt.causal, nullptr).total;
    } else {
      TrainResult tr = train_adam(std::move(net), problem, ts, opt);
      net = std::move(tr.net);
      rec.train_loss = tr.final_loss.total;
      const std::size_t offset = res.loss_history.empty() ? 0 : res.loss_history.back().step;
      for (auto r : tr.history) {
        r.step += offset;
        if (!res.loss_history.empty() && r.step == res.loss_history.back().step) continue;
        res.loss_history.push_back(r);
      }
    }
    if (cfg.error_metric) rec.rel_l2 = cfg.error_metric(net);

    const LimitState ls = (cfg.causal && cfg.causal->enabled)
                              ? causal_limit_state(net, problem, *cfg.causal, cfg.eps_r, ts.collocation)
                              : residual_limit_state(net, problem, cfg.eps_r);
    const bool last = s == rounds;
    const std::size_t m = cfg.schedule ? (last ? 0 : (*cfg.schedule)[s - 1]) : cfg.enrichment.m;
    std::uint64_t round_seed = derive_seed(cfg.seed, Stream::sais, s);
    detail::RoundEstimate est = detail::estimate_and_enrich(ls, problem.prior, cfg.enrichment, m, round_seed);
    // A stall (no points while P_F is still above tolerance) is retried with fresh seeds.
    const bool wants_points = cfg.schedule ? m > 0 : est.estimate.value >= cfg.eps_p;
    while (!last && wants_points && est.points.cols() == 0 && rec.stall_retries < cfg.max_stall_retries) {
      ++rec.stall_retries;
      round_seed = derive_seed(cfg.seed, Stream::retry, s * 16 + rec.stall_retries);
      est = detail::estimate_and_enrich(ls, problem.prior, cfg.enrichment, m, round_seed);
    }
    rec.p_hat = est.estimate.value;
    rec.p_hat_std_error = est.estimate.std_error;
    rec.sais_rounds = std::move(est.sais_rounds);

    const bool below = !cfg.schedule && rec.p_hat < cfg.eps_p;
    if (!below && !last) {
      rec.added = std::move(est.points);
      rec.n_added = static_cast<std::size_t>(rec.added.cols());
      ts.add_collocation(rec.added, detail::provenance_of(cfg.enrichment.strategy));
    } else {
      rec.added = PointCloud(static_cast<Eigen::Index>(problem.dim()), 0);
    }
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (cfg.on_round) cfg.on_round(rec, net);
    res.trace.rounds.push_back(std::move(rec));
    if (below) {
      res.trace.stop_reason = AdaptiveTrace::StopReason::pf_below_tol;
      break;
    }
  }
  res.net = std::move(net);
  res.training_set = std::move(ts);
  return res;
}

/// Trace CSV with header round,n_points,p_hat,rel_l2,train_loss,seconds.
inline void write_trace_csv(const std::string& path, const AdaptiveTrace& trace) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  out << "round,n_points,p_hat,rel_l2,train_loss,seconds\n";
  for (const auto& r : trace.rounds) {
    out << r.round << ',' << r.n_points << ',' << r.p_hat << ',';
    if (std::isfinite(r.rel_l2)) out << r.rel_l2;
    out << ',' << r.train_loss << ',' << r.seconds << '\n';
  }
}

}  // namespace fipinn
