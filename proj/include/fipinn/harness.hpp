#pragma once

// Experiment configuration, evaluation sets, metrics and the experiment drivers
// behind the command-line front end.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fipinn/adaptive.hpp"
#include "fipinn/distributions.hpp"
#include "fipinn/error.hpp"
#include "fipinn/failure.hpp"
#include "fipinn/io.hpp"
#include "fipinn/network.hpp"
#include "fipinn/problems.hpp"
#include "fipinn/random.hpp"
#include "fipinn/training.hpp"

#ifndef FIPINN_DATA_DIR
#define FIPINN_DATA_DIR "data"
#endif

namespace fipinn {

inline constexpr const char* kVersion = "1.0.0";

/// FIPINN_DATA_DIR from the environment, else the build-time data directory.
inline std::string data_dir() {
  if (const char* env = std::getenv("FIPINN_DATA_DIR"); env && *env) return env;
  return FIPINN_DATA_DIR;
}

/// sqrt(sum (pred - exact)^2) / sqrt(sum exact^2).
inline double relative_l2(const Eigen::VectorXd& pred, const Eigen::VectorXd& exact) {
  detail::require_dim(static_cast<std::size_t>(pred.size()), static_cast<std::size_t>(exact.size()), "prediction");
  if (exact.size() == 0) throw ConfigError("relative_l2 needs at least one point");
  const double denom = exact.norm();
  if (!(denom > 0.0)) throw NumericalError("relative_l2 of an all-zero exact vector");
  return (pred - exact).norm() / denom;
}

/// Radical inverse of i in the given base.
inline double halton(std::size_t i, std::size_t base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

struct EvaluationSet {
  PointCloud points;
  Eigen::VectorXd exact;
};

inline EvaluationSet make_evaluation_set(const PdeProblem& problem, std::optional<std::size_t> per_axis = {},
                                         std::optional<std::size_t> count = {}) {
  const EvaluationSpec& spec = problem.evaluation;
  const std::size_t d = problem.dim();
  EvaluationSet ev;
  switch (spec.kind) {
    case EvaluationSpec::Kind::tensor_grid: {
      const std::size_t k = per_axis.value_or(spec.per_axis);
      if (k < 2) throw ConfigError("evaluation grid needs at least 2 points per axis");
      std::size_t total = 1;
      for (std::size_t i = 0; i < d; ++i) total *= k;
      ev.points.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(total));
      for (std::size_t p = 0; p < total; ++p) {
        std::size_t rem = p;
        for (std::size_t i = d; i-- > 0;) {
          const std::size_t idx = rem % k;
          rem /= k;
          const Interval& w = spec.window[i];
          ev.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
              w.lo + w.length() * static_cast<double>(idx) / static_cast<double>(k - 1);
        }
      }
      break;
    }
    case EvaluationSpec::Kind::uniform_random: {
      Rng rng(derive_seed(0, Stream::evaluation));
      ev.points = sample_window(problem.domain, spec.window, count.value_or(spec.count), rng);
      break;
    }
    case EvaluationSpec::Kind::disk_quasi_random: {
      // Halton (2, 3) mapped to the disk; points inside the excluded region are skipped.
      const std::size_t want = count.value_or(spec.count);
      std::vector<Eigen::Vector2d> pts;
      for (std::size_t i = 1; pts.size() < want; ++i) {
        const double r = spec.radius * std::sqrt(halton(i, 2));
        const double phi = 2.0 * std::numbers::pi * halton(i, 3);
        const Eigen::Vector2d x(r * std::cos(phi), r * std::sin(phi));
        if (problem.domain.contains(x)) pts.push_back(x);
      }
      ev.points.resize(2, static_cast<Eigen::Index>(pts.size()));
      for (std::size_t i = 0; i < pts.size(); ++i) ev.points.col(static_cast<Eigen::Index>(i)) = pts[i];
      break;
    }
    case EvaluationSpec::Kind::reference_grid: {
      if (!problem.reference_file) throw ConfigError(problem.id + " has no reference table");
      const auto path = std::filesystem::path(data_dir()) / *problem.reference_file;
      const ReferenceTable table = ReferenceTable::load_csv(path.string());
      const auto nx = static_cast<Eigen::Index>(table.xs.size());
      const auto nt = static_cast<Eigen::Index>(table.ts.size());
      ev.points.resize(2, nx * nt);
      ev.exact.resize(nx * nt);
      for (Eigen::Index i = 0; i < nx; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
          ev.points(0, i * nt + j) = table.xs[static_cast<std::size_t>(i)];
          ev.points(1, i * nt + j) = table.ts[static_cast<std::size_t>(j)];
          ev.exact(i * nt + j) = table.values(i, j);
        }
      }
      return ev;
    }
  }
  ev.exact.resize(ev.points.cols());
  for (Eigen::Index j = 0; j < ev.points.cols(); ++j) {
    ev.exact(j) = problem.exact(std::span<const double>(ev.points.col(j).data(), d));
  }
  return ev;
}

struct ExperimentConfig {
  std::string problem = "poisson_peak_2d";
  std::vector<int> hidden = {20, 20, 20, 20};
  std::size_t n_collocation = 500;
  std::size_t n_boundary = 100;
  AdamOptions adam = [] {
    AdamOptions a;
    a.steps = 3000;
    a.learning_rate = 1e-3;
    a.history_every = 100;
    return a;
  }();
  double eps_r = 0.1;
  double eps_p = 0.1;
  std::size_t max_outer = 6;
  Strategy strategy = Strategy::sais;
  SaisConfig sais;
  std::size_t pool_size = 10000;
  std::size_t m = 100;
  std::size_t max_stall_retries = 2;
  std::optional<CausalConfig> causal;
  std::optional<std::size_t> eval_per_axis;
  std::optional<std::size_t> eval_count;
  std::vector<double> eps_p_grid = {0.4, 0.2, 0.1, 0.05, 0.025};
  std::vector<double> eps_r_grid = {0.4, 0.2, 0.1, 0.05, 0.025};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::uint64_t seed = 0;
  std::string output = "runs/out";

  std::vector<int> widths(std::size_t dim) const {
    std::vector<int> w{static_cast<int>(dim)};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }

  void validate() const {
    const auto ids = problem_ids();
    if (std::find(ids.begin(), ids.end(), problem) == ids.end() && problem.rfind("poisson_highdim_", 0) != 0) {
      throw ConfigError("unknown problem id '" + problem + "'");
    }
    for (int h : hidden) {
      if (h <= 0) throw ConfigError("hidden widths must be positive");
    }
    if (n_collocation == 0 || n_boundary == 0) throw ConfigError("point counts must be positive");
    if (!(eps_r > 0.0) || !(eps_p > 0.0)) throw ConfigError("tolerances must be positive");
    if (max_outer < 1) throw ConfigError("max_outer must be at least 1");
    if (!(adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  }

  AdaptiveConfig adaptive(std::uint64_t run_seed) const {
    AdaptiveConfig a;
    a.eps_r = eps_r;
    a.eps_p = eps_p;
    a.max_outer = max_outer;
    a.enrichment.strategy = strategy;
    a.enrichment.sais = sais;
    a.enrichment.pool_size = pool_size;
    a.enrichment.m = m;
    a.train = adam;
    a.causal = causal;
    a.seed = run_seed;
    a.max_stall_retries = max_stall_retries;
    return a;
  }
};

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["problem"] = c.problem;
  j["network"] = {{"hidden", c.hidden}};
  j["points"] = {{"collocation", c.n_collocation}, {"boundary", c.n_boundary}};
  j["train"] = {{"steps", c.adam.steps},
                {"learning_rate", c.adam.learning_rate},
                {"lambda", c.adam.lambda},
                {"history_every", c.adam.history_every}};
  j["adaptive"] = {{"eps_r", c.eps_r},
                   {"eps_p", c.eps_p},
                   {"max_outer", c.max_outer},
                   {"strategy", to_string(c.strategy)},
                   {"max_stall_retries", c.max_stall_retries}};
  j["sais"] = {{"n1", c.sais.n1},
               {"n2", c.sais.n2},
               {"p0", c.sais.p0},
               {"max_rounds", c.sais.max_rounds},
               {"model", c.sais.model == SaisConfig::Model::gmm ? "gmm" : "truncated_gaussian"},
               {"components", c.sais.gmm_components},
               {"normalizer_samples", c.sais.normalizer_samples},
               {"final_fit", c.sais.final_fit == SaisConfig::FinalFit::top_np ? "top_np" : "all_failing"}};
  j["baseline"] = {{"pool_size", c.pool_size}, {"m", c.m}};
  if (c.causal) {
    j["causal"] = {{"enabled", c.causal->enabled}, {"n_slabs", c.causal->n_slabs}, {"epsilon", c.causal->epsilon}};
  }
  Json ev = Json::object();
  if (c.eval_per_axis) ev["per_axis"] = *c.eval_per_axis;
  if (c.eval_count) ev["count"] = *c.eval_count;
  j["evaluation"] = ev;
  j["convergence"] = {{"eps_p_grid", c.eps_p_grid}, {"eps_r_grid", c.eps_r_grid}};
  j["seeds"] = c.seeds;
  j["seed"] = c.seed;
  j["output"] = c.output;
  return j;
}

/// Fields absent from `j` keep their values in `base`.
inline ExperimentConfig config_from_json(const Json& j, ExperimentConfig c = {}) {
  try {
    for (const auto& [key, _] : j.items()) {
      static const char* known[] = {"problem", "network",     "points", "train", "adaptive", "sais",   "baseline",
                                    "causal",  "evaluation", "convergence", "seeds", "seed", "output", "description"};
      if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
          std::end(known)) {
        throw ConfigError("unknown configuration key '" + key + "'");
      }
    }
    c.problem = j.value("problem", c.problem);
    if (j.contains("network")) c.hidden = j["network"].value("hidden", c.hidden);
    if (j.contains("points")) {
      c.n_collocation = j["points"].value("collocation", c.n_collocation);
      c.n_boundary = j["points"].value("boundary", c.n_boundary);
    }
    if (j.contains("train")) {
      const Json& t = j["train"];
      c.adam.steps = t.value("steps", c.adam.steps);
      c.adam.learning_rate = t.value("learning_rate", c.adam.learning_rate);
      c.adam.lambda = t.value("lambda", c.adam.lambda);
      c.adam.history_every = t.value("history_every", c.adam.history_every);
    }
    if (j.contains("adaptive")) {
      const Json& a = j["adaptive"];
      c.eps_r = a.value("eps_r", c.eps_r);
      c.eps_p = a.value("eps_p", c.eps_p);
      c.max_outer = a.value("max_outer", c.max_outer);
      if (a.contains("strategy")) c.strategy = parse_strategy(a["strategy"].get<std::string>());
      c.max_stall_retries = a.value("max_stall_retries", c.max_stall_retries);
    }
    if (j.contains("sais")) {
      const Json& s = j["sais"];
      c.sais.n1 = s.value("n1", c.sais.n1);
      c.sais.n2 = s.value("n2", c.sais.n2);
      c.sais.p0 = s.value("p0", c.sais.p0);
      c.sais.max_rounds = s.value("max_rounds", c.sais.max_rounds);
      if (s.contains("model")) {
        const std::string m = s["model"];
        if (m == "gmm") c.sais.model = SaisConfig::Model::gmm;
        else if (m == "truncated_gaussian") c.sais.model = SaisConfig::Model::truncated_gaussian;
        else throw ConfigError("unknown SAIS model '" + m + "'");
      }
      c.sais.gmm_components = s.value("components", c.sais.gmm_components);
      c.sais.normalizer_samples = s.value("normalizer_samples", c.sais.normalizer_samples);
      if (s.contains("final_fit")) {
        const std::string f = s["final_fit"];
        if (f == "top_np") c.sais.final_fit = SaisConfig::FinalFit::top_np;
        else if (f == "all_failing") c.sais.final_fit = SaisConfig::FinalFit::all_failing;
        else throw ConfigError("unknown SAIS final_fit '" + f + "'");
      }
    }
    if (j.contains("baseline")) {
      c.pool_size = j["baseline"].value("pool_size", c.pool_size);
      c.m = j["baseline"].value("m", c.m);
    }
    if (j.contains("causal")) {
      CausalConfig cc = c.causal.value_or(CausalConfig{});
      cc.enabled = j["causal"].value("enabled", true);
      cc.n_slabs = j["causal"].value("n_slabs", cc.n_slabs);
      cc.epsilon = j["causal"].value("epsilon", cc.epsilon);
      c.causal = cc;
    }
    if (j.contains("evaluation")) {
      if (j["evaluation"].contains("per_axis")) c.eval_per_axis = j["evaluation"]["per_axis"].get<std::size_t>();
      if (j["evaluation"].contains("count")) c.eval_count = j["evaluation"]["count"].get<std::size_t>();
    }
    if (j.contains("convergence")) {
      c.eps_p_grid = j["convergence"].value("eps_p_grid", c.eps_p_grid);
      c.eps_r_grid = j["convergence"].value("eps_r_grid", c.eps_r_grid);
    }
    c.seeds = j.value("seeds", c.seeds);
    c.seed = j.value("seed", c.seed);
    c.output = j.value("output", c.output);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) { return config_from_json(read_json(path)); }

struct MetricsReport {
  double relative_l2 = 0.0;
  double max_abs_error = 0.0;
  AdaptiveTrace trace;
  Json config;
  std::uint64_t seed = 0;
  std::size_t n_collocation = 0;
  std::size_t n_eval = 0;

  Json to_json() const {
    Json rounds = Json::array();
    for (const auto& r : trace.rounds) {
      rounds.push_back({{"round", r.round},
                        {"n_points", r.n_points},
                        {"n_added", r.n_added},
                        {"p_hat", r.p_hat},
                        {"p_hat_std_error", r.p_hat_std_error},
                        {"rel_l2", std::isfinite(r.rel_l2) ? Json(r.rel_l2) : Json(nullptr)},
                        {"train_loss", r.train_loss},
                        {"stall_retries", r.stall_retries},
                        {"seconds", r.seconds}});
    }
    return Json{{"version", kVersion},
                {"seed", seed},
                {"relative_l2", relative_l2},
                {"max_abs_error", max_abs_error},
                {"n_collocation", n_collocation},
                {"n_eval", n_eval},
                {"stop_reason", to_string(trace.stop_reason)},
                {"rounds", rounds},
                {"config", config}};
  }
};

/// Trained network, evaluation set and error metric for one problem.
struct ErrorProbe {
  EvaluationSet eval;

  double relative_l2(const Network& net) const { return fipinn::relative_l2(forward_batch(net, eval.points), eval.exact); }
  double max_abs_error(const Network& net) const {
    return (forward_batch(net, eval.points) - eval.exact).cwiseAbs().maxCoeff();
  }
};

namespace detail {

inline void write_field_csv(const std::string& path, const PointCloud& pts, const Eigen::VectorXd& pred,
                            const Eigen::VectorXd& exact) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) out << 'x' << i << ',';
  out << "u_pred,u_exact,abs_err\n";
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    for (Eigen::Index i = 0; i < pts.rows(); ++i) out << pts(i, j) << ',';
    out << pred(j) << ',' << exact(j) << ',' << std::abs(pred(j) - exact(j)) << '\n';
  }
}

}  // namespace detail

struct ExperimentRun {
  AdaptiveResult result;
  MetricsReport metrics;
};

/// Runs one adaptive experiment. With a non-empty output directory it writes
/// metrics.json, trace.csv, loss_history.csv, points_round_k.csv,
/// sais_trace_round_k.csv, checkpoint_round_k.json and field_pred.csv.
inline ExperimentRun run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                    const std::optional<Network>& pretrained = {},
                                    const std::optional<std::vector<std::size_t>>& schedule = {},
                                    const ErrorProbe* probe_in = nullptr) {
  cfg.validate();
  const PdeProblem problem = make_problem(cfg.problem);
  std::optional<ErrorProbe> own_probe;
  if (!probe_in) own_probe = ErrorProbe{make_evaluation_set(problem, cfg.eval_per_axis, cfg.eval_count)};
  const ErrorProbe& probe = probe_in ? *probe_in : *own_probe;
  const bool write = !out_dir.empty();
  if (write) ensure_directory(out_dir);

  TrainingSet ts = make_training_set(problem, cfg.n_collocation, cfg.n_boundary, derive_seed(cfg.seed, Stream::interior));
  Network net = pretrained ? *pretrained : init_network(cfg.widths(problem.dim()), derive_seed(cfg.seed, Stream::init));
  AdaptiveConfig acfg = cfg.adaptive(cfg.seed);
  acfg.pretrained = pretrained.has_value();
  acfg.schedule = schedule;
  acfg.error_metric = [&probe](const Network& n) { return probe.relative_l2(n); };
  if (write) {
    acfg.on_round = [&out_dir](const RoundRecord& r, const Network& n) {
      const std::string k = std::to_string(r.round);
      const auto dir = std::filesystem::path(out_dir);
      write_points_csv((dir / ("points_round_" + k + ".csv")).string(), r.added);
      write_json((dir / ("checkpoint_round_" + k + ".json")).string(), network_to_json(n));
      if (!r.sais_rounds.empty()) write_sais_trace_csv((dir / ("sais_trace_round_" + k + ".csv")).string(), r.sais_rounds);
    };
  }
  ExperimentRun run;
  run.result = run_fi_pinn(problem, std::move(net), std::move(ts), acfg);

  MetricsReport& m = run.metrics;
  const Eigen::VectorXd pred = forward_batch(run.result.net, probe.eval.points);
  m.relative_l2 = relative_l2(pred, probe.eval.exact);
  m.max_abs_error = (pred - probe.eval.exact).cwiseAbs().maxCoeff();
  m.trace = run.result.trace;
  m.config = config_to_json(cfg);
  m.seed = cfg.seed;
  m.n_collocation = run.result.training_set.n_collocation();
  m.n_eval = static_cast<std::size_t>(probe.eval.points.cols());
  if (write) {
    const auto dir = std::filesystem::path(out_dir);
    write_json((dir / "metrics.json").string(), m.to_json());
    write_trace_csv((dir / "trace.csv").string(), m.trace);
    write_loss_history_csv((dir / "loss_history.csv").string(), run.result.loss_history);
    write_json((dir / "checkpoint_final.json").string(), network_to_json(run.result.net));
    std::vector<std::string> tags;
    for (auto t : run.result.training_set.collocation_tags) tags.emplace_back(to_string(t));
    write_points_csv((dir / "training_points.csv").string(), run.result.training_set.collocation, tags);
    detail::write_field_csv((dir / "field_pred.csv").string(), probe.eval.points, pred, probe.eval.exact);
  }
  return run;
}

/// Network after the first round's training on the initial set of `cfg`.
inline Network pretrain(const ExperimentConfig& cfg) {
  const PdeProblem problem = make_problem(cfg.problem);
  const TrainingSet ts =
      make_training_set(problem, cfg.n_collocation, cfg.n_boundary, derive_seed(cfg.seed, Stream::interior));
  AdamOptions opt = cfg.adam;
  opt.causal = cfg.causal;
  return train_adam(init_network(cfg.widths(problem.dim()), derive_seed(cfg.seed, Stream::init)), problem, ts, opt)
      .net;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("mean of an empty set");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct ComparisonSeed {
  std::uint64_t seed = 0;
  std::map<Strategy, ExperimentRun> runs;
};

struct Comparison {
  std::vector<ComparisonSeed> seeds;

  std::vector<double> final_errors(Strategy s) const {
    std::vector<double> v;
    for (const auto& cs : seeds) v.push_back(cs.runs.at(s).metrics.relative_l2);
    return v;
  }

  Json to_json() const {
    Json j;
    for (Strategy s : {Strategy::sais, Strategy::rar, Strategy::uniform}) {
      if (seeds.empty() || !seeds.front().runs.count(s)) continue;
      const auto e = final_errors(s);
      j[to_string(s)] = {{"final_rel_l2", e}, {"median", median(e)}, {"mean", mean(e)}};
    }
    return j;
  }
};

/// Equal-budget comparison per seed: round 1 is trained once and shared, the
/// SAIS run goes first and its per-round point counts fix the baseline schedules.
inline Comparison compare_strategies(const ExperimentConfig& base, std::span<const Strategy> baselines,
                                     const std::string& out_dir = {}) {
  Comparison cmp;
  const PdeProblem problem = make_problem(base.problem);
  const ErrorProbe probe{make_evaluation_set(problem, base.eval_per_axis, base.eval_count)};
  for (std::uint64_t seed : base.seeds) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    const Network net0 = pretrain(cfg);
    ComparisonSeed cs;
    cs.seed = seed;
    auto dir_for = [&](Strategy s) {
      return out_dir.empty() ? std::string()
                             : (std::filesystem::path(out_dir) / ("seed_" + std::to_string(seed)) / to_string(s)).string();
    };
    cfg.strategy = Strategy::sais;
    ExperimentRun sais_run = run_experiment(cfg, dir_for(Strategy::sais), net0, std::nullopt, &probe);
    std::vector<std::size_t> schedule;
    for (std::size_t r = 0; r + 1 < sais_run.metrics.trace.rounds.size(); ++r)
      schedule.push_back(sais_run.metrics.trace.rounds[r].n_added);
    cs.runs.emplace(Strategy::sais, std::move(sais_run));
    for (Strategy s : baselines) {
      cfg.strategy = s;
      cs.runs.emplace(s, run_experiment(cfg, dir_for(s), net0, schedule, &probe));
    }
    cmp.seeds.push_back(std::move(cs));
  }
  if (!out_dir.empty()) write_json((std::filesystem::path(out_dir) / "comparison.json").string(), cmp.to_json());
  return cmp;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // root-mean-square residual
};

/// Least-squares fit of log(y) against log(x).
inline LineFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  detail::require_dim(y.size(), x.size(), "log-log fit");
  if (x.size() < 3) throw ConfigError("slope fit needs at least 3 points");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 2);
  Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericalError("log-log fit needs positive values");
    a(static_cast<Eigen::Index>(i), 0) = std::log(x[i]);
    a(static_cast<Eigen::Index>(i), 1) = 1.0;
    b(static_cast<Eigen::Index>(i)) = std::log(y[i]);
  }
  const Eigen::Vector2d c = a.colPivHouseholderQr().solve(b);
  LineFit f;
  f.slope = c(0);
  f.intercept = c(1);
  f.residual = std::sqrt((a * c - b).squaredNorm() / static_cast<double>(x.size()));
  return f;
}

enum class ConvergenceAxis { eps_p, eps_r };

inline ConvergenceAxis parse_axis(const std::string& s) {
  if (s == "eps_p") return ConvergenceAxis::eps_p;
  if (s == "eps_r") return ConvergenceAxis::eps_r;
  throw ConfigError("unknown convergence axis '" + s + "' (expected eps_p or eps_r)");
}

struct ConvergencePoint {
  double tolerance = 0.0;
  std::vector<double> errors;
  double median_error = 0.0;
  std::vector<std::size_t> rounds;
};

struct ConvergenceResult {
  ConvergenceAxis axis = ConvergenceAxis::eps_p;
  std::vector<ConvergencePoint> points;
  LineFit fit;

  Json to_json() const {
    Json pts = Json::array();
    for (const auto& p : points) {
      pts.push_back({{"tolerance", p.tolerance}, {"errors", p.errors}, {"median_error", p.median_error},
                     {"rounds", p.rounds}});
    }
    return Json{{"axis", axis == ConvergenceAxis::eps_p ? "eps_p" : "eps_r"},
                {"slope", fit.slope},
                {"intercept", fit.intercept},
                {"residual", fit.residual},
                {"points", pts}};
  }
};

/// Runs the adaptive loop at every tolerance of `grid` (the other tolerance held
/// at its configured value) and fits log(median error) against log(tolerance).
inline ConvergenceResult convergence_study(const ExperimentConfig& base, ConvergenceAxis axis,
                                           std::span<const double> grid, const std::string& out_dir = {}) {
  if (grid.size() < 3) throw ConfigError("convergence study needs at least 3 tolerance values");
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  if (!(*lo > 0.0) || *hi / *lo < 10.0 - 1e-9) throw ConfigError("tolerance grid must span at least one decade");
  const PdeProblem problem = make_problem(base.problem);
  const ErrorProbe probe{make_evaluation_set(problem, base.eval_per_axis, base.eval_count)};
  ConvergenceResult res;
  res.axis = axis;
  std::vector<double> xs, ys;
  std::map<std::uint64_t, Network> pretrained;
  for (std::uint64_t seed : base.seeds) {
    ExperimentConfig c = base;
    c.seed = seed;
    pretrained.emplace(seed, pretrain(c));
  }
  for (double tol : grid) {
    ConvergencePoint pt;
    pt.tolerance = tol;
    for (std::uint64_t seed : base.seeds) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      (axis == ConvergenceAxis::eps_p ? cfg.eps_p : cfg.eps_r) = tol;
      std::string dir;
      if (!out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "tol_%g_seed_%llu", tol, static_cast<unsigned long long>(seed));
        dir = (std::filesystem::path(out_dir) / name).string();
      }
      const ExperimentRun run = run_experiment(cfg, dir, pretrained.at(seed), std::nullopt, &probe);
      pt.errors.push_back(run.metrics.relative_l2);
      pt.rounds.push_back(run.metrics.trace.rounds.size());
    }
    pt.median_error = median(pt.errors);
    xs.push_back(tol);
    ys.push_back(pt.median_error);
    res.points.push_back(std::move(pt));
  }
  res.fit = fit_loglog(xs, ys);
  if (!out_dir.empty()) {
    ensure_directory(out_dir);
    write_json((std::filesystem::path(out_dir) / "convergence.json").string(), res.to_json());
  }
  return res;
}

}  // namespace fipinn
