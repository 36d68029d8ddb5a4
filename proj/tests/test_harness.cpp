#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "fipinn/harness.hpp"

using namespace fipinn;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.problem = "poisson_peak_2d";
  c.hidden = {6};
  c.n_collocation = 40;
  c.n_boundary = 20;
  c.adam.steps = 10;
  c.adam.history_every = 5;
  c.max_outer = 2;
  c.sais.n1 = 100;
  c.sais.n2 = 200;
  c.pool_size = 500;
  c.m = 10;
  c.eval_per_axis = 16;
  c.seeds = {0, 1};
  c.seed = 5;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fipinn_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Metrics with wall-clock fields removed.
Json without_timing(Json j) {
  for (auto& r : j["rounds"]) r.erase("seconds");
  return j;
}

}  // namespace

TEST(RelativeL2, Examples) {
  const Eigen::VectorXd u = (Eigen::VectorXd(4) << 1.0, -2.0, 2.0, 4.0).finished();
  EXPECT_EQ(relative_l2(u, u), 0.0);
  EXPECT_DOUBLE_EQ(relative_l2(2.0 * u, u), 1.0);
  Eigen::VectorXd bumped = u;
  bumped(0) += 0.3;
  EXPECT_NEAR(relative_l2(bumped, u), 0.3 / 5.0, 1e-15);  // |u| = 5
}

TEST(RelativeL2, ScaleProperty) {
  const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(50, -3.0, 7.0);
  for (double a : {0.0, 0.25, 1.0, 1.5, 10.0}) EXPECT_NEAR(relative_l2(a * u, u), std::abs(a - 1.0), 1e-14);
}

TEST(RelativeL2, Errors) {
  EXPECT_THROW(relative_l2(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Zero(3)), NumericalError);
  EXPECT_THROW(relative_l2(Eigen::VectorXd(0), Eigen::VectorXd(0)), ConfigError);
  EXPECT_THROW(relative_l2(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Ones(2)), DimensionError);
}

TEST(Halton, RadicalInverse) {
  EXPECT_EQ(halton(0, 2), 0.0);
  EXPECT_EQ(halton(1, 2), 0.5);
  EXPECT_EQ(halton(2, 2), 0.25);
  EXPECT_EQ(halton(3, 2), 0.75);
  EXPECT_NEAR(halton(5, 3), 2.0 / 3.0 + 1.0 / 9.0, 1e-15);  // 5 = 12 in base 3
}

TEST(EvaluationSet, Shapes) {
  const EvaluationSet peak = make_evaluation_set(make_problem("poisson_peak_2d"));
  EXPECT_EQ(peak.points.cols(), 256 * 256);
  EXPECT_EQ(peak.points.col(0), Eigen::Vector2d(-1.0, -1.0));
  EXPECT_EQ(peak.points.col(peak.points.cols() - 1), Eigen::Vector2d(1.0, 1.0));

  const EvaluationSet high = make_evaluation_set(make_problem("poisson_highdim"));
  EXPECT_EQ(high.points.rows(), 9);
  EXPECT_EQ(high.points.cols(), 10000);

  const PdeProblem unb = make_problem("poisson_unbounded_2d");
  const EvaluationSet disk = make_evaluation_set(unb);
  EXPECT_EQ(disk.points.cols(), 10000);
  for (Eigen::Index j = 0; j < disk.points.cols(); ++j) {
    ASSERT_LE(disk.points.col(j).norm(), 10.0);
    ASSERT_TRUE(unb.domain.contains(Eigen::Vector2d(disk.points.col(j))));
  }

  const EvaluationSet burgers = make_evaluation_set(make_problem("burgers_1d"));
  EXPECT_EQ(burgers.points.cols(), 512 * 201);
  // Table column 0 is t = 0 where u = -sin(pi x).
  EXPECT_NEAR(burgers.exact(0), -std::sin(std::numbers::pi * burgers.points(0, 0)), 1e-12);

  EXPECT_EQ(make_evaluation_set(make_problem("poisson_peak_2d"), 8).points.cols(), 64);
  EXPECT_THROW(make_evaluation_set(make_problem("poisson_peak_2d"), 1), ConfigError);
}

TEST(EvaluationSet, ExactValuesMatchProblem) {
  const PdeProblem p = make_problem("poisson_two_peak_2d");
  const EvaluationSet ev = make_evaluation_set(p, 9);
  for (Eigen::Index j = 0; j < ev.points.cols(); ++j) {
    EXPECT_EQ(ev.exact(j), p.exact(std::span<const double>(ev.points.col(j).data(), 2)));
  }
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny_config();
  c.strategy = Strategy::rar;
  c.sais.model = SaisConfig::Model::gmm;
  c.sais.final_fit = SaisConfig::FinalFit::top_np;
  c.causal = CausalConfig{};
  c.causal->epsilon = 2.5;
  const Json j = config_to_json(c);
  const ExperimentConfig back = config_from_json(j);
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
  EXPECT_EQ(back.strategy, Strategy::rar);
  EXPECT_EQ(back.sais.model, SaisConfig::Model::gmm);
  EXPECT_EQ(back.sais.final_fit, SaisConfig::FinalFit::top_np);
  ASSERT_TRUE(back.causal);
  EXPECT_EQ(back.causal->epsilon, 2.5);
}

TEST(Config, PartialFileKeepsDefaults) {
  const ExperimentConfig c = config_from_json(Json{{"problem", "burgers_1d"}, {"train", {{"steps", 7}}}});
  const ExperimentConfig d;
  EXPECT_EQ(c.problem, "burgers_1d");
  EXPECT_EQ(c.adam.steps, 7u);
  EXPECT_EQ(c.adam.learning_rate, d.adam.learning_rate);
  EXPECT_EQ(c.hidden, d.hidden);
}

TEST(Config, Rejections) {
  EXPECT_THROW(config_from_json(Json{{"problme", "x"}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"problem", "navier_stokes"}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"points", {{"collocation", 0}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"network", {{"hidden", {20, -1}}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"adaptive", {{"eps_p", 0.0}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"adaptive", {{"strategy", "greedy"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"sais", {{"model", "flow"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"sais", {{"final_fit", "best"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"train", {{"steps", "many"}}}}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ShippedPresetsParse) {
  std::size_t n = 0;
  for (const char* sub : {"", "desk", "full"}) {
    const fs::path dir = fs::path(FIPINN_CONFIG_DIR) / sub;
    if (!fs::is_directory(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() != ".json") continue;
      EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
      ++n;
    }
  }
  EXPECT_GE(n, 3u);
}

TEST(RunExperiment, WritesOutputsWithStableHeaders) {
  const fs::path dir = scratch("outputs");
  const ExperimentRun run = run_experiment(tiny_config(), dir.string());
  const auto& rounds = run.metrics.trace.rounds;
  ASSERT_EQ(rounds.size(), 2u);

  EXPECT_EQ(first_line(dir / "trace.csv"), "round,n_points,p_hat,rel_l2,train_loss,seconds");
  EXPECT_EQ(first_line(dir / "field_pred.csv"), "x0,x1,u_pred,u_exact,abs_err");
  EXPECT_EQ(first_line(dir / "loss_history.csv"), "step,total,interior,boundary");
  EXPECT_EQ(first_line(dir / "points_round_1.csv"), "x0,x1");
  EXPECT_EQ(first_line(dir / "training_points.csv"), "x0,x1,tag");
  EXPECT_EQ(first_line(dir / "sais_trace_round_1.csv"), "round,N_eta,mu_0,mu_1,sigma_diag_0,sigma_diag_1");
  for (const char* f : {"metrics.json", "checkpoint_round_1.json", "checkpoint_round_2.json", "checkpoint_final.json",
                        "points_round_2.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }

  const Json m = read_json((dir / "metrics.json").string());
  EXPECT_EQ(m["relative_l2"].get<double>(), run.metrics.relative_l2);
  EXPECT_GE(run.metrics.relative_l2, 0.0);
  EXPECT_EQ(m["n_eval"].get<std::size_t>(), 256u);
  EXPECT_EQ(m["rounds"].size(), 2u);
  EXPECT_EQ(m["config"].dump(), config_to_json(tiny_config()).dump());

  // Final checkpoint reproduces the reported error.
  const Network net = network_from_json(read_json((dir / "checkpoint_final.json").string()));
  const EvaluationSet ev = make_evaluation_set(make_problem("poisson_peak_2d"), 16);
  EXPECT_EQ(relative_l2(forward_batch(net, ev.points), ev.exact), run.metrics.relative_l2);

  // Round-1 point file lists exactly the points added in round 1.
  std::ifstream in(dir / "points_round_1.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, rounds[0].n_added);
  fs::remove_all(dir);
}

TEST(RunExperiment, DeterministicAndEchoReproduces) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const ExperimentConfig cfg = tiny_config();
  const ExperimentRun ra = run_experiment(cfg, a.string());
  // Second run uses the configuration parsed back from the first run's echo.
  const Json echo = read_json((a / "metrics.json").string())["config"];
  const ExperimentRun rb = run_experiment(config_from_json(echo), b.string());
  EXPECT_EQ(without_timing(ra.metrics.to_json()).dump(), without_timing(rb.metrics.to_json()).dump());
  for (const char* f : {"field_pred.csv", "loss_history.csv", "points_round_1.csv", "checkpoint_final.json",
                        "training_points.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunExperiment, UnwritableOutput) {
  EXPECT_THROW(run_experiment(tiny_config(), "/proc/fipinn_cannot_write_here"), ConfigError);
}

TEST(CompareStrategies, BaselinesFollowSaisSchedule) {
  ExperimentConfig cfg = tiny_config();
  cfg.max_outer = 3;
  const Strategy baselines[] = {Strategy::rar, Strategy::uniform};
  const Comparison cmp = compare_strategies(cfg, baselines);
  ASSERT_EQ(cmp.seeds.size(), 2u);
  for (const auto& cs : cmp.seeds) {
    const auto& sais_rounds = cs.runs.at(Strategy::sais).metrics.trace.rounds;
    for (Strategy s : baselines) {
      const auto& rounds = cs.runs.at(s).metrics.trace.rounds;
      ASSERT_EQ(rounds.size(), sais_rounds.size());
      for (std::size_t i = 0; i < rounds.size(); ++i) {
        EXPECT_EQ(rounds[i].n_added, sais_rounds[i].n_added);
        EXPECT_EQ(rounds[i].n_points, sais_rounds[i].n_points);
      }
      // Shared pretrained round 1.
      EXPECT_EQ(rounds[0].rel_l2, sais_rounds[0].rel_l2);
    }
  }
  const Json j = cmp.to_json();
  EXPECT_EQ(j["sais"]["final_rel_l2"].size(), 2u);
  EXPECT_TRUE(j.contains("rar") && j.contains("uniform"));
}

TEST(Convergence, LogLogFit) {
  const std::vector<double> x = {0.4, 0.2, 0.1, 0.05, 0.025};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 0.5));
  const LineFit f = fit_loglog(x, y);
  EXPECT_NEAR(f.slope, 0.5, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(f.residual, 0.0, 1e-12);
  EXPECT_THROW(fit_loglog(std::vector<double>{1.0, 0.1}, std::vector<double>{1.0, 2.0}), ConfigError);
  EXPECT_THROW(fit_loglog(std::vector<double>{1.0, 0.1, 0.01}, std::vector<double>{1.0, 0.0, 2.0}), NumericalError);
}

TEST(Convergence, GridPreconditions) {
  const ExperimentConfig cfg = tiny_config();
  EXPECT_THROW(convergence_study(cfg, ConvergenceAxis::eps_p, std::vector<double>{0.1}), ConfigError);
  EXPECT_THROW(convergence_study(cfg, ConvergenceAxis::eps_p, std::vector<double>{0.1, 0.05}), ConfigError);
  EXPECT_THROW(convergence_study(cfg, ConvergenceAxis::eps_r, std::vector<double>{0.4, 0.2, 0.1}), ConfigError);
  EXPECT_EQ(parse_axis("eps_r"), ConvergenceAxis::eps_r);
  EXPECT_THROW(parse_axis("lambda"), ConfigError);
}

TEST(Convergence, TinyStudyRuns) {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {0};
  const std::vector<double> grid = {0.8, 0.2, 0.08};
  const ConvergenceResult r = convergence_study(cfg, ConvergenceAxis::eps_r, grid);
  ASSERT_EQ(r.points.size(), 3u);
  for (const auto& p : r.points) {
    EXPECT_EQ(p.errors.size(), 1u);
    EXPECT_EQ(p.median_error, p.errors[0]);
  }
  EXPECT_TRUE(std::isfinite(r.fit.slope));
}

TEST(Summaries, MedianAndMean) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_EQ(mean({1.0, 2.0, 6.0}), 3.0);
  EXPECT_THROW(median({}), ConfigError);
  EXPECT_THROW(mean({}), ConfigError);
}

TEST(Checkpoints, NetworkJsonRoundTrip) {
  const Network net = init_network({3, 7, 5, 1}, 42);
  const Network back = network_from_json(Json::parse(network_to_json(net).dump()));
  EXPECT_EQ(back.layer_widths, net.layer_widths);
  EXPECT_EQ(back.params, net.params);
  EXPECT_EQ(back.seed, 42u);
  Json bad = network_to_json(net);
  bad["params"].erase(0);
  EXPECT_THROW(network_from_json(bad), DimensionError);
  bad = network_to_json(net);
  bad["activation"] = "relu";
  EXPECT_THROW(network_from_json(bad), ConfigError);
}

TEST(Checkpoints, ProposalJsonRoundTrip) {
  const DomainSpec dom = DomainSpec::box({{0.0, 1.0}, {0.0, 1.0}});
  Eigen::Matrix2d cov;
  cov << 0.02, 0.005, 0.005, 0.03;
  const Proposal tg = Proposal::truncated_gaussian(Eigen::Vector2d(0.5, 0.4), cov, dom, 3);
  const Proposal mix = Proposal::gmm({GaussianComponent::make(0.3, Eigen::Vector2d(0.2, 0.2), cov),
                                      GaussianComponent::make(0.7, Eigen::Vector2d(0.8, 0.7), cov)},
                                     dom, 4);
  const Proposal uni = Proposal::uniform(dom);
  for (const Proposal* p : {&tg, &mix, &uni}) {
    const Proposal back = proposal_from_json(Json::parse(proposal_to_json(*p).dump()));
    EXPECT_EQ(back.kind, p->kind);
    EXPECT_EQ(back.trunc_norm, p->trunc_norm);
    for (const Eigen::Vector2d& x : {Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.1, 0.9), Eigen::Vector2d(0.75, 0.6)}) {
      EXPECT_NEAR(back.density(x), p->density(x), 1e-12 * p->density(x));
    }
  }
}
