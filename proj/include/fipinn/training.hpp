#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fipinn/domain.hpp"
#include "fipinn/error.hpp"
#include "fipinn/network.hpp"
#include "fipinn/parallel.hpp"
#include "fipinn/problems.hpp"
#include "fipinn/random.hpp"

namespace fipinn {

enum class Provenance : std::uint8_t { initial, uniform, rar, sais };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::initial: return "initial";
    case Provenance::uniform: return "uniform";
    case Provenance::rar: return "rar";
    case Provenance::sais: return "sais";
  }
  return "?";
}

struct TrainingSet {
  PointCloud collocation;
  PointCloud boundary;
  std::vector<Provenance> collocation_tags;
  std::vector<Provenance> boundary_tags;

  std::size_t n_collocation() const { return static_cast<std::size_t>(collocation.cols()); }
  std::size_t n_boundary() const { return static_cast<std::size_t>(boundary.cols()); }

  void add_collocation(const PointCloud& pts, Provenance tag) {
    if (pts.cols() == 0) return;
    if (collocation.cols() > 0) detail::require_dim(static_cast<std::size_t>(pts.rows()),
                                                    static_cast<std::size_t>(collocation.rows()), "collocation point");
    PointCloud merged(pts.rows(), collocation.cols() + pts.cols());
    merged << collocation, pts;
    collocation = std::move(merged);
    collocation_tags.insert(collocation_tags.end(), static_cast<std::size_t>(pts.cols()), tag);
  }
};

/// Initial set: interior points uniform on the problem's initial window (within
/// the domain), boundary points from the domain's boundary sampler.
inline TrainingSet make_training_set(const PdeProblem& problem, std::size_t n_collocation, std::size_t n_boundary,
                                     std::uint64_t seed) {
  if (n_collocation == 0 || n_boundary == 0) throw ConfigError("training set needs interior and boundary points");
  TrainingSet ts;
  Rng interior_rng(derive_seed(seed, Stream::interior));
  Rng boundary_rng(derive_seed(seed, Stream::boundary));
  ts.collocation = sample_window(problem.domain, problem.initial_window, n_collocation, interior_rng);
  ts.boundary = problem.domain.sample_boundary(n_boundary, boundary_rng);
  ts.collocation_tags.assign(n_collocation, Provenance::initial);
  ts.boundary_tags.assign(n_boundary, Provenance::initial);
  return ts;
}

struct LossReport {
  double total = 0.0;
  double interior = 0.0;
  double boundary = 0.0;
  double lambda = 1.0;
};

struct CausalConfig {
  std::size_t n_slabs = 1;
  double epsilon = 0.0;
  bool enabled = false;
};

/// w_1 = 1, w_i = exp(-eps * sum_{k < i} L_k).
inline std::vector<double> causal_weights(std::span<const double> slab_losses, double epsilon) {
  if (epsilon < 0.0) throw ConfigError("causality parameter must be nonnegative");
  std::vector<double> w(slab_losses.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < slab_losses.size(); ++i) {
    if (slab_losses[i] < 0.0) throw ConfigError("slab losses must be nonnegative");
    w[i] = std::exp(-epsilon * acc);
    acc += slab_losses[i];
  }
  return w;
}

/// Slab of time t under a uniform partition of [t0, t1] into half-open slabs, the last one closed.
inline std::size_t slab_index(double t, double t0, double t1, std::size_t n_slabs) {
  if (t <= t0) return 0;
  const double rel = (t - t0) / (t1 - t0) * static_cast<double>(n_slabs);
  return std::min(static_cast<std::size_t>(rel), n_slabs - 1);
}

namespace detail {

inline Interval time_range(const PdeProblem& problem) {
  if (!problem.time_axis()) throw ConfigError(problem.id + " has no time coordinate");
  return problem.domain.bounds[*problem.time_axis()];
}

}  // namespace detail

/// Mean squared interior residual per time slab (0 for empty slabs).
inline std::vector<double> slab_losses(const Network& net, const PdeProblem& problem, const PointCloud& pts,
                                       std::size_t n_slabs) {
  if (n_slabs < 1) throw ConfigError("causal loss needs at least one slab");
  const Interval tr = detail::time_range(problem);
  const auto axis = static_cast<Eigen::Index>(*problem.time_axis());
  const Eigen::VectorXd r = problem.residual_batch(net, pts);
  std::vector<double> sum(n_slabs, 0.0);
  std::vector<std::size_t> count(n_slabs, 0);
  for (Eigen::Index p = 0; p < pts.cols(); ++p) {
    const std::size_t s = slab_index(pts(axis, p), tr.lo, tr.hi, n_slabs);
    sum[s] += r(p) * r(p);
    ++count[s];
  }
  for (std::size_t s = 0; s < n_slabs; ++s) sum[s] = count[s] ? sum[s] / static_cast<double>(count[s]) : 0.0;
  return sum;
}

/// Loss and parameter gradient of a fixed training set. Boundary stencils are
/// compiled once; interior points are processed in fixed chunks with the
/// gradient reduced in chunk order.
class LossEvaluator {
 public:
  static constexpr Eigen::Index kChunk = 128;

  LossEvaluator(const PdeProblem& problem, const TrainingSet& ts) : problem_(&problem), ts_(&ts) {
    if (ts.n_collocation() == 0) throw ConfigError("loss needs a nonempty collocation set");
    if (ts.n_boundary() == 0) throw ConfigError("loss needs a nonempty boundary set");
    compile_boundary();
  }

  /// Loss at `net`; when `grad` is non-null it receives d total / d theta.
  LossReport evaluate(const Network& net, double lambda, const std::optional<CausalConfig>& causal,
                      std::vector<double>* grad) const {
    LossReport rep;
    rep.lambda = lambda;
    if (grad) grad->assign(net.params.size(), 0.0);

    const PointCloud& pts = ts_->collocation;
    const Eigen::Index n = pts.cols();
    Eigen::VectorXd point_weight = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    if (causal && causal->enabled) {
      const std::size_t ns = causal->n_slabs;
      const std::vector<double> losses = slab_losses(net, *problem_, pts, ns);
      const std::vector<double> w = causal_weights(losses, causal->epsilon);
      const Interval tr = detail::time_range(*problem_);
      const auto axis = static_cast<Eigen::Index>(*problem_->time_axis());
      std::vector<std::size_t> count(ns, 0);
      std::vector<std::size_t> slab(static_cast<std::size_t>(n));
      for (Eigen::Index p = 0; p < n; ++p) {
        slab[static_cast<std::size_t>(p)] = slab_index(pts(axis, p), tr.lo, tr.hi, ns);
        ++count[slab[static_cast<std::size_t>(p)]];
      }
      for (Eigen::Index p = 0; p < n; ++p) {
        const std::size_t s = slab[static_cast<std::size_t>(p)];
        point_weight(p) = w[s] / (static_cast<double>(ns) * static_cast<double>(count[s]));
      }
    }

    const std::size_t n_chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
    std::vector<double> chunk_loss(n_chunks, 0.0);
    std::vector<std::vector<double>> chunk_grad(grad ? n_chunks : 0);
    parallel_chunks(n_chunks, [&](std::size_t c) {
      const Eigen::Index start = static_cast<Eigen::Index>(c) * kChunk;
      const Eigen::Index m = std::min(kChunk, n - start);
      const PointCloud part = pts.middleCols(start, m);
      const JetTape tape(*net_of(net), part, problem_->interior_mode, grad != nullptr);
      const JetBatch& jets = tape.output();
      JetBatch seed = JetBatch::zeros(jets.mode, jets.dim, jets.n);
      const std::size_t d = jets.dim;
      std::vector<double> pg(d, 0.0), ps(d, 0.0);
      double acc = 0.0;
      for (Eigen::Index p = 0; p < m; ++p) {
        std::fill(pg.begin(), pg.end(), 0.0);
        std::fill(ps.begin(), ps.end(), 0.0);
        JetPartials partial{0.0, pg.data(), ps.data()};
        const double r = problem_->residual(std::span<const double>(part.col(p).data(), d),
                                            PdeProblem::view(jets, p), grad ? &partial : nullptr);
        const double wgt = point_weight(start + p);
        acc += wgt * r * r;
        if (!grad) continue;
        const double coef = 2.0 * wgt * r;
        seed.value(p) = coef * partial.value;
        for (Eigen::Index i = 0; i < seed.grad.rows(); ++i) seed.grad(i, p) = coef * pg[static_cast<std::size_t>(i)];
        for (Eigen::Index q = 0; q < seed.second.rows(); ++q) seed.second(q, p) = coef * ps[static_cast<std::size_t>(q)];
      }
      chunk_loss[c] = acc;
      if (grad) {
        chunk_grad[c].assign(net.params.size(), 0.0);
        tape.backward(seed, chunk_grad[c]);
      }
    });
    for (std::size_t c = 0; c < n_chunks; ++c) {
      rep.interior += chunk_loss[c];
      if (grad) {
        for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += chunk_grad[c][i];
      }
    }

    rep.boundary = boundary_loss(net, lambda, grad);
    rep.total = rep.interior + lambda * rep.boundary;
    return rep;
  }

 private:
  struct CompiledTerm {
    Eigen::Index probe;
    std::size_t channel;
    double coeff;
  };
  struct CompiledComponent {
    std::vector<CompiledTerm> terms;
    double target;
  };

  static const Network* net_of(const Network& n) { return &n; }

  void compile_boundary() {
    const PointCloud& b = ts_->boundary;
    const std::size_t d = problem_->dim();
    std::vector<Eigen::VectorXd> probes;
    for (Eigen::Index s = 0; s < b.cols(); ++s) {
      const BoundaryStencil st = problem_->boundary(std::span<const double>(b.col(s).data(), d));
      const auto base = static_cast<Eigen::Index>(probes.size());
      for (Eigen::Index p = 0; p < st.probes.cols(); ++p) probes.push_back(st.probes.col(p));
      for (const auto& comp : st.components) {
        CompiledComponent cc{{}, comp.target};
        for (const auto& t : comp.terms) {
          if (t.channel > d) throw ConfigError("boundary term references a missing jet channel");
          cc.terms.push_back({base + static_cast<Eigen::Index>(t.probe), t.channel, t.coeff});
        }
        components_.push_back(std::move(cc));
      }
    }
    probes_.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(probes.size()));
    for (std::size_t i = 0; i < probes.size(); ++i) probes_.col(static_cast<Eigen::Index>(i)) = probes[i];
  }

  double boundary_loss(const Network& net, double lambda, std::vector<double>* grad) const {
    const double inv_nb = 1.0 / static_cast<double>(ts_->n_boundary());
    const JetTape tape(net, probes_, JetMode::grad, grad != nullptr);
    const JetBatch& jets = tape.output();
    JetBatch seed = JetBatch::zeros(JetMode::grad, jets.dim, jets.n);
    double loss = 0.0;
    for (const auto& comp : components_) {
      double b = -comp.target;
      for (const auto& t : comp.terms) {
        b += t.coeff * (t.channel == 0 ? jets.value(t.probe) : jets.grad(static_cast<Eigen::Index>(t.channel - 1), t.probe));
      }
      loss += b * b * inv_nb;
      if (!grad) continue;
      const double coef = 2.0 * lambda * b * inv_nb;
      for (const auto& t : comp.terms) {
        if (t.channel == 0) seed.value(t.probe) += coef * t.coeff;
        else seed.grad(static_cast<Eigen::Index>(t.channel - 1), t.probe) += coef * t.coeff;
      }
    }
    if (grad && lambda != 0.0) tape.backward(seed, *grad);
    return loss;
  }

  const PdeProblem* problem_;
  const TrainingSet* ts_;
  PointCloud probes_;
  std::vector<CompiledComponent> components_;
};

/// interior = (1 / N_c) sum r^2, boundary = (1 / N_b) sum |b|^2, total = interior + lambda * boundary.
inline LossReport loss(const Network& net, const PdeProblem& problem, const TrainingSet& ts, double lambda = 1.0) {
  return LossEvaluator(problem, ts).evaluate(net, lambda, std::nullopt, nullptr);
}

/// interior = (1 / N_t) sum_i w_i L_c(t_i) with w from causal_weights on the slab losses.
inline LossReport causal_loss(const Network& net, const PdeProblem& problem, const TrainingSet& ts,
                              const CausalConfig& cfg, double lambda = 1.0) {
  if (cfg.n_slabs < 1) throw ConfigError("causal loss needs at least one slab");
  CausalConfig on = cfg;
  on.enabled = true;
  return LossEvaluator(problem, ts).evaluate(net, lambda, on, nullptr);
}

struct LossRecord {
  std::size_t step = 0;
  double total = 0.0;
  double interior = 0.0;
  double boundary = 0.0;
};

struct AdamOptions {
  std::size_t steps = 1000;
  double learning_rate = 1e-3;
  double lambda = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t history_every = 100;
  std::optional<CausalConfig> causal;
};

enum class TrainStatus { completed, converged, line_search_failed };

struct TrainResult {
  Network net;
  std::vector<LossRecord> history;
  TrainStatus status = TrainStatus::completed;
  LossReport final_loss;
};

/// Full-batch Adam on LossReport::total. Moments start at zero on every call.
inline TrainResult train_adam(Network net, const PdeProblem& problem, const TrainingSet& ts, const AdamOptions& opt) {
  if (!(opt.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  const LossEvaluator eval(problem, ts);
  TrainResult res;
  const std::size_t np = net.params.size();
  std::vector<double> m(np, 0.0), v(np, 0.0), g;
  double b1t = 1.0, b2t = 1.0;
  const std::size_t every = std::max<std::size_t>(1, opt.history_every);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    const LossReport rep = eval.evaluate(net, opt.lambda, opt.causal, &g);
    if (step % every == 0) res.history.push_back({step, rep.total, rep.interior, rep.boundary});
    b1t *= opt.beta1;
    b2t *= opt.beta2;
    for (std::size_t i = 0; i < np; ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = m[i] / (1.0 - b1t);
      const double vhat = v[i] / (1.0 - b2t);
      net.params[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
    }
  }
  res.final_loss = eval.evaluate(net, opt.lambda, opt.causal, nullptr);
  res.history.push_back({opt.steps, res.final_loss.total, res.final_loss.interior, res.final_loss.boundary});
  res.net = std::move(net);
  return res;
}

struct LbfgsOptions {
  std::size_t max_iters = 500;
  std::size_t history = 10;
  double lambda = 1.0;
  double grad_tol = 1e-10;
  double armijo_c1 = 1e-4;
  std::size_t max_backtracks = 40;
  std::optional<CausalConfig> causal;
};

/// L-BFGS (two-loop recursion) with Armijo backtracking. A failed line search
/// stops the run and returns the best iterate with status line_search_failed.
inline TrainResult train_lbfgs(Network net, const PdeProblem& problem, const TrainingSet& ts, const LbfgsOptions& opt) {
  const LossEvaluator eval(problem, ts);
  const std::size_t np = net.params.size();
  using Vec = Eigen::VectorXd;
  auto as_vec = [](const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); };

  TrainResult res;
  std::vector<double> gbuf;
  LossReport rep = eval.evaluate(net, opt.lambda, opt.causal, &gbuf);
  Vec x = as_vec(net.params);
  Vec g = as_vec(gbuf);
  double f = rep.total;
  res.history.push_back({0, rep.total, rep.interior, rep.boundary});
  std::vector<Vec> s_hist, y_hist;
  std::vector<double> rho_hist;

  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    if (g.norm() < opt.grad_tol) {
      res.status = TrainStatus::converged;
      break;
    }
    // Two-loop recursion.
    Vec q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    else gamma = std::min(1.0, 1.0 / g.norm());
    Vec dir = gamma * q;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha[k] - beta) * s_hist[k];
    }
    dir = -dir;
    double slope = g.dot(dir);
    if (slope >= 0.0) {
      dir = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = 1.0;
    bool accepted = false;
    Vec x_new;
    LossReport rep_new;
    for (std::size_t bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = x + step * dir;
      Vec::Map(net.params.data(), static_cast<Eigen::Index>(np)) = x_new;
      rep_new = eval.evaluate(net, opt.lambda, opt.causal, &gbuf);
      if (std::isfinite(rep_new.total) && rep_new.total <= f + opt.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      Vec::Map(net.params.data(), static_cast<Eigen::Index>(np)) = x;
      res.status = TrainStatus::line_search_failed;
      break;
    }
    const Vec g_new = as_vec(gbuf);
    const Vec s = x_new - x;
    const Vec y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > opt.history) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    x = x_new;
    g = g_new;
    f = rep_new.total;
    res.history.push_back({it + 1, rep_new.total, rep_new.interior, rep_new.boundary});
  }
  Vec::Map(net.params.data(), static_cast<Eigen::Index>(np)) = x;
  res.final_loss = eval.evaluate(net, opt.lambda, opt.causal, nullptr);
  res.net = std::move(net);
  return res;
}

/// Loss history as CSV with header step,total,interior,boundary.
inline void write_loss_history_csv(const std::string& path, std::span<const LossRecord> history) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  out << "step,total,interior,boundary\n";
  for (const auto& r : history) out << r.step << ',' << r.total << ',' << r.interior << ',' << r.boundary << '\n';
}

}  // namespace fipinn
