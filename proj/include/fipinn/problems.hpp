#pragma once

// PDE problem catalog. Each problem supplies an interior residual r(x; theta)
// as a function of the network jet at x (plus its partial derivatives with
// respect to the jet channels, for training), a boundary rule expressed as
// linear functionals of jets at probe points, the domain, the sampling prior
// and, where available, the exact solution.
//
// Time-dependent problems order coordinates as (x, t).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fipinn/distributions.hpp"
#include "fipinn/domain.hpp"
#include "fipinn/error.hpp"
#include "fipinn/network.hpp"

namespace fipinn {

/// One point's jet inside a JetBatch (hess_diag layout: second[i] = d2u/dx_i^2).
struct JetView {
  double value = 0.0;
  const double* grad = nullptr;
  const double* second = nullptr;
};

/// Partial derivatives of a residual with respect to the jet channels. Arrays
/// are zeroed by the caller; residual functions write the nonzero entries.
struct JetPartials {
  double value = 0.0;
  double* grad = nullptr;
  double* second = nullptr;
};

using PointFn = std::function<double(std::span<const double>)>;
using InteriorResidual = std::function<double(std::span<const double> x, const JetView& u, JetPartials* partial)>;

/// b = sum_k coeff_k * channel_k(probe_k) - target; channel 0 is u, 1 + i is du/dx_i.
struct BoundaryTerm {
  std::size_t probe = 0;
  std::size_t channel = 0;
  double coeff = 1.0;
};

struct BoundaryComponent {
  std::vector<BoundaryTerm> terms;
  double target = 0.0;
};

struct BoundaryStencil {
  PointCloud probes;
  std::vector<BoundaryComponent> components;
};

using BoundaryRule = std::function<BoundaryStencil(std::span<const double> sample)>;

/// Error-evaluation point set used by the harness.
struct EvaluationSpec {
  enum class Kind { tensor_grid, uniform_random, disk_quasi_random, reference_grid };
  Kind kind = Kind::tensor_grid;
  std::vector<Interval> window;
  std::size_t per_axis = 256;
  std::size_t count = 10000;
  double radius = 10.0;
};

/// Dense (x, t) table with bilinear interpolation; CSV columns x,t,u.
struct ReferenceTable {
  std::vector<double> xs;
  std::vector<double> ts;
  Eigen::MatrixXd values;  // xs.size() x ts.size()

  static ReferenceTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open reference table " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("x,t,u", 0) != 0) throw ConfigError("reference table " + path + " lacks header x,t,u");
    std::vector<double> x, t, u;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string a, b, c;
      std::getline(row, a, ',');
      std::getline(row, b, ',');
      std::getline(row, c, ',');
      x.push_back(std::stod(a));
      t.push_back(std::stod(b));
      u.push_back(std::stod(c));
    }
    // Rows are x-major: all t for x0, then x1, ...
    ReferenceTable table;
    std::size_t nt = 0;
    while (nt < x.size() && x[nt] == x.front()) ++nt;
    if (nt < 2 || x.size() % nt != 0) throw ConfigError("reference table " + path + " is not a full grid");
    for (std::size_t i = 0; i < x.size(); i += nt) table.xs.push_back(x[i]);
    for (std::size_t j = 0; j < nt; ++j) table.ts.push_back(t[j]);
    table.values.resize(static_cast<Eigen::Index>(table.xs.size()), static_cast<Eigen::Index>(nt));
    for (std::size_t i = 0; i < table.xs.size(); ++i)
      for (std::size_t j = 0; j < nt; ++j)
        table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u[i * nt + j];
    return table;
  }

  double interpolate(double x, double t) const {
    auto locate = [](const std::vector<double>& g, double v, std::size_t& i, double& f) {
      if (v <= g.front()) {
        i = 0;
        f = 0.0;
        return;
      }
      if (v >= g.back()) {
        i = g.size() - 2;
        f = 1.0;
        return;
      }
      i = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), v) - g.begin()) - 1;
      f = (v - g[i]) / (g[i + 1] - g[i]);
    };
    std::size_t i = 0, j = 0;
    double fx = 0.0, ft = 0.0;
    locate(xs, x, i, fx);
    locate(ts, t, j, ft);
    const auto I = static_cast<Eigen::Index>(i);
    const auto J = static_cast<Eigen::Index>(j);
    return (1 - fx) * (1 - ft) * values(I, J) + fx * (1 - ft) * values(I + 1, J) +
           (1 - fx) * ft * values(I, J + 1) + fx * ft * values(I + 1, J + 1);
  }
};

struct PdeProblem {
  std::string id;
  DomainSpec domain;
  JetMode interior_mode = JetMode::hess_diag;
  InteriorResidual residual;
  BoundaryRule boundary;
  PointFn forcing;
  std::optional<PointFn> exact_solution;
  /// Reference table file name (looked up in the data directory) when no
  /// closed-form solution exists.
  std::optional<std::string> reference_file;
  Proposal prior;
  std::vector<Interval> initial_window;
  EvaluationSpec evaluation;

  std::size_t dim() const { return domain.dim(); }
  std::optional<std::size_t> time_axis() const { return domain.time_axis; }

  double exact(std::span<const double> x) const {
    if (!exact_solution) throw ConfigError(id + " has no closed-form solution");
    return (*exact_solution)(x);
  }

  /// r(x; theta) at every column of `x`.
  Eigen::VectorXd residual_batch(const Network& net, const PointCloud& x) const {
    constexpr Eigen::Index chunk = 2048;
    Eigen::VectorXd out(x.cols());
    for (Eigen::Index s = 0; s < x.cols(); s += chunk) {
      const Eigen::Index m = std::min(chunk, x.cols() - s);
      const PointCloud part = x.middleCols(s, m);
      const JetBatch jets = JetTape(net, part, interior_mode, false).output();
      for (Eigen::Index p = 0; p < m; ++p) {
        out(s + p) = residual(std::span<const double>(part.col(p).data(), dim()), view(jets, p), nullptr);
      }
    }
    return out;
  }

  double residual_at(const Network& net, std::span<const double> x) const {
    const PointCloud pts = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return residual_batch(net, pts)(0);
  }

  /// b(x; theta) components at one boundary sample.
  std::vector<double> boundary_residual(const Network& net, std::span<const double> sample) const {
    const BoundaryStencil st = boundary(sample);
    const JetBatch jets = JetTape(net, st.probes, JetMode::grad, false).output();
    std::vector<double> out;
    for (const auto& c : st.components) {
      double b = -c.target;
      for (const auto& t : c.terms) {
        const auto p = static_cast<Eigen::Index>(t.probe);
        b += t.coeff * (t.channel == 0 ? jets.value(p) : jets.grad(static_cast<Eigen::Index>(t.channel - 1), p));
      }
      out.push_back(b);
    }
    return out;
  }

  static JetView view(const JetBatch& jets, Eigen::Index p) {
    JetView v;
    v.value = jets.value(p);
    if (jets.grad.rows() > 0) v.grad = jets.grad.col(p).data();
    if (jets.second.rows() > 0) v.second = jets.second.col(p).data();
    return v;
  }
};

namespace detail {

inline BoundaryRule dirichlet(PointFn g) {
  return [g = std::move(g)](std::span<const double> s) {
    BoundaryStencil st;
    st.probes = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    st.components.push_back({{BoundaryTerm{0, 0, 1.0}}, g(s)});
    return st;
  };
}

/// -Laplace(u) - f, partials -1 on every second-order channel.
inline InteriorResidual poisson_residual(PointFn f, std::size_t dim) {
  return [f = std::move(f), dim](std::span<const double> x, const JetView& u, JetPartials* partial) {
    double lap = 0.0;
    for (std::size_t i = 0; i < dim; ++i) lap += u.second[i];
    if (partial) {
      for (std::size_t i = 0; i < dim; ++i) partial->second[i] = -1.0;
    }
    return -lap - f(x);
  };
}

inline double sq(double v) { return v * v; }

/// exp(-a |x - c|^2) and its forcing f = -Laplace = (2 a d - 4 a^2 |x - c|^2) exp(...).
inline double gaussian_bump(std::span<const double> x, std::span<const double> c, double a) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) r2 += sq(x[i] - c[i]);
  return std::exp(-a * r2);
}

inline double gaussian_bump_forcing(std::span<const double> x, std::span<const double> c, double a) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) r2 += sq(x[i] - c[i]);
  const auto d = static_cast<double>(x.size());
  return (2.0 * a * d - 4.0 * a * a * r2) * std::exp(-a * r2);
}

inline EvaluationSpec tensor_grid(std::vector<Interval> window, std::size_t per_axis) {
  EvaluationSpec e;
  e.kind = EvaluationSpec::Kind::tensor_grid;
  e.window = std::move(window);
  e.per_axis = per_axis;
  return e;
}

}  // namespace detail

/// -Laplace u = f on [-1, 1]^2 with u = exp(-1000 |x - (0.5, 0.5)|^2).
inline PdeProblem poisson_peak_2d() {
  static constexpr double center[2] = {0.5, 0.5};
  PdeProblem p;
  p.id = "poisson_peak_2d";
  p.domain = DomainSpec::box({{-1.0, 1.0}, {-1.0, 1.0}});
  PointFn u = [](std::span<const double> x) { return detail::gaussian_bump(x, center, 1000.0); };
  p.forcing = [](std::span<const double> x) { return detail::gaussian_bump_forcing(x, center, 1000.0); };
  p.exact_solution = u;
  p.residual = detail::poisson_residual(p.forcing, 2);
  p.boundary = detail::dirichlet(u);
  p.prior = Proposal::uniform(p.domain);
  p.initial_window = p.domain.bounds;
  p.evaluation = detail::tensor_grid(p.domain.bounds, 256);
  return p;
}

/// Two peaks at (0.5, 0.5) and (-0.5, -0.5).
inline PdeProblem poisson_two_peak_2d() {
  static constexpr double c1[2] = {0.5, 0.5};
  static constexpr double c2[2] = {-0.5, -0.5};
  PdeProblem p;
  p.id = "poisson_two_peak_2d";
  p.domain = DomainSpec::box({{-1.0, 1.0}, {-1.0, 1.0}});
  PointFn u = [](std::span<const double> x) {
    return detail::gaussian_bump(x, c1, 1000.0) + detail::gaussian_bump(x, c2, 1000.0);
  };
  p.forcing = [](std::span<const double> x) {
    return detail::gaussian_bump_forcing(x, c1, 1000.0) + detail::gaussian_bump_forcing(x, c2, 1000.0);
  };
  p.exact_solution = u;
  p.residual = detail::poisson_residual(p.forcing, 2);
  p.boundary = detail::dirichlet(u);
  p.prior = Proposal::uniform(p.domain);
  p.initial_window = p.domain.bounds;
  p.evaluation = detail::tensor_grid(p.domain.bounds, 256);
  return p;
}

inline constexpr double kBurgersViscosity = 0.01 / std::numbers::pi;

/// u_t + u u_x - (0.01 / pi) u_xx = 0 on [-1, 1] x [0, 1]; u(x, 0) = -sin(pi x), u(+-1, t) = 0.
inline PdeProblem burgers_1d() {
  PdeProblem p;
  p.id = "burgers_1d";
  p.domain = DomainSpec::box({{-1.0, 1.0}, {0.0, 1.0}}, 1);
  p.forcing = [](std::span<const double>) { return 0.0; };
  p.residual = [](std::span<const double>, const JetView& u, JetPartials* partial) {
    const double ux = u.grad[0];
    const double ut = u.grad[1];
    const double uxx = u.second[0];
    if (partial) {
      partial->value = ux;
      partial->grad[0] = u.value;
      partial->grad[1] = 1.0;
      partial->second[0] = -kBurgersViscosity;
    }
    return ut + u.value * ux - kBurgersViscosity * uxx;
  };
  p.boundary = detail::dirichlet([](std::span<const double> s) {
    return std::abs(s[1]) <= 1e-12 ? -std::sin(std::numbers::pi * s[0]) : 0.0;
  });
  p.reference_file = "burgers_reference.csv";
  p.prior = Proposal::uniform(p.domain);
  p.initial_window = p.domain.bounds;
  p.evaluation.kind = EvaluationSpec::Kind::reference_grid;
  p.evaluation.window = p.domain.bounds;
  return p;
}

/// -Laplace u = f on [-1, 1]^d with u = exp(-10 |x|^2), f = (20 d - 400 |x|^2) exp(-10 |x|^2).
inline PdeProblem poisson_highdim(std::size_t d) {
  if (d < 1) throw ConfigError("poisson_highdim needs d >= 1");
  PdeProblem p;
  p.id = "poisson_highdim_" + std::to_string(d);
  p.domain = DomainSpec::box(std::vector<Interval>(d, Interval{-1.0, 1.0}));
  const std::vector<double> origin(d, 0.0);
  PointFn u = [origin](std::span<const double> x) { return detail::gaussian_bump(x, origin, 10.0); };
  p.forcing = [origin](std::span<const double> x) { return detail::gaussian_bump_forcing(x, origin, 10.0); };
  p.exact_solution = u;
  p.residual = detail::poisson_residual(p.forcing, d);
  p.boundary = detail::dirichlet(u);
  p.prior = Proposal::uniform(p.domain);
  p.initial_window = p.domain.bounds;
  p.evaluation.kind = EvaluationSpec::Kind::uniform_random;
  p.evaluation.window = p.domain.bounds;
  p.evaluation.count = 10000;
  return p;
}

/// -Laplace u = f on R^2 minus the star, u = exp(-(x-4)^2 - (y-4)^2), Dirichlet on the star curve.
/// Prior: N(0, 3 I) restricted to the domain.
inline PdeProblem poisson_unbounded_2d() {
  static constexpr double center[2] = {4.0, 4.0};
  PdeProblem p;
  p.id = "poisson_unbounded_2d";
  p.domain = DomainSpec::star_exterior();
  PointFn u = [](std::span<const double> x) { return detail::gaussian_bump(x, center, 1.0); };
  p.forcing = [](std::span<const double> x) { return detail::gaussian_bump_forcing(x, center, 1.0); };
  p.exact_solution = u;
  p.residual = detail::poisson_residual(p.forcing, 2);
  p.boundary = detail::dirichlet(u);
  p.prior = Proposal::truncated_gaussian(Eigen::Vector2d::Zero(), 3.0 * Eigen::Matrix2d::Identity(), p.domain,
                                         derive_seed(0, Stream::normalizer));
  p.initial_window = {{-2.0, 2.0}, {-2.0, 2.0}};
  p.evaluation.kind = EvaluationSpec::Kind::disk_quasi_random;
  p.evaluation.radius = 10.0;
  p.evaluation.count = 10000;
  return p;
}

/// u_t = u_xx + f on R x [0, 1] with u = exp(-(x-10)^2 / (4t + 4)) / sqrt(t + 1), f = 0.
/// Prior: N(0, 3 I) on (x, t) restricted to the strip.
inline PdeProblem heat_unbounded_1d() {
  PdeProblem p;
  p.id = "heat_unbounded_1d";
  p.domain = DomainSpec::time_strip({-10.0, 20.0}, {0.0, 1.0});
  PointFn u = [](std::span<const double> x) {
    return std::exp(-detail::sq(x[0] - 10.0) / (4.0 * x[1] + 4.0)) / std::sqrt(x[1] + 1.0);
  };
  p.forcing = [](std::span<const double>) { return 0.0; };
  p.exact_solution = u;
  p.residual = [](std::span<const double>, const JetView& v, JetPartials* partial) {
    if (partial) {
      partial->grad[1] = 1.0;
      partial->second[0] = -1.0;
    }
    return v.grad[1] - v.second[0];
  };
  p.boundary = detail::dirichlet(u);
  p.prior = Proposal::truncated_gaussian(Eigen::Vector2d::Zero(), 3.0 * Eigen::Matrix2d::Identity(), p.domain,
                                         derive_seed(0, Stream::normalizer));
  p.initial_window = {{-6.0, 0.0}, {0.0, 1.0}};
  p.evaluation = detail::tensor_grid({{-10.0, 20.0}, {0.0, 1.0}}, 128);
  return p;
}

inline constexpr double kAllenCahnDiffusion = 1e-4;

/// u_t - 1e-4 u_xx + 5 u^3 - 5 u = 0 on [-1, 1] x [0, 1], u(x, 0) = x^2 cos(pi x),
/// periodic in x through penalty components on u and u_x.
inline PdeProblem allen_cahn_1d() {
  PdeProblem p;
  p.id = "allen_cahn_1d";
  p.domain = DomainSpec::box({{-1.0, 1.0}, {0.0, 1.0}}, 1);
  p.forcing = [](std::span<const double>) { return 0.0; };
  p.residual = [](std::span<const double>, const JetView& u, JetPartials* partial) {
    const double v = u.value;
    if (partial) {
      partial->value = 15.0 * v * v - 5.0;
      partial->grad[1] = 1.0;
      partial->second[0] = -kAllenCahnDiffusion;
    }
    return u.grad[1] - kAllenCahnDiffusion * u.second[0] + 5.0 * v * v * v - 5.0 * v;
  };
  p.boundary = [](std::span<const double> s) {
    BoundaryStencil st;
    if (std::abs(s[1]) <= 1e-12) {
      st.probes = Eigen::Vector2d(s[0], s[1]);
      st.components.push_back({{BoundaryTerm{0, 0, 1.0}}, s[0] * s[0] * std::cos(std::numbers::pi * s[0])});
      return st;
    }
    st.probes.resize(2, 2);
    st.probes.col(0) = Eigen::Vector2d(-1.0, s[1]);
    st.probes.col(1) = Eigen::Vector2d(1.0, s[1]);
    st.components.push_back({{BoundaryTerm{0, 0, 1.0}, BoundaryTerm{1, 0, -1.0}}, 0.0});
    st.components.push_back({{BoundaryTerm{0, 1, 1.0}, BoundaryTerm{1, 1, -1.0}}, 0.0});
    return st;
  };
  p.reference_file = "allen_cahn_reference.csv";
  p.prior = Proposal::uniform(p.domain);
  p.initial_window = p.domain.bounds;
  p.evaluation.kind = EvaluationSpec::Kind::reference_grid;
  p.evaluation.window = p.domain.bounds;
  return p;
}

/// Catalog lookup; "poisson_highdim" alone means d = 9.
inline PdeProblem make_problem(const std::string& id) {
  if (id == "poisson_peak_2d") return poisson_peak_2d();
  if (id == "poisson_two_peak_2d") return poisson_two_peak_2d();
  if (id == "burgers_1d") return burgers_1d();
  if (id == "poisson_highdim") return poisson_highdim(9);
  if (id.rfind("poisson_highdim_", 0) == 0) return poisson_highdim(std::stoul(id.substr(16)));
  if (id == "poisson_unbounded_2d") return poisson_unbounded_2d();
  if (id == "heat_unbounded_1d") return heat_unbounded_1d();
  if (id == "allen_cahn_1d") return allen_cahn_1d();
  throw ConfigError("unknown problem id '" + id + "'");
}

inline std::vector<std::string> problem_ids() {
  return {"poisson_peak_2d",      "poisson_two_peak_2d", "burgers_1d",   "poisson_highdim",
          "poisson_unbounded_2d", "heat_unbounded_1d",   "allen_cahn_1d"};
}

}  // namespace fipinn
