#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "fipinn/error.hpp"
#include "fipinn/network.hpp"
#include "fipinn/random.hpp"

namespace fipinn {

enum class DomainKind { box, box_minus_star, halfplane_time_strip, unbounded };

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool finite() const { return std::isfinite(lo) && std::isfinite(hi); }
  double length() const { return hi - lo; }
};

/// Radius of the five-lobed star curve at polar angle `phi`:
/// (cos t - cos 5t cos t / 4, sin t - cos 5t sin t / 4) = r(t) (cos t, sin t).
inline double star_radius(double phi) { return 1.0 - std::cos(5.0 * phi) / 4.0; }

/// Geometry of a problem domain: membership, the boundary portion carrying
/// conditions, and a sampler for that portion.
///
/// For boxes with a time axis the terminal face t = T is not part of the
/// conditioned boundary. Directions without finite bounds use `window` when
/// boundary points must be drawn along them.
struct DomainSpec {
  DomainKind kind = DomainKind::box;
  std::vector<Interval> bounds;
  std::vector<Interval> window;
  std::optional<std::size_t> time_axis;

  static DomainSpec box(std::vector<Interval> bounds, std::optional<std::size_t> time_axis = {}) {
    for (const auto& b : bounds) {
      if (!b.finite() || b.hi <= b.lo) throw ConfigError("box bounds must be finite and ordered");
    }
    DomainSpec d;
    d.kind = DomainKind::box;
    d.window = bounds;
    d.bounds = std::move(bounds);
    d.time_axis = time_axis;
    return d;
  }

  /// R^2 minus the star-shaped region; the star curve is the boundary.
  static DomainSpec star_exterior() {
    DomainSpec d;
    d.kind = DomainKind::box_minus_star;
    d.bounds.assign(2, Interval{});
    d.window.assign(2, Interval{-1.25, 1.25});
    return d;
  }

  /// R x [t0, t1] with coordinates (x, t); the boundary is the initial line t = t0.
  static DomainSpec time_strip(Interval x_window, Interval t_range) {
    DomainSpec d;
    d.kind = DomainKind::halfplane_time_strip;
    d.bounds = {Interval{}, t_range};
    d.window = {x_window, t_range};
    d.time_axis = 1;
    return d;
  }

  static DomainSpec unbounded(std::size_t dim) {
    DomainSpec d;
    d.kind = DomainKind::unbounded;
    d.bounds.assign(dim, Interval{});
    d.window.assign(dim, Interval{});
    return d;
  }

  std::size_t dim() const { return bounds.size(); }
  bool bounded() const { return kind == DomainKind::box; }

  double volume() const {
    if (!bounded()) return std::numeric_limits<double>::infinity();
    double v = 1.0;
    for (const auto& b : bounds) v *= b.length();
    return v;
  }

  /// Closed-set membership (the boundary counts as inside).
  bool contains(std::span<const double> x) const {
    detail::require_dim(x.size(), dim(), "domain membership");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(x[i] >= bounds[i].lo && x[i] <= bounds[i].hi)) return false;
    }
    if (kind == DomainKind::box_minus_star) {
      const double rho = std::hypot(x[0], x[1]);
      return rho >= star_radius(std::atan2(x[1], x[0]));
    }
    return true;
  }

  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return contains(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }

  /// True when x lies on the conditioned boundary portion to within `tol`.
  bool on_boundary(std::span<const double> x, double tol = 1e-12) const {
    detail::require_dim(x.size(), dim(), "boundary membership");
    switch (kind) {
      case DomainKind::box: {
        if (!contains(x)) return false;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const bool at_lo = std::abs(x[i] - bounds[i].lo) <= tol;
          const bool at_hi = std::abs(x[i] - bounds[i].hi) <= tol;
          if (time_axis && *time_axis == i) {
            if (at_lo) return true;
          } else if (at_lo || at_hi) {
            return true;
          }
        }
        return false;
      }
      case DomainKind::box_minus_star: {
        const double rho = std::hypot(x[0], x[1]);
        return std::abs(rho - star_radius(std::atan2(x[1], x[0]))) <= tol;
      }
      case DomainKind::halfplane_time_strip: return std::abs(x[1] - bounds[1].lo) <= tol;
      case DomainKind::unbounded: return false;
    }
    return false;
  }

  bool on_boundary(const Eigen::Ref<const Eigen::VectorXd>& x, double tol = 1e-12) const {
    return on_boundary(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), tol);
  }

  /// Uniform draws from the conditioned boundary portion.
  PointCloud sample_boundary(std::size_t n, Rng& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PointCloud out(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(n));
    switch (kind) {
      case DomainKind::box: {
        // Faces weighted by their (d-1)-measure.
        struct Face {
          std::size_t axis;
          double value;
          double measure;
        };
        std::vector<Face> faces;
        double total = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) {
          double m = 1.0;
          for (std::size_t j = 0; j < dim(); ++j) {
            if (j != i) m *= bounds[j].length();
          }
          if (dim() == 1) m = 1.0;
          faces.push_back({i, bounds[i].lo, m});
          total += m;
          if (!(time_axis && *time_axis == i)) {
            faces.push_back({i, bounds[i].hi, m});
            total += m;
          }
        }
        for (Eigen::Index p = 0; p < out.cols(); ++p) {
          double pick = unit(rng) * total;
          std::size_t f = 0;
          while (f + 1 < faces.size() && pick >= faces[f].measure) {
            pick -= faces[f].measure;
            ++f;
          }
          for (std::size_t j = 0; j < dim(); ++j) {
            out(static_cast<Eigen::Index>(j), p) = bounds[j].lo + unit(rng) * bounds[j].length();
          }
          out(static_cast<Eigen::Index>(faces[f].axis), p) = faces[f].value;
        }
        break;
      }
      case DomainKind::box_minus_star: {
        for (Eigen::Index p = 0; p < out.cols(); ++p) {
          const double t = 2.0 * std::numbers::pi * unit(rng);
          const double r = star_radius(t);
          out(0, p) = r * std::cos(t);
          out(1, p) = r * std::sin(t);
        }
        break;
      }
      case DomainKind::halfplane_time_strip: {
        for (Eigen::Index p = 0; p < out.cols(); ++p) {
          out(0, p) = window[0].lo + unit(rng) * window[0].length();
          out(1, p) = bounds[1].lo;
        }
        break;
      }
      case DomainKind::unbounded:
        if (n > 0) throw ConfigError("unbounded domain has no boundary to sample");
        break;
    }
    return out;
  }
};

/// Uniform draws from `window` (a box) restricted to the domain, by rejection.
inline PointCloud sample_window(const DomainSpec& domain, std::span<const Interval> window, std::size_t n,
                                Rng& rng, std::size_t max_attempts = 10000) {
  detail::require_dim(window.size(), domain.dim(), "sampling window");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud out(static_cast<Eigen::Index>(domain.dim()), static_cast<Eigen::Index>(n));
  Eigen::VectorXd x(static_cast<Eigen::Index>(domain.dim()));
  for (Eigen::Index p = 0; p < out.cols(); ++p) {
    std::size_t attempts = 0;
    do {
      if (++attempts > max_attempts) throw SamplingError("sampling window barely intersects the domain");
      for (std::size_t j = 0; j < domain.dim(); ++j) {
        x(static_cast<Eigen::Index>(j)) = window[j].lo + unit(rng) * window[j].length();
      }
    } while (!domain.contains(x));
    out.col(p) = x;
  }
  return out;
}

}  // namespace fipinn
