#pragma once

// JSON checkpoints (networks, proposals) and point-cloud CSV output.

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fipinn/distributions.hpp"
#include "fipinn/domain.hpp"
#include "fipinn/error.hpp"
#include "fipinn/network.hpp"

namespace fipinn {

using Json = nlohmann::json;

inline Json network_to_json(const Network& net) {
  return Json{{"layer_widths", net.layer_widths},
              {"seed", net.seed},
              {"activation", "tanh"},
              {"params", net.params}};
}

inline Network network_from_json(const Json& j) {
  Network net;
  net.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  validate_widths(net.layer_widths);
  net.seed = j.value("seed", std::uint64_t{0});
  if (j.value("activation", std::string("tanh")) != "tanh") throw ConfigError("unsupported activation");
  net.params = j.at("params").get<std::vector<double>>();
  detail::require_dim(net.params.size(), param_count(net.layer_widths), "checkpoint params");
  return net;
}

namespace detail {

// Infinite interval ends are stored as null.
inline Json bound_to_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double bound_from_json(const Json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

inline Json intervals_to_json(const std::vector<Interval>& v) {
  Json a = Json::array();
  for (const auto& i : v) a.push_back(Json::array({bound_to_json(i.lo), bound_to_json(i.hi)}));
  return a;
}

inline std::vector<Interval> intervals_from_json(const Json& a) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<Interval> v;
  for (const auto& e : a) v.push_back({bound_from_json(e.at(0), -inf), bound_from_json(e.at(1), inf)});
  return v;
}

inline const char* domain_kind_name(DomainKind k) {
  switch (k) {
    case DomainKind::box: return "box";
    case DomainKind::box_minus_star: return "box_minus_star";
    case DomainKind::halfplane_time_strip: return "halfplane_time_strip";
    case DomainKind::unbounded: return "unbounded";
  }
  return "?";
}

inline Json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return flat;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index d) {
  const auto flat = j.get<std::vector<double>>();
  detail::require_dim(flat.size(), static_cast<std::size_t>(d * d), "covariance");
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = flat[static_cast<std::size_t>(r * d + c)];
  return m;
}

}  // namespace detail

inline Json domain_to_json(const DomainSpec& d) {
  Json j{{"kind", detail::domain_kind_name(d.kind)},
         {"bounds", detail::intervals_to_json(d.bounds)},
         {"window", detail::intervals_to_json(d.window)}};
  j["time_axis"] = d.time_axis ? Json(*d.time_axis) : Json(nullptr);
  return j;
}

inline DomainSpec domain_from_json(const Json& j) {
  DomainSpec d;
  const std::string kind = j.at("kind");
  if (kind == "box") d.kind = DomainKind::box;
  else if (kind == "box_minus_star") d.kind = DomainKind::box_minus_star;
  else if (kind == "halfplane_time_strip") d.kind = DomainKind::halfplane_time_strip;
  else if (kind == "unbounded") d.kind = DomainKind::unbounded;
  else throw ConfigError("unknown domain kind '" + kind + "'");
  d.bounds = detail::intervals_from_json(j.at("bounds"));
  d.window = detail::intervals_from_json(j.at("window"));
  if (!j.at("time_axis").is_null()) d.time_axis = j.at("time_axis").get<std::size_t>();
  return d;
}

/// kind, mu, sigma (row-major), components, Z estimate and N_Z.
inline Json proposal_to_json(const Proposal& p) {
  Json j{{"kind", to_string(p.kind)}, {"dim", p.dim()}, {"domain", domain_to_json(p.domain)}};
  if (p.kind != ProposalKind::uniform_box) {
    j["mu"] = detail::vector_to_json(p.mean());
    j["sigma"] = detail::matrix_to_json(p.covariance());
    Json comps = Json::array();
    for (const auto& c : p.components) {
      comps.push_back(
          {{"weight", c.weight}, {"mu", detail::vector_to_json(c.mean)}, {"sigma", detail::matrix_to_json(c.cov)}});
    }
    j["components"] = comps;
  }
  j["Z"] = p.trunc_norm;
  j["Z_std_error"] = p.trunc_norm_stderr;
  j["N_Z"] = p.trunc_samples;
  return j;
}

inline Proposal proposal_from_json(const Json& j) {
  Proposal p;
  const std::string kind = j.at("kind");
  p.domain = domain_from_json(j.at("domain"));
  if (kind == "uniform_box") {
    return Proposal::uniform(p.domain);
  } else if (kind == "gaussian") {
    p.kind = ProposalKind::gaussian;
  } else if (kind == "truncated_gaussian") {
    p.kind = ProposalKind::truncated_gaussian;
  } else if (kind == "gmm") {
    p.kind = ProposalKind::gmm;
  } else {
    throw ConfigError("unknown proposal kind '" + kind + "'");
  }
  const auto d = static_cast<Eigen::Index>(p.domain.dim());
  for (const auto& c : j.at("components")) {
    const auto mu = c.at("mu").get<std::vector<double>>();
    detail::require_dim(mu.size(), static_cast<std::size_t>(d), "component mean");
    p.components.push_back(GaussianComponent::make(c.at("weight").get<double>(),
                                                   Eigen::Map<const Eigen::VectorXd>(mu.data(), d),
                                                   detail::matrix_from_json(c.at("sigma"), d)));
  }
  p.trunc_norm = j.at("Z").get<double>();
  p.trunc_norm_stderr = j.value("Z_std_error", 0.0);
  p.trunc_samples = j.value("N_Z", std::size_t{0});
  return p;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Points as CSV with header x0,x1,... (plus an optional trailing tag column).
inline void write_points_csv(const std::string& path, const PointCloud& pts,
                             std::span<const std::string> tags = {}) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) out << (i ? "," : "") << 'x' << i;
  if (!tags.empty()) out << ",tag";
  out << '\n';
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    for (Eigen::Index i = 0; i < pts.rows(); ++i) out << (i ? "," : "") << pts(i, j);
    if (!tags.empty()) out << ',' << tags[static_cast<std::size_t>(j)];
    out << '\n';
  }
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("cannot create output directory " + dir);
  const auto probe = std::filesystem::path(dir) / ".write_probe";
  {
    std::ofstream t(probe);
    if (!t) throw ConfigError("output directory " + dir + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace fipinn
