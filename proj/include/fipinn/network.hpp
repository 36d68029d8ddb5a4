#pragma once

// Dense tanh network u(x; theta) with exact input derivatives up to second order
// (forward-mode jets) and parameter gradients by reverse accumulation through
// the jet computation.
//
// Parameter layout, fixed for checkpoints: for each layer in order, the weight
// matrix (w_out x w_in, row-major) followed by the bias vector (w_out).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fipinn/error.hpp"
#include "fipinn/random.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace fipinn {

namespace detail {

// Tape buffers are a few hundred KB and are freed every step; with glibc's
// default thresholds each one becomes an mmap/munmap pair and page faults
// dominate. Keep them on the heap instead.
inline const bool allocator_tuned = [] {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  return true;
}();

}  // namespace detail

/// Point set, one point per column.
using PointCloud = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { tanh };

/// Which input derivatives are propagated.
enum class JetMode { value, grad, hess_diag, hess_full };

inline std::size_t second_order_count(JetMode mode, std::size_t dim) {
  switch (mode) {
    case JetMode::hess_diag: return dim;
    case JetMode::hess_full: return dim * (dim + 1) / 2;
    default: return 0;
  }
}

inline std::size_t channel_count(JetMode mode, std::size_t dim) {
  return 1 + (mode == JetMode::value ? 0 : dim) + second_order_count(mode, dim);
}

/// (j, k) index pairs of the second-order channels, j <= k. Full mode orders
/// them row by row over the upper triangle.
inline std::vector<std::pair<std::size_t, std::size_t>> second_order_pairs(JetMode mode,
                                                                          std::size_t dim) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (mode == JetMode::hess_diag) {
    for (std::size_t i = 0; i < dim; ++i) pairs.emplace_back(i, i);
  } else if (mode == JetMode::hess_full) {
    for (std::size_t j = 0; j < dim; ++j)
      for (std::size_t k = j; k < dim; ++k) pairs.emplace_back(j, k);
  }
  return pairs;
}

inline std::size_t param_count(std::span<const int> widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<std::size_t>(widths[l]);
    const auto out = static_cast<std::size_t>(widths[l + 1]);
    n += in * out + out;
  }
  return n;
}

inline void validate_widths(std::span<const int> widths) {
  if (widths.size() < 2) throw ConfigError("network needs at least input and output widths");
  for (int w : widths) {
    if (w <= 0) throw ConfigError("layer widths must be positive, got " + std::to_string(w));
  }
  if (widths.back() != 1) throw ConfigError("network output width must be 1");
}

struct Network {
  std::vector<int> layer_widths;
  std::vector<double> params;
  std::uint64_t seed = 0;
  Activation activation = Activation::tanh;

  std::size_t input_dim() const { return static_cast<std::size_t>(layer_widths.front()); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  std::size_t in_width(std::size_t layer) const { return static_cast<std::size_t>(layer_widths[layer]); }
  std::size_t out_width(std::size_t layer) const {
    return static_cast<std::size_t>(layer_widths[layer + 1]);
  }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += out_width(l) * (in_width(l) + 1);
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + out_width(layer) * in_width(layer);
  }

  Eigen::Map<const RowMatrix> weights(std::size_t layer) const {
    return {params.data() + weight_offset(layer), static_cast<Eigen::Index>(out_width(layer)),
            static_cast<Eigen::Index>(in_width(layer))};
  }
  Eigen::Map<const Eigen::VectorXd> biases(std::size_t layer) const {
    return {params.data() + bias_offset(layer), static_cast<Eigen::Index>(out_width(layer))};
  }
};

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
inline Network init_network(std::vector<int> widths, std::uint64_t seed) {
  validate_widths(widths);
  Network net;
  net.layer_widths = std::move(widths);
  net.seed = seed;
  net.params.assign(param_count(net.layer_widths), 0.0);
  Rng rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double fan_in = static_cast<double>(net.in_width(l));
    const double fan_out = static_cast<double>(net.out_width(l));
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t off = net.weight_offset(l);
    for (std::size_t i = 0; i < net.out_width(l) * net.in_width(l); ++i) net.params[off + i] = dist(rng);
  }
  return net;
}

/// Network output and input derivatives for a batch of points. Column p of
/// `grad` is the gradient at point p; row q of `second` holds the q-th pair of
/// second_order_pairs(mode, dim).
struct JetBatch {
  JetMode mode = JetMode::value;
  std::size_t dim = 0;
  std::size_t n = 0;
  Eigen::VectorXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd second;

  static JetBatch zeros(JetMode mode, std::size_t dim, std::size_t n) {
    JetBatch j;
    j.mode = mode;
    j.dim = dim;
    j.n = n;
    j.value = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const auto grad_rows = static_cast<Eigen::Index>(mode == JetMode::value ? 0 : dim);
    j.grad = Eigen::MatrixXd::Zero(grad_rows, static_cast<Eigen::Index>(n));
    j.second = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(second_order_count(mode, dim)),
                                     static_cast<Eigen::Index>(n));
    return j;
  }
};

/// Single-point jet.
struct Jet2 {
  double value = 0.0;
  Eigen::VectorXd grad;       // empty in value mode
  Eigen::VectorXd hess_diag;  // filled in both Hessian modes
  Eigen::MatrixXd hessian;    // d x d in hess_full mode, empty otherwise
};

namespace detail {

// z = W a (+ b on the value block). Per element the sum runs bias first, then
// k = 0..in-1, independent of the column count; forward() and forward_jet()
// therefore agree bitwise on the value channel.
inline void affine(const Eigen::Map<const RowMatrix>& w, const Eigen::Map<const Eigen::VectorXd>& b,
                   const RowMatrix& a, Eigen::Index n, RowMatrix& z) {
  const Eigen::Index cols = a.cols();
  z.resize(w.rows(), cols);
  for (Eigen::Index o = 0; o < w.rows(); ++o) {
    auto zr = z.row(o);
    zr.head(n).setConstant(b(o));
    zr.tail(cols - n).setZero();
    for (Eigen::Index k = 0; k < w.cols(); ++k) zr.noalias() += w(o, k) * a.row(k);
  }
}

}  // namespace detail

/// Forward jet propagation with an optional record for reverse accumulation.
class JetTape {
 public:
  JetTape(const Network& net, const PointCloud& x, JetMode mode, bool record = true)
      : net_(&net), mode_(mode), dim_(net.input_dim()), n_(static_cast<std::size_t>(x.cols())),
        channels_(channel_count(mode, net.input_dim())), pairs_(second_order_pairs(mode, dim_)),
        record_(record) {
    detail::require_dim(static_cast<std::size_t>(x.rows()), dim_, "network input");
    const auto n = static_cast<Eigen::Index>(n_);
    const auto d = static_cast<Eigen::Index>(dim_);
    RowMatrix a = RowMatrix::Zero(d, n * static_cast<Eigen::Index>(channels_));
    a.leftCols(n) = x;
    if (mode_ != JetMode::value) {
      for (Eigen::Index i = 0; i < d; ++i) a.block(i, (1 + i) * n, 1, n).setOnes();
    }
    const std::size_t layers = net.num_layers();
    if (record_) {
      inputs_.reserve(layers);
      pre_.reserve(layers);
      tanh_.reserve(layers);
    }
    RowMatrix z;
    for (std::size_t l = 0; l < layers; ++l) {
      detail::affine(net.weights(l), net.biases(l), a, n, z);
      if (record_) inputs_.push_back(std::move(a));
      if (l + 1 == layers) break;
      RowMatrix t;
      a = activate(z, t);
      if (record_) {
        pre_.push_back(z);
        tanh_.push_back(std::move(t));
      }
    }
    unpack_output(z);
  }

  const JetBatch& output() const { return out_; }
  JetMode mode() const { return mode_; }

  /// grad += d/dtheta of sum_p [seed.value(p) u(x_p) + seed.grad(:,p) . grad u(x_p) + ...].
  void backward(const JetBatch& seed, std::span<double> grad) const {
    if (!record_) throw ConfigError("JetTape::backward needs a recorded tape");
    detail::require_dim(grad.size(), net_->params.size(), "parameter gradient");
    detail::require_dim(seed.n, n_, "jet seed batch");
    const auto n = static_cast<Eigen::Index>(n_);
    const auto d = static_cast<Eigen::Index>(dim_);
    RowMatrix zbar(1, n * static_cast<Eigen::Index>(channels_));
    zbar.leftCols(n) = seed.value.transpose();
    if (mode_ != JetMode::value) {
      for (Eigen::Index i = 0; i < d; ++i) zbar.block(0, (1 + i) * n, 1, n) = seed.grad.row(i);
      for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(pairs_.size()); ++q)
        zbar.block(0, (1 + d + q) * n, 1, n) = seed.second.row(q);
    }
    for (std::size_t l = net_->num_layers(); l-- > 0;) {
      const auto rows = static_cast<Eigen::Index>(net_->out_width(l));
      const auto cols = static_cast<Eigen::Index>(net_->in_width(l));
      Eigen::Map<RowMatrix> gw(grad.data() + net_->weight_offset(l), rows, cols);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + net_->bias_offset(l), rows);
      gw.noalias() += zbar * inputs_[l].transpose();
      gb += zbar.leftCols(n).rowwise().sum();
      if (l == 0) break;
      RowMatrix abar = net_->weights(l).transpose() * zbar;
      zbar = activate_backward(l - 1, abar);
    }
  }

 private:
  RowMatrix activate(const RowMatrix& z, RowMatrix& tanh_out) const {
    const auto n = static_cast<Eigen::Index>(n_);
    const auto d = static_cast<Eigen::Index>(dim_);
    RowMatrix a(z.rows(), z.cols());
    tanh_out.resize(z.rows(), n);
    Eigen::ArrayXd t(n), s1(n), s2(n);
    for (Eigen::Index o = 0; o < z.rows(); ++o) {
      for (Eigen::Index p = 0; p < n; ++p) t(p) = std::tanh(z(o, p));
      tanh_out.row(o) = t.matrix().transpose();
      s1 = 1.0 - t * t;
      s2 = -2.0 * t * s1;
      a.row(o).head(n) = t.matrix().transpose();
      if (mode_ == JetMode::value) continue;
      for (Eigen::Index i = 0; i < d; ++i) {
        a.row(o).segment((1 + i) * n, n).array() = s1.transpose() * z.row(o).segment((1 + i) * n, n).array();
      }
      for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(pairs_.size()); ++q) {
        const auto j = static_cast<Eigen::Index>(pairs_[q].first);
        const auto k = static_cast<Eigen::Index>(pairs_[q].second);
        a.row(o).segment((1 + d + q) * n, n).array() =
            s1.transpose() * z.row(o).segment((1 + d + q) * n, n).array() +
            s2.transpose() * z.row(o).segment((1 + j) * n, n).array() *
                z.row(o).segment((1 + k) * n, n).array();
      }
    }
    return a;
  }

  // Adjoint of the activation of hidden layer `h` given the adjoint of its output.
  RowMatrix activate_backward(std::size_t h, const RowMatrix& abar) const {
    const RowMatrix& z = pre_[h];
    const auto n = static_cast<Eigen::Index>(n_);
    const auto d = static_cast<Eigen::Index>(dim_);
    RowMatrix zbar(z.rows(), z.cols());
    Eigen::ArrayXXd t(1, n), s1(1, n), s2(1, n), s3(1, n);
    for (Eigen::Index o = 0; o < z.rows(); ++o) {
      t = tanh_[h].row(o).array();
      s1 = 1.0 - t * t;
      s2 = -2.0 * t * s1;
      s3 = s1 * (6.0 * t * t - 2.0);
      auto zb = zbar.row(o).array();
      const auto zr = z.row(o).array();
      const auto ab = abar.row(o).array();
      zb.head(n) = s1 * ab.head(n);
      if (mode_ == JetMode::value) continue;
      for (Eigen::Index i = 0; i < d; ++i) {
        zb.segment((1 + i) * n, n) = s1 * ab.segment((1 + i) * n, n);
        zb.head(n) += s2 * zr.segment((1 + i) * n, n) * ab.segment((1 + i) * n, n);
      }
      for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(pairs_.size()); ++q) {
        const auto j = static_cast<Eigen::Index>(pairs_[q].first);
        const auto k = static_cast<Eigen::Index>(pairs_[q].second);
        const auto aq = ab.segment((1 + d + q) * n, n);
        const auto zj = zr.segment((1 + j) * n, n);
        const auto zk = zr.segment((1 + k) * n, n);
        zb.segment((1 + d + q) * n, n) = s1 * aq;
        zb.segment((1 + j) * n, n) += s2 * zk * aq;
        zb.segment((1 + k) * n, n) += s2 * zj * aq;
        zb.head(n) += aq * (s2 * zr.segment((1 + d + q) * n, n) + s3 * zj * zk);
      }
    }
    return zbar;
  }

  void unpack_output(const RowMatrix& z) {
    const auto n = static_cast<Eigen::Index>(n_);
    const auto d = static_cast<Eigen::Index>(dim_);
    out_ = JetBatch::zeros(mode_, dim_, n_);
    out_.value = z.row(0).head(n).transpose();
    if (mode_ == JetMode::value) return;
    for (Eigen::Index i = 0; i < d; ++i) out_.grad.row(i) = z.row(0).segment((1 + i) * n, n);
    for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(pairs_.size()); ++q)
      out_.second.row(q) = z.row(0).segment((1 + d + q) * n, n);
  }

  const Network* net_;
  JetMode mode_;
  std::size_t dim_;
  std::size_t n_;
  std::size_t channels_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  bool record_;
  std::vector<RowMatrix> inputs_;
  std::vector<RowMatrix> pre_;
  std::vector<RowMatrix> tanh_;
  JetBatch out_;
};

/// u(x; theta) for one point.
inline double forward(const Network& net, std::span<const double> x) {
  detail::require_dim(x.size(), net.input_dim(), "forward");
  const PointCloud pts = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return JetTape(net, pts, JetMode::value, false).output().value(0);
}

/// u at every column of `x`, evaluated in fixed-size chunks.
inline Eigen::VectorXd forward_batch(const Network& net, const PointCloud& x) {
  detail::require_dim(static_cast<std::size_t>(x.rows()), net.input_dim(), "forward_batch");
  constexpr Eigen::Index chunk = 4096;
  Eigen::VectorXd out(x.cols());
  for (Eigen::Index s = 0; s < x.cols(); s += chunk) {
    const Eigen::Index m = std::min(chunk, x.cols() - s);
    const PointCloud part = x.middleCols(s, m);
    out.segment(s, m) = JetTape(net, part, JetMode::value, false).output().value;
  }
  return out;
}

inline Jet2 forward_jet(const Network& net, std::span<const double> x, JetMode mode) {
  detail::require_dim(x.size(), net.input_dim(), "forward_jet");
  const PointCloud pts = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const JetBatch b = JetTape(net, pts, mode, false).output();
  Jet2 jet;
  jet.value = b.value(0);
  if (mode == JetMode::value) return jet;
  jet.grad = b.grad.col(0);
  const auto d = static_cast<Eigen::Index>(net.input_dim());
  if (mode == JetMode::hess_diag) {
    jet.hess_diag = b.second.col(0);
  } else if (mode == JetMode::hess_full) {
    jet.hessian.resize(d, d);
    const auto pairs = second_order_pairs(mode, net.input_dim());
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      const auto j = static_cast<Eigen::Index>(pairs[q].first);
      const auto k = static_cast<Eigen::Index>(pairs[q].second);
      jet.hessian(j, k) = jet.hessian(k, j) = b.second(static_cast<Eigen::Index>(q), 0);
    }
    jet.hess_diag = jet.hessian.diagonal();
  }
  return jet;
}

/// Gradient with respect to the parameters of
///   sum_p seeds.value(p) u(x_p) + <seeds.grad(:,p), grad u(x_p)> + <seeds.second(:,p), second(x_p)>,
/// i.e. the chain rule applied to any loss whose adjoints on the jet channels are `seeds`.
inline std::vector<double> param_gradient(const Network& net, const PointCloud& x, JetMode mode,
                                          const JetBatch& seeds) {
  if (x.cols() == 0) throw ConfigError("param_gradient needs a nonempty batch");
  std::vector<double> g(net.params.size(), 0.0);
  JetTape(net, x, mode).backward(seeds, g);
  return g;
}

}  // namespace fipinn
