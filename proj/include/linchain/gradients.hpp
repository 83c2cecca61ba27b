// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#if defined(LINCHAIN_HAVE_QUADMATH)
#include <quadmath.h>
#endif

#include "linchain/adapters.hpp"
#include "linchain/matrix.hpp"

namespace linchain {

enum class LossKind { kMse, kSoftmaxCrossEntropy };

/// Loss with its target. MSE is the mean over all m*d_out entries;
/// cross-entropy is the mean over the batch of -log softmax(y)[label].
struct LossSpec {
  LossKind kind = LossKind::kMse;
  Matrix target;
  std::vector<std::size_t> labels;

  static LossSpec mse(Matrix target) { return {LossKind::kMse, std::move(target), {}}; }
  static LossSpec cross_entropy(std::vector<std::size_t> labels) {
    return {LossKind::kSoftmaxCrossEntropy, {}, std::move(labels)};
  }

  void check(const Matrix& y) const {
    if (kind == LossKind::kMse) {
      if (!target.same_shape(y))
        throw ShapeError("mse: output " + y.shape() + " vs target " + target.shape());
      return;
    }
    if (labels.size() != y.rows()) {
      throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(y.rows()) + " rows");
    }
    for (std::size_t l : labels) {
      if (l >= y.cols()) throw ShapeError("cross-entropy: label " + std::to_string(l) + " out of range");
    }
  }
};

namespace detail {

inline double log_sum_exp(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - peak);
  return peak + std::log(s);
}

}  // namespace detail

inline double loss_value(const LossSpec& loss, const Matrix& y) {
  loss.check(y);
  double total = 0.0;
  if (loss.kind == LossKind::kMse) {
    auto yd = y.data();
    auto td = loss.target.data();
    for (std::size_t i = 0; i < yd.size(); ++i) {
      const double e = yd[i] - td[i];
      total += e * e;
    }
    return total / static_cast<double>(yd.size());
  }
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    total += detail::log_sum_exp(r) - r[loss.labels[i]];
  }
  return total / static_cast<double>(y.rows());
}

/// dL/dy for the given output.
inline Matrix output_delta(const LossSpec& loss, const Matrix& y) {
  loss.check(y);
  Matrix delta(y.rows(), y.cols());
  if (loss.kind == LossKind::kMse) {
    const double scale = 2.0 / static_cast<double>(y.size());
    auto yd = y.data();
    auto td = loss.target.data();
    auto dd = delta.data();
    for (std::size_t i = 0; i < yd.size(); ++i) dd[i] = scale * (yd[i] - td[i]);
    return delta;
  }
  const double inv_m = 1.0 / static_cast<double>(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    const double lse = detail::log_sum_exp(r);
    for (std::size_t j = 0; j < y.cols(); ++j) delta(i, j) = std::exp(r[j] - lse) * inv_m;
    delta(i, loss.labels[i]) -= inv_m;
  }
  return delta;
}

/// Gradients for A, W_1..W_n and B, shaped like the parameters.
struct GradientSet {
  Matrix d_a;
  std::vector<Matrix> d_chain;
  Matrix d_b;

  std::vector<const Matrix*> groups() const {
    std::vector<const Matrix*> gs{&d_a};
    for (const auto& g : d_chain) gs.push_back(&g);
    gs.push_back(&d_b);
    return gs;
  }

  GradientSet& operator+=(const GradientSet& o) {
    d_a += o.d_a;
    for (std::size_t i = 0; i < d_chain.size(); ++i) d_chain[i] += o.d_chain[i];
    d_b += o.d_b;
    return *this;
  }
  GradientSet& operator*=(double s) {
    d_a *= s;
    for (auto& g : d_chain) g *= s;
    d_b *= s;
    return *this;
  }
};

/// Which placement of the prefix/suffix chain products to use for dL/dW_i.
enum class ChainGradientForm {
  /// (W_1..W_{i-1})^T * A^T G B^T * (W_{i+1}..W_n)^T.
  kChainRule,
  /// A^T G B^T * (W_n..W_{i+1})^T * (W_{i-1}..W_1)^T, both factors on the
  /// right. Wrong for n >= 2 and only defined for square chains; kept as a
  /// mutation for exercising the gradient checker.
  kRightPlacement,
};

/// Analytic gradients for a batch, with G = x^T * delta summed over rows:
///   dA   = s * G B^T C^T,   dB = s * C^T A^T G,   C = W_1 ... W_n
///   dW_i = s * P_i^T (A^T G B^T) S_i^T,  P_i = W_1..W_{i-1},  S_i = W_{i+1}..W_n
inline GradientSet backward_analytic(const AdaptedLinear& ad, const Matrix& x, const Matrix& delta,
                                     ChainGradientForm form = ChainGradientForm::kChainRule) {
  const auto& cfg = ad.config;
  if (x.cols() != cfg.d_in || delta.cols() != cfg.d_out || x.rows() != delta.rows()) {
    throw ShapeError("backward_analytic: x " + x.shape() + ", delta " + delta.shape() +
                     " for adapter " + Matrix::shape_string(cfg.d_in, cfg.d_out));
  }
  const double s = cfg.scaling;
  const std::size_t n = ad.chain.size();

  const Matrix g = matmul(transpose(x), delta);
  const Matrix chain = chain_product(ad);

  GradientSet out;
  out.d_a = matmul(matmul(g, transpose(ad.b)), transpose(chain)) * s;
  out.d_b = matmul(matmul(transpose(chain), transpose(ad.a)), g) * s;
  if (n == 0) return out;

  const Matrix core = matmul(matmul(transpose(ad.a), g), transpose(ad.b));

  // prefix[i] = W_1..W_i (prefix[0] = I_{r0}); suffix[i] = W_{i+1}..W_n (suffix[n] = I_{rk}).
  std::vector<Matrix> prefix(n + 1), suffix(n + 1);
  prefix[0] = Matrix::identity(cfg.rank_in());
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = matmul(prefix[i], ad.chain[i]);
  suffix[n] = Matrix::identity(cfg.rank_out());
  for (std::size_t i = n; i-- > 0;) suffix[i] = matmul(ad.chain[i], suffix[i + 1]);

  out.d_chain.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (form == ChainGradientForm::kChainRule) {
      out.d_chain.push_back(matmul(matmul(transpose(prefix[i]), core), transpose(suffix[i + 1])) * s);
      continue;
    }
    // Reversed products W_n..W_{i+1} and W_{i-1}..W_1.
    Matrix post = Matrix::identity(cfg.rank_out());
    for (std::size_t j = i + 1; j < n; ++j) post = matmul(ad.chain[j], post);
    Matrix pre = Matrix::identity(cfg.rank_in());
    for (std::size_t j = 0; j < i; ++j) pre = matmul(ad.chain[j], pre);
    out.d_chain.push_back(matmul(matmul(core, transpose(post)), transpose(pre)) * s);
  }
  return out;
}

namespace detail {

#if defined(LINCHAIN_HAVE_QUADMATH)
using WideScalar = __float128;
inline WideScalar wide_exp(WideScalar v) { return expq(v); }
inline WideScalar wide_log(WideScalar v) { return logq(v); }
#else
using WideScalar = long double;
inline WideScalar wide_exp(WideScalar v) { return std::exp(v); }
inline WideScalar wide_log(WideScalar v) { return std::log(v); }
#endif

struct WideMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<WideScalar> v;

  WideMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, WideScalar(0)) {}
  explicit WideMatrix(const Matrix& m) : WideMatrix(m.rows(), m.cols()) {
    std::copy(m.data().begin(), m.data().end(), v.begin());
  }
};

inline WideMatrix wide_matmul(const WideMatrix& a, const WideMatrix& b) {
  WideMatrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const WideScalar aik = a.v[i * a.cols + k];
      for (std::size_t j = 0; j < b.cols; ++j) out.v[i * b.cols + j] += aik * b.v[k * b.cols + j];
    }
  }
  return out;
}

inline WideScalar wide_loss(const LossSpec& loss, const WideMatrix& y) {
  WideScalar total = 0;
  if (loss.kind == LossKind::kMse) {
    for (std::size_t i = 0; i < y.v.size(); ++i) {
      const WideScalar e = y.v[i] - WideScalar(loss.target.data()[i]);
      total += e * e;
    }
    return total / WideScalar(y.v.size());
  }
  for (std::size_t i = 0; i < y.rows; ++i) {
    const WideScalar* row = y.v.data() + i * y.cols;
    const WideScalar peak = *std::max_element(row, row + y.cols);
    WideScalar s = 0;
    for (std::size_t j = 0; j < y.cols; ++j) s += wide_exp(row[j] - peak);
    total += peak + wide_log(s) - row[loss.labels[i]];
  }
  return total / WideScalar(y.rows);
}

}  // namespace detail

/// Relative central-difference step for a parameter value.
inline double finite_difference_step(double theta) { return 1e-6 * std::max(1.0, std::abs(theta)); }

/// Central differences of the scalar loss with respect to every trainable
/// entry. The perturbed losses come from a separate forward pass evaluated in
/// binary128 (long double when libquadmath is unavailable).
inline GradientSet finite_difference_grad(const AdaptedLinear& ad, const Matrix& x,
                                          const LossSpec& loss) {
  using detail::WideMatrix;
  using detail::WideScalar;
  loss.check(forward(ad, x));

  const WideMatrix wx(x);
  const WideMatrix base = detail::wide_matmul(wx, WideMatrix(ad.w0));
  std::vector<WideMatrix> factors;
  for (const Matrix* p : ad.parameters()) factors.emplace_back(*p);
  const WideScalar scale = ad.config.scaling;

  std::vector<Matrix> grads;
  for (std::size_t g = 0; g < factors.size(); ++g) {
    // y = base + s * (left * F_g * right), with left and right fixed while F_g is probed.
    WideMatrix left = wx;
    for (std::size_t i = 0; i < g; ++i) left = detail::wide_matmul(left, factors[i]);
    std::optional<WideMatrix> right;
    for (std::size_t i = g + 1; i < factors.size(); ++i)
      right = right ? detail::wide_matmul(*right, factors[i]) : factors[i];

    WideMatrix probe = factors[g];
    auto loss_at = [&] {
      WideMatrix y = detail::wide_matmul(left, probe);
      if (right) y = detail::wide_matmul(y, *right);
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] = base.v[i] + scale * y.v[i];
      return detail::wide_loss(loss, y);
    };
    Matrix grad(probe.rows, probe.cols);
    auto gd = grad.data();
    for (std::size_t k = 0; k < probe.v.size(); ++k) {
      const WideScalar saved = probe.v[k];
      const double h = finite_difference_step(static_cast<double>(saved));
      probe.v[k] = saved + h;
      const WideScalar up = loss_at();
      probe.v[k] = saved - h;
      const WideScalar down = loss_at();
      probe.v[k] = saved;
      gd[k] = static_cast<double>((up - down) / (WideScalar(2) * h));
    }
    grads.push_back(std::move(grad));
  }

  GradientSet out;
  out.d_a = std::move(grads.front());
  for (std::size_t i = 1; i + 1 < grads.size(); ++i) out.d_chain.push_back(std::move(grads[i]));
  out.d_b = std::move(grads.back());
  return out;
}

struct GroupCheck {
  std::string name;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct CheckReport {
  std::vector<GroupCheck> groups;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  /// Set when the analytic path could not be evaluated (e.g. shape error).
  std::string error;
};

/// max |a - b| / max(|a|, |b|, 1e-12) over entries.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric) {
  Matrix::require_same_shape(analytic, numeric, "max_relative_error");
  double worst = 0.0;
  auto ad = analytic.data();
  auto nd = numeric.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double denom = std::max({std::abs(ad[i]), std::abs(nd[i]), 1e-12});
    const double rel = std::abs(ad[i] - nd[i]) / denom;
    worst = std::max(worst, std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel);
  }
  return worst;
}

/// Compares backward_analytic against finite_difference_grad per group.
/// A failing comparison is reported, never thrown.
inline CheckReport grad_check(const AdaptedLinear& ad, const Matrix& x, const LossSpec& loss,
                              double tol, ChainGradientForm form = ChainGradientForm::kChainRule) {
  CheckReport report;
  report.tolerance = tol;
  const auto names = ad.group_names();
  const GradientSet numeric = finite_difference_grad(ad, x, loss);
  GradientSet analytic;
  try {
    analytic = backward_analytic(ad, x, output_delta(loss, forward(ad, x)), form);
  } catch (const ShapeError& e) {
    report.error = e.what();
    for (const auto& name : names) report.groups.push_back({name, std::numeric_limits<double>::infinity(), false});
    report.max_relative_error = std::numeric_limits<double>::infinity();
    return report;
  }
  const auto ga = analytic.groups();
  const auto gn = numeric.groups();
  report.passed = true;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double err = max_relative_error(*ga[i], *gn[i]);
    const bool ok = err <= tol;
    report.groups.push_back({names[i], err, ok});
    report.max_relative_error = std::max(report.max_relative_error, err);
    report.passed = report.passed && ok;
  }
  return report;
}

struct ParameterDependency {
  std::string parameter;
  std::vector<std::string> depends_on;
};

struct DependencyReport {
  std::size_t chain_length = 0;
  std::vector<ParameterDependency> entries;
  std::size_t total_occurrences = 0;
};

/// Lists, for each trainable matrix, the other parameter matrices appearing as
/// factors in its gradient expression (dA: B and the chain; dB: A and the
/// chain; dW_i: the prefix, A, B and the suffix).
inline DependencyReport trace_dependencies(std::size_t n) {
  auto w = [](std::size_t i) { return "W" + std::to_string(i); };
  DependencyReport report;
  report.chain_length = n;

  ParameterDependency da{"A", {"B"}};
  for (std::size_t j = 1; j <= n; ++j) da.depends_on.push_back(w(j));
  report.entries.push_back(da);

  for (std::size_t i = 1; i <= n; ++i) {
    ParameterDependency dw{w(i), {}};
    for (std::size_t j = 1; j < i; ++j) dw.depends_on.push_back(w(j));
    dw.depends_on.push_back("A");
    dw.depends_on.push_back("B");
    for (std::size_t j = i + 1; j <= n; ++j) dw.depends_on.push_back(w(j));
    report.entries.push_back(dw);
  }

  ParameterDependency db{"B", {}};
  for (std::size_t j = 1; j <= n; ++j) db.depends_on.push_back(w(j));
  db.depends_on.push_back("A");
  report.entries.push_back(db);

  for (const auto& e : report.entries) report.total_occurrences += e.depends_on.size();
  return report;
}

}  // namespace linchain
