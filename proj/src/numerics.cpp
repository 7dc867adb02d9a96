#include "mpkd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mpkd {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw Error("DenseMatrix: data length does not match shape");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error("DenseMatrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

void DenseMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void vec_mat(std::span<const double> x, const DenseMatrix& m, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += xi * r[j];
  }
}

void mat_vec(const DenseMatrix& m, std::span<const double> g, std::span<double> out) {
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), g);
}

void add_outer(DenseMatrix& m, std::span<const double> x, std::span<const double> g, double scale) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = scale * x[i];
    if (xi == 0.0) continue;
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += xi * g[j];
  }
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw Error("matmul: shape mismatch");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) vec_mat(a.row(i), b, c.row(i));
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw Error("matmul_tn: shape mismatch");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) add_outer(c, a.row(k), b.row(k));
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: shape mismatch");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

Vector softmax_masked(std::span<const double> logits, const std::vector<bool>& live) {
  if (logits.size() != live.size()) throw Error("softmax_masked: length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (live[i]) mx = std::max(mx, logits[i]);
  if (mx == -std::numeric_limits<double>::infinity()) throw Error("empty support");
  Vector out(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!live[i]) continue;
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

void softmax_backward(std::span<const double> p, std::span<const double> gp, std::span<double> g_logits) {
  const double inner = dot(p, gp);
  for (std::size_t i = 0; i < p.size(); ++i) g_logits[i] = p[i] * (gp[i] - inner);
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("cosine: dimension mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw Error("undefined cosine");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

bool cosine_with_grad(std::span<const double> u, std::span<const double> v, double& value,
                      std::span<double> grad_u, std::span<double> grad_v) {
  std::fill(grad_u.begin(), grad_u.end(), 0.0);
  std::fill(grad_v.begin(), grad_v.end(), 0.0);
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) {
    value = 0.0;
    return false;
  }
  const double c = dot(u, v) / (nu * nv);
  value = c;
  for (std::size_t i = 0; i < u.size(); ++i) {
    grad_u[i] = v[i] / (nu * nv) - c * u[i] / (nu * nu);
    grad_v[i] = u[i] / (nu * nv) - c * v[i] / (nv * nv);
  }
  return true;
}

ConstParamView as_const(const ParamView& v) {
  ConstParamView out;
  out.reserve(v.size());
  for (auto s : v) out.emplace_back(s.data(), s.size());
  return out;
}

GradCheckReport grad_check(const std::function<double()>& loss, const ParamView& params,
                           const ConstParamView& analytic, double step, double tol) {
  if (!(step > 0.0)) throw Error("grad_check: step must be positive");
  if (params.size() != analytic.size()) throw Error("grad_check: block count mismatch");
  GradCheckReport report;
  double worst = -1.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != analytic[b].size()) throw Error("grad_check: block size mismatch");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      double& x = params[b][i];
      const double saved = x;
      x = saved + step;
      const double up = loss();
      x = saved - step;
      const double down = loss();
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw Error("grad_check: non-finite loss at block " + std::to_string(b) + " offset " +
                    std::to_string(i));
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[b][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      const double err = std::max(abs_err, rel_err);
      if (err > worst) {
        worst = err;
        report.worst_index = {b, i};
      }
      if (err > tol) report.passed = false;
      ++report.checked;
    }
  }
  return report;
}

void adam_step(const ParamView& params, const ConstParamView& grads, AdamState& state, double lr) {
  if (params.size() != grads.size()) throw Error("adam_step: block count mismatch");
  if (state.m.empty() && state.steps == 0) {
    for (auto p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("adam_step: optimizer state shape mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || state.m[b].size() != params[b].size())
      throw Error("adam_step: shape mismatch in block " + std::to_string(b));
  }
  ++state.steps;
  const auto& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.steps));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p[i] -= lr * mh / (std::sqrt(vh) + o.eps);
    }
  }
}

}  // namespace mpkd
