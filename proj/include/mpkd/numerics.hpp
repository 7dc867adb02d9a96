#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "mpkd/common.hpp"

namespace mpkd {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles. Vectors that belong to a parameter set
/// (e.g. the attention vector) are stored as 1 x n matrices.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// out = x M (row vector times matrix); out has m.cols() entries.
void vec_mat(std::span<const double> x, const DenseMatrix& m, std::span<double> out);
/// out = M g (matrix times column vector); out has m.rows() entries.
void mat_vec(const DenseMatrix& m, std::span<const double> g, std::span<double> out);
/// M += scale * x g^T
void add_outer(DenseMatrix& m, std::span<const double> x, std::span<const double> g, double scale = 1.0);
/// C = A B
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// C = A^T B
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
/// C = A B^T
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);

/// Softmax over positions where live[i] is true. Dead positions get an additive
/// -inf before normalization, so their output is exactly 0.
/// Throws Error("empty support") if no position is live.
Vector softmax_masked(std::span<const double> logits, const std::vector<bool>& live);

/// Gradient of the logits given softmax output p and upstream gradient gp.
/// Masked positions (p == 0) receive zero gradient.
void softmax_backward(std::span<const double> p, std::span<const double> gp, std::span<double> g_logits);

/// Throws Error("undefined cosine") for a zero vector or size mismatch.
double cosine(std::span<const double> u, std::span<const double> v);

/// Cosine plus its gradients with respect to both arguments. Returns false
/// (and leaves gradients zero) when either vector is zero.
bool cosine_with_grad(std::span<const double> u, std::span<const double> v, double& value,
                      std::span<double> grad_u, std::span<double> grad_v);

// -- gradient checking -------------------------------------------------------

using ParamView = std::vector<std::span<double>>;
using ConstParamView = std::vector<std::span<const double>>;

ConstParamView as_const(const ParamView& v);

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  /// (block, offset) of the coordinate with the largest error.
  std::pair<std::size_t, std::size_t> worst_index{0, 0};
  std::size_t checked = 0;
  bool passed = true;
};

/// Compares `analytic` against central differences (f(x+h) - f(x-h)) / 2h at
/// every coordinate of `params`, which loss() must read by reference. params
/// are restored after each probe. rel_err uses max(1, |a|, |n|) as denominator;
/// a coordinate passes when max(abs_err, rel_err) <= tol.
GradCheckReport grad_check(const std::function<double()>& loss, const ParamView& params,
                           const ConstParamView& analytic, double step, double tol);

// -- Adam --------------------------------------------------------------------

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<Vector> m;
  std::vector<Vector> v;
  std::uint64_t steps = 0;
};

/// One bias-corrected Adam update. A fresh (empty) state is sized on first use;
/// afterwards every block shape must match.
void adam_step(const ParamView& params, const ConstParamView& grads, AdamState& state, double lr);

}  // namespace mpkd
