#pragma once

// Shared numeric vocabulary: Eigen aliases, error types, seeded RNG helpers
// and the softmax primitives used across the model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dora {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violated a documented precondition (bad file, bad record, bad flag).
class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf or otherwise could not proceed.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_shape(const Eigen::MatrixBase<Derived>& m, Eigen::Index rows, Eigen::Index cols,
                   const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + shape_str(rows, cols) + ", got " +
                     shape_str(m.rows(), m.cols()));
  }
}

using Rng = std::mt19937_64;

/// Uniform index in [0, n). Rejection sampling keeps the result identical
/// across standard library implementations, unlike uniform_int_distribution.
inline std::uint64_t index_below(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Uniform real in [0, 1) built from the top 53 bits.
inline double unit_real(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
Mat<T> uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      m(r, c) = static_cast<T>((2.0 * unit_real(rng) - 1.0) * bound);
  return m;
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] where fan_in is the row count.
template <typename T>
Mat<T> fan_in_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return uniform_init<T>(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
}

/// Sum that does not depend on element order: values are summed in ascending
/// order, so permuting the input leaves the result bit-identical.
template <typename Derived>
typename Derived::Scalar order_free_sum(const Eigen::DenseBase<Derived>& x) {
  using T = typename Derived::Scalar;
  std::vector<T> v(static_cast<std::size_t>(x.size()));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) v[k++] = x(i, j);
  std::sort(v.begin(), v.end());
  T total = T(0);
  for (T e : v) total += e;
  return total;
}

/// Scalar libm exp; identical for every element regardless of SIMD lane.
template <typename T>
T scalar_exp(T v) {
  return std::exp(v);
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& s) {
  Mat<T> out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - mx).unaryExpr(&scalar_exp<T>).matrix();
    out.row(i) /= order_free_sum(out.row(i));
  }
  return out;
}

template <typename T>
Mat<T> softmax_cols(const Mat<T>& s) {
  Mat<T> out(s.rows(), s.cols());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const T mx = s.col(j).maxCoeff();
    out.col(j) = (s.col(j).array() - mx).unaryExpr(&scalar_exp<T>).matrix();
    out.col(j) /= order_free_sum(out.col(j));
  }
  return out;
}

/// Per-row mean, computed with order_free_sum.
template <typename T>
Vec<T> row_means(const Mat<T>& m) {
  Vec<T> out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out(i) = order_free_sum(m.row(i)) / static_cast<T>(m.cols());
  return out;
}

/// Per-column mean as a column vector, computed with order_free_sum.
template <typename T>
Vec<T> col_means(const Mat<T>& m) {
  Vec<T> out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) out(j) = order_free_sum(m.col(j)) / static_cast<T>(m.rows());
  return out;
}

template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
  const T mx = logits.maxCoeff();
  Vec<T> e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

/// Backward of a row-wise softmax: given A = softmax_rows(S) and dL/dA, returns dL/dS.
template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& a, const Mat<T>& grad_a) {
  Mat<T> out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const T dot = a.row(i).dot(grad_a.row(i));
    out.row(i) = (a.row(i).array() * (grad_a.row(i).array() - dot)).matrix();
  }
  return out;
}

template <typename T>
Mat<T> softmax_cols_backward(const Mat<T>& a, const Mat<T>& grad_a) {
  Mat<T> out(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const T dot = a.col(j).dot(grad_a.col(j));
    out.col(j) = (a.col(j).array() * (grad_a.col(j).array() - dot)).matrix();
  }
  return out;
}

}  // namespace dora
