#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hsr {

using Index = Eigen::Index;

// Shape or operand-rank violations (matmul inner dims, bad axis, ...).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition (bad rate, empty corpus, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf or an otherwise unusable value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed external data (checkpoint bytes, CSV rows, config files).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
inline Index shape_rows(const std::vector<Index>& shape) {
  Index r = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
  return r;
}
}  // namespace detail

// Dense row-major tensor of real values. Storage is a 2-D Eigen matrix whose
// rows span all leading extents and whose columns are the last extent, so the
// flat data order is exactly row-major over `shape()`.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    validate_shape();
    m_ = MatrixX<S>::Zero(detail::shape_rows(shape_), shape_.back());
  }

  explicit Tensor(std::initializer_list<Index> shape) : Tensor(std::vector<Index>(shape)) {}

  Tensor(MatrixX<S> m, std::vector<Index> shape) : shape_(std::move(shape)), m_(std::move(m)) {
    validate_shape();
    if (m_.rows() != detail::shape_rows(shape_) || m_.cols() != shape_.back())
      throw DimensionError("tensor: matrix extent does not match shape");
  }

  // 2-D tensor wrapping a matrix as-is
  explicit Tensor(MatrixX<S> m) : shape_{m.rows(), m.cols()}, m_(std::move(m)) {
    validate_shape();
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, S v) {
    Tensor t(std::move(shape));
    t.m_.setConstant(v);
    return t;
  }

  static Tensor row(std::initializer_list<S> xs) {
    Tensor t({static_cast<Index>(xs.size())});
    Index i = 0;
    for (S x : xs) t.m_(0, i++) = x;
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return m_.size(); }
  Index rows() const { return m_.rows(); }
  Index cols() const { return m_.cols(); }
  bool empty() const { return shape_.empty(); }
  bool is_scalar() const { return m_.size() == 1; }

  MatrixX<S>& mat() { return m_; }
  const MatrixX<S>& mat() const { return m_; }

  S& operator()(Index r, Index c) { return m_(r, c); }
  S operator()(Index r, Index c) const { return m_(r, c); }

  S* data() { return m_.data(); }
  const S* data() const { return m_.data(); }

  S scalar() const {
    if (!is_scalar()) throw ContractError("tensor: scalar() on non-scalar");
    return m_(0, 0);
  }

  // Same data, new logical shape (sizes must agree).
  Tensor reshape(std::vector<Index> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    if (detail::shape_rows(t.shape_) * t.shape_.back() != size())
      throw DimensionError("tensor: reshape changes element count");
    t.m_.resize(detail::shape_rows(t.shape_), t.shape_.back());
    Eigen::Map<MatrixX<S>>(t.m_.data(), t.m_.rows(), t.m_.cols()) =
        Eigen::Map<const MatrixX<S>>(m_.data(), t.m_.rows(), t.m_.cols());
    return t;
  }

  bool all_finite() const { return m_.allFinite(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>(m_.template cast<T>().eval(), shape_);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor: rank-0 shape");
    for (Index e : shape_)
      if (e <= 0) throw DimensionError("tensor: non-positive extent");
  }

  std::vector<Index> shape_;
  MatrixX<S> m_;
};

// Numerically stable softmax along one axis; every slice along `axis` sums
// to one. Most callers want the last axis; arbitrary axes are handled by
// strided iteration over the row-major layout.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  const auto& shape = x.shape();
  int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range");

  Tensor<S> y = x;
  const Index n = shape[static_cast<std::size_t>(axis)];
  Index inner = 1;  // stride between consecutive entries along the axis
  for (int a = axis + 1; a < rank; ++a) inner *= shape[static_cast<std::size_t>(a)];
  Index outer = x.size() / (n * inner);

  S* d = y.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      S* base = d + o * n * inner + i;
      S mx = base[0];
      for (Index k = 1; k < n; ++k) mx = std::max(mx, base[k * inner]);
      S sum = S(0);
      for (Index k = 0; k < n; ++k) {
        S e = std::exp(base[k * inner] - mx);
        base[k * inner] = e;
        sum += e;
      }
      for (Index k = 0; k < n; ++k) base[k * inner] /= sum;
    }
  }
  return y;
}

// Exact GeLU, x * Phi(x) with Phi the standard normal CDF.
template <class S>
S gelu_scalar(S x) {
  return x * S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476)));
}

template <class S>
S gelu_grad_scalar(S x) {
  S phi_cdf = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476)));
  S phi_pdf = S(0.3989422804014327) * std::exp(S(-0.5) * x * x);
  return phi_cdf + x * phi_pdf;
}

}  // namespace hsr
