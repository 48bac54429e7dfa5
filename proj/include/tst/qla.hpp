// Copyright 2026 The temporal-state-tomography Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense complex operator algebra on tensor-product spaces.
//
// Factor order convention: an Operator with factor_dims (d_0, d_1, ..., d_k)
// stores entries in Kronecker order, factor 0 being the slowest-varying index.
// Temporal states list their factors time-descending, (t_n, ..., t_0); Choi
// matrices list (input, output).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tst/error.hpp"

namespace tst {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using Dims = std::vector<std::size_t>;

inline constexpr cplx I_unit{0.0, 1.0};

inline std::size_t product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

/// Square complex matrix tagged with its tensor-factor dimensions.
class Operator {
 public:
  Operator() : entries_(Matrix::Zero(1, 1)), dims_{1} {}

  Operator(Matrix entries, Dims dims) : entries_(std::move(entries)), dims_(std::move(dims)) {
    validate();
  }

  /// Single-factor operator.
  explicit Operator(Matrix entries) : entries_(std::move(entries)) {
    dims_ = {static_cast<std::size_t>(entries_.rows())};
    validate();
  }

  static Operator zero(Dims dims) {
    auto d = static_cast<Eigen::Index>(product(dims));
    return {Matrix::Zero(d, d), std::move(dims)};
  }

  static Operator identity(Dims dims) {
    auto d = static_cast<Eigen::Index>(product(dims));
    return {Matrix::Identity(d, d), std::move(dims)};
  }

  const Matrix& matrix() const noexcept { return entries_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t factors() const noexcept { return dims_.size(); }

  cplx operator()(Eigen::Index r, Eigen::Index c) const { return entries_(r, c); }

  cplx trace() const { return entries_.trace(); }

  Operator adjoint() const { return {entries_.adjoint(), dims_}; }
  Operator transpose() const { return {entries_.transpose(), dims_}; }

  Operator hermitian_part() const { return {(entries_ + entries_.adjoint()) * 0.5, dims_}; }

  bool is_hermitian(double tol) const {
    return (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff() <= tol;
  }

  Operator with_dims(Dims dims) const { return {entries_, std::move(dims)}; }

  Operator& operator+=(const Operator& o) {
    check_same_shape(o);
    entries_ += o.entries_;
    return *this;
  }
  Operator& operator-=(const Operator& o) {
    check_same_shape(o);
    entries_ -= o.entries_;
    return *this;
  }
  Operator& operator*=(cplx s) {
    entries_ *= s;
    return *this;
  }

  friend Operator operator+(Operator a, const Operator& b) { return a += b; }
  friend Operator operator-(Operator a, const Operator& b) { return a -= b; }
  friend Operator operator*(Operator a, cplx s) { return a *= s; }
  friend Operator operator*(cplx s, Operator a) { return a *= s; }
  friend Operator operator*(const Operator& a, const Operator& b) {
    a.check_same_shape(b);
    return {a.entries_ * b.entries_, a.dims_};
  }

 private:
  void validate() const {
    if (entries_.rows() != entries_.cols()) {
      throw Error(ErrorCode::dimension_mismatch, "operator matrix must be square");
    }
    if (product(dims_) != static_cast<std::size_t>(entries_.rows())) {
      throw Error(ErrorCode::dimension_mismatch, "factor dims do not multiply to the matrix size");
    }
    if (!entries_.allFinite()) {
      throw Error(ErrorCode::invalid_argument, "operator has non-finite entries");
    }
  }

  void check_same_shape(const Operator& o) const {
    if (o.entries_.rows() != entries_.rows()) {
      throw Error(ErrorCode::dimension_mismatch, "operator sizes differ");
    }
  }

  Matrix entries_;
  Dims dims_;
};

/// Hilbert-Schmidt inner product Tr(a^dagger b).
inline cplx hs_inner(const Matrix& a, const Matrix& b) { return (a.conjugate().cwiseProduct(b)).sum(); }

/// Tr(a b) without forming the product.
inline cplx trace_of_product(const Matrix& a, const Matrix& b) {
  return (a.transpose().cwiseProduct(b)).sum();
}

// ---------------------------------------------------------------------------
// Multi-index helpers

namespace detail {

inline Dims strides_of(const Dims& dims) {
  Dims strides(dims.size(), 1);
  for (std::size_t k = dims.size(); k-- > 1;) strides[k - 1] = strides[k] * dims[k];
  return strides;
}

inline void check_factor(const Operator& x, std::size_t factor) {
  if (factor >= x.factors()) {
    throw Error(ErrorCode::index_out_of_range,
                "factor " + std::to_string(factor) + " of " + std::to_string(x.factors()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor structure

/// Kronecker product; a's factors come first (slower-varying).
inline Operator tensor(const Operator& a, const Operator& b) {
  const auto da = static_cast<Eigen::Index>(a.dim());
  const auto db = static_cast<Eigen::Index>(b.dim());
  Matrix out(da * db, da * db);
  for (Eigen::Index i = 0; i < da; ++i) {
    for (Eigen::Index j = 0; j < da; ++j) {
      out.block(i * db, j * db, db, db) = a(i, j) * b.matrix();
    }
  }
  Dims dims = a.dims();
  dims.insert(dims.end(), b.dims().begin(), b.dims().end());
  return {std::move(out), std::move(dims)};
}

inline Operator tensor(std::span<const Operator> ops) {
  if (ops.empty()) return Operator{};
  Operator out = ops.front();
  for (std::size_t k = 1; k < ops.size(); ++k) out = tensor(out, ops[k]);
  return out;
}

/// Reorders tensor factors: factor k of the result is factor perm[k] of x.
inline Operator permute_factors(const Operator& x, const std::vector<std::size_t>& perm) {
  const auto& dims = x.dims();
  const std::size_t n = dims.size();
  if (perm.size() != n) throw Error(ErrorCode::dimension_mismatch, "permutation length");
  std::vector<bool> seen(n, false);
  for (auto p : perm) {
    if (p >= n || seen[p]) throw Error(ErrorCode::index_out_of_range, "invalid permutation");
    seen[p] = true;
  }
  Dims new_dims(n);
  for (std::size_t k = 0; k < n; ++k) new_dims[k] = dims[perm[k]];
  const Dims old_strides = detail::strides_of(dims);
  const Dims new_strides = detail::strides_of(new_dims);

  // map[new flat index] = old flat index
  const std::size_t d = x.dim();
  std::vector<Eigen::Index> map(d);
  for (std::size_t idx = 0; idx < d; ++idx) {
    std::size_t rem = idx, old = 0;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t digit = rem / new_strides[k];
      rem %= new_strides[k];
      old += digit * old_strides[perm[k]];
    }
    map[idx] = static_cast<Eigen::Index>(old);
  }
  Matrix out(x.matrix().rows(), x.matrix().cols());
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) out(r, c) = x(map[r], map[c]);
  return {std::move(out), std::move(new_dims)};
}

/// Traces out every factor not listed in keep; kept factors stay in original order.
inline Operator partial_trace(const Operator& x, std::vector<std::size_t> keep) {
  const auto& dims = x.dims();
  const std::size_t n = dims.size();
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (auto k : keep) detail::check_factor(x, k);

  std::vector<bool> kept(n, false);
  for (auto k : keep) kept[k] = true;
  Dims out_dims;
  for (auto k : keep) out_dims.push_back(dims[k]);
  if (out_dims.empty()) out_dims = {1};

  const Dims strides = detail::strides_of(dims);
  const Dims out_strides = detail::strides_of(out_dims);
  const std::size_t d = x.dim();

  // Split each flat index into (kept flat index, traced flat index).
  Dims traced_dims;
  for (std::size_t k = 0; k < n; ++k)
    if (!kept[k]) traced_dims.push_back(dims[k]);
  const Dims traced_strides = detail::strides_of(traced_dims);
  std::vector<std::size_t> kept_idx(d), traced_idx(d);
  for (std::size_t idx = 0; idx < d; ++idx) {
    std::size_t ki = 0, ti = 0, kpos = 0, tpos = 0;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t digit = (idx / strides[k]) % dims[k];
      if (kept[k]) {
        ki += digit * out_strides[kpos++];
      } else {
        ti += digit * traced_strides[tpos++];
      }
    }
    kept_idx[idx] = ki;
    traced_idx[idx] = ti;
  }

  const auto dout = static_cast<Eigen::Index>(product(out_dims));
  Matrix out = Matrix::Zero(dout, dout);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c)
      if (traced_idx[r] == traced_idx[c])
        out(static_cast<Eigen::Index>(kept_idx[r]), static_cast<Eigen::Index>(kept_idx[c])) +=
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return {std::move(out), std::move(out_dims)};
}

/// Transposes the row and column indices belonging to one factor.
inline Operator partial_transpose(const Operator& x, std::size_t factor) {
  detail::check_factor(x, factor);
  const auto& dims = x.dims();
  const Dims strides = detail::strides_of(dims);
  const std::size_t s = strides[factor], df = dims[factor];
  const std::size_t d = x.dim();
  Matrix out(x.matrix().rows(), x.matrix().cols());
  for (std::size_t r = 0; r < d; ++r) {
    const std::size_t dr = (r / s) % df;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t dc = (c / s) % df;
      const std::size_t r2 = r - dr * s + dc * s;
      const std::size_t c2 = c - dc * s + dr * s;
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          x(static_cast<Eigen::Index>(r2), static_cast<Eigen::Index>(c2));
    }
  }
  return {std::move(out), dims};
}

// ---------------------------------------------------------------------------
// Spectral functions

namespace detail {

inline void require_hermitian(const Operator& x, double tol, const char* who) {
  const double scale = std::max(1.0, x.matrix().cwiseAbs().maxCoeff());
  if (!x.is_hermitian(tol * scale)) {
    throw Error(ErrorCode::not_hermitian, std::string(who) + " requires a Hermitian operator");
  }
}

inline Eigen::SelfAdjointEigenSolver<Matrix> eigh(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::invalid_argument, "Hermitian eigendecomposition failed");
  }
  return es;
}

}  // namespace detail

inline double min_eigenvalue(const Operator& h, const Tolerances& tol = {}) {
  detail::require_hermitian(h, tol.recon, "min_eigenvalue");
  return detail::eigh(h.hermitian_part().matrix()).eigenvalues().minCoeff();
}

inline bool is_psd(const Operator& h, double tol) {
  if (!h.is_hermitian(tol)) return false;
  return detail::eigh(h.hermitian_part().matrix()).eigenvalues().minCoeff() >= -tol;
}

/// Positive and negative spectral parts, h = plus - minus, both PSD.
inline std::pair<Operator, Operator> spectral_split(const Operator& h) {
  const auto es = detail::eigh(h.hermitian_part().matrix());
  const auto& v = es.eigenvectors();
  const RealVector& w = es.eigenvalues();
  const RealVector wp = w.cwiseMax(0.0);
  const RealVector wm = (-w).cwiseMax(0.0);
  Matrix plus = v * wp.cast<cplx>().asDiagonal() * v.adjoint();
  Matrix minus = v * wm.cast<cplx>().asDiagonal() * v.adjoint();
  return {Operator(std::move(plus), h.dims()), Operator(std::move(minus), h.dims())};
}

struct PsdTerm {
  cplx coefficient;
  Operator op;
};

/// Complex combination of positive semidefinite operators.
struct PsdCombination {
  std::vector<PsdTerm> terms;

  Operator sum(const Dims& dims) const {
    Operator acc = Operator::zero(dims);
    for (const auto& t : terms) acc += t.coefficient * t.op;
    return acc;
  }
};

/// Splits x into Hermitian and anti-Hermitian parts, then each into its
/// positive and negative spectral parts. Zero parts are dropped, so the result
/// has at most four terms with coefficients in {1, -1, i, -i}.
inline PsdCombination psd_decompose(const Operator& x) {
  const Matrix& m = x.matrix();
  const Operator re_part((m + m.adjoint()) * 0.5, x.dims());
  const Operator im_part((m - m.adjoint()) / (2.0 * I_unit), x.dims());

  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double drop = 1e-14 * scale;
  PsdCombination out;
  auto push = [&](cplx c, Operator op) {
    if (op.matrix().cwiseAbs().maxCoeff() > drop) out.terms.push_back({c, std::move(op)});
  };
  auto [rp, rm] = spectral_split(re_part);
  auto [ip, im] = spectral_split(im_part);
  push(1.0, std::move(rp));
  push(-1.0, std::move(rm));
  push(I_unit, std::move(ip));
  push(-I_unit, std::move(im));
  return out;
}

/// Inverse square root of a Hermitian positive-definite operator.
inline Operator inv_sqrt(const Operator& x, const Tolerances& tol = {}) {
  detail::require_hermitian(x, tol.recon, "inv_sqrt");
  const auto es = detail::eigh(x.hermitian_part().matrix());
  const RealVector& w = es.eigenvalues();
  if (w.minCoeff() < tol.pd) {
    throw Error(ErrorCode::not_positive_definite,
                "min eigenvalue " + std::to_string(w.minCoeff()) + " below floor");
  }
  const RealVector s = w.cwiseSqrt().cwiseInverse();
  Matrix out = es.eigenvectors() * s.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
  return {std::move(out), x.dims()};
}

/// Moore-Penrose pseudo-inverse with a cutoff relative to the largest singular value.
inline Matrix pinv(const Matrix& m, double rel_cutoff) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const RealVector& s = svd.singularValues();
  const double cut = s.size() > 0 ? rel_cutoff * s(0) : 0.0;
  RealVector inv = RealVector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.cast<cplx>().asDiagonal() * svd.matrixU().adjoint();
}

// ---------------------------------------------------------------------------
// Norms

enum class Schatten { one, two, inf };

inline double schatten_norm(const Matrix& x, Schatten p) {
  if (p == Schatten::two) return x.norm();
  Eigen::JacobiSVD<Matrix> svd(x);
  const RealVector& s = svd.singularValues();
  return p == Schatten::one ? s.sum() : (s.size() ? s(0) : 0.0);
}

inline double schatten_norm(const Operator& x, Schatten p) { return schatten_norm(x.matrix(), p); }

// ---------------------------------------------------------------------------
// Common operators

namespace pauli {

inline Operator id() { return Operator(Matrix::Identity(2, 2)); }
inline Operator x() {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  return Operator(m);
}
inline Operator y() {
  Matrix m(2, 2);
  m << 0, -I_unit, I_unit, 0;
  return Operator(m);
}
inline Operator z() {
  Matrix m(2, 2);
  m << 1, 0, 0, -1;
  return Operator(m);
}
/// (I, X, Y, Z) indexed by mu = 0..3.
inline std::vector<Operator> all() { return {id(), x(), y(), z()}; }

}  // namespace pauli

/// |psi><psi| for a (not necessarily normalized) vector.
inline Operator projector(const Vector& psi) { return Operator(psi * psi.adjoint()); }

inline Vector basis_vector(std::size_t d, std::size_t k) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(d));
  v(static_cast<Eigen::Index>(k)) = 1.0;
  return v;
}

/// Swap operator on C^d (x) C^d.
inline Operator swap_operator(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix s = Matrix::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) s(i * n + j, j * n + i) = 1.0;
  return {std::move(s), {d, d}};
}

// ---------------------------------------------------------------------------
// Serialization: {"dims": [..], "re": [[..]], "im": [[..]]}, row-major.

inline void to_json(nlohmann::json& j, const Operator& op) {
  const auto& m = op.matrix();
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json rr = nlohmann::json::array(), ri = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      rr.push_back(m(r, c).real());
      ri.push_back(m(r, c).imag());
    }
    re.push_back(std::move(rr));
    im.push_back(std::move(ri));
  }
  j = nlohmann::json{{"dims", op.dims()}, {"re", std::move(re)}, {"im", std::move(im)}};
}

inline void from_json(const nlohmann::json& j, Operator& op) {
  auto dims = j.at("dims").get<Dims>();
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  const auto d = static_cast<Eigen::Index>(re.size());
  if (static_cast<Eigen::Index>(im.size()) != d) {
    throw Error(ErrorCode::dimension_mismatch, "re/im row counts differ");
  }
  Matrix m(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    const auto& rr = re.at(static_cast<std::size_t>(r));
    const auto& ri = im.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(rr.size()) != d || static_cast<Eigen::Index>(ri.size()) != d) {
      throw Error(ErrorCode::dimension_mismatch, "operator rows must be square");
    }
    for (Eigen::Index c = 0; c < d; ++c) {
      m(r, c) = cplx(rr.at(static_cast<std::size_t>(c)).get<double>(),
                     ri.at(static_cast<std::size_t>(c)).get<double>());
    }
  }
  op = Operator(std::move(m), std::move(dims));
}

}  // namespace tst
