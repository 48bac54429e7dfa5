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

// Operator frames: the rank-one positive operator basis, the informationally
// complete POVM built from it, projective frames, and canonical duals.

#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tst/qla.hpp"

namespace tst {

enum class FrameKind { ic, projective, custom };

inline std::string to_string(FrameKind k) {
  switch (k) {
    case FrameKind::ic: return "ic";
    case FrameKind::projective: return "projective";
    case FrameKind::custom: return "custom";
  }
  return "custom";
}

inline FrameKind frame_kind_from_string(const std::string& s) {
  if (s == "ic") return FrameKind::ic;
  if (s == "projective") return FrameKind::projective;
  if (s == "custom") return FrameKind::custom;
  throw Error(ErrorCode::invalid_argument, "unknown frame kind '" + s + "'");
}

/// A family of Hermitian operators {K_beta} on C^d together with its Gram
/// matrix Tr(K_a K_b) and, when the Gram matrix is invertible, the canonical
/// dual {G_beta} satisfying sum_beta G_beta Tr(K_beta X) = X on the span.
class OperatorFrame {
 public:
  static OperatorFrame from_elements(std::vector<Operator> elements, FrameKind kind,
                                     const Tolerances& tol = {}) {
    if (elements.empty()) throw Error(ErrorCode::invalid_argument, "empty frame");
    OperatorFrame f;
    f.kind_ = kind;
    f.d_ = elements.front().dim();
    for (const auto& k : elements) {
      if (k.dim() != f.d_) throw Error(ErrorCode::dimension_mismatch, "frame elements differ in size");
      detail::require_hermitian(k, tol.recon, "frame element");
    }
    f.elements_ = std::move(elements);
    f.analyze(tol);
    return f;
  }

  FrameKind kind() const noexcept { return kind_; }
  std::size_t d() const noexcept { return d_; }
  std::size_t size() const noexcept { return elements_.size(); }
  const std::vector<Operator>& elements() const noexcept { return elements_; }
  const Operator& operator[](std::size_t i) const { return elements_.at(i); }
  const RealMatrix& gram() const noexcept { return gram_; }
  std::size_t gram_rank() const noexcept { return rank_; }
  bool is_povm() const noexcept { return is_povm_; }
  bool is_ic() const noexcept { return is_ic_; }
  bool has_dual() const noexcept { return dual_.has_value(); }

  /// Ratio of extreme Gram eigenvalues; infinite for a singular Gram.
  double gram_condition() const noexcept { return condition_; }

  /// Diagnostic only: the explicit Gram inverse.
  RealMatrix gram_inverse() const {
    require_invertible();
    return ldlt_.solve(RealMatrix::Identity(gram_.rows(), gram_.cols()));
  }

  /// Solves Gram * c = rhs by the stored symmetric factorization.
  Vector solve_gram(const Vector& rhs) const {
    require_invertible();
    return ldlt_.solve(rhs.real()).cast<cplx>() + I_unit * ldlt_.solve(rhs.imag()).cast<cplx>();
  }

  const std::vector<Operator>& dual() const {
    require_invertible();
    return *dual_;
  }

 private:
  void require_invertible() const {
    if (rank_ != elements_.size()) {
      throw Error(ErrorCode::singular_gram, "Gram rank " + std::to_string(rank_) + " < " +
                                                std::to_string(elements_.size()) + " elements");
    }
  }

  void analyze(const Tolerances& tol) {
    const auto m = static_cast<Eigen::Index>(elements_.size());
    gram_.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = a; b < m; ++b) {
        const double g = trace_of_product(elements_[a].matrix(), elements_[b].matrix()).real();
        gram_(a, b) = g;
        gram_(b, a) = g;
      }

    Eigen::SelfAdjointEigenSolver<RealMatrix> es(gram_, Eigen::EigenvaluesOnly);
    const RealVector& w = es.eigenvalues();
    const double wmax = w.cwiseAbs().maxCoeff();
    rank_ = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (w(i) > tol.rank * wmax) ++rank_;
    condition_ = rank_ == elements_.size() ? wmax / w.minCoeff()
                                           : std::numeric_limits<double>::infinity();

    Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(d_));
    bool all_psd = true;
    for (const auto& k : elements_) {
      sum += k.matrix();
      all_psd = all_psd && is_psd(k, tol.psd);
    }
    const Matrix id = Matrix::Identity(sum.rows(), sum.cols());
    is_povm_ = all_psd && (sum - id).cwiseAbs().maxCoeff() <= tol.recon;
    is_ic_ = elements_.size() >= d_ * d_ && rank_ == d_ * d_;

    if (rank_ == elements_.size()) {
      ldlt_.compute(gram_);
      // Columns of `stack` are vec(K_beta); dual columns are stack * Gram^-1.
      const auto dd = static_cast<Eigen::Index>(d_ * d_);
      Matrix stack(dd, m);
      for (Eigen::Index b = 0; b < m; ++b)
        stack.col(b) = Eigen::Map<const Vector>(elements_[b].matrix().data(), dd);
      Matrix coeffs(m, dd);
      for (Eigen::Index c = 0; c < dd; ++c) {
        const Vector col = stack.row(c).transpose();
        coeffs.col(c) = ldlt_.solve(col.real()).cast<cplx>() + I_unit * ldlt_.solve(col.imag()).cast<cplx>();
      }
      std::vector<Operator> dual;
      dual.reserve(elements_.size());
      const auto d = static_cast<Eigen::Index>(d_);
      for (Eigen::Index a = 0; a < m; ++a) {
        Matrix g = Eigen::Map<const Matrix>(Vector(coeffs.row(a).transpose()).data(), d, d);
        dual.emplace_back(Matrix((g + g.adjoint()) * 0.5), elements_.front().dims());
      }
      dual_ = std::move(dual);
    }
  }

  FrameKind kind_ = FrameKind::custom;
  std::size_t d_ = 0;
  std::vector<Operator> elements_;
  RealMatrix gram_;
  std::size_t rank_ = 0;
  double condition_ = 0;
  bool is_povm_ = false;
  bool is_ic_ = false;
  Eigen::LDLT<RealMatrix> ldlt_;
  std::optional<std::vector<Operator>> dual_;
};

/// The d^2 rank-one projectors |k><k| followed, for each pair j < k in
/// lexicographic order, by the symmetric combination (|j>+|k>)(<j|+<k|)/2 and
/// then the phased combination (|j>+i|k>)(<j|-i<k|)/2.
inline std::vector<Operator> projector_basis(std::size_t d) {
  if (d == 0) throw Error(ErrorCode::invalid_argument, "dimension must be >= 1");
  std::vector<Operator> out;
  out.reserve(d * d);
  for (std::size_t k = 0; k < d; ++k) out.push_back(projector(basis_vector(d, k)));
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = j + 1; k < d; ++k) {
      const Vector ej = basis_vector(d, j), ek = basis_vector(d, k);
      out.push_back(projector(ej + ek) * 0.5);
      out.push_back(projector(ej + I_unit * ek) * 0.5);
    }
  }
  return out;
}

/// K_a = Pi^{-1/2} Pi_a Pi^{-1/2} with Pi the sum of the projector basis.
inline OperatorFrame ic_povm(std::size_t d, const Tolerances& tol = {}) {
  const auto basis = projector_basis(d);
  Operator total = Operator::zero({d});
  for (const auto& p : basis) total += p;
  const Operator s = inv_sqrt(total, tol);
  std::vector<Operator> elements;
  elements.reserve(basis.size());
  for (const auto& p : basis) {
    const Matrix k = s.matrix() * p.matrix() * s.matrix();
    elements.emplace_back(Matrix((k + k.adjoint()) * 0.5));
  }
  return OperatorFrame::from_elements(std::move(elements), FrameKind::ic, tol);
}

/// Rank-one projectors onto an orthonormal basis.
inline OperatorFrame projective_frame(const std::vector<Vector>& basis, const Tolerances& tol = {}) {
  if (basis.empty()) throw Error(ErrorCode::invalid_argument, "empty basis");
  const auto d = basis.front().size();
  if (static_cast<std::size_t>(d) != basis.size()) {
    throw Error(ErrorCode::not_orthonormal, "need exactly d basis vectors");
  }
  for (std::size_t a = 0; a < basis.size(); ++a) {
    if (basis[a].size() != d) throw Error(ErrorCode::dimension_mismatch, "basis vector sizes differ");
    for (std::size_t b = 0; b < basis.size(); ++b) {
      const cplx ip = basis[a].dot(basis[b]);
      if (std::abs(ip - (a == b ? 1.0 : 0.0)) > tol.recon) {
        throw Error(ErrorCode::not_orthonormal,
                    "<v" + std::to_string(a) + "|v" + std::to_string(b) + "> = " + std::to_string(std::abs(ip)));
      }
    }
  }
  std::vector<Operator> elements;
  for (const auto& v : basis) elements.push_back(projector(v));
  return OperatorFrame::from_elements(std::move(elements), FrameKind::projective, tol);
}

/// Named qubit bases "z", "x", "y"; "z" (computational) works for any d.
inline std::vector<Vector> named_basis(const std::string& name, std::size_t d) {
  std::vector<Vector> out;
  if (name == "z" || name == "computational") {
    for (std::size_t k = 0; k < d; ++k) out.push_back(basis_vector(d, k));
    return out;
  }
  if (d != 2) throw Error(ErrorCode::not_qubit, "basis '" + name + "' is defined for qubits only");
  const double r = 1.0 / std::sqrt(2.0);
  Vector a(2), b(2);
  if (name == "x") {
    a << r, r;
    b << r, -r;
  } else if (name == "y") {
    a << r, I_unit * r;
    b << r, -I_unit * r;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown basis '" + name + "'");
  }
  return {a, b};
}

inline const std::vector<Operator>& dual_frame(const OperatorFrame& frame) { return frame.dual(); }

/// Coefficients c with sum_beta c_beta K_beta = x, from the Gram system.
inline Vector expand(const Operator& x, const OperatorFrame& frame, const Tolerances& tol = {}) {
  if (x.dim() != frame.d()) throw Error(ErrorCode::dimension_mismatch, "operator/frame size");
  const auto m = static_cast<Eigen::Index>(frame.size());
  Vector rhs(m);
  for (Eigen::Index b = 0; b < m; ++b) rhs(b) = trace_of_product(frame[b].matrix(), x.matrix());
  Vector c = frame.solve_gram(rhs);
  Matrix resum = Matrix::Zero(x.matrix().rows(), x.matrix().cols());
  for (Eigen::Index b = 0; b < m; ++b) resum += c(b) * frame[b].matrix();
  const double residual = (resum - x.matrix()).norm();
  if (residual > tol.recon * std::max(1.0, x.matrix().norm())) {
    throw Error(ErrorCode::not_in_span, "residual " + std::to_string(residual));
  }
  return c;
}

// Serialization: {"d": int, "kind": "ic"|"projective", "elements": [Operator...]}.
// Gram and dual are recomputed on load.

inline void to_json(nlohmann::json& j, const OperatorFrame& f) {
  j = nlohmann::json{{"d", f.d()}, {"kind", to_string(f.kind())}, {"elements", f.elements()}};
}

inline OperatorFrame frame_from_json(const nlohmann::json& j, const Tolerances& tol = {}) {
  const auto d = j.at("d").get<std::size_t>();
  const auto kind = frame_kind_from_string(j.at("kind").get<std::string>());
  auto elements = j.at("elements").get<std::vector<Operator>>();
  for (const auto& e : elements)
    if (e.dim() != d) throw Error(ErrorCode::dimension_mismatch, "element size differs from d");
  auto f = OperatorFrame::from_elements(std::move(elements), kind, tol);
  if (kind == FrameKind::ic && !(f.is_povm() && f.is_ic())) {
    throw Error(ErrorCode::not_informationally_complete, "loaded 'ic' frame fails IC-POVM checks");
  }
  if (kind == FrameKind::projective && !f.is_povm()) {
    throw Error(ErrorCode::not_a_povm, "loaded projective frame does not sum to identity");
  }
  return f;
}

}  // namespace tst
