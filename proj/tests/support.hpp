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

// Random instances and independent reference computations for the tests.
// Nothing here calls into the library's composition or reconstruction code.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tst/tst.hpp"

namespace tst::testing {

class Random {
 public:
  explicit Random(std::uint64_t seed) : gen_(seed) {}

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }

  Matrix ginibre(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = cplx(normal(), normal());
    return m;
  }

  Vector ket(Eigen::Index d) {
    Vector v = ginibre(d, 1);
    return v / v.norm();
  }

  /// Random density matrix of the given rank (full rank by default).
  Matrix state(Eigen::Index d, Eigen::Index rank = 0) {
    const Matrix g = ginibre(d, rank > 0 ? rank : d);
    Matrix rho = g * g.adjoint();
    return rho / rho.trace();
  }

  Matrix hermitian(Eigen::Index d) {
    const Matrix g = ginibre(d, d);
    return 0.5 * (g + g.adjoint());
  }

  /// Kraus operators of a random channel from a Haar-like isometry.
  std::vector<Matrix> kraus(Eigen::Index d_in, Eigen::Index d_out, Eigen::Index count = 2) {
    const Matrix g = ginibre(d_out * count, d_in);
    Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix v = qr.householderQ() * Matrix::Identity(d_out * count, d_in);
    std::vector<Matrix> ks;
    for (Eigen::Index a = 0; a < count; ++a) ks.push_back(v.block(a * d_out, 0, d_out, d_in));
    return ks;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline Matrix apply_kraus(const std::vector<Matrix>& ks, const Matrix& rho) {
  Matrix out = Matrix::Zero(ks.front().rows(), ks.front().rows());
  for (const auto& k : ks) out += k * rho * k.adjoint();
  return out;
}

/// Choi matrix sum_ij |i><j| (x) F(|i><j|) evaluated elementwise.
inline Matrix choi_reference(const std::function<Matrix(const Matrix&)>& f, Eigen::Index d_in, Eigen::Index d_out) {
  Matrix c = Matrix::Zero(d_in * d_out, d_in * d_out);
  for (Eigen::Index i = 0; i < d_in; ++i)
    for (Eigen::Index j = 0; j < d_in; ++j) {
      Matrix e = Matrix::Zero(d_in, d_in);
      e(i, j) = 1.0;
      c.block(i * d_out, j * d_out, d_out, d_out) = f(e);
    }
  return c;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Process with Kraus-represented channels, for oracle evaluation.
struct KrausProcess {
  Matrix rho;
  std::vector<std::vector<Matrix>> channels;

  Eigen::Index dim(std::size_t k) const { return k == 0 ? rho.rows() : channels[k - 1].front().rows(); }
  std::size_t times() const { return channels.size() + 1; }

  TemporalProcess build() const {
    std::vector<Superoperator> s;
    for (const auto& ks : channels) s.push_back(from_kraus(ks));
    return TemporalProcess(Operator(rho), s);
  }
};

inline KrausProcess random_process(Random& r, const std::vector<Eigen::Index>& dims, Eigen::Index rank = 0) {
  KrausProcess p{r.state(dims[0], rank), {}};
  for (std::size_t k = 1; k < dims.size(); ++k) p.channels.push_back(r.kraus(dims[k - 1], dims[k], 2));
  return p;
}

/// Q(beta) = Tr[P_{beta_n} o E_n o ... o P_{beta_0}(rho)] by explicit matrix products,
/// with P_b(X) = X K_b (right), K_b X (left) or K_a X K_b (doubled, b = a * m + b').
inline Vector brute_force_tqd(const KrausProcess& p, const std::vector<std::vector<Matrix>>& frames, Side side) {
  std::vector<std::size_t> m;
  for (const auto& f : frames) m.push_back(side == Side::doubled ? f.size() * f.size() : f.size());
  std::size_t total = 1;
  for (auto v : m) total *= v;
  Vector out(static_cast<Eigen::Index>(total));
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx;
    std::vector<std::size_t> beta(m.size());
    for (std::size_t k = 0; k < m.size(); ++k) {
      beta[k] = rem % m[k];
      rem /= m[k];
    }
    Matrix x = p.rho;
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (k > 0) x = apply_kraus(p.channels[k - 1], x);
      const auto& f = frames[k];
      if (side == Side::right) x = x * f[beta[k]];
      else if (side == Side::left) x = f[beta[k]] * x;
      else x = f[beta[k] / f.size()] * x * f[beta[k] % f.size()];
    }
    out(static_cast<Eigen::Index>(idx)) = x.trace();
  }
  return out;
}

/// Two-time right-KD state: Upsilon_{(a,k),(b,j)} = sum_i rho_{ij} E(|i><k|)_{ab},
/// the unique operator with Tr[Upsilon (A (x) B)] = Tr[A E(rho B)].
inline Matrix two_time_state(const Matrix& rho, const std::vector<Matrix>& kraus) {
  const Eigen::Index din = rho.rows(), dout = kraus.front().rows();
  Matrix u = Matrix::Zero(dout * din, dout * din);
  for (Eigen::Index i = 0; i < din; ++i)
    for (Eigen::Index k = 0; k < din; ++k) {
      Matrix e = Matrix::Zero(din, din);
      e(i, k) = 1.0;
      const Matrix ek = apply_kraus(kraus, e);
      for (Eigen::Index a = 0; a < dout; ++a)
        for (Eigen::Index b = 0; b < dout; ++b)
          for (Eigen::Index j = 0; j < din; ++j) u(a * din + k, b * din + j) += rho(i, j) * ek(a, b);
    }
  return u;
}

inline std::vector<Matrix> pauli_matrices() {
  Matrix i2 = Matrix::Identity(2, 2), x(2, 2), y(2, 2), z(2, 2);
  x << 0, 1, 1, 0;
  y << 0, cplx(0, -1), cplx(0, 1), 0;
  z << 1, 0, 0, -1;
  return {i2, x, y, z};
}

inline std::vector<Matrix> elements_of(const OperatorFrame& f) { return detail::matrices_of(f.elements()); }

template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
}

/// A second IC frame family: the IC-POVM conjugated by a fixed unitary.
inline OperatorFrame rotated_ic(std::size_t d, const Matrix& u) {
  const OperatorFrame base = ic_povm(d);
  std::vector<Operator> els;
  for (const auto& k : base.elements()) els.push_back(Operator(u * k.matrix() * u.adjoint()));
  return OperatorFrame::from_elements(els, FrameKind::custom);
}

inline Matrix random_unitary(Random& r, Eigen::Index d) {
  Eigen::HouseholderQR<Matrix> qr(r.ginibre(d, d));
  return qr.householderQ() * Matrix::Identity(d, d);
}

}  // namespace tst::testing
