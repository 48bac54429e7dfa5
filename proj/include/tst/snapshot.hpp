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

// Superoperators in Choi form, quantum instruments, and the decomposition of
// arbitrary linear maps into complex combinations of instrument elements.
//
// Choi convention: Phi_F = sum_ij |i><j| (x) F(|i><j|) with factor dims
// (d_in, d_out); the map is recovered as F(rho) = Tr_in[(rho^T (x) I) Phi_F].

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tst/frames.hpp"
#include "tst/qla.hpp"

namespace tst {

/// Linear map B(C^d_in) -> B(C^d_out) stored as its Choi matrix, plus the
/// equivalent transfer matrix acting on column-major vec(rho).
class Superoperator {
 public:
  Superoperator() : Superoperator(Operator::identity({1, 1}), 1, 1) {}

  Superoperator(Operator choi, std::size_t d_in, std::size_t d_out)
      : choi_(std::move(choi)), d_in_(d_in), d_out_(d_out) {
    if (choi_.dim() != d_in * d_out) {
      throw Error(ErrorCode::dimension_mismatch, "Choi size is not d_in * d_out");
    }
    if (choi_.dims() != Dims{d_in, d_out}) choi_ = choi_.with_dims({d_in, d_out});
    build_transfer();
  }

  /// From a transfer matrix T with vec(F(rho)) = T vec(rho).
  static Superoperator from_transfer(const Matrix& t, std::size_t d_in, std::size_t d_out) {
    const auto di = static_cast<Eigen::Index>(d_in), dout = static_cast<Eigen::Index>(d_out);
    if (t.rows() != dout * dout || t.cols() != di * di) {
      throw Error(ErrorCode::dimension_mismatch, "transfer matrix shape");
    }
    Matrix choi(di * dout, di * dout);
    for (Eigen::Index i = 0; i < di; ++i)
      for (Eigen::Index j = 0; j < di; ++j)
        for (Eigen::Index a = 0; a < dout; ++a)
          for (Eigen::Index b = 0; b < dout; ++b) choi(i * dout + a, j * dout + b) = t(a + dout * b, i + di * j);
    return {Operator(std::move(choi), {d_in, d_out}), d_in, d_out};
  }

  const Operator& choi() const noexcept { return choi_; }
  const Matrix& transfer() const noexcept { return transfer_; }
  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t d_out() const noexcept { return d_out_; }

  /// Tr_out of the Choi matrix; equals I_in for trace-preserving maps.
  Operator output_marginal() const { return partial_trace(choi_, {0}); }

  bool is_cp(double tol) const { return is_psd(choi_, tol); }

  bool is_tp(double tol) const {
    const Matrix diff = output_marginal().matrix() - Matrix::Identity(d_in(), d_in());
    return diff.cwiseAbs().maxCoeff() <= tol;
  }

  /// Tr_out(Choi) <= I_in.
  bool is_tni(double tol) const {
    const Operator gap(Matrix(Matrix::Identity(d_in(), d_in()) - output_marginal().matrix()));
    return is_psd(gap, tol);
  }

  bool is_cptp(const Tolerances& tol = {}) const { return is_cp(tol.psd) && is_tp(tol.recon); }

  Matrix apply(const Matrix& rho) const {
    const auto di = static_cast<Eigen::Index>(d_in_), dout = static_cast<Eigen::Index>(d_out_);
    if (rho.rows() != di || rho.cols() != di) {
      throw Error(ErrorCode::dimension_mismatch,
                  "input is " + std::to_string(rho.rows()) + "x" + std::to_string(rho.cols()) +
                      ", map expects " + std::to_string(d_in_));
    }
    const Vector out = transfer_ * Eigen::Map<const Vector>(rho.data(), di * di);
    return Eigen::Map<const Matrix>(out.data(), dout, dout);
  }

  Superoperator operator+(const Superoperator& o) const {
    check_same(o);
    return {choi_ + o.choi_, d_in_, d_out_};
  }
  Superoperator operator*(cplx s) const { return {choi_ * s, d_in_, d_out_}; }

 private:
  void check_same(const Superoperator& o) const {
    if (o.d_in_ != d_in_ || o.d_out_ != d_out_) throw Error(ErrorCode::dimension_mismatch, "superoperator shapes");
  }

  void build_transfer() {
    const auto di = static_cast<Eigen::Index>(d_in_), dout = static_cast<Eigen::Index>(d_out_);
    transfer_.resize(dout * dout, di * di);
    const Matrix& c = choi_.matrix();
    for (Eigen::Index i = 0; i < di; ++i)
      for (Eigen::Index j = 0; j < di; ++j)
        for (Eigen::Index a = 0; a < dout; ++a)
          for (Eigen::Index b = 0; b < dout; ++b) transfer_(a + dout * b, i + di * j) = c(i * dout + a, j * dout + b);
  }

  Operator choi_;
  std::size_t d_in_;
  std::size_t d_out_;
  Matrix transfer_;
};

using LinearMap = std::function<Matrix(const Matrix&)>;

/// Choi matrix of a linear map, evaluated on the matrix units |i><j|.
inline Superoperator choi_of(const LinearMap& f, std::size_t d_in, std::size_t d_out) {
  const auto di = static_cast<Eigen::Index>(d_in), dout = static_cast<Eigen::Index>(d_out);
  Matrix choi = Matrix::Zero(di * dout, di * dout);
  for (Eigen::Index i = 0; i < di; ++i) {
    for (Eigen::Index j = 0; j < di; ++j) {
      Matrix unit = Matrix::Zero(di, di);
      unit(i, j) = 1.0;
      const Matrix image = f(unit);
      if (image.rows() != dout || image.cols() != dout) {
        throw Error(ErrorCode::dimension_mismatch, "map output has the wrong size");
      }
      choi.block(i * dout, j * dout, dout, dout) = image;
    }
  }
  return {Operator(std::move(choi), {d_in, d_out}), d_in, d_out};
}

inline Operator apply(const Superoperator& s, const Operator& rho) { return Operator(s.apply(rho.matrix())); }

/// second after first.
inline Superoperator compose(const Superoperator& second, const Superoperator& first) {
  if (first.d_out() != second.d_in()) throw Error(ErrorCode::dimension_mismatch, "composition dims");
  return Superoperator::from_transfer(second.transfer() * first.transfer(), first.d_in(), second.d_out());
}

inline Superoperator from_kraus(const std::vector<Matrix>& kraus) {
  if (kraus.empty()) throw Error(ErrorCode::invalid_argument, "no Kraus operators");
  const auto d_in = static_cast<std::size_t>(kraus.front().cols());
  const auto d_out = static_cast<std::size_t>(kraus.front().rows());
  return choi_of(
      [&](const Matrix& rho) {
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_out));
        for (const auto& k : kraus) out += k * rho * k.adjoint();
        return out;
      },
      d_in, d_out);
}

namespace channels {

inline Superoperator identity(std::size_t d) {
  return choi_of([](const Matrix& rho) { return rho; }, d, d);
}

/// rho -> (1 - p) rho + p Tr(rho) I/d.
inline Superoperator depolarizing(std::size_t d, double p) {
  if (p < 0.0 || p > 1.0) throw Error(ErrorCode::invalid_argument, "depolarizing p outside [0,1]");
  return choi_of(
      [d, p](const Matrix& rho) {
        const auto n = static_cast<Eigen::Index>(d);
        return Matrix((1.0 - p) * rho + p * rho.trace() * Matrix::Identity(n, n) / static_cast<double>(d));
      },
      d, d);
}

inline Superoperator amplitude_damping(double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw Error(ErrorCode::invalid_argument, "gamma outside [0,1]");
  Matrix k0 = Matrix::Zero(2, 2), k1 = Matrix::Zero(2, 2);
  k0(0, 0) = 1.0;
  k0(1, 1) = std::sqrt(1.0 - gamma);
  k1(0, 1) = std::sqrt(gamma);
  return from_kraus({k0, k1});
}

inline Superoperator bit_flip(double p) {
  if (p < 0.0 || p > 1.0) throw Error(ErrorCode::invalid_argument, "bit-flip p outside [0,1]");
  return from_kraus({std::sqrt(1.0 - p) * pauli::id().matrix(), std::sqrt(p) * pauli::x().matrix()});
}

/// Replaces every input by the fixed state sigma.
inline Superoperator replacement(std::size_t d_in, const Operator& sigma) {
  return choi_of([&](const Matrix& rho) { return Matrix(rho.trace() * sigma.matrix()); }, d_in, sigma.dim());
}

}  // namespace channels

// ---------------------------------------------------------------------------
// Instruments

/// Completely positive trace-nonincreasing maps summing to a trace-preserving map.
class Instrument {
 public:
  explicit Instrument(std::vector<Superoperator> maps, const Tolerances& tol = {}) : maps_(std::move(maps)) {
    if (maps_.empty()) throw Error(ErrorCode::invalid_argument, "empty instrument");
    d_in_ = maps_.front().d_in();
    d_out_ = maps_.front().d_out();
    Matrix marginal = Matrix::Zero(static_cast<Eigen::Index>(d_in_), static_cast<Eigen::Index>(d_in_));
    for (std::size_t a = 0; a < maps_.size(); ++a) {
      const auto& s = maps_[a];
      if (s.d_in() != d_in_ || s.d_out() != d_out_) {
        throw Error(ErrorCode::dimension_mismatch, "instrument maps differ in shape");
      }
      if (!s.is_cp(tol.psd)) {
        throw Error(ErrorCode::invalid_argument, "instrument map " + std::to_string(a) + " is not CP");
      }
      if (!s.is_tni(tol.psd)) {
        throw Error(ErrorCode::invalid_argument, "instrument map " + std::to_string(a) + " increases trace");
      }
      marginal += s.output_marginal().matrix();
    }
    if ((marginal - Matrix::Identity(marginal.rows(), marginal.cols())).cwiseAbs().maxCoeff() > tol.recon) {
      throw Error(ErrorCode::invalid_argument, "instrument does not sum to a trace-preserving map");
    }
    analyze(tol);
  }

  const std::vector<Superoperator>& maps() const noexcept { return maps_; }
  const Superoperator& operator[](std::size_t a) const { return maps_.at(a); }
  std::size_t size() const noexcept { return maps_.size(); }
  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t d_out() const noexcept { return d_out_; }

  /// Hilbert-Schmidt Gram matrix of the Choi matrices.
  const Matrix& gram() const noexcept { return gram_; }
  std::size_t gram_rank() const noexcept { return rank_; }
  double gram_condition() const noexcept { return condition_; }

  /// True when the Choi matrices span all of B(C^d_in (x) C^d_out).
  bool spans() const noexcept { return rank_ == d_in_ * d_in_ * d_out_ * d_out_; }

  /// Least-squares coefficients for the right-hand side b_a = Tr(Phi_a^dagger X).
  Vector solve_gram(const Vector& rhs) const {
    if (!spans()) {
      throw Error(ErrorCode::singular_gram, "instrument Choi matrices have rank " + std::to_string(rank_) +
                                                " < " + std::to_string(d_in_ * d_in_ * d_out_ * d_out_));
    }
    if (rank_ == maps_.size()) return ldlt_.solve(rhs);
    return pinv_ * rhs;
  }

 private:
  void analyze(const Tolerances& tol) {
    const auto m = static_cast<Eigen::Index>(maps_.size());
    gram_.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = a; b < m; ++b) {
        gram_(a, b) = hs_inner(maps_[a].choi().matrix(), maps_[b].choi().matrix());
        gram_(b, a) = std::conj(gram_(a, b));
      }
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram_);
    const RealVector& w = es.eigenvalues();
    const double wmax = w.cwiseAbs().maxCoeff();
    rank_ = 0;
    double wmin = wmax;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (w(i) > tol.rank * wmax) {
        ++rank_;
        wmin = std::min(wmin, w(i));
      }
    condition_ = wmax / wmin;
    if (rank_ == maps_.size()) {
      ldlt_.compute(gram_);
    } else {
      RealVector inv = RealVector::Zero(w.size());
      for (Eigen::Index i = 0; i < w.size(); ++i)
        if (w(i) > tol.rank * wmax) inv(i) = 1.0 / w(i);
      pinv_ = es.eigenvectors() * inv.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
    }
  }

  std::vector<Superoperator> maps_;
  std::size_t d_in_ = 0;
  std::size_t d_out_ = 0;
  Matrix gram_;
  std::size_t rank_ = 0;
  double condition_ = 0;
  Eigen::LDLT<Matrix> ldlt_;
  Matrix pinv_;
};

/// Instrument whose element a has Choi matrix K_a / d_out, for a POVM {K_a}
/// on C^d_in (x) C^d_out. The 1/d_out factor makes the sum exactly trace
/// preserving (the summed map prepares I/d_out).
inline Instrument instrument_from_frame(const OperatorFrame& frame, std::size_t d_in, std::size_t d_out,
                                        const Tolerances& tol = {}) {
  if (frame.d() != d_in * d_out) throw Error(ErrorCode::dimension_mismatch, "frame is not on d_in * d_out");
  if (!frame.is_povm()) throw Error(ErrorCode::not_a_povm, "instrument needs a POVM frame");
  std::vector<Superoperator> maps;
  maps.reserve(frame.size());
  const double scale = 1.0 / static_cast<double>(d_out);
  for (const auto& k : frame.elements()) maps.emplace_back(Operator(k.matrix() * scale, {d_in, d_out}), d_in, d_out);
  return Instrument(std::move(maps), tol);
}

/// The snapshotting instrument on C^d: built from the IC-POVM on C^d (x) C^d.
inline Instrument snapshot_instrument(std::size_t d, const Tolerances& tol = {}) {
  return instrument_from_frame(ic_povm(d * d, tol), d, d, tol);
}

/// Projective measurement instrument rho -> P_a rho P_a.
inline Instrument projective_instrument(const OperatorFrame& frame, const Tolerances& tol = {}) {
  std::vector<Superoperator> maps;
  for (const auto& p : frame.elements()) maps.push_back(from_kraus({p.matrix()}));
  return Instrument(std::move(maps), tol);
}

struct SnapshotDecomposition {
  Vector chi;
  double residual = 0;  // ||sum_a chi_a Phi_a - Phi_target||_2
};

/// chi with sum_a chi_a I_a = target, from the instrument's Choi Gram system.
inline SnapshotDecomposition decompose(const Superoperator& target, const Instrument& inst) {
  if (target.d_in() != inst.d_in() || target.d_out() != inst.d_out()) {
    throw Error(ErrorCode::dimension_mismatch, "target and instrument shapes differ");
  }
  const auto m = static_cast<Eigen::Index>(inst.size());
  Vector rhs(m);
  for (Eigen::Index a = 0; a < m; ++a) rhs(a) = hs_inner(inst[a].choi().matrix(), target.choi().matrix());
  SnapshotDecomposition out;
  out.chi = inst.solve_gram(rhs);
  Matrix recon = Matrix::Zero(target.choi().matrix().rows(), target.choi().matrix().cols());
  for (Eigen::Index a = 0; a < m; ++a) recon += out.chi(a) * inst[a].choi().matrix();
  out.residual = (recon - target.choi().matrix()).norm();
  return out;
}

/// sum_a chi_a I_a as a superoperator.
inline Superoperator recombine(const Vector& chi, const Instrument& inst) {
  Matrix acc = Matrix::Zero(static_cast<Eigen::Index>(inst.d_in() * inst.d_out()),
                            static_cast<Eigen::Index>(inst.d_in() * inst.d_out()));
  for (std::size_t a = 0; a < inst.size(); ++a) acc += chi(static_cast<Eigen::Index>(a)) * inst[a].choi().matrix();
  return {Operator(std::move(acc), {inst.d_in(), inst.d_out()}), inst.d_in(), inst.d_out()};
}

// ---------------------------------------------------------------------------
// Phase-space operations

enum class Side { left, right, doubled };

inline std::string to_string(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::doubled: return "doubled";
  }
  return "right";
}

/// right: rho K_b; left: K_b rho; doubled: K_a rho K_b at index a * m + b.
inline std::vector<Superoperator> phase_space_superops(const OperatorFrame& frame, Side side) {
  const std::size_t d = frame.d();
  std::vector<Superoperator> out;
  const auto& ks = frame.elements();
  switch (side) {
    case Side::right:
      for (const auto& k : ks) out.push_back(choi_of([&](const Matrix& r) { return Matrix(r * k.matrix()); }, d, d));
      break;
    case Side::left:
      for (const auto& k : ks) out.push_back(choi_of([&](const Matrix& r) { return Matrix(k.matrix() * r); }, d, d));
      break;
    case Side::doubled:
      for (const auto& ka : ks)
        for (const auto& kb : ks)
          out.push_back(choi_of([&](const Matrix& r) { return Matrix(ka.matrix() * r * kb.matrix()); }, d, d));
      break;
  }
  return out;
}

// Serialization: the Operator format plus "d_in"/"d_out".

inline void to_json(nlohmann::json& j, const Superoperator& s) {
  j = nlohmann::json(s.choi());
  j["d_in"] = s.d_in();
  j["d_out"] = s.d_out();
}

inline Superoperator superoperator_from_json(const nlohmann::json& j) {
  return {j.get<Operator>(), j.at("d_in").get<std::size_t>(), j.at("d_out").get<std::size_t>()};
}

inline void to_json(nlohmann::json& j, const Instrument& inst) {
  j = nlohmann::json{{"d_in", inst.d_in()}, {"d_out", inst.d_out()}, {"maps", inst.maps()}};
}

inline Instrument instrument_from_json(const nlohmann::json& j, const Tolerances& tol = {}) {
  std::vector<Superoperator> maps;
  for (const auto& m : j.at("maps")) maps.push_back(superoperator_from_json(m));
  return Instrument(std::move(maps), tol);
}

}  // namespace tst
