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

// Temporal state tomography: postprocessing of trajectory frequencies,
// channel extraction, the physical fit and the sample planner.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tst/simulate.hpp"
#include "tst/tqd.hpp"

namespace tst {

// ---------------------------------------------------------------------------
// Postprocessing

/// Per-step coefficients chi^{(k)} (phase operations x instrument outcomes)
/// and, for reconstructible variants, the contracted operators
/// T^{(k)}_alpha = sum_beta G_beta chi^{(k)}_{beta, alpha}.
struct Postprocessing {
  Variant variant;
  std::vector<OperatorFrame> frames;  // by time
  InstrumentSchedule schedule;
  std::vector<Matrix> chi;                  // by time
  std::vector<std::vector<Matrix>> t_ops;   // by time; empty for doubled
  std::vector<double> residuals;            // worst decomposition residual per time
  double t_norm = std::numeric_limits<double>::quiet_NaN();

  Dims instrument_outcomes() const { return schedule.outcomes(); }
  std::size_t trajectories() const { return schedule.trajectories(); }
  bool reconstructs_state() const { return !t_ops.empty(); }
};

/// chi^{(k)} for arbitrary target families; row b holds the coefficients of target b.
inline std::vector<Matrix> snapshot_coefficients(const std::vector<std::vector<Superoperator>>& targets,
                                                 const InstrumentSchedule& schedule, std::vector<double>* residuals = nullptr) {
  if (targets.size() != schedule.times()) throw Error(ErrorCode::dimension_mismatch, "one target family per time required");
  std::vector<Matrix> chi;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& inst = schedule.steps[k];
    Matrix c(static_cast<Eigen::Index>(targets[k].size()), static_cast<Eigen::Index>(inst.size()));
    double worst = 0;
    for (std::size_t b = 0; b < targets[k].size(); ++b) {
      const auto dec = decompose(targets[k][b], inst);
      c.row(static_cast<Eigen::Index>(b)) = dec.chi.transpose();
      worst = std::max(worst, dec.residual);
    }
    chi.push_back(std::move(c));
    if (residuals) residuals->push_back(worst);
  }
  return chi;
}

/// Largest singular value of the matrix whose columns are vec(T_alpha).
inline double factor_norm(const std::vector<Matrix>& ops) {
  const Eigen::Index n = ops.front().size();
  Matrix cols(n, static_cast<Eigen::Index>(ops.size()));
  for (std::size_t a = 0; a < ops.size(); ++a) cols.col(static_cast<Eigen::Index>(a)) = ops[a].reshaped();
  Eigen::JacobiSVD<Matrix> svd(cols);
  return svd.singularValues()(0);
}

inline Postprocessing build_postprocessing(const std::vector<OperatorFrame>& frames, const InstrumentSchedule& schedule,
                                           Variant variant) {
  if (frames.size() != schedule.times()) throw Error(ErrorCode::dimension_mismatch, "one frame per time required");
  Postprocessing pp;
  pp.variant = variant;
  pp.frames = frames;
  pp.schedule = schedule;
  std::vector<std::vector<Superoperator>> targets;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (schedule.steps[k].d_in() != frames[k].d() || schedule.steps[k].d_out() != frames[k].d()) {
      throw Error(ErrorCode::dimension_mismatch, "instrument and frame dimensions differ at time " + std::to_string(k));
    }
    targets.push_back(phase_space_superops(frames[k], variant.side));
  }
  pp.chi = snapshot_coefficients(targets, schedule, &pp.residuals);

  const bool ic = std::all_of(frames.begin(), frames.end(), [](const auto& f) { return f.is_ic() && f.has_dual(); });
  if (ic && variant.side != Side::doubled) {
    pp.t_norm = 1.0;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto& duals = frames[k].dual();
      std::vector<Matrix> t;
      for (Eigen::Index a = 0; a < pp.chi[k].cols(); ++a) {
        Matrix acc = Matrix::Zero(duals.front().matrix().rows(), duals.front().matrix().cols());
        for (Eigen::Index b = 0; b < pp.chi[k].rows(); ++b) acc += pp.chi[k](b, a) * duals[static_cast<std::size_t>(b)].matrix();
        t.push_back(std::move(acc));
      }
      pp.t_norm *= factor_norm(t);
      pp.t_ops.push_back(std::move(t));
    }
  }
  return pp;
}

namespace detail {

inline void check_outcomes(const TrajectoryDistribution& p, const Postprocessing& pp) {
  if (p.outcomes != pp.instrument_outcomes()) {
    throw Error(ErrorCode::dimension_mismatch, "trajectory distribution does not match the schedule");
  }
}

}  // namespace detail

/// Q(beta) = sum_alpha prod_k chi^{(k)}_{beta_k, alpha_k} p(alpha), contracted one time at a time.
inline Tqd estimate_tqd(const TrajectoryDistribution& p, const Postprocessing& pp) {
  detail::check_outcomes(p, pp);
  Vector values = p.p.cast<cplx>();
  Dims counts = p.outcomes;
  for (std::size_t k = 0; k < pp.chi.size(); ++k) {
    values = detail::mode_product(values, counts, k, pp.chi[k]);
    counts[k] = static_cast<std::size_t>(pp.chi[k].rows());
  }
  Tqd q{pp.variant.kd(), pp.frames, counts, std::move(values)};
  return pp.variant.mh ? mh_part(q) : q;
}

/// Upsilon_hat = sum_alpha p(alpha) T^{(n)}_{alpha_n} (x) ... (x) T^{(0)}_{alpha_0}.
inline TemporalState estimate_state(const TrajectoryDistribution& p, const Postprocessing& pp) {
  detail::check_outcomes(p, pp);
  if (!pp.reconstructs_state()) {
    throw Error(ErrorCode::not_informationally_complete, "postprocessing has no state reconstruction");
  }
  Dims dims;
  for (auto it = pp.frames.rbegin(); it != pp.frames.rend(); ++it) dims.push_back(it->d());
  TemporalState s{Operator(detail::multilinear_synthesis(p.p.cast<cplx>(), pp.t_ops), std::move(dims)),
                  pp.variant.kd()};
  return pp.variant.mh ? mh_part(s) : s;
}

// ---------------------------------------------------------------------------
// Projections onto physical sets

namespace detail {

/// Euclidean projection of v onto the probability simplex.
inline RealVector project_simplex(const RealVector& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double acc = 0, theta = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc += u[i];
    const double t = (acc - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

inline Matrix project_psd(const Matrix& x) {
  const Matrix h = 0.5 * (x + x.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const RealVector w = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * w.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
}

/// Tr_out for a Choi matrix on (in, out).
inline Matrix trace_out(const Matrix& x, Eigen::Index d_in, Eigen::Index d_out) {
  Matrix r = Matrix::Zero(d_in, d_in);
  for (Eigen::Index i = 0; i < d_in; ++i)
    for (Eigen::Index j = 0; j < d_in; ++j) r(i, j) = x.block(i * d_out, j * d_out, d_out, d_out).trace();
  return r;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// A (x) I_out.
inline Matrix lift_in(const Matrix& a, Eigen::Index d_out) { return kron(a, Matrix::Identity(d_out, d_out)); }

/// Orthogonal projection onto the affine set Tr_out X = I.
inline Matrix project_tp(const Matrix& x, Eigen::Index d_in, Eigen::Index d_out) {
  const Matrix excess = trace_out(x, d_in, d_out) - Matrix::Identity(d_in, d_in);
  return x - lift_in(excess, d_out) / static_cast<double>(d_out);
}

}  // namespace detail

/// Nearest density matrix in Schatten-2 distance.
inline Operator project_state(const Operator& x) {
  const Matrix h = x.hermitian_part().matrix();
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const RealVector w = detail::project_simplex(es.eigenvalues());
  return {es.eigenvectors() * w.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint(), x.dims()};
}

/// CPTP projection by Dykstra alternation between the PSD cone and the
/// trace-preserving affine set, finished by an exact trace-preserving rescaling.
inline Superoperator project_cptp(const Superoperator& s, int max_iterations = 500, double tol = 1e-13) {
  const auto di = static_cast<Eigen::Index>(s.d_in());
  const auto dout = static_cast<Eigen::Index>(s.d_out());
  Matrix x = s.choi().hermitian_part().matrix();
  Matrix p = Matrix::Zero(x.rows(), x.cols());
  Matrix q = Matrix::Zero(x.rows(), x.cols());
  for (int it = 0; it < max_iterations; ++it) {
    const Matrix a = detail::project_psd(x + p);
    p = x + p - a;
    const Matrix next = detail::project_tp(a + q, di, dout);
    q = a + q - next;
    const double change = (next - x).norm();
    x = next;
    if (change < tol * (1.0 + x.norm())) break;
  }
  Matrix y = detail::project_psd(x);
  Matrix r = detail::trace_out(y, di, dout);
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (r + r.adjoint()));
  if (es.eigenvalues().minCoeff() < 1e-12) {
    y += 1e-12 * Matrix::Identity(y.rows(), y.cols());
    r = detail::trace_out(y, di, dout);
    es.compute(0.5 * (r + r.adjoint()));
  }
  const Matrix r_is = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().cast<cplx>().asDiagonal() *
                      es.eigenvectors().adjoint();
  const Matrix l = detail::lift_in(r_is, dout);
  Matrix z = l * y * l.adjoint();
  z = 0.5 * (z + z.adjoint());
  return {Operator(std::move(z), {s.d_in(), s.d_out()}), s.d_in(), s.d_out()};
}

// ---------------------------------------------------------------------------
// Channel extraction

struct ChannelExtraction {
  Operator rho0;
  std::vector<Superoperator> channels;
  std::vector<std::size_t> input_rank;   // rank of the reduced state feeding each channel
  std::vector<std::string> completion;   // "none", "schur" or "projection"
};

namespace detail {

/// Input factor (t_k) ... in the operator's descending factor order.
inline std::size_t factor_of_time(std::size_t times, std::size_t k) { return times - 1 - k; }

/// Completes (Pbar (x) I) Phi outside the support Pbar of the input.
/// In the eigenbasis of Pbar the Choi matrix is [[A, B], [B^dag, C]] and C is
/// filled with B^dag A^+ B plus the trace deficit spread uniformly over outputs.
inline std::optional<Matrix> schur_completion(const Matrix& raw, const Matrix& u, std::size_t rank, Eigen::Index d_in,
                                              Eigen::Index d_out, const Tolerances& tol) {
  const Matrix rot = lift_in(u, d_out);  // columns: support first
  const Matrix h = rot.adjoint() * raw * rot;
  const Eigen::Index ks = static_cast<Eigen::Index>(rank) * d_out;
  const Eigen::Index kc = d_in * d_out - ks;
  Matrix a = h.topLeftCorner(ks, ks);
  a = 0.5 * (a + a.adjoint());
  const Matrix b = h.topRightCorner(ks, kc);
  const Matrix sc = b.adjoint() * pinv(a, tol.pinv) * b;
  const Eigen::Index nc = d_in - static_cast<Eigen::Index>(rank);
  const Matrix deficit = Matrix::Identity(nc, nc) - trace_out(sc, nc, d_out);
  Matrix c = sc + lift_in(deficit, d_out) / static_cast<double>(d_out);
  Matrix full(d_in * d_out, d_in * d_out);
  full.topLeftCorner(ks, ks) = a;
  full.topRightCorner(ks, kc) = b;
  full.bottomLeftCorner(kc, ks) = b.adjoint();
  full.bottomRightCorner(kc, kc) = 0.5 * (c + c.adjoint());
  Matrix phi = rot * full * rot.adjoint();
  phi = 0.5 * (phi + phi.adjoint());
  if (!is_psd(Operator(phi), tol.psd)) return std::nullopt;
  return phi;
}

}  // namespace detail

/// Initial state and channels from a right-KD temporal state. Each channel is
/// read off the two-time marginal on (t_k, t_{k-1}) by inverting the reduced
/// state at t_{k-1}; where that state is rank deficient the unconstrained part
/// of the Choi matrix is completed (see schur_completion).
inline ChannelExtraction extract_channels(const TemporalState& r, const Dims& dims, const Tolerances& tol = {}) {
  if (r.variant.side != Side::right) throw Error(ErrorCode::invalid_argument, "channel extraction needs a right variant");
  if (r.time_dims() != dims) throw Error(ErrorCode::dimension_mismatch, "temporal state dims do not match");
  const std::size_t n = dims.size();
  ChannelExtraction out{partial_trace(r.op, {detail::factor_of_time(n, 0)}), {}, {}, {}};
  out.rho0 = out.rho0.with_dims({dims[0]});

  for (std::size_t k = 1; k < n; ++k) {
    const auto di = static_cast<Eigen::Index>(dims[k - 1]);
    const auto dout = static_cast<Eigen::Index>(dims[k]);
    const Operator two = partial_trace(r.op, {detail::factor_of_time(n, k), detail::factor_of_time(n, k - 1)});
    const Matrix rho = partial_trace(r.op, {detail::factor_of_time(n, k - 1)}).hermitian_part().matrix();

    Eigen::SelfAdjointEigenSolver<Matrix> es(rho);
    const double wmax = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < di; ++i)
      if (es.eigenvalues()(i) > tol.pinv * wmax) ++rank;

    // two = Phi~ (I_out (x) rho) on (out, in).
    const Matrix rinv = pinv(rho, tol.pinv);
    const Matrix tilde = two.matrix() * detail::kron(Matrix::Identity(dout, dout), rinv);
    const Operator raw_op = partial_transpose(permute_factors(Operator(tilde, {dims[k], dims[k - 1]}), {1, 0}), 0);
    Matrix raw = raw_op.matrix();

    std::string how = "none";
    if (rank < static_cast<std::size_t>(di)) {
      // Support of Pbar = (rho rho^+)^T is spanned by the conjugated eigenvectors.
      Matrix u(di, di);
      Eigen::Index col = 0;
      for (Eigen::Index i = di; i-- > 0;)
        if (es.eigenvalues()(i) > tol.pinv * wmax) u.col(col++) = es.eigenvectors().col(i).conjugate();
      for (Eigen::Index i = di; i-- > 0;)
        if (!(es.eigenvalues()(i) > tol.pinv * wmax)) u.col(col++) = es.eigenvectors().col(i).conjugate();
      auto done = detail::schur_completion(raw, u, rank, di, dout, tol);
      if (done) {
        raw = *done;
        how = "schur";
      } else {
        raw = project_cptp({Operator(raw, {dims[k - 1], dims[k]}), dims[k - 1], dims[k]}).choi().matrix();
        how = "projection";
      }
    }
    out.channels.emplace_back(Operator(std::move(raw), {dims[k - 1], dims[k]}), dims[k - 1], dims[k]);
    out.input_rank.push_back(rank);
    out.completion.push_back(how);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Physical fit

struct FitOptions {
  int max_iterations = 200;       // outer block sweeps
  int inner_iterations = 100;     // projected gradient steps per block
  int projection_iterations = 500;
  double fit_tol = 1e-10;         // relative objective decrease counted as stalled
  int patience = 3;               // consecutive stalled sweeps before stopping
  bool operator==(const FitOptions&) const = default;
};

struct FitDiagnostics {
  double linear_error = std::numeric_limits<double>::quiet_NaN();  // ||Upsilon_hat - Upsilon_true||_2 when known
  double initial_residual = 0;
  double fit_residual = 0;            // ||Upsilon_fit - Upsilon_hat||_2
  double fit_residual_trace = 0;      // same in the trace norm
  int iterations = 0;
  bool converged = false;
  bool max_iterations_reached = false;
  std::vector<double> objective;      // squared residual after each sweep, starting at the initialization
  std::vector<std::string> completion;
  std::vector<double> condition;      // per-time instrument Gram condition numbers, when known
};

struct ReconstructionResult {
  TemporalState upsilon_hat;
  TemporalState upsilon_fit;
  Operator rho0_hat;
  std::vector<Superoperator> channels_hat;
  FitDiagnostics diagnostics;
};

namespace detail {

/// Orthonormal basis of Hermitian d x d matrices under the HS inner product.
inline std::vector<Matrix> hermitian_basis(Eigen::Index d) {
  std::vector<Matrix> out;
  const double s = 1.0 / std::sqrt(2.0);
  for (Eigen::Index j = 0; j < d; ++j) {
    Matrix e = Matrix::Zero(d, d);
    e(j, j) = 1.0;
    out.push_back(e);
  }
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index k = j + 1; k < d; ++k) {
      Matrix re = Matrix::Zero(d, d), im = Matrix::Zero(d, d);
      re(j, k) = re(k, j) = s;
      im(j, k) = cplx(0, -s);
      im(k, j) = cplx(0, s);
      out.push_back(re);
      out.push_back(im);
    }
  return out;
}

inline RealVector coordinates(const Matrix& x, const std::vector<Matrix>& basis) {
  RealVector c(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) c(static_cast<Eigen::Index>(i)) = hs_inner(basis[i], x).real();
  return c;
}

inline Matrix from_coordinates(const RealVector& c, const std::vector<Matrix>& basis) {
  Matrix x = Matrix::Zero(basis.front().rows(), basis.front().cols());
  for (std::size_t i = 0; i < basis.size(); ++i) x += c(static_cast<Eigen::Index>(i)) * basis[i];
  return x;
}

inline RealVector real_vec(const Matrix& x) {
  RealVector v(2 * x.size());
  v << x.real().reshaped(), x.imag().reshaped();
  return v;
}

/// Temporal state of the given variant generated by (rho, channels).
inline Matrix model(const Matrix& rho, const std::vector<Matrix>& chois, const Dims& dims, Variant variant) {
  Operator acc(rho, {dims[0]});
  for (std::size_t k = 0; k < chois.size(); ++k) {
    const Superoperator e(Operator(chois[k], {dims[k], dims[k + 1]}), dims[k], dims[k + 1]);
    acc = link_product(e, acc).op;
  }
  Matrix m = acc.matrix();
  if (variant.side == Side::left) m.adjointInPlace();
  if (variant.mh) m = 0.5 * (m + m.adjoint()).eval();
  return m;
}

}  // namespace detail

/// Nearest temporal state generated by a density matrix and CPTP channels,
/// by projected alternating descent over (rho0, Phi_1, ..., Phi_n).
inline ReconstructionResult fit_temporal_state(const TemporalState& upsilon_hat, const Dims& dims,
                                               const FitOptions& opt = {}, const Tolerances& tol = {}) {
  if (upsilon_hat.time_dims() != dims) throw Error(ErrorCode::dimension_mismatch, "temporal state dims do not match");
  if (upsilon_hat.variant.side == Side::doubled) {
    throw Error(ErrorCode::invalid_argument, "doubled temporal states are not fitted");
  }
  const std::size_t n = dims.size();
  const Variant variant = upsilon_hat.variant;
  const RealVector target = detail::real_vec(upsilon_hat.op.matrix());

  // Initialization: channels extracted from the estimate, projected to the physical set.
  Matrix rho;
  std::vector<Matrix> chois;
  std::vector<std::string> completion;
  try {
    const TemporalState as_right{upsilon_hat.variant.side == Side::left
                                     ? Operator(upsilon_hat.op.matrix().adjoint(), upsilon_hat.op.dims())
                                     : upsilon_hat.op,
                                 Variant{Side::right, false}};
    const auto ex = extract_channels(as_right, dims, tol);
    rho = project_state(ex.rho0).matrix();
    for (const auto& c : ex.channels) chois.push_back(project_cptp(c, opt.projection_iterations).choi().matrix());
    completion = ex.completion;
  } catch (const Error&) {
    rho = Matrix::Identity(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[0])) /
          static_cast<double>(dims[0]);
    chois.clear();
    completion.assign(n - 1, "fallback");
    for (std::size_t k = 1; k < n; ++k) {
      const auto c = dims[k - 1] == dims[k] ? channels::identity(dims[k])
                                            : channels::replacement(dims[k - 1], Operator::identity({dims[k]}) *
                                                                                      cplx(1.0 / static_cast<double>(dims[k])));
      chois.push_back(c.choi().matrix());
    }
  }

  auto objective = [&](const Matrix& r, const std::vector<Matrix>& cs) {
    return (detail::real_vec(detail::model(r, cs, dims, variant)) - target).squaredNorm();
  };

  FitDiagnostics diag;
  diag.completion = completion;
  double f = objective(rho, chois);
  diag.initial_residual = std::sqrt(f);
  diag.objective.push_back(f);

  // Block b = 0 is rho0, block b >= 1 is Phi_b.
  auto block_value = [&](std::size_t b) -> Matrix& { return b == 0 ? rho : chois[b - 1]; };
  auto project_block = [&](std::size_t b, const Matrix& x) -> Matrix {
    if (b == 0) return project_state(Operator(x, {dims[0]})).matrix();
    const Superoperator s(Operator(x, {dims[b - 1], dims[b]}), dims[b - 1], dims[b]);
    return project_cptp(s, opt.projection_iterations).choi().matrix();
  };

  int stalled = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t b = 0; b < n; ++b) {
      const Matrix saved = block_value(b);
      const auto basis = detail::hermitian_basis(saved.rows());
      RealMatrix a(target.size(), static_cast<Eigen::Index>(basis.size()));
      for (std::size_t i = 0; i < basis.size(); ++i) {
        block_value(b) = basis[i];
        a.col(static_cast<Eigen::Index>(i)) = detail::real_vec(detail::model(rho, chois, dims, variant));
      }
      block_value(b) = saved;
      Eigen::JacobiSVD<RealMatrix> svd(a);
      const double smax = svd.singularValues()(0);
      if (!(smax > 0)) continue;
      const double step = 1.0 / (smax * smax);

      RealVector x = detail::coordinates(saved, basis);
      Matrix current = saved;
      for (int inner = 0; inner < opt.inner_iterations; ++inner) {
        const RealVector grad = a.transpose() * (a * x - target);
        const Matrix next = project_block(b, detail::from_coordinates(x - step * grad, basis));
        const RealVector xn = detail::coordinates(next, basis);
        const double move = (xn - x).norm();
        x = xn;
        current = next;
        if (move < 1e-14 * (1.0 + x.norm())) break;
      }
      block_value(b) = current;
      const double fb = objective(rho, chois);
      if (fb > f) {
        block_value(b) = saved;
      } else {
        f = fb;
      }
    }
    diag.objective.push_back(f);
    diag.iterations = it + 1;
    const double prev = diag.objective[diag.objective.size() - 2];
    const double rel = prev > 0 ? (prev - f) / prev : 0.0;
    stalled = (rel < opt.fit_tol) ? stalled + 1 : 0;
    const bool tiny = std::sqrt(f) <= opt.fit_tol * (1.0 + target.norm());
    if (tiny || stalled >= opt.patience) {
      diag.converged = true;
      break;
    }
  }
  diag.max_iterations_reached = !diag.converged;

  ReconstructionResult res{upsilon_hat,
                           {Operator(detail::model(rho, chois, dims, variant), upsilon_hat.op.dims()), variant},
                           Operator(rho, {dims[0]}),
                           {},
                           diag};
  for (std::size_t k = 1; k < n; ++k) {
    res.channels_hat.emplace_back(Operator(chois[k - 1], {dims[k - 1], dims[k]}), dims[k - 1], dims[k]);
  }
  res.diagnostics.fit_residual = schatten_norm(res.upsilon_fit.op.matrix() - upsilon_hat.op.matrix(), Schatten::two);
  res.diagnostics.fit_residual_trace = schatten_norm(res.upsilon_fit.op.matrix() - upsilon_hat.op.matrix(), Schatten::one);
  return res;
}

inline void to_json(nlohmann::json& j, const FitDiagnostics& d) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"linear_error", num(d.linear_error)},
                     {"initial_residual", d.initial_residual},
                     {"fit_residual", d.fit_residual},
                     {"fit_residual_trace_norm", d.fit_residual_trace},
                     {"iterations", d.iterations},
                     {"converged", d.converged},
                     {"max_iterations_reached", d.max_iterations_reached},
                     {"completion", d.completion},
                     {"condition_numbers", d.condition}};
}

inline void to_json(nlohmann::json& j, const ReconstructionResult& r) {
  nlohmann::json chans = nlohmann::json::array();
  for (const auto& c : r.channels_hat) chans.push_back(c);
  j = nlohmann::json{{"variant", to_string(r.upsilon_hat.variant)},
                     {"upsilon_hat", r.upsilon_hat.op},
                     {"upsilon_fit", r.upsilon_fit.op},
                     {"rho0_hat", r.rho0_hat},
                     {"channels_hat", chans},
                     {"diagnostics", r.diagnostics}};
}

// ---------------------------------------------------------------------------
// Sample planning

struct EstimatorPlan {
  double epsilon = 0;
  double delta = 0;
  std::size_t M = 0;
  double c = 0;
  std::uint64_t N = 0;
};

/// N = ceil(c M / eps^2 log(2M / delta)).
inline EstimatorPlan plan_samples(double epsilon, double delta, std::size_t M, double c) {
  if (!(epsilon > 0 && epsilon < 1)) throw Error(ErrorCode::invalid_argument, "epsilon must lie in (0, 1)");
  if (!(delta > 0 && delta < 1)) throw Error(ErrorCode::invalid_argument, "delta must lie in (0, 1)");
  if (M < 1) throw Error(ErrorCode::invalid_argument, "M must be >= 1");
  if (!(c > 0) || !std::isfinite(c)) throw Error(ErrorCode::invalid_argument, "c must be positive");
  const double md = static_cast<double>(M);
  const double raw = c * md / (epsilon * epsilon) * std::log(2.0 * md / delta);
  const auto n = static_cast<std::uint64_t>(std::ceil(raw));
  return {epsilon, delta, M, c, std::max<std::uint64_t>(n, 1)};
}

/// Constant implied by Hoeffding plus a union bound: ||T||_2^2 / 2.
inline double theoretical_c(const Postprocessing& pp) { return pp.t_norm * pp.t_norm / 2.0; }

/// ||T||_2 sqrt(M / (2N) log(2M / delta)).
inline double epsilon_bound(double t_norm, std::size_t M, std::uint64_t N, double delta) {
  const double md = static_cast<double>(M);
  return t_norm * std::sqrt(md / (2.0 * static_cast<double>(N)) * std::log(2.0 * md / delta));
}

/// Constant from a pilot run at N0: the (1 - delta/2) quantile q of the
/// observed errors, scaled as 1/sqrt(N), gives c = N0 q^2 / (M log(2M/delta)).
inline double calibrate_c(std::vector<double> pilot_errors, std::uint64_t n0, std::size_t M, double delta) {
  if (pilot_errors.empty()) throw Error(ErrorCode::invalid_argument, "empty pilot");
  std::sort(pilot_errors.begin(), pilot_errors.end());
  const double level = 1.0 - delta / 2.0;
  const auto idx = static_cast<std::size_t>(std::ceil(level * static_cast<double>(pilot_errors.size()))) - 1;
  const double q = pilot_errors[std::min(idx, pilot_errors.size() - 1)];
  const double md = static_cast<double>(M);
  return static_cast<double>(n0) * q * q / (md * std::log(2.0 * md / delta));
}

}  // namespace tst
