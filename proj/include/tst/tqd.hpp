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

// Temporal quasiprobability distributions (TQDs) of multi-time processes and
// the temporal states they determine.
//
// Index conventions used throughout:
//  * Per-time containers (dims, frames, counts) are indexed by time k = 0..n.
//  * Flattened trajectory arrays put beta_n slowest and beta_0 fastest.
//  * Temporal-state operators carry factors time-descending (t_n, ..., t_0).

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "tst/frames.hpp"
#include "tst/qla.hpp"
#include "tst/snapshot.hpp"

namespace tst {

struct Variant {
  Side side = Side::right;
  bool mh = false;  // Margenau-Hill: real part of the Kirkwood-Dirac variant

  Variant kd() const { return {side, false}; }
  Variant as_mh() const { return {side, true}; }
  friend bool operator==(const Variant&, const Variant&) = default;
};

inline std::string to_string(const Variant& v) { return to_string(v.side) + (v.mh ? "-MH" : "-KD"); }

inline Variant variant_from_string(const std::string& s) {
  const auto dash = s.find('-');
  if (dash == std::string::npos) throw Error(ErrorCode::invalid_argument, "variant '" + s + "'");
  const std::string side = s.substr(0, dash), kind = s.substr(dash + 1);
  Variant v;
  if (side == "left") v.side = Side::left;
  else if (side == "right") v.side = Side::right;
  else if (side == "doubled") v.side = Side::doubled;
  else throw Error(ErrorCode::invalid_argument, "variant side '" + side + "'");
  if (kind == "KD") v.mh = false;
  else if (kind == "MH") v.mh = true;
  else throw Error(ErrorCode::invalid_argument, "variant kind '" + kind + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Trajectory index arithmetic

namespace detail {

/// stride[0] = 1, stride[k] = prod_{j<k} counts[j].
inline Dims trajectory_strides(const Dims& counts) {
  Dims s(counts.size(), 1);
  for (std::size_t k = 1; k < counts.size(); ++k) s[k] = s[k - 1] * counts[k - 1];
  return s;
}

/// Replaces axis k (size counts[k]) by matrix.rows() entries: out = matrix along axis k.
inline Vector mode_product(const Vector& values, const Dims& counts, std::size_t k, const Matrix& matrix) {
  if (static_cast<std::size_t>(matrix.cols()) != counts[k]) {
    throw Error(ErrorCode::dimension_mismatch, "mode product axis size");
  }
  const std::size_t inner = trajectory_strides(counts)[k];
  const std::size_t outer = product(counts) / (inner * counts[k]);
  const auto rows = static_cast<std::size_t>(matrix.rows());
  Vector out = Vector::Zero(static_cast<Eigen::Index>(outer * rows * inner));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < counts[k]; ++c) {
        const cplx w = matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        if (w == cplx(0.0)) continue;
        for (std::size_t i = 0; i < inner; ++i)
          out(static_cast<Eigen::Index>((o * rows + r) * inner + i)) +=
              w * values(static_cast<Eigen::Index>((o * counts[k] + c) * inner + i));
      }
  return out;
}

/// Tr(X (A^{(n)}_{b_n} (x) ... (x) A^{(0)}_{b_0})) for every trajectory, where
/// X carries factors (t_n..t_0) and families[k] lists the operators at time k.
inline Vector multilinear_coefficients(const Matrix& x, const std::vector<std::vector<Matrix>>& families) {
  const std::size_t top = families.size() - 1;
  const auto& fam = families[top];
  if (top == 0) {
    Vector out(static_cast<Eigen::Index>(fam.size()));
    for (std::size_t b = 0; b < fam.size(); ++b) out(static_cast<Eigen::Index>(b)) = trace_of_product(x, fam[b]);
    return out;
  }
  const Eigen::Index d = fam.front().rows();
  const Eigen::Index rest = x.rows() / d;
  std::vector<std::vector<Matrix>> lower(families.begin(), families.end() - 1);
  std::vector<Vector> parts;
  for (const auto& a : fam) {
    // Tr_first[(A (x) I) X]
    Matrix y = Matrix::Zero(rest, rest);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c)
        if (a(r, c) != cplx(0.0)) y += a(r, c) * x.block(c * rest, r * rest, rest, rest);
    parts.push_back(multilinear_coefficients(y, lower));
  }
  const Eigen::Index block = parts.front().size();
  Vector out(block * static_cast<Eigen::Index>(parts.size()));
  for (std::size_t b = 0; b < parts.size(); ++b) out.segment(static_cast<Eigen::Index>(b) * block, block) = parts[b];
  return out;
}

/// sum over trajectories of c(b) B^{(n)}_{b_n} (x) ... (x) B^{(0)}_{b_0}.
inline Matrix multilinear_synthesis(const Vector& coeffs, const std::vector<std::vector<Matrix>>& families) {
  const std::size_t top = families.size() - 1;
  const auto& fam = families[top];
  if (static_cast<std::size_t>(coeffs.size()) % fam.size() != 0) {
    throw Error(ErrorCode::dimension_mismatch, "coefficient array does not match families");
  }
  if (top == 0) {
    Matrix out = Matrix::Zero(fam.front().rows(), fam.front().cols());
    for (std::size_t b = 0; b < fam.size(); ++b) out += coeffs(static_cast<Eigen::Index>(b)) * fam[b];
    return out;
  }
  std::vector<std::vector<Matrix>> lower(families.begin(), families.end() - 1);
  const Eigen::Index block = coeffs.size() / static_cast<Eigen::Index>(fam.size());
  const Eigen::Index d = fam.front().rows();
  Matrix out;
  for (std::size_t b = 0; b < fam.size(); ++b) {
    const Matrix sub = multilinear_synthesis(coeffs.segment(static_cast<Eigen::Index>(b) * block, block), lower);
    if (out.size() == 0) out = Matrix::Zero(d * sub.rows(), d * sub.cols());
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c)
        if (fam[b](r, c) != cplx(0.0)) out.block(r * sub.rows(), c * sub.cols(), sub.rows(), sub.cols()) += fam[b](r, c) * sub;
  }
  return out;
}

inline std::vector<Matrix> matrices_of(const std::vector<Operator>& ops) {
  std::vector<Matrix> out;
  out.reserve(ops.size());
  for (const auto& o : ops) out.push_back(o.matrix());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Processes

/// Initial state plus time-ordered CPTP maps E_{t_k <- t_{k-1}}.
class TemporalProcess {
 public:
  TemporalProcess(Operator rho0, std::vector<Superoperator> channels, const Tolerances& tol = {})
      : rho0_(std::move(rho0)), channels_(std::move(channels)) {
    if (!is_psd(rho0_, tol.psd)) throw Error(ErrorCode::invalid_argument, "initial state is not PSD");
    if (std::abs(rho0_.trace() - 1.0) > tol.recon) throw Error(ErrorCode::invalid_argument, "initial state trace != 1");
    dims_.push_back(rho0_.dim());
    for (std::size_t k = 0; k < channels_.size(); ++k) {
      const auto& e = channels_[k];
      if (e.d_in() != dims_.back()) {
        throw Error(ErrorCode::dimension_mismatch, "channel " + std::to_string(k + 1) + " input dimension");
      }
      if (!e.is_cptp(tol)) throw Error(ErrorCode::invalid_argument, "channel " + std::to_string(k + 1) + " is not CPTP");
      dims_.push_back(e.d_out());
    }
  }

  const Operator& rho0() const noexcept { return rho0_; }
  const std::vector<Superoperator>& channels() const noexcept { return channels_; }
  /// (d_t0, ..., d_tn).
  const Dims& dims() const noexcept { return dims_; }
  std::size_t times() const noexcept { return dims_.size(); }
  std::size_t total_dim() const { return product(dims_); }

  /// State at time t_k without intermediate interventions.
  Operator state_at(std::size_t k) const {
    Matrix rho = rho0_.matrix();
    for (std::size_t j = 0; j < k; ++j) rho = channels_.at(j).apply(rho);
    return Operator(rho);
  }

  /// The process seen only at the listed times, with intermediate channels composed.
  TemporalProcess reduce(std::vector<std::size_t> keep, const Tolerances& tol = {}) const {
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    if (keep.empty() || keep.back() >= times()) throw Error(ErrorCode::index_out_of_range, "reduce: time index");
    std::vector<Superoperator> chans;
    for (std::size_t i = 1; i < keep.size(); ++i) {
      Superoperator acc = channels_[keep[i - 1]];
      for (std::size_t j = keep[i - 1] + 1; j < keep[i]; ++j) acc = compose(channels_[j], acc);
      chans.push_back(acc);
    }
    return {state_at(keep.front()), std::move(chans), tol};
  }

 private:
  Operator rho0_;
  std::vector<Superoperator> channels_;
  Dims dims_;
};

namespace detail {

/// Value of Tr[F^{(n)}_{b_n} o E_n o ... o E_1 o F^{(0)}_{b_0}(rho)] for every
/// trajectory. Depth-first over times so shared prefixes are evaluated once.
inline Vector evaluate_trajectories(const TemporalProcess& p, const std::vector<std::vector<Superoperator>>& families) {
  if (families.size() != p.times()) throw Error(ErrorCode::dimension_mismatch, "one family per time required");
  Dims counts;
  for (std::size_t k = 0; k < families.size(); ++k) {
    for (const auto& s : families[k]) {
      if (s.d_in() != p.dims()[k] || s.d_out() != p.dims()[k]) {
        throw Error(ErrorCode::dimension_mismatch, "operation at time " + std::to_string(k) + " has the wrong dimension");
      }
    }
    counts.push_back(families[k].size());
  }
  const Dims strides = trajectory_strides(counts);
  const std::size_t last = families.size() - 1;
  Vector out = Vector::Zero(static_cast<Eigen::Index>(product(counts)));

  const auto d0 = static_cast<Eigen::Index>(p.dims()[0]);
  const Vector start = Eigen::Map<const Vector>(p.rho0().matrix().data(), d0 * d0);

  auto recurse = [&](auto&& self, std::size_t k, const Vector& state, std::size_t offset) -> void {
    const auto d = static_cast<Eigen::Index>(p.dims()[k]);
    for (std::size_t b = 0; b < families[k].size(); ++b) {
      const Vector after = families[k][b].transfer() * state;
      const std::size_t idx = offset + b * strides[k];
      if (k == last) {
        cplx tr = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) tr += after(i + d * i);
        out(static_cast<Eigen::Index>(idx)) = tr;
      } else {
        self(self, k + 1, Vector(p.channels()[k].transfer() * after), idx);
      }
    }
  };
  recurse(recurse, 0, start, 0);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TQDs and temporal states

/// Quasiprobabilities over the temporal phase space. For doubled variants the
/// per-time index is the ordered pair (a, b) flattened as a * m + b.
struct Tqd {
  Variant variant;
  std::vector<OperatorFrame> frames;  // by time
  Dims outcomes;                      // outcomes per time, by time
  Vector values;                      // beta_n slowest

  std::size_t times() const { return outcomes.size(); }
  /// Outcome counts (m_n, ..., m_0), matching the flattening order.
  Dims outcome_counts() const { return {outcomes.rbegin(), outcomes.rend()}; }

  /// Entry at per-time indices listed by time (beta_0 first).
  cplx at(const std::vector<std::size_t>& beta_by_time) const {
    const Dims s = detail::trajectory_strides(outcomes);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < outcomes.size(); ++k) idx += beta_by_time.at(k) * s[k];
    return values(static_cast<Eigen::Index>(idx));
  }

  cplx total() const { return values.sum(); }
};

struct TemporalState {
  Operator op;  // factors (t_n, ..., t_0)
  Variant variant;

  /// (d_t0, ..., d_tn).
  Dims time_dims() const { return {op.dims().rbegin(), op.dims().rend()}; }
};

inline Tqd mh_part(const Tqd& q) {
  Tqd out = q;
  out.variant = q.variant.as_mh();
  out.values = q.values.real().cast<cplx>();
  return out;
}

inline TemporalState mh_part(const TemporalState& s) { return {s.op.hermitian_part(), s.variant.as_mh()}; }

/// Q(beta_n, ..., beta_0) = Tr[P_{beta_n} o E_n o ... o E_1 o P_{beta_0}(rho)].
inline Tqd exact_tqd(const TemporalProcess& p, const std::vector<OperatorFrame>& frames, Variant variant) {
  if (frames.size() != p.times()) throw Error(ErrorCode::dimension_mismatch, "one frame per time required");
  std::vector<std::vector<Superoperator>> families;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].d() != p.dims()[k]) {
      throw Error(ErrorCode::dimension_mismatch, "frame at time " + std::to_string(k) + " has the wrong dimension");
    }
    families.push_back(phase_space_superops(frames[k], variant.side));
  }
  Tqd q;
  q.variant = variant.kd();
  q.frames = frames;
  for (const auto& f : families) q.outcomes.push_back(f.size());
  q.values = detail::evaluate_trajectories(p, families);
  return variant.mh ? mh_part(q) : q;
}

/// Sums out every time not listed in keep.
inline Tqd marginal(const Tqd& q, std::vector<std::size_t> keep) {
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  if (keep.empty() || keep.back() >= q.times()) throw Error(ErrorCode::index_out_of_range, "marginal: time index");
  Vector values = q.values;
  Dims counts = q.outcomes;
  // Remove axes from the highest time down so lower axis positions stay valid.
  for (std::size_t k = q.times(); k-- > 0;) {
    if (std::binary_search(keep.begin(), keep.end(), k)) continue;
    values = detail::mode_product(values, counts, k, Matrix::Ones(1, static_cast<Eigen::Index>(counts[k])));
    counts.erase(counts.begin() + static_cast<std::ptrdiff_t>(k));
  }
  Tqd out;
  out.variant = q.variant;
  for (auto k : keep) out.frames.push_back(q.frames[k]);
  out.outcomes = std::move(counts);
  out.values = std::move(values);
  return out;
}

/// Q(beta) = Tr(Upsilon K_{beta_n} (x) ... (x) K_{beta_0}).
inline Tqd born_rule(const TemporalState& s, const std::vector<OperatorFrame>& frames) {
  if (s.variant.side == Side::doubled) {
    throw Error(ErrorCode::invalid_argument, "the Born rule is implemented for left/right variants only");
  }
  const Dims td = s.time_dims();
  if (frames.size() != td.size()) throw Error(ErrorCode::dimension_mismatch, "one frame per time required");
  std::vector<std::vector<Matrix>> fam;
  Tqd q;
  q.variant = s.variant;
  q.frames = frames;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].d() != td[k]) throw Error(ErrorCode::dimension_mismatch, "frame/state dimension at time " + std::to_string(k));
    fam.push_back(detail::matrices_of(frames[k].elements()));
    q.outcomes.push_back(frames[k].size());
  }
  q.values = detail::multilinear_coefficients(s.op.matrix(), fam);
  if (s.variant.mh) q.values = q.values.real().cast<cplx>();
  return q;
}

namespace detail {

inline void require_ic(const Tqd& q) {
  for (std::size_t k = 0; k < q.frames.size(); ++k) {
    if (!q.frames[k].is_ic() || !q.frames[k].has_dual()) {
      throw Error(ErrorCode::not_informationally_complete, "frame at time " + std::to_string(k) + " is not IC");
    }
  }
  if (q.variant.side == Side::doubled) {
    throw Error(ErrorCode::invalid_argument, "doubled temporal states are not reconstructed");
  }
}

inline Dims descending(const std::vector<OperatorFrame>& frames) {
  Dims d;
  for (auto it = frames.rbegin(); it != frames.rend(); ++it) d.push_back(it->d());
  return d;
}

}  // namespace detail

/// Upsilon = sum_beta (G_{beta_n} (x) ... (x) G_{beta_0}) Q(beta) with canonical duals.
inline TemporalState state_from_tqd(const Tqd& q) {
  detail::require_ic(q);
  std::vector<std::vector<Matrix>> fam;
  for (const auto& f : q.frames) fam.push_back(detail::matrices_of(f.dual()));
  return {Operator(detail::multilinear_synthesis(q.values, fam), detail::descending(q.frames)), q.variant};
}

/// Pauli correlators T^{mu_n..mu_0} = Tr(Upsilon sigma_{mu_n} (x) ... (x) sigma_{mu_0}),
/// flattened with mu_n slowest, obtained by expanding each Pauli in the frame.
inline Vector pauli_correlators(const Tqd& q, const Tolerances& tol = {}) {
  detail::require_ic(q);
  Vector values = q.values;
  Dims counts = q.outcomes;
  for (std::size_t k = 0; k < q.frames.size(); ++k) {
    if (q.frames[k].d() != 2) throw Error(ErrorCode::not_qubit, "time " + std::to_string(k) + " is not a qubit");
    Matrix c(4, static_cast<Eigen::Index>(q.frames[k].size()));
    const auto sig = pauli::all();
    for (Eigen::Index mu = 0; mu < 4; ++mu) c.row(mu) = expand(sig[static_cast<std::size_t>(mu)], q.frames[k], tol).transpose();
    values = detail::mode_product(values, counts, k, c);
    counts[k] = 4;
  }
  return values;
}

/// Upsilon = 2^{-(n+1)} sum_mu T^{mu} sigma_{mu_n} (x) ... (x) sigma_{mu_0}.
inline TemporalState temporal_bloch(const Tqd& q, const Tolerances& tol = {}) {
  const Vector t = pauli_correlators(q, tol);
  std::vector<Matrix> half;
  for (const auto& s : pauli::all()) half.push_back(s.matrix() * 0.5);
  std::vector<std::vector<Matrix>> fam(q.times(), half);
  return {Operator(detail::multilinear_synthesis(t, fam), Dims(q.times(), 2)), q.variant};
}

/// Right-KD link product: the state at a new time t_out is attached through
/// (Phi~ (x) I_rest)(I_out (x) Upsilon_prev), where Phi~ is the input-partially
/// transposed Choi matrix reordered to (out, in).
inline TemporalState link_product(const Superoperator& e, const Operator& prev) {
  if (prev.dims().front() != e.d_in()) {
    throw Error(ErrorCode::dimension_mismatch, "channel input does not match the latest time");
  }
  const Operator pt = permute_factors(partial_transpose(e.choi(), 0), {1, 0});
  const std::size_t rest = prev.dim() / e.d_in();
  Dims dims{e.d_out()};
  dims.insert(dims.end(), prev.dims().begin(), prev.dims().end());

  const auto dout = static_cast<Eigen::Index>(e.d_out());
  const auto din = static_cast<Eigen::Index>(e.d_in());
  const auto r = static_cast<Eigen::Index>(rest);
  // (pt (x) I_rest)
  Matrix left = Matrix::Zero(dout * din * r, dout * din * r);
  for (Eigen::Index i = 0; i < dout * din; ++i)
    for (Eigen::Index j = 0; j < dout * din; ++j)
      if (pt(i, j) != cplx(0.0)) left.block(i * r, j * r, r, r) = pt(i, j) * Matrix::Identity(r, r);
  // (I_out (x) prev)
  Matrix right = Matrix::Zero(dout * din * r, dout * din * r);
  for (Eigen::Index o = 0; o < dout; ++o) right.block(o * din * r, o * din * r, din * r, din * r) = prev.matrix();
  return {Operator(left * right, std::move(dims)), Variant{Side::right, false}};
}

inline TemporalState link_product(const Superoperator& e, const TemporalState& prev) {
  if (prev.variant != Variant{Side::right, false}) {
    throw Error(ErrorCode::invalid_argument, "link product is defined for right-KD temporal states");
  }
  return link_product(e, prev.op);
}

/// E_n * (... * (E_1 * rho)).
inline TemporalState link_state(const TemporalProcess& p) {
  TemporalState s{p.rho0(), Variant{Side::right, false}};
  for (const auto& e : p.channels()) s = link_product(e, s.op);
  return s;
}

struct Nonclassicality {
  double negativity = 0;   // sum of max(-Re Q, 0)
  double imaginarity = 0;  // sum of |Im Q|
};

inline Nonclassicality nonclassicality(const Tqd& q) {
  Nonclassicality n;
  for (Eigen::Index i = 0; i < q.values.size(); ++i) {
    n.negativity += std::max(-q.values(i).real(), 0.0);
    n.imaginarity += std::abs(q.values(i).imag());
  }
  return n;
}

// Serialization: {"variant", "outcome_counts", "re", "im"} flattened with
// beta_n slowest; "frames" lists the per-time frames in the same t_n..t_0 order.

inline void to_json(nlohmann::json& j, const Tqd& q) {
  std::vector<double> re(static_cast<std::size_t>(q.values.size())), im(re.size());
  for (Eigen::Index i = 0; i < q.values.size(); ++i) {
    re[static_cast<std::size_t>(i)] = q.values(i).real();
    im[static_cast<std::size_t>(i)] = q.values(i).imag();
  }
  nlohmann::json frames = nlohmann::json::array();
  for (auto it = q.frames.rbegin(); it != q.frames.rend(); ++it) frames.push_back(*it);
  j = nlohmann::json{{"variant", to_string(q.variant)},
                     {"outcome_counts", q.outcome_counts()},
                     {"re", re},
                     {"im", im},
                     {"frames", frames}};
}

inline Tqd tqd_from_json(const nlohmann::json& j, const Tolerances& tol = {}) {
  Tqd q;
  q.variant = variant_from_string(j.at("variant").get<std::string>());
  const auto desc = j.at("outcome_counts").get<Dims>();
  q.outcomes.assign(desc.rbegin(), desc.rend());
  const auto re = j.at("re").get<std::vector<double>>();
  const auto im = j.at("im").get<std::vector<double>>();
  if (re.size() != im.size() || re.size() != product(q.outcomes)) {
    throw Error(ErrorCode::dimension_mismatch, "TQD value array does not match outcome_counts");
  }
  q.values.resize(static_cast<Eigen::Index>(re.size()));
  for (std::size_t i = 0; i < re.size(); ++i) q.values(static_cast<Eigen::Index>(i)) = cplx(re[i], im[i]);
  if (j.contains("frames")) {
    const auto& fr = j.at("frames");
    for (auto it = fr.rbegin(); it != fr.rend(); ++it) q.frames.push_back(frame_from_json(*it, tol));
  }
  return q;
}

}  // namespace tst
