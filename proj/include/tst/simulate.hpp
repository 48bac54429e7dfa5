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

// Trajectory statistics of time-ordered instruments and seeded sampling.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tst/snapshot.hpp"
#include "tst/tqd.hpp"

namespace tst {

/// One instrument per time t_0..t_n, each mapping C^{d_k} to itself.
struct InstrumentSchedule {
  std::vector<Instrument> steps;

  std::size_t times() const { return steps.size(); }
  Dims outcomes() const {
    Dims m;
    for (const auto& s : steps) m.push_back(s.size());
    return m;
  }
  std::size_t trajectories() const { return product(outcomes()); }
};

inline InstrumentSchedule snapshot_schedule(const Dims& dims, const Tolerances& tol = {}) {
  InstrumentSchedule s;
  for (auto d : dims) s.steps.push_back(snapshot_instrument(d, tol));
  return s;
}

/// p(alpha) flattened with alpha_n slowest.
struct TrajectoryDistribution {
  RealVector p;
  Dims outcomes;  // by time

  std::size_t trajectories() const { return static_cast<std::size_t>(p.size()); }
  /// (m_n, ..., m_0).
  Dims outcome_counts() const { return {outcomes.rbegin(), outcomes.rend()}; }
};

struct SampleBatch {
  std::vector<std::uint64_t> counts;  // per trajectory, alpha_n slowest
  Dims outcomes;                      // by time
  std::uint64_t shots = 0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Random numbers

/// Counter-based generator: output i is the SplitMix64 finalizer applied to
/// key + i * golden, with key = finalizer(seed). Identical on every platform.
class CounterRng {
 public:
  using result_type = std::uint64_t;
  static constexpr std::string_view algorithm = "splitmix64-counter";

  explicit CounterRng(std::uint64_t seed) : key_(mix(seed)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Independent stream for a trial.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t trial_index) { return seed ^ trial_index; }

// ---------------------------------------------------------------------------
// Distributions

namespace detail {

inline std::vector<std::vector<Superoperator>> schedule_families(const InstrumentSchedule& s) {
  std::vector<std::vector<Superoperator>> fam;
  for (const auto& inst : s.steps) fam.push_back(inst.maps());
  return fam;
}

}  // namespace detail

/// p(alpha) = Tr[I_{alpha_n} o E_n o ... o E_1 o I_{alpha_0}(rho)].
inline TrajectoryDistribution trajectory_distribution(const TemporalProcess& p, const InstrumentSchedule& s,
                                                      const Tolerances& tol = {}) {
  if (s.times() != p.times()) throw Error(ErrorCode::dimension_mismatch, "one instrument per time required");
  const Vector raw = detail::evaluate_trajectories(p, detail::schedule_families(s));
  TrajectoryDistribution out;
  out.outcomes = s.outcomes();
  out.p = raw.real();
  if (raw.imag().cwiseAbs().maxCoeff() > tol.recon) {
    throw Error(ErrorCode::invalid_argument, "trajectory probabilities are not real");
  }
  if (out.p.minCoeff() < -tol.psd) {
    throw Error(ErrorCode::invalid_argument, "negative trajectory probability " + std::to_string(out.p.minCoeff()));
  }
  return out;
}

/// Tiny negatives clamped to zero, then renormalized.
inline RealVector clamped_probabilities(const TrajectoryDistribution& d, const Tolerances& tol = {}) {
  if (d.p.size() == 0) throw Error(ErrorCode::invalid_argument, "empty distribution");
  if (d.p.minCoeff() < -tol.psd) {
    throw Error(ErrorCode::invalid_argument, "probability below -tol_psd: " + std::to_string(d.p.minCoeff()));
  }
  RealVector q = d.p.cwiseMax(0.0);
  const double total = q.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::invalid_argument, "distribution has no mass");
  return q / total;
}

/// Multinomial(N, p) by inverse-CDF lookup of N uniforms.
inline SampleBatch sample(const TrajectoryDistribution& dist, std::uint64_t shots, std::uint64_t seed,
                          const Tolerances& tol = {}) {
  if (shots == 0) throw Error(ErrorCode::invalid_argument, "shot count must be >= 1");
  const RealVector q = clamped_probabilities(dist, tol);
  std::vector<double> cdf(static_cast<std::size_t>(q.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) cdf[static_cast<std::size_t>(i)] = (acc += q(i));
  cdf.back() = 1.0;
  // Zero-probability tails must never be drawn.
  std::size_t last_positive = cdf.size() - 1;
  while (last_positive > 0 && q(static_cast<Eigen::Index>(last_positive)) == 0.0) --last_positive;

  SampleBatch b;
  b.counts.assign(cdf.size(), 0);
  b.outcomes = dist.outcomes;
  b.shots = shots;
  b.seed = seed;
  CounterRng rng(seed);
  for (std::uint64_t s = 0; s < shots; ++s) {
    const double u = rng.uniform();
    auto idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    b.counts[std::min(idx, last_positive)] += 1;
  }
  return b;
}

/// Draws each run outcome by outcome from conditional post-measurement states.
inline SampleBatch sample_sequential(const TemporalProcess& p, const InstrumentSchedule& s, std::uint64_t shots,
                                     std::uint64_t seed) {
  if (shots == 0) throw Error(ErrorCode::invalid_argument, "shot count must be >= 1");
  if (s.times() != p.times()) throw Error(ErrorCode::dimension_mismatch, "one instrument per time required");
  const Dims m = s.outcomes();
  const Dims strides = detail::trajectory_strides(m);
  SampleBatch b;
  b.counts.assign(product(m), 0);
  b.outcomes = m;
  b.shots = shots;
  b.seed = seed;
  CounterRng rng(seed);
  std::vector<double> probs;
  std::vector<Matrix> posts;
  for (std::uint64_t shot = 0; shot < shots; ++shot) {
    Matrix rho = p.rho0().matrix();
    std::size_t idx = 0;
    for (std::size_t k = 0; k < s.times(); ++k) {
      const auto& inst = s.steps[k];
      probs.assign(inst.size(), 0.0);
      posts.resize(inst.size());
      double total = 0.0;
      for (std::size_t a = 0; a < inst.size(); ++a) {
        posts[a] = inst[a].apply(rho);
        probs[a] = std::max(posts[a].trace().real(), 0.0);
        total += probs[a];
      }
      const double u = rng.uniform() * total;
      double acc = 0.0;
      std::size_t pick = inst.size() - 1;
      for (std::size_t a = 0; a < inst.size(); ++a) {
        acc += probs[a];
        if (u < acc) {
          pick = a;
          break;
        }
      }
      while (probs[pick] == 0.0 && pick > 0) --pick;
      idx += pick * strides[k];
      rho = posts[pick] / probs[pick];
      if (k + 1 < s.times()) rho = p.channels()[k].apply(rho);
    }
    b.counts[idx] += 1;
  }
  return b;
}

/// Joint multinomial sampling when the trajectory count is at most cap,
/// sequential conditional sampling otherwise.
inline SampleBatch sample_process(const TemporalProcess& p, const InstrumentSchedule& s, std::uint64_t shots,
                                  std::uint64_t seed, std::size_t cap = 1'000'000, const Tolerances& tol = {}) {
  if (s.trajectories() <= cap) return sample(trajectory_distribution(p, s, tol), shots, seed, tol);
  return sample_sequential(p, s, shots, seed);
}

/// p_hat(alpha) = counts(alpha) / N.
inline TrajectoryDistribution empirical(const SampleBatch& b) {
  if (b.shots == 0) throw Error(ErrorCode::invalid_argument, "empty sample batch");
  TrajectoryDistribution d;
  d.outcomes = b.outcomes;
  d.p.resize(static_cast<Eigen::Index>(b.counts.size()));
  for (std::size_t i = 0; i < b.counts.size(); ++i)
    d.p(static_cast<Eigen::Index>(i)) = static_cast<double>(b.counts[i]) / static_cast<double>(b.shots);
  return d;
}

// ---------------------------------------------------------------------------
// Export: CSV "alpha_n,...,alpha_0,count" plus a JSON sidecar {"N", "seed", "rng"}.

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  return p.replace_extension(".json");
}

inline void write_samples(const std::filesystem::path& csv, const SampleBatch& b) {
  std::ofstream out(csv);
  if (!out) throw Error(ErrorCode::io, "cannot write " + csv.string());
  const std::size_t n = b.outcomes.size();
  for (std::size_t k = n; k-- > 0;) out << "alpha_" << k << ',';
  out << "count\n";
  const Dims strides = detail::trajectory_strides(b.outcomes);
  for (std::size_t idx = 0; idx < b.counts.size(); ++idx) {
    for (std::size_t k = n; k-- > 0;) out << (idx / strides[k]) % b.outcomes[k] << ',';
    out << b.counts[idx] << '\n';
  }
  nlohmann::json side{{"N", b.shots},
                      {"seed", b.seed},
                      {"rng", std::string(CounterRng::algorithm)},
                      {"outcome_counts", Dims(b.outcomes.rbegin(), b.outcomes.rend())}};
  std::ofstream js(sidecar_path(csv));
  if (!js) throw Error(ErrorCode::io, "cannot write " + sidecar_path(csv).string());
  js << side.dump(2) << '\n';
}

inline SampleBatch read_samples(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::io, "cannot open samples file " + csv.string());
  std::ifstream js(sidecar_path(csv));
  if (!js) throw Error(ErrorCode::io, "missing sidecar " + sidecar_path(csv).string());
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, "sidecar: " + std::string(e.what()));
  }
  SampleBatch b;
  b.shots = side.at("N").get<std::uint64_t>();
  b.seed = side.at("seed").get<std::uint64_t>();
  const auto desc = side.at("outcome_counts").get<Dims>();
  b.outcomes.assign(desc.rbegin(), desc.rend());
  const Dims strides = detail::trajectory_strides(b.outcomes);
  b.counts.assign(product(b.outcomes), 0);

  std::string line;
  std::getline(in, line);  // header
  std::size_t lineno = 1;
  std::uint64_t total = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::uint64_t> cells;
    while (std::getline(ss, cell, ',')) {
      try {
        cells.push_back(std::stoull(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::io, csv.string() + ":" + std::to_string(lineno) + ": bad integer '" + cell + "'");
      }
    }
    if (cells.size() != b.outcomes.size() + 1) {
      throw Error(ErrorCode::io, csv.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
    std::size_t idx = 0;
    const std::size_t n = b.outcomes.size();
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t k = n - 1 - c;
      if (cells[c] >= b.outcomes[k]) {
        throw Error(ErrorCode::io, csv.string() + ":" + std::to_string(lineno) + ": outcome index out of range");
      }
      idx += cells[c] * strides[k];
    }
    b.counts[idx] += cells.back();
    total += cells.back();
  }
  if (total != b.shots) throw Error(ErrorCode::io, "counts sum to " + std::to_string(total) + ", sidecar N differs");
  return b;
}

}  // namespace tst
