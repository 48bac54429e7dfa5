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

// tst: batch driver for frames, TQDs, sampling sweeps and reconstruction.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tst/tst.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvariant = 1;
constexpr int kIo = 2;

/// Raised when a computed result fails one of its own consistency checks.
struct InvariantFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  bool print_config = false;
};

tst::ExperimentConfig effective_config(const Globals& g) {
  tst::ExperimentConfig c;
  if (!g.config_path.empty()) {
    c = tst::load_config(g.config_path);
  } else {
    c.frames.assign(c.times(), tst::FrameSpec{});
  }
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  if (g.out) {
    c.output_dir = *g.out;
  } else if (const char* env = std::getenv("TST_OUT_DIR"); env && *env) {
    c.output_dir = env;
  }
  tst::validate(c);
  return c;
}

fs::path out_dir(const tst::ExperimentConfig& c) {
  fs::path p(c.output_dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw tst::Error(tst::ErrorCode::io, "cannot create output directory " + p.string());
  return p;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw tst::Error(tst::ErrorCode::io, "cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::string sig4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_frame(const tst::ExperimentConfig& c, std::size_t d, const std::string& kind, const std::string& basis) {
  tst::OperatorFrame f = kind == "ic" ? tst::ic_povm(d, c.tolerances)
                                      : tst::projective_frame(tst::named_basis(basis, d), c.tolerances);
  tst::Matrix sum = tst::Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (const auto& e : f.elements()) sum += e.matrix();
  const double dev = (sum - tst::Matrix::Identity(sum.rows(), sum.cols())).cwiseAbs().maxCoeff();
  const bool sums = dev <= 1e-10;
  const fs::path file = out_dir(c) / ("frame_d" + std::to_string(d) + "_" + kind + ".json");
  write_json(file, f);
  std::cout << "frame: " << file.string() << '\n'
            << "kind: " << tst::to_string(f.kind()) << '\n'
            << "elements: " << f.size() << '\n'
            << "sum_to_identity: " << (sums ? "pass" : "fail") << '\n'
            << "gram_rank: " << f.gram_rank() << '\n'
            << "gram_condition: " << sig4(f.gram_condition()) << '\n'
            << "informationally_complete: " << (f.is_ic() ? "yes" : "no") << '\n';
  return sums ? kOk : kInvariant;
}

int cmd_tqd(const tst::ExperimentConfig& c) {
  const auto e = tst::build_experiment(c);
  const tst::Tqd q = tst::exact_tqd(e.process, e.frames, e.variant);
  const auto nc = tst::nonclassicality(q);
  const fs::path file = out_dir(c) / "tqd.json";
  write_json(file, q);
  std::cout << "tqd: " << file.string() << '\n'
            << "variant: " << tst::to_string(e.variant) << '\n'
            << "entries: " << q.values.size() << '\n'
            << "sum: " << sig4(q.total().real()) << '\n'
            << "negativity: " << sig4(nc.negativity) << '\n'
            << "imaginarity: " << sig4(nc.imaginarity) << '\n';
  if (std::abs(q.total() - 1.0) > c.tolerances.recon) throw InvariantFailure("TQD does not sum to 1");

  if (e.variant.side == tst::Side::doubled) {
    // Diagonal entries K_a rho K_a are sequential-measurement probabilities for projective frames.
    bool projective = true;
    for (const auto& f : e.frames) projective = projective && f.kind() == tst::FrameKind::projective;
    if (projective) {
      tst::InstrumentSchedule s;
      for (const auto& f : e.frames) s.steps.push_back(tst::projective_instrument(f, c.tolerances));
      const auto dist = tst::trajectory_distribution(e.process, s, c.tolerances);
      const tst::Dims ps = tst::detail::trajectory_strides(s.outcomes());
      const tst::Dims qs = tst::detail::trajectory_strides(q.outcomes);
      double worst = 0;
      for (std::size_t i = 0; i < s.trajectories(); ++i) {
        std::size_t qi = 0;
        for (std::size_t k = 0; k < s.times(); ++k) {
          const std::size_t a = (i / ps[k]) % s.outcomes()[k];
          qi += (a * e.frames[k].size() + a) * qs[k];
        }
        worst = std::max(worst, std::abs(q.values(static_cast<Eigen::Index>(qi)) -
                                         dist.p(static_cast<Eigen::Index>(i))));
      }
      const bool ok = worst <= 1e-10;
      std::cout << "diagonal_matches_sequential: " << (ok ? "pass" : "fail") << " (max deviation " << sig4(worst)
                << ")\n";
      if (!ok) throw InvariantFailure("doubled diagonal differs from sequential measurement");
    }
  }
  return kOk;
}

int cmd_sweep(const tst::ExperimentConfig& c) {
  const auto e = tst::build_experiment(c);
  const auto res = tst::run_sweep(e, c);
  const fs::path dir = out_dir(c);
  {
    std::ofstream csv(dir / "sweep.csv", std::ios::binary);
    if (!csv) throw tst::Error(tst::ErrorCode::io, "cannot write sweep.csv");
    tst::write_sweep_csv(csv, res.rows);
  }
  write_json(dir / "sweep_summary.json", tst::to_json(res.summary));
  std::cout << "sweep: " << (dir / "sweep.csv").string() << '\n'
            << "rows: " << res.rows.size() << '\n'
            << "M: " << res.summary.M << '\n'
            << "t_norm: " << sig4(res.summary.t_norm) << '\n'
            << "loglog_slope: " << sig4(res.summary.slope) << '\n';
  return kOk;
}

int cmd_reconstruct(const tst::ExperimentConfig& c, const std::string& samples, bool exact,
                    std::optional<std::uint64_t> shots) {
  const auto e = tst::build_experiment(c);
  const auto pp = tst::build_postprocessing(e.frames, e.schedule, e.variant);
  const fs::path dir = out_dir(c);

  tst::TrajectoryDistribution p;
  std::string mode;
  if (exact) {
    p = tst::trajectory_distribution(e.process, e.schedule, c.tolerances);
    mode = "exact";
  } else if (!samples.empty()) {
    const auto b = tst::read_samples(samples);
    p = tst::empirical(b);
    mode = "samples(" + std::to_string(b.shots) + ")";
  } else {
    const std::uint64_t n = shots.value_or(c.shots);
    const auto b = tst::sample_process(e.process, e.schedule, n, c.seed, c.sampling_cap, c.tolerances);
    tst::write_samples(dir / "samples.csv", b);
    p = tst::empirical(b);
    mode = "simulated(" + std::to_string(n) + ")";
  }

  const tst::TemporalState est = tst::estimate_state(p, pp);
  const tst::TemporalState truth = tst::true_state(e);
  auto res = tst::fit_temporal_state(est, e.process.dims(), c.fit, c.tolerances);
  res.diagnostics.linear_error = tst::schatten_norm(est.op.matrix() - truth.op.matrix(), tst::Schatten::two);
  for (const auto& inst : e.schedule.steps) res.diagnostics.condition.push_back(inst.gram_condition());

  write_json(dir / "reconstruction.json", res);
  std::cout << "reconstruction: " << (dir / "reconstruction.json").string() << '\n'
            << "mode: " << mode << '\n'
            << "linear_error: " << sig4(res.diagnostics.linear_error) << '\n'
            << "fit_residual: " << sig4(res.diagnostics.fit_residual) << '\n'
            << "fit_error: "
            << sig4(tst::schatten_norm(res.upsilon_fit.op.matrix() - truth.op.matrix(), tst::Schatten::two)) << '\n'
            << "iterations: " << res.diagnostics.iterations << (res.diagnostics.converged ? " (converged)" : " (max)")
            << '\n';
  for (std::size_t k = 0; k < res.channels_hat.size(); ++k) {
    const auto& ch = res.channels_hat[k];
    std::cout << "channel_error[" << k + 1 << "]: "
              << sig4(tst::schatten_norm(ch.choi().matrix() - e.process.channels()[k].choi().matrix(),
                                         tst::Schatten::two))
              << '\n';
    if (c.channels[k].kind == "amplitude_damping") {
      std::cout << "gamma_hat[" << k + 1 << "]: " << sig4(ch.choi()(2, 2).real()) << '\n';
    }
  }
  return kOk;
}

int cmd_selftest() {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
    failures += ok ? 0 : 1;
  };
  for (std::size_t d : {2, 3, 4}) {
    const auto f = tst::ic_povm(d);
    tst::Matrix sum = tst::Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (const auto& k : f.elements()) sum += k.matrix();
    const double dev = (sum - tst::Matrix::Identity(sum.rows(), sum.cols())).cwiseAbs().maxCoeff();
    report("ic_povm d=" + std::to_string(d), dev <= 1e-10 && f.gram_rank() == d * d,
           "deviation " + sig4(dev) + ", rank " + std::to_string(f.gram_rank()));
  }
  {
    const double th = 3.0 * std::numbers::pi / 8.0;
    tst::Vector psi(2);
    psi << std::cos(th), std::sin(th);
    const tst::TemporalProcess p(tst::projector(psi), {tst::channels::identity(2)});
    const auto fz = tst::projective_frame(tst::named_basis("z", 2));
    const auto fx = tst::projective_frame(tst::named_basis("x", 2));
    const auto q = tst::exact_tqd(p, {fz, fx}, {tst::Side::right, false});
    const double v = q.at({0, 1}).real();
    report("negativity witness", std::abs(v - (1.0 - std::sqrt(2.0)) / 4.0) <= 1e-10, "Q(-,0) = " + sig4(v));
  }
  {
    const tst::TemporalProcess p(tst::Operator::identity({2}) * tst::cplx(0.5), {tst::channels::amplitude_damping(0.4)});
    const tst::Variant v{tst::Side::right, false};
    const std::vector<tst::OperatorFrame> frames{tst::ic_povm(2), tst::ic_povm(2)};
    const auto pp = tst::build_postprocessing(frames, tst::snapshot_schedule(p.dims()), v);
    const auto est = tst::estimate_state(tst::trajectory_distribution(p, pp.schedule), pp);
    const double err = tst::schatten_norm(est.op.matrix() - tst::link_state(p).op.matrix(), tst::Schatten::two);
    report("exact pipeline", err <= 1e-9, "error " + sig4(err));
  }
  return failures == 0 ? kOk : kInvariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal state tomography driver"};
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON experiment configuration");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--out", g.out, "Output directory (overrides TST_OUT_DIR and the config)");
  app.add_option("--threads", g.threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("--print-config", g.print_config, "Print the effective configuration and exit");

  auto* frame = app.add_subcommand("frame", "Build an operator frame and report its properties");
  std::size_t frame_d = 2;
  std::string frame_kind = "ic", frame_basis = "z";
  frame->add_option("--d", frame_d, "Hilbert space dimension")->check(CLI::PositiveNumber);
  frame->add_option("--kind", frame_kind, "ic or projective")->check(CLI::IsMember({"ic", "projective"}));
  frame->add_option("--basis", frame_basis, "Projective basis: z, x or y")->check(CLI::IsMember({"z", "computational", "x", "y"}));

  auto* tqd = app.add_subcommand("tqd", "Exact temporal quasiprobability distribution");
  auto* sweep = app.add_subcommand("sweep", "Sampling sweep over N with per-trial errors");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct the temporal state, initial state and channels");
  std::string samples;
  bool exact = false;
  std::optional<std::uint64_t> shots;
  recon->add_option("--samples", samples, "Samples CSV (with JSON sidecar)");
  recon->add_flag("--exact", exact, "Use the exact trajectory distribution");
  recon->add_option("--shots", shots, "Simulate this many runs")->check(CLI::PositiveNumber);

  auto* selftest = app.add_subcommand("selftest", "Run built-in consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kIo;
  }

  try {
    const tst::ExperimentConfig c = effective_config(g);
    if (g.print_config) {
      std::cout << tst::to_json(c).dump(2) << '\n';
      return kOk;
    }
    if (frame->parsed()) return cmd_frame(c, frame_d, frame_kind, frame_basis);
    if (tqd->parsed()) return cmd_tqd(c);
    if (sweep->parsed()) return cmd_sweep(c);
    if (recon->parsed()) {
      if (exact && !samples.empty()) throw tst::ConfigError("", "--exact and --samples are exclusive");
      if (!samples.empty() && !fs::exists(samples)) {
        throw tst::Error(tst::ErrorCode::io, "samples file not found: " + samples);
      }
      return cmd_reconstruct(c, samples, exact, shots);
    }
    if (selftest->parsed()) return cmd_selftest();
    std::cout << app.help();
    return kOk;
  } catch (const InvariantFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvariant;
  } catch (const tst::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case tst::ErrorCode::io:
      case tst::ErrorCode::invalid_argument:
      case tst::ErrorCode::dimension_mismatch:
      case tst::ErrorCode::index_out_of_range:
        return kIo;
      default:
        return kInvariant;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvariant;
  }
}
