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

#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace tst;
using tst::testing::max_abs;
using tst::testing::Random;

namespace {

const std::vector<Variant> kAllVariants = {{Side::right, false}, {Side::left, false}, {Side::doubled, false},
                                           {Side::right, true},  {Side::left, true},  {Side::doubled, true}};

std::vector<OperatorFrame> ic_frames(const Dims& dims) {
  std::vector<OperatorFrame> out;
  for (auto d : dims) out.push_back(ic_povm(d));
  return out;
}

Dims to_dims(const std::vector<Eigen::Index>& d) { return {d.begin(), d.end()}; }

double hs_distance(const Matrix& a, const Matrix& b) { return (a - b).norm(); }

Matrix choi_of_kraus(const std::vector<Matrix>& ks) {
  return testing::choi_reference([&](const Matrix& x) { return testing::apply_kraus(ks, x); }, ks.front().cols(),
                                 ks.front().rows());
}

}  // namespace

TEST_CASE("snapshot coefficients") {
  const auto schedule = snapshot_schedule({2, 3});
  SECTION("instrument maps as targets give the identity") {
    std::vector<std::vector<Superoperator>> targets;
    for (const auto& step : schedule.steps) targets.push_back(step.maps());
    std::vector<double> res;
    const auto chi = snapshot_coefficients(targets, schedule, &res);
    REQUIRE(chi.size() == 2);
    CHECK(max_abs(chi[0] - Matrix::Identity(16, 16)) <= 1e-9);
    CHECK(max_abs(chi[1] - Matrix::Identity(81, 81)) <= 1e-8);
    for (double r : res) CHECK(r <= 1e-10);
  }
  SECTION("phase-space targets decompose exactly for every variant") {
    for (const auto& v : kAllVariants) {
      const auto pp = build_postprocessing(ic_frames({2, 3}), schedule, v);
      CAPTURE(to_string(v));
      for (double r : pp.residuals) CHECK(r <= 1e-10);
      CHECK(pp.reconstructs_state() == (v.side != Side::doubled));
      CHECK(std::isnan(pp.t_norm) == (v.side == Side::doubled));
    }
  }
  CHECK_THROWS_AS(build_postprocessing(ic_frames({2}), schedule, {}), Error);
  CHECK_THROWS_AS(build_postprocessing(ic_frames({3, 2}), schedule, {}), Error);
}

TEST_CASE("estimators are exact on exact distributions") {
  Random r(60);
  for (const auto& d : {std::vector<Eigen::Index>{2}, {2, 2}, {2, 3}, {2, 2, 2}}) {
    const auto dims = to_dims(d);
    const auto p = testing::random_process(r, d).build();
    const auto schedule = snapshot_schedule(dims);
    const auto dist = trajectory_distribution(p, schedule);
    const auto frames = ic_frames(dims);
    for (const auto& v : kAllVariants) {
      CAPTURE(d, to_string(v));
      const auto pp = build_postprocessing(frames, schedule, v);
      const auto q = estimate_tqd(dist, pp);
      CHECK(max_abs(q.values - exact_tqd(p, frames, v).values) <= 1e-9);
      CHECK(q.variant == v);
      if (v.side == Side::doubled) {
        CHECK_THROWS_AS(estimate_state(dist, pp), Error);
        continue;
      }
      const auto s = estimate_state(dist, pp);
      CHECK(max_abs(s.op.matrix() - state_from_tqd(exact_tqd(p, frames, v)).op.matrix()) <= 1e-9);
      CHECK(s.variant == v);
      if (v == Variant{Side::right, false}) CHECK(max_abs(s.op.matrix() - link_state(p).op.matrix()) <= 1e-9);
    }
  }
}

TEST_CASE("estimate_tqd equals the dense linear map") {
  Random r(61);
  const auto p = testing::random_process(r, {2, 2}).build();
  const auto schedule = snapshot_schedule({2, 2});
  const auto pp = build_postprocessing(ic_frames({2, 2}), schedule, {Side::left, false});
  const auto dist = empirical(sample_process(p, schedule, 500, 3));
  // M_{beta, alpha} = chi0(beta_0, alpha_0) chi1(beta_1, alpha_1), t_0 fastest on both axes.
  Matrix m(16, 256);
  for (Eigen::Index b = 0; b < 16; ++b)
    for (Eigen::Index a = 0; a < 256; ++a) m(b, a) = pp.chi[0](b % 4, a % 16) * pp.chi[1](b / 4, a / 16);
  const Vector dense = m * dist.p.cast<cplx>();
  CHECK(max_abs(estimate_tqd(dist, pp).values - dense) <= 1e-12);
}

TEST_CASE("t_norm is the operator norm of the estimator") {
  for (const Variant v : {Variant{Side::right, false}, Variant{Side::left, true}}) {
    const auto schedule = snapshot_schedule({2, 2});
    const auto pp = build_postprocessing(ic_frames({2, 2}), schedule, v);
    // Columns: vec of the state estimate for each point-mass distribution.
    Matrix cols(16, 256);
    TrajectoryDistribution e{RealVector::Zero(256), schedule.outcomes()};
    const auto kd = build_postprocessing(ic_frames({2, 2}), schedule, v.kd());
    for (Eigen::Index a = 0; a < 256; ++a) {
      e.p.setZero();
      e.p(a) = 1.0;
      cols.col(a) = estimate_state(e, kd).op.matrix().reshaped();
    }
    Eigen::JacobiSVD<Matrix> svd(cols);
    CHECK(pp.t_norm == Catch::Approx(svd.singularValues()(0)).epsilon(1e-9));
    CHECK(theoretical_c(pp) == Catch::Approx(pp.t_norm * pp.t_norm / 2));
  }
}

TEST_CASE("state estimator is unbiased") {
  Random r(62);
  const auto p = testing::random_process(r, {2, 2}).build();
  const auto schedule = snapshot_schedule({2, 2});
  const auto pp = build_postprocessing(ic_frames({2, 2}), schedule, {});
  const auto dist = trajectory_distribution(p, schedule);
  const Matrix truth = link_state(p).op.matrix();
  const int batches = 200;
  Matrix mean = Matrix::Zero(4, 4);
  double sq = 0;
  for (int t = 0; t < batches; ++t) {
    const Matrix est = estimate_state(empirical(sample(dist, 1000, derive_seed(5, static_cast<std::uint64_t>(t)))), pp).op.matrix();
    mean += est / batches;
    sq += (est - truth).squaredNorm() / batches;
  }
  // E||mean - truth||^2 = E||est - truth||^2 / batches.
  CHECK(hs_distance(mean, truth) <= 3.0 * std::sqrt(sq / batches));
}

TEST_CASE("physical projections") {
  Random r(63);
  SECTION("simplex") {
    RealVector v(4);
    v << 0.5, 0.5, 0.5, -1.0;
    const RealVector s = detail::project_simplex(v);
    CHECK(std::abs(s.sum() - 1.0) < 1e-15);
    RealVector expect(4);
    expect << 1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0;
    CHECK(max_abs(s - expect) < 1e-15);
  }
  SECTION("states") {
    for (int t = 0; t < 20; ++t) {
      const Operator x(r.hermitian(3));
      const Operator s = project_state(x);
      CHECK(is_psd(s, 1e-12));
      CHECK(std::abs(s.trace() - 1.0) < 1e-12);
      CHECK(max_abs(project_state(s).matrix() - s.matrix()) < 1e-12);
      // Optimality against random feasible points.
      for (int k = 0; k < 5; ++k) {
        const Matrix y = r.state(3);
        CHECK(hs_distance(s.matrix(), x.matrix()) <= hs_distance(y, x.matrix()) + 1e-12);
      }
    }
  }
  SECTION("channels") {
    for (int t = 0; t < 20; ++t) {
      const auto ks = r.kraus(2, 3, 2);
      const Superoperator e = from_kraus(ks);
      CHECK(max_abs(project_cptp(e).choi().matrix() - e.choi().matrix()) < 1e-9);
      const Superoperator noisy(Operator(Matrix(e.choi().matrix() + 0.3 * r.hermitian(6)), {2, 3}), 2, 3);
      const auto proj = project_cptp(noisy);
      CHECK(proj.is_cptp());
      for (int k = 0; k < 5; ++k) {
        const Matrix y = choi_of_kraus(r.kraus(2, 3, 3));
        CHECK(hs_distance(proj.choi().matrix(), noisy.choi().matrix()) <= hs_distance(y, noisy.choi().matrix()) + 1e-6);
      }
    }
  }
}

TEST_CASE("channel extraction") {
  SECTION("maximally mixed through the identity") {
    const TemporalState s{Operator(Matrix(swap_operator(2).matrix() / 2.0), {2, 2}), {}};
    const auto ex = extract_channels(s, {2, 2});
    CHECK(max_abs(ex.rho0.matrix() - Matrix::Identity(2, 2) / 2.0) < 1e-14);
    CHECK(max_abs(ex.channels[0].choi().matrix() - channels::identity(2).choi().matrix()) <= 1e-10);
    CHECK(ex.completion[0] == "none");
    CHECK(ex.input_rank[0] == 2);
  }
  SECTION("amplitude damping on a maximally mixed input") {
    const TemporalProcess p(Operator(Matrix(Matrix::Identity(2, 2) / 2.0)), {channels::amplitude_damping(0.4)});
    const auto ex = extract_channels(link_state(p), {2, 2});
    CHECK(max_abs(ex.channels[0].choi().matrix() - channels::amplitude_damping(0.4).choi().matrix()) <= 1e-8);
    // Choi entry (i=1, a=0) is <0|E(|1><1|)|0> = gamma.
    CHECK(std::abs(ex.channels[0].choi()(2, 2).real() - 0.4) <= 1e-8);
  }
  SECTION("random full-rank processes") {
    Random r(64);
    for (const auto& d : {std::vector<Eigen::Index>{2, 3}, {3, 2, 2}}) {
      const auto kp = testing::random_process(r, d);
      const auto ex = extract_channels(link_state(kp.build()), to_dims(d));
      CHECK(max_abs(ex.rho0.matrix() - kp.rho) <= 1e-10);
      for (std::size_t k = 0; k < kp.channels.size(); ++k)
        CHECK(max_abs(ex.channels[k].choi().matrix() - choi_of_kraus(kp.channels[k])) <= 1e-8);
    }
  }
  SECTION("pure input: bit flip agrees on the support and stays CPTP") {
    const TemporalProcess p(projector(basis_vector(2, 0)), {channels::bit_flip(0.2)});
    const auto ex = extract_channels(link_state(p), {2, 2});
    CHECK(ex.input_rank[0] == 1);
    CHECK(ex.completion[0] == "schur");
    CHECK(ex.channels[0].is_cptp());
    const Matrix zero = projector(basis_vector(2, 0)).matrix();
    CHECK(max_abs(ex.channels[0].apply(zero) - channels::bit_flip(0.2).apply(zero)) <= 1e-10);
    // And the process it generates is the original one.
    const TemporalProcess back(ex.rho0, ex.channels);
    CHECK(max_abs(link_state(back).op.matrix() - link_state(p).op.matrix()) <= 1e-10);
  }
  SECTION("preconditions") {
    const TemporalState s{Operator(Matrix(swap_operator(2).matrix() / 2.0), {2, 2}), {Side::left, false}};
    CHECK_THROWS_AS(extract_channels(s, {2, 2}), Error);
    CHECK_THROWS_AS(extract_channels({s.op, {}}, {2, 3}), Error);
  }
}

TEST_CASE("physical fit") {
  Random r(65);
  SECTION("a physical state is a fixed point") {
    for (const Variant v : {Variant{Side::right, false}, Variant{Side::left, false}, Variant{Side::right, true}}) {
      const auto kp = testing::random_process(r, {2, 2});
      const auto p = kp.build();
      const auto truth = state_from_tqd(exact_tqd(p, ic_frames({2, 2}), v));
      const auto res = fit_temporal_state(truth, {2, 2});
      CAPTURE(to_string(v));
      CHECK(res.diagnostics.fit_residual <= 1e-8);
      CHECK(res.diagnostics.converged);
      INFO(res.diagnostics.iterations << " " << res.diagnostics.fit_residual);
      CHECK(res.upsilon_fit.variant == v);
      if (!v.mh) {
        CHECK(max_abs(res.rho0_hat.matrix() - kp.rho) <= 1e-8);
        CHECK(max_abs(res.channels_hat[0].choi().matrix() - choi_of_kraus(kp.channels[0])) <= 1e-7);
      }
    }
  }
  SECTION("perturbed states are pulled back towards the truth") {
    for (int t = 0; t < 5; ++t) {
      const auto p = testing::random_process(r, {2, 2}).build();
      const Matrix truth = link_state(p).op.matrix();
      Matrix noise = r.ginibre(4, 4);
      noise *= 0.05 / noise.norm();
      const TemporalState noisy{Operator(Matrix(truth + noise), {2, 2}), {}};
      const auto res = fit_temporal_state(noisy, {2, 2});
      CHECK(hs_distance(res.upsilon_fit.op.matrix(), truth) <= 0.1);
      CHECK(res.diagnostics.fit_residual <= res.diagnostics.initial_residual + 1e-12);
      CHECK(res.rho0_hat.is_hermitian(1e-12));
      CHECK(is_psd(res.rho0_hat, 1e-9));
      CHECK(res.channels_hat[0].is_cptp());
      const auto& obj = res.diagnostics.objective;
      for (std::size_t i = 1; i < obj.size(); ++i) CHECK(obj[i] <= obj[i - 1]);
      // The fitted state is generated by its fitted process.
      const TemporalProcess gen(res.rho0_hat, res.channels_hat, Tolerances{1e-8, 1e-8, 1e-10, 1e-10, 1e-8});
      CHECK(max_abs(link_state(gen).op.matrix() - res.upsilon_fit.op.matrix()) <= 1e-10);
    }
  }
  SECTION("three times") {
    const auto p = testing::random_process(r, {2, 2, 2}).build();
    const auto res = fit_temporal_state(link_state(p), {2, 2, 2});
    CHECK(res.diagnostics.fit_residual <= 1e-8);
    CHECK(res.channels_hat.size() == 2);
  }
  SECTION("errors") {
    const auto s = link_state(testing::random_process(r, {2, 2}).build());
    try {
      (void)fit_temporal_state(s, {2, 3});
      FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::dimension_mismatch);
    }
    CHECK_THROWS_AS(fit_temporal_state({s.op, {Side::doubled, false}}, {2, 2}), Error);
  }
  SECTION("diagnostics serialize") {
    const auto s = link_state(testing::random_process(r, {2, 2}).build());
    const nlohmann::json j = fit_temporal_state(s, {2, 2});
    CHECK(j.at("variant") == "right-KD");
    CHECK(j.at("diagnostics").at("linear_error").is_null());
    CHECK(j.at("channels_hat").size() == 1);
  }
}

TEST_CASE("sample planning") {
  CHECK(plan_samples(0.5, 0.5, 1, 1.0).N == 6);
  const auto base = plan_samples(0.1, 0.1, 256, 2.0);
  CHECK(plan_samples(0.05, 0.1, 256, 2.0).N > base.N);
  CHECK(plan_samples(0.1, 0.01, 256, 2.0).N > base.N);
  CHECK(plan_samples(0.1, 0.1, 1024, 2.0).N > base.N);
  const auto twice = plan_samples(0.1, 0.1, 256, 4.0);
  CHECK(std::abs(static_cast<double>(twice.N) - 2.0 * static_cast<double>(base.N)) <= 2.0);
  for (auto bad : {0.0, 1.0, -0.1}) {
    CHECK_THROWS_AS(plan_samples(bad, 0.1, 4, 1.0), Error);
    CHECK_THROWS_AS(plan_samples(0.1, bad, 4, 1.0), Error);
  }
  CHECK_THROWS_AS(plan_samples(0.1, 0.1, 0, 1.0), Error);
  CHECK_THROWS_AS(plan_samples(0.1, 0.1, 4, 0.0), Error);

  SECTION("the planned N meets the analytic bound at c = ||T||^2 / 2") {
    for (double t : {1.0, 3.7, 12.0})
      for (std::size_t m : {16u, 256u, 4096u}) {
        const auto plan = plan_samples(0.2, 0.1, m, t * t / 2);
        CHECK(epsilon_bound(t, m, plan.N, 0.1) <= 0.2 + 1e-12);
        if (plan.N > 1) CHECK(epsilon_bound(t, m, plan.N - 1, 0.1) > 0.2);
      }
  }
  SECTION("calibration inverts the plan") {
    std::vector<double> pilot(100);
    for (std::size_t i = 0; i < pilot.size(); ++i) pilot[i] = 0.01 * static_cast<double>(i + 1);
    // 95% quantile of 0.01..1.00 is the 95th value.
    const double c = calibrate_c(pilot, 1000, 256, 0.1);
    CHECK(c == Catch::Approx(1000 * 0.95 * 0.95 / (256 * std::log(2 * 256 / 0.1))));
    const auto n = plan_samples(0.95, 0.1, 256, c).N;  // 1000 up to the ceiling of a rounded product
    CHECK((n == 1000 || n == 1001));
    CHECK_THROWS_AS(calibrate_c({}, 10, 4, 0.1), Error);
  }
}
