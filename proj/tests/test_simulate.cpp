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

#include <filesystem>
#include <fstream>
#include <numeric>

#include "support.hpp"

using namespace tst;
using tst::testing::max_abs;
using tst::testing::Random;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tst_simulate_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Pearson statistic of counts against expected probabilities (cells with p > 0).
double chi_squared(const std::vector<std::uint64_t>& counts, const RealVector& p, std::uint64_t n, int& dof) {
  double chi = 0;
  dof = -1;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0) continue;
    const double e = static_cast<double>(n) * p(i);
    const double diff = static_cast<double>(counts[static_cast<std::size_t>(i)]) - e;
    chi += diff * diff / e;
    ++dof;
  }
  return chi;
}

InstrumentSchedule projective_schedule(const std::vector<std::string>& bases) {
  InstrumentSchedule s;
  for (const auto& b : bases) s.steps.push_back(projective_instrument(projective_frame(named_basis(b, 2))));
  return s;
}

const Operator kMixed{Matrix(Matrix::Identity(2, 2) / 2.0)};

}  // namespace

TEST_CASE("trajectory distribution examples") {
  SECTION("single time, computational state and basis") {
    const TemporalProcess p(projector(basis_vector(2, 0)), {});
    const auto d = trajectory_distribution(p, projective_schedule({"z"}));
    CHECK(d.p.size() == 2);
    CHECK(std::abs(d.p(0) - 1.0) < 1e-15);
    CHECK(std::abs(d.p(1)) < 1e-15);
  }
  SECTION("repeated Z on a mixed qubit is perfectly correlated") {
    const TemporalProcess p(kMixed, {channels::identity(2)});
    const auto d = trajectory_distribution(p, projective_schedule({"z", "z"}));
    for (Eigen::Index a1 = 0; a1 < 2; ++a1)
      for (Eigen::Index a0 = 0; a0 < 2; ++a0) CHECK(std::abs(d.p(a1 * 2 + a0) - (a0 == a1 ? 0.5 : 0.0)) < 1e-15);
    CHECK(d.outcome_counts() == Dims{2, 2});
  }
}

TEST_CASE("snapshot instrument probabilities") {
  Random r(50);
  SECTION("single time against Tr[(rho^T (x) I) K_a] / d") {
    const auto povm = ic_povm(4);
    for (int t = 0; t < 5; ++t) {
      const Matrix rho = r.state(2);
      const auto d = trajectory_distribution(TemporalProcess(Operator(rho), {}), snapshot_schedule({2}));
      REQUIRE(d.p.size() == 16);
      for (std::size_t a = 0; a < 16; ++a) {
        const double expect =
            (testing::kron(rho.transpose(), Matrix::Identity(2, 2)) * povm[a].matrix()).trace().real() / 2.0;
        CHECK(std::abs(d.p(static_cast<Eigen::Index>(a)) - expect) < 1e-12);
      }
      CHECK(std::abs(d.p.sum() - 1.0) < 1e-12);
      CHECK(d.p.minCoeff() >= 0.0);
    }
  }
  SECTION("multi-time distributions are normalized and telescope") {
    const auto p = testing::random_process(r, {2, 2, 2}).build();
    const auto d3 = trajectory_distribution(p, snapshot_schedule({2, 2, 2}));
    CHECK(d3.trajectories() == 4096);
    CHECK(std::abs(d3.p.sum() - 1.0) < 1e-12);
    CHECK(d3.p.minCoeff() >= -1e-15);
    // Summing out the last time gives the two-time distribution.
    const auto d2 = trajectory_distribution(p.reduce({0, 1}), snapshot_schedule({2, 2}));
    RealVector summed = RealVector::Zero(256);
    for (Eigen::Index i = 0; i < 4096; ++i) summed(i % 256) += d3.p(i);
    CHECK(max_abs(summed - d2.p) < 1e-13);
  }
  CHECK_THROWS_AS(trajectory_distribution(TemporalProcess(kMixed, {}), snapshot_schedule({2, 2})), Error);
}

TEST_CASE("counter RNG") {
  CounterRng a(7), b(7), c(8);
  std::vector<std::uint64_t> xa, xb, xc;
  for (int i = 0; i < 100; ++i) {
    xa.push_back(a());
    xb.push_back(b());
    xc.push_back(c());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);
  CounterRng u(9);
  double mean = 0;
  int outside = 0;
  for (int i = 0; i < 100000; ++i) {
    const double x = u.uniform();
    outside += (x >= 0.0 && x < 1.0) ? 0 : 1;
    mean += x;
  }
  CHECK(outside == 0);
  CHECK(std::abs(mean / 100000 - 0.5) < 0.005);
  CHECK(derive_seed(5, 0) == 5);
  CHECK(derive_seed(5, 3) != derive_seed(5, 4));
}

TEST_CASE("multinomial sampling") {
  SECTION("degenerate distribution") {
    TrajectoryDistribution d{RealVector::Zero(4), {4}};
    d.p(2) = 1.0;
    const auto b = sample(d, 1000, 1);
    CHECK(b.counts == std::vector<std::uint64_t>{0, 0, 1000, 0});
  }
  SECTION("zero-probability tail is never drawn") {
    TrajectoryDistribution d{RealVector::Zero(3), {3}};
    d.p(0) = 1.0;
    CHECK(sample(d, 10000, 2).counts[0] == 10000);
  }
  SECTION("binomial frequencies") {
    TrajectoryDistribution d{RealVector(2), {2}};
    d.p << 0.3, 0.7;
    const auto b = sample(d, 1'000'000, 3);
    CHECK(b.counts[0] + b.counts[1] == 1'000'000);
    CHECK(std::abs(static_cast<double>(b.counts[0]) / 1e6 - 0.3) <= 5e-3);
  }
  SECTION("determinism") {
    TrajectoryDistribution d{RealVector::Constant(16, 1.0 / 16), {16}};
    CHECK(sample(d, 5000, 11).counts == sample(d, 5000, 11).counts);
    CHECK(sample(d, 5000, 11).counts != sample(d, 5000, 12).counts);
  }
  SECTION("tiny negatives are clamped") {
    TrajectoryDistribution d{RealVector(2), {2}};
    d.p << -1e-12, 1.0;
    CHECK(sample(d, 100, 4).counts[1] == 100);
    d.p << -0.1, 1.1;
    CHECK_THROWS_AS(sample(d, 100, 4), Error);
  }
  TrajectoryDistribution d{RealVector::Constant(2, 0.5), {2}};
  CHECK_THROWS_AS(sample(d, 0, 1), Error);
}

TEST_CASE("empirical frequencies obey Hoeffding") {
  Random r(51);
  const auto p = testing::random_process(r, {2, 2}).build();
  const auto d = trajectory_distribution(p, snapshot_schedule({2, 2}));
  const std::uint64_t n = 1000;
  const double eps = 0.05;
  const double bound = 2 * std::exp(-2.0 * static_cast<double>(n) * eps * eps);
  Eigen::Index top = 0;
  d.p.maxCoeff(&top);
  int exceed = 0;
  const int batches = 400;
  for (int t = 0; t < batches; ++t) {
    const auto e = empirical(sample(d, n, derive_seed(1234, static_cast<std::uint64_t>(t))));
    CHECK(std::abs(e.p.sum() - 1.0) < 1e-12);
    if (std::abs(e.p(top) - d.p(top)) >= eps) ++exceed;
  }
  CHECK(static_cast<double>(exceed) / batches <= bound + 0.02);
}

TEST_CASE("sequential sampling matches the joint distribution") {
  Random r(52);
  const auto p = testing::random_process(r, {2, 2}).build();
  const auto s = snapshot_schedule({2, 2});
  const auto d = trajectory_distribution(p, s);
  const std::uint64_t n = 100'000;
  // Pearson statistic with 255 degrees of freedom: mean 255, sd ~22.6.
  int dof = 0;
  const double chi_seq = chi_squared(sample_sequential(p, s, n, 77).counts, d.p, n, dof);
  CHECK(dof == 255);
  CHECK(chi_seq < dof + 5 * std::sqrt(2.0 * dof));
  const double chi_joint = chi_squared(sample(d, n, 78).counts, d.p, n, dof);
  CHECK(chi_joint < dof + 5 * std::sqrt(2.0 * dof));

  SECTION("cap selects the sequential sampler") {
    const auto forced = sample_process(p, s, 1000, 5, 10);
    CHECK(forced.counts == sample_sequential(p, s, 1000, 5).counts);
    const auto joint = sample_process(p, s, 1000, 5);
    CHECK(joint.counts == sample(d, 1000, 5).counts);
    CHECK(std::accumulate(forced.counts.begin(), forced.counts.end(), std::uint64_t{0}) == 1000);
  }
}

TEST_CASE("sample CSV roundtrip") {
  const auto dir = scratch_dir("roundtrip");
  Random r(53);
  const auto p = testing::random_process(r, {2, 2}).build();
  const auto b = sample_process(p, snapshot_schedule({2, 2}), 2000, 99);
  const auto csv = dir / "samples.csv";
  write_samples(csv, b);
  {
    std::ifstream in(csv);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "alpha_1,alpha_0,count");
    CHECK(first.rfind("0,0,", 0) == 0);
  }
  const auto side = nlohmann::json::parse(std::ifstream(sidecar_path(csv)));
  CHECK(side.at("N") == 2000);
  CHECK(side.at("seed") == 99);
  CHECK(side.at("rng") == "splitmix64-counter");
  CHECK(side.at("outcome_counts") == nlohmann::json::array({16, 16}));

  const auto back = read_samples(csv);
  CHECK(back.counts == b.counts);
  CHECK(back.outcomes == b.outcomes);
  CHECK(back.shots == 2000);
  CHECK(back.seed == 99);

  SECTION("errors") {
    auto expect_io = [](const std::filesystem::path& f) {
      try {
        (void)read_samples(f);
        FAIL("expected an io error");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::io);
      }
    };
    expect_io(dir / "missing.csv");

    const auto bad = dir / "bad.csv";
    std::filesystem::copy_file(sidecar_path(csv), sidecar_path(bad));
    std::ofstream(bad) << "alpha_1,alpha_0,count\n0,0,x\n";
    expect_io(bad);
    std::ofstream(bad) << "alpha_1,alpha_0,count\n16,0,2000\n";
    expect_io(bad);
    std::ofstream(bad) << "alpha_1,alpha_0,count\n0,0,1999\n";
    expect_io(bad);
    std::ofstream(bad) << "alpha_1,alpha_0,count\n0,2000\n";
    expect_io(bad);

    const auto orphan = dir / "orphan.csv";
    std::filesystem::copy_file(csv, orphan);
    expect_io(orphan);
  }
  std::filesystem::remove_all(dir);
}
