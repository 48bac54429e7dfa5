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

Matrix frame_sum(const OperatorFrame& f) {
  Matrix s = Matrix::Zero(static_cast<Eigen::Index>(f.d()), static_cast<Eigen::Index>(f.d()));
  for (const auto& k : f.elements()) s += k.matrix();
  return s;
}

/// Numerical rank of the HS Gram matrix, computed here with a full SVD.
std::size_t gram_rank_reference(const std::vector<Operator>& ops) {
  const auto m = static_cast<Eigen::Index>(ops.size());
  Matrix g(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) g(a, b) = (ops[a].matrix().adjoint() * ops[b].matrix()).trace();
  Eigen::JacobiSVD<Matrix> svd(g);
  const auto& s = svd.singularValues();
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) > 1e-10 * s(0) ? 1 : 0;
  return r;
}

}  // namespace

TEST_CASE("projector basis") {
  SECTION("d = 1") {
    const auto b = projector_basis(1);
    REQUIRE(b.size() == 1);
    CHECK(b[0](0, 0) == cplx(1.0));
  }
  SECTION("d = 2 is {|0><0|, |1><1|, |+><+|, |R><R|}") {
    const auto b = projector_basis(2);
    REQUIRE(b.size() == 4);
    const double r = 1.0 / std::sqrt(2.0);
    Vector plus(2), right(2);
    plus << r, r;
    right << r, cplx(0, r);
    CHECK(max_abs(b[0].matrix() - projector(basis_vector(2, 0)).matrix()) < 1e-15);
    CHECK(max_abs(b[1].matrix() - projector(basis_vector(2, 1)).matrix()) < 1e-15);
    CHECK(max_abs(b[2].matrix() - plus * plus.adjoint()) < 1e-15);
    CHECK(max_abs(b[3].matrix() - right * right.adjoint()) < 1e-15);
  }
  SECTION("counts, rank one, PSD, independent") {
    for (std::size_t d = 1; d <= 5; ++d) {
      const auto b = projector_basis(d);
      CHECK(b.size() == d + 2 * (d * (d - 1) / 2));
      CHECK(b.size() == d * d);
      for (const auto& p : b) {
        CHECK(min_eigenvalue(p) >= -1e-12);
        CHECK(std::abs(p.trace() - 1.0) < 1e-12);
        CHECK(max_abs(p.matrix() * p.matrix() - p.matrix()) < 1e-12);  // rank-one projector
      }
      CHECK(gram_rank_reference(b) == d * d);
    }
  }
}

TEST_CASE("ic_povm") {
  SECTION("qubit frame sum closed form") {
    Matrix pi = Matrix::Zero(2, 2);
    for (const auto& p : projector_basis(2)) pi += p.matrix();
    Matrix expect(2, 2);
    expect << 2.0, cplx(0.5, -0.5), cplx(0.5, 0.5), 2.0;
    CHECK(max_abs(pi - expect) < 1e-15);
    const Matrix s = inv_sqrt(Operator(pi)).matrix();
    CHECK(max_abs(s * pi * s - Matrix::Identity(2, 2)) < 1e-12);
  }
  for (std::size_t d : {1, 2, 3, 4}) {
    const auto f = ic_povm(d);
    CAPTURE(d);
    CHECK(f.size() == d * d);
    CHECK(f.is_povm());
    CHECK(f.is_ic());
    CHECK(f.gram_rank() == d * d);
    CHECK(max_abs(frame_sum(f) - Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) <= 1e-10);
    for (const auto& k : f.elements()) CHECK(min_eigenvalue(k) >= -1e-12);
    CHECK(std::isfinite(f.gram_condition()));
  }
  SECTION("Gram condition matches an independent eigenvalue ratio") {
    for (std::size_t d : {2, 3}) {
      const auto f = ic_povm(d);
      const auto m = static_cast<Eigen::Index>(f.size());
      RealMatrix g(m, m);
      for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b) g(a, b) = (f[a].matrix() * f[b].matrix()).trace().real();
      Eigen::JacobiSVD<RealMatrix> svd(g);
      const auto& s = svd.singularValues();
      CHECK(f.gram_condition() == Catch::Approx(s(0) / s(m - 1)).epsilon(1e-9));
    }
  }
}

TEST_CASE("projective frames") {
  const auto z = projective_frame(named_basis("z", 2));
  CHECK(z.size() == 2);
  CHECK(z.is_povm());
  CHECK_FALSE(z.is_ic());
  CHECK(max_abs(z.gram() - RealMatrix::Identity(2, 2)) < 1e-15);
  CHECK(max_abs(z[0].matrix() - projector(basis_vector(2, 0)).matrix()) < 1e-15);

  const auto x = projective_frame(named_basis("x", 2));
  Matrix plus = Matrix::Constant(2, 2, 0.5), minus = plus;
  minus(0, 1) = minus(1, 0) = -0.5;
  CHECK(max_abs(x[0].matrix() - plus) < 1e-15);
  CHECK(max_abs(x[1].matrix() - minus) < 1e-15);

  const double r = 1.0 / std::sqrt(2.0);
  Vector p(2);
  p << r, r;
  try {
    (void)projective_frame({basis_vector(2, 0), p});
    FAIL("expected NotOrthonormal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_orthonormal);
  }
  CHECK_THROWS_AS(named_basis("x", 3), Error);
}

TEST_CASE("dual frames") {
  SECTION("orthonormal projective frame is self-dual") {
    const auto z = projective_frame(named_basis("z", 2));
    const auto& g = dual_frame(z);
    for (std::size_t i = 0; i < 2; ++i) CHECK(max_abs(g[i].matrix() - z[i].matrix()) < 1e-14);
  }
  SECTION("biorthogonal reconstruction") {
    Random r(11);
    for (std::size_t d : {2, 3}) {
      const auto f = ic_povm(d);
      const auto& g = dual_frame(f);
      const auto n = static_cast<Eigen::Index>(d);
      for (int t = 0; t < 50; ++t) {
        const Matrix x = r.ginibre(n, n);
        Matrix rec = Matrix::Zero(n, n);
        for (std::size_t b = 0; b < f.size(); ++b) rec += g[b].matrix() * trace_of_product(f[b].matrix(), x);
        CHECK(max_abs(rec - x) <= 1e-10);
      }
      // Tr(G_a K_b) = delta_ab when m = d^2.
      for (std::size_t a = 0; a < f.size(); ++a)
        for (std::size_t b = 0; b < f.size(); ++b)
          CHECK(std::abs(trace_of_product(g[a].matrix(), f[b].matrix()) - (a == b ? 1.0 : 0.0)) < 1e-10);
      for (const auto& x : g) CHECK(x.is_hermitian(1e-12));
    }
  }
  SECTION("repeated element gives SingularGram") {
    auto els = ic_povm(2).elements();
    els.push_back(els.front());
    const auto f = OperatorFrame::from_elements(els, FrameKind::custom);
    CHECK(f.gram_rank() == 4);
    CHECK_FALSE(f.has_dual());
    try {
      (void)dual_frame(f);
      FAIL("expected SingularGram");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::singular_gram);
    }
  }
}

TEST_CASE("expand") {
  const auto f = ic_povm(2);
  for (std::size_t g = 0; g < f.size(); ++g) {
    const Vector c = expand(f[g], f);
    for (Eigen::Index i = 0; i < c.size(); ++i) CHECK(std::abs(c(i) - (static_cast<std::size_t>(i) == g ? 1.0 : 0.0)) < 1e-10);
  }
  const auto z = projective_frame(named_basis("z", 2));
  const Vector one = expand(Operator::identity({2}), z);
  CHECK(std::abs(one(0) - 1.0) < 1e-14);
  CHECK(std::abs(one(1) - 1.0) < 1e-14);

  const Vector sx = expand(pauli::x(), f);
  Matrix resum = Matrix::Zero(2, 2);
  for (std::size_t b = 0; b < f.size(); ++b) resum += sx(static_cast<Eigen::Index>(b)) * f[b].matrix();
  CHECK(max_abs(resum - pauli::x().matrix()) <= 1e-10);

  Random r(12);
  for (int t = 0; t < 20; ++t) {
    const Operator x(r.ginibre(3, 3));
    const auto f3 = ic_povm(3);
    const Vector c = expand(x, f3);
    Matrix back = Matrix::Zero(3, 3);
    for (std::size_t b = 0; b < f3.size(); ++b) back += c(static_cast<Eigen::Index>(b)) * f3[b].matrix();
    CHECK(max_abs(back - x.matrix()) <= 1e-10);
  }
  try {
    (void)expand(pauli::x(), z);
    FAIL("expected NotInSpan");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_in_span);
  }
}

TEST_CASE("frame JSON roundtrip recomputes invariants") {
  const auto f = ic_povm(3);
  const nlohmann::json j = f;
  CHECK(j.at("d") == 3);
  CHECK(j.at("kind") == "ic");
  CHECK(j.at("elements").size() == 9);
  const auto back = frame_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.is_ic());
  CHECK(back.is_povm());
  for (std::size_t i = 0; i < 9; ++i) CHECK(max_abs(back[i].matrix() - f[i].matrix()) == 0);

  nlohmann::json bad = j;
  bad["elements"][0]["re"][0][0] = 5.0;
  CHECK_THROWS_AS(frame_from_json(bad), Error);
}
