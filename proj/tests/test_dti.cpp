#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "udad/dti.hpp"
#include "udad/error.hpp"
#include "udad/rng.hpp"

using namespace udad;
using dti::tensor6;

namespace {

Eigen::Matrix3d full(const tensor6& t) {
  Eigen::Matrix3d m;
  m << t[0], t[1], t[2], t[1], t[3], t[4], t[2], t[4], t[5];
  return m;
}

// Textbook FA, kept separate from the library formula.
double fa_reference(double a, double b, double c) {
  const double num = (a - b) * (a - b) + (b - c) * (b - c) + (c - a) * (c - a);
  const double den = a * a + b * b + c * c;
  return den == 0.0 ? 0.0 : std::sqrt(0.5 * num / den);
}

tensor6 random_spd(rng& g) {
  Eigen::Matrix3d a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = g.uniform(-1, 1);
  const Eigen::Matrix3d m = (a * a.transpose() + 0.1 * Eigen::Matrix3d::Identity()) * 1e-3;
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
}

phantom_spec spec_for(dims3 dims, std::size_t dirs, double noise = 0.0, std::uint64_t seed = 2) {
  phantom_spec s;
  s.dims = dims;
  s.n_directions = dirs;
  s.noise_sigma = noise;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("dti") {

TEST_CASE("forward signal model") {
  const tensor6 iso{0.7e-3, 0, 0, 0.7e-3, 0, 0.7e-3};
  CHECK(dti::predict_signal(iso, 1000, {1, 0, 0}, 1000) == doctest::Approx(496.585).epsilon(1e-5));
  CHECK(dti::predict_signal(iso, 1000, {0, 0, 0}, 0) == 1000.0);
  const tensor6 stick{1.7e-3, 0, 0, 0.3e-3, 0, 0.3e-3};
  CHECK(dti::predict_signal(stick, 1, {1, 0, 0}, 1000) == doctest::Approx(std::exp(-1.7)));
  CHECK(dti::predict_signal(stick, 1, {0, 1, 0}, 1000) == doctest::Approx(std::exp(-0.3)));
  CHECK_THROWS_AS(dti::predict_signal(iso, 1000, {1, 1, 0}, 1000), validation_error);
  CHECK_THROWS_AS(dti::predict_signal(iso, -1, {1, 0, 0}, 1000), validation_error);
  CHECK_THROWS_AS(dti::predict_signal(iso, 1, {1, 0, 0}, -5), validation_error);
}

TEST_CASE("noiseless fit recovers the phantom tensors") {
  const auto spec = spec_for({8, 8, 8}, 30);
  const auto stack = make_phantom(spec);
  const auto truth = phantom_tensors(spec);
  const auto fit = dti::fit_tensor(stack);
  double worst = 0.0;
  for (std::size_t v = 0; v < truth.tensors.size(); ++v) {
    CHECK(fit.mask[v] == truth.mask[v]);
    if (!truth.mask[v]) continue;
    for (int k = 0; k < 6; ++k) worst = std::max(worst, std::abs(fit.tensors[v][k] - truth.tensors[v][k]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("rank-deficient encodings are rejected") {
  std::vector<gradient_entry> e{{{0, 0, 0}, 0}};
  for (int i = 0; i < 6; ++i) e.push_back({{1, 0, 0}, 1000});
  dwi_stack s{channel_array(7, {1, 1, 1}, 500.0f), gradient_scheme(e)};
  s.signal.data[0] = 1000.0f;
  CHECK_THROWS_AS(dti::fit_tensor(s), fit_error);
}

TEST_CASE("voxels with a non-positive b0 keep the mask and get a zero tensor") {
  auto stack = make_phantom(spec_for({8, 8, 8}, 12));
  const dims3 d = stack.dims();
  const std::size_t v = d.index(4, 4, 4);
  stack.signal.channel(0)[v] = 0.0f;
  const auto fit = dti::fit_tensor(stack);
  CHECK(fit.mask[v] == 1);
  for (double x : fit.tensors[v]) CHECK(x == 0.0);
  const auto fa = dti::compute_fa_map(stack);
  CHECK(fa.data[v] == 0.0f);
  CHECK(fa.mask[v] == 1);
}

TEST_CASE("eigenvalues agree with a reference solver") {
  rng g(5);
  for (int trial = 0; trial < 500; ++trial) {
    const tensor6 t = random_spd(g);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> ref(full(t));
    const auto ev = ref.eigenvalues();  // ascending
    const auto closed = dti::eig_sym3(t);
    const auto jac = dti::eig_sym3_jacobi(t);
    CHECK(closed.l1 == doctest::Approx(ev(2)).epsilon(1e-9).scale(1e-3));
    CHECK(closed.l2 == doctest::Approx(ev(1)).epsilon(1e-9).scale(1e-3));
    CHECK(closed.l3 == doctest::Approx(ev(0)).epsilon(1e-9).scale(1e-3));
    CHECK(jac.l1 == doctest::Approx(ev(2)).epsilon(1e-9).scale(1e-3));
    CHECK(jac.l3 == doctest::Approx(ev(0)).epsilon(1e-9).scale(1e-3));
  }
}

TEST_CASE("eigenvalues near repeated roots") {
  const tensor6 triple{2, 0, 0, 2, 0, 2};
  const auto e = dti::eig_sym3(triple);
  CHECK(e.l1 == doctest::Approx(2));
  CHECK(e.l3 == doctest::Approx(2));

  const tensor6 near{1e-3, 1e-12, 0, 1e-3, 0, 0.5e-3};
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> ref(full(near));
  const auto n = dti::eig_sym3(near);
  CHECK(n.l1 == doctest::Approx(ref.eigenvalues()(2)).epsilon(1e-12));
  CHECK(n.l2 == doctest::Approx(ref.eigenvalues()(1)).epsilon(1e-12));
  CHECK(n.l3 == doctest::Approx(ref.eigenvalues()(0)).epsilon(1e-12));
}

TEST_CASE("FA closed forms") {
  CHECK(std::abs(dti::fa_from_eigs({3, 3, 3})) < 1e-12);
  CHECK(std::abs(dti::fa_from_eigs({1, 0, 0}) - 1.0) < 1e-12);
  CHECK(dti::fa_from_eigs({2, 1, 1}) == doctest::Approx(fa_reference(2, 1, 1)).epsilon(1e-12));
  CHECK(std::abs(dti::fa_from_eigs({2, 1, 1}) - 0.40825) < 1e-5);
  CHECK(dti::fa_from_eigs({0, 0, 0}) == 0.0);
  // Negative eigenvalues clamp to zero.
  CHECK(dti::fa_from_eigs({1, 0, -0.5}) == doctest::Approx(1.0));
  rng g(8);
  for (int i = 0; i < 100; ++i) {
    double l[3] = {g.uniform(0, 3e-3), g.uniform(0, 3e-3), g.uniform(0, 3e-3)};
    std::sort(l, l + 3, std::greater<>());
    CHECK(dti::fa_from_eigs({l[0], l[1], l[2]}) == doctest::Approx(fa_reference(l[0], l[1], l[2])).epsilon(1e-10));
  }
}

TEST_CASE("FA maps stay in [0, 1] under heavy noise") {
  for (double noise : {0.0, 0.05, 0.2}) {
    const auto fa = dti::compute_fa_map(make_phantom(spec_for({8, 8, 8}, 20, noise, 6)));
    for (std::size_t v = 0; v < fa.data.size(); ++v) {
      CHECK(fa.data[v] >= 0.0f);
      CHECK(fa.data[v] <= 1.0f);
      if (!fa.mask[v]) CHECK(fa.data[v] == 0.0f);
    }
  }
}

TEST_CASE("support mask is any positive channel") {
  gradient_scheme scheme({{{0, 0, 0}, 0}, {{1, 0, 0}, 1000}});
  dwi_stack s{channel_array(2, {1, 1, 3}), scheme};
  s.signal.channel(1)[1] = 3.0f;
  s.signal.channel(0)[2] = 1.0f;
  CHECK(dti::support_mask(s) == std::vector<std::uint8_t>{0, 1, 1});
}

}
