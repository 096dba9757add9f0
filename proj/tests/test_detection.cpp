#include <cmath>

#include "doctest.h"
#include "udad/artifacts.hpp"
#include "udad/detection.hpp"
#include "udad/dti.hpp"
#include "udad/error.hpp"

using namespace udad;
using namespace udad::detection;

namespace {

// 1 - logistic(z) = logistic(-z), without the stable branching.
double naive_score(double z) { return 1.0 / (1.0 + std::exp(z)); }

training::model untrained(std::size_t depth = 2) {
  training::train_config cfg;
  cfg.depth = depth;
  cfg.base_width = 4;
  auto m = training::initialize_model(cfg);
  m.stats.mu_train = 0.2;
  m.stats.sigma_train = 0.05;
  return m;
}

dwi_stack phantom(std::uint64_t seed) {
  phantom_spec s;
  s.dims = {8, 8, 8};
  s.n_directions = 20;
  s.seed = seed;
  s.noise_sigma = 0.005;
  return make_phantom(s);
}

}  // namespace

TEST_SUITE("detection") {

TEST_CASE("score closed forms") {
  CHECK(confidence_score(0.3, 0.3, 0.1) == 0.5);
  CHECK(std::abs(confidence_score(0.2, 0.3, 0.1) - 0.7310585786300049) < 1e-6);
  CHECK(confidence_score(0.4, 0.3, 0.1) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  CHECK(confidence_score(1.0 + 10 * 0.5, 1.0, 0.5) == doctest::Approx(4.5397868702434395e-05).epsilon(1e-9));
  CHECK(confidence_score(1.0 - 10 * 0.5, 1.0, 0.5) == doctest::Approx(0.9999546021312976).epsilon(1e-12));
  for (double z = -30; z <= 30; z += 0.25)
    CHECK(confidence_score(z, 0.0, 1.0) == doctest::Approx(naive_score(z)).epsilon(1e-12));
}

TEST_CASE("score is finite and bounded at extreme z") {
  CHECK(confidence_score(1e6, 0.0, 1.0) == 0.0);
  CHECK(confidence_score(-1e6, 0.0, 1.0) == 1.0);
  CHECK(confidence_score(800, 0.0, 1.0) >= 0.0);
  CHECK_THROWS_AS(confidence_score(0.1, 0.0, 0.0), validation_error);
  CHECK_THROWS_AS(confidence_score(0.1, 0.0, -1.0), validation_error);
  CHECK_THROWS_AS(confidence_score(std::nan(""), 0.0, 1.0), validation_error);
}

TEST_CASE("score decreases monotonically in the error") {
  double prev = 2.0;
  for (int i = 0; i < 1000; ++i) {
    const double s = confidence_score(-1.0 + 2.0 * i / 999.0, 0.0, 0.1);
    CHECK(s < prev);
    prev = s;
  }
}

TEST_CASE("classification thresholds the score") {
  training::train_stats st;
  st.mu_train = 0.1;
  st.sigma_train = 0.01;
  const auto clean = classify(0.1, st);
  CHECK(clean.score == 0.5);
  CHECK_FALSE(clean.is_artifact);
  CHECK(clean.gamma == default_gamma);
  const auto bad = classify(0.2, st);
  CHECK(bad.is_artifact);
  CHECK(bad.l_con1 == 0.2);
  CHECK(classify(0.1, st, 0.6).is_artifact);
  CHECK_THROWS_AS(classify(0.1, st, 0.0), validation_error);
  CHECK_THROWS_AS(classify(0.1, st, 1.0), validation_error);
}

TEST_CASE("scoring checks inputs against the model") {
  const auto m = untrained();
  const auto full = phantom(1);
  const auto fa = dti::compute_fa_map(full);
  CHECK_THROWS_AS(score_sample(full, fa, m), shape_error);
  const auto sub = subsample(full, 6, 0);
  auto other = fa;
  other.dims = {4, 4, 4};
  CHECK_THROWS_AS(score_sample(sub, other, m), shape_error);
  const auto r = score_sample(sub, fa, m);
  CHECK(r.score > 0.0);
  CHECK(r.score < 1.0);
  CHECK(r.is_artifact == (r.score < r.gamma));
}

TEST_CASE("subject scores keep the lowest draw") {
  const auto m = untrained();
  const auto full = phantom(2);
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto all = score_subject(full, m, 6, seeds);
  double lowest = 1.0;
  const auto fa = dti::compute_fa_map(full);
  for (auto s : seeds) lowest = std::min(lowest, score_sample(subsample(full, 6, s), fa, m).score);
  CHECK(all.score == lowest);
  CHECK_THROWS_AS(score_subject(full, m, 6, std::span<const std::uint64_t>{}), validation_error);
}

TEST_CASE("zeroed input channels raise the error of a fixed model") {
  const auto m = untrained();
  const auto full = phantom(3);
  const auto fa = dti::compute_fa_map(full);
  const auto sub = subsample(full, 6, 0);
  const auto clean = score_sample(sub, fa, m);
  const auto broken = score_sample(artifacts::corrupt_volumes(sub, {{0, 1, 2, 3, 4, 5, 6}}).stack, fa, m);
  CHECK(broken.l_con1 != clean.l_con1);
}

}
