#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "udad/error.hpp"
#include "udad/eval.hpp"
#include "udad/rng.hpp"

using namespace udad;
using namespace udad::eval;

namespace {

// Pairwise count, ties as half.
double auc_pairs(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / static_cast<double>(pos.size() * neg.size());
}

manifest small_manifest(std::uint64_t seed) {
  manifest m;
  m.seed = seed;
  m.phantom.dims = {8, 8, 8};
  m.phantom.n_directions = 20;
  m.n_train = 3;
  m.train.depth = 2;
  m.train.base_width = 4;
  m.n_clean = 6;
  m.n_artifact = 4;
  return m;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("metrics from a confusion matrix") {
  const auto v = metrics_from_confusion({29, 1, 19, 1});
  CHECK(std::abs(v.acc - 0.96) < 5e-5);
  CHECK(std::abs(v.f1 - 0.966666) < 5e-5);
  CHECK(std::abs(v.sen - 0.966666) < 5e-5);
  CHECK(std::abs(v.spe - 0.95) < 5e-5);
  CHECK(v.f1 == doctest::Approx(2.0 * 29 / (2.0 * 29 + 1 + 1)));
  CHECK_THROWS_AS(metrics_from_confusion({0, 0, 3, 1}), validation_error);
  CHECK_THROWS_AS(metrics_from_confusion({3, 1, 0, 0}), validation_error);
}

TEST_CASE("rank AUC matches a pairwise count") {
  CHECK(auc_from_scores(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}) == 1.0);
  CHECK(auc_from_scores(std::vector<double>{0.1}, std::vector<double>{0.9}) == 0.0);
  CHECK(auc_from_scores(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5}) == 0.5);
  rng g(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> pos(1 + g.below(15)), neg(1 + g.below(15));
    for (auto& v : pos) v = std::round(g.uniform() * 20) / 20;
    for (auto& v : neg) v = std::round(g.uniform() * 20) / 20;
    CHECK(auc_from_scores(pos, neg) == doctest::Approx(auc_pairs(pos, neg)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(auc_from_scores(std::vector<double>{}, std::vector<double>{0.1}), validation_error);
}

TEST_CASE("manifest JSON round trips and rejects unknown keys") {
  const auto m = resolve(small_manifest(4));
  const auto text = manifest_to_json(m);
  const auto back = manifest_from_json(text);
  CHECK(manifest_to_json(back) == text);
  CHECK(back.subjects.size() == 10);
  CHECK_THROWS_AS(manifest_from_json(R"({"schema":"udad-manifest/1","sed":1})"), validation_error);
  CHECK_THROWS_AS(manifest_from_json(R"({"schema":"udad-manifest/2"})"), validation_error);
  CHECK_THROWS_AS(manifest_from_json(R"({"schema":"udad-manifest/1","train":{"epoch":3}})"), validation_error);
  CHECK_THROWS_AS(manifest_from_json("{not json"), validation_error);
  const auto defaults = manifest_from_json(R"({"schema":"udad-manifest/1","seed":9})");
  CHECK(defaults.seed == 9);
  CHECK(defaults.n_clean == 12);
  CHECK(defaults.n_artifact == 8);
}

TEST_CASE("manifest validation") {
  auto m = small_manifest(1);
  CHECK_NOTHROW(m.validate());
  m.phantom.dims = {12, 12, 12};
  m.train.depth = 3;
  CHECK_THROWS_AS(m.validate(), validation_error);
  m = small_manifest(1);
  m.gamma = 1.0;
  CHECK_THROWS_AS(m.validate(), validation_error);
  m = small_manifest(1);
  m.n_train = 1;
  CHECK_THROWS_AS(m.validate(), validation_error);
}

TEST_CASE("planned cohorts are balanced, seeded and disjoint from training") {
  manifest m;
  m.seed = 5;
  const auto cohort = plan_cohort(m);
  REQUIRE(cohort.size() == 20);
  std::map<subject_kind, int> counts;
  std::set<std::uint64_t> seeds;
  for (const auto& s : cohort) {
    ++counts[s.kind()];
    seeds.insert(s.phantom_seed);
  }
  CHECK(counts[subject_kind::clean] == 12);
  CHECK(counts[subject_kind::bias_field] == 3);
  CHECK(counts[subject_kind::distortion] == 3);
  CHECK(counts[subject_kind::corrupted] == 2);
  CHECK(seeds.size() == 20);
  for (auto t : training_seeds(m)) CHECK(seeds.count(t) == 0);
  CHECK(manifest_to_json(resolve(m)) == manifest_to_json(resolve(m)));
  m.seed = 6;
  CHECK(plan_cohort(m)[0].phantom_seed != cohort[0].phantom_seed);
}

TEST_CASE("realized subjects carry their artifact") {
  auto m = resolve(small_manifest(2));
  for (const auto& s : m.subjects) {
    const auto stack = realize_subject(m, s);
    CHECK(stack.channels() == 21);
    if (s.kind() == subject_kind::corrupted) {
      const auto ch = std::get<artifacts::corrupted>(*s.artifact).channel_indices;
      REQUIRE(!ch.empty());
      const auto z = stack.signal.channel(ch[0]);
      CHECK(std::all_of(z.begin(), z.end(), [](float v) { return v == 0.0f; }));
    }
  }
}

TEST_CASE("mid-axial PGM export") {
  const dims3 d{2, 2, 4};
  std::vector<float> vol(d.voxels(), 0.0f);
  vol[d.index(0, 0, 2)] = 1.0f;
  vol[d.index(1, 1, 2)] = 3.0f;
  vol[d.index(0, 0, 0)] = 100.0f;  // other slice
  const auto pgm = mid_axial_pgm(vol, d);
  const std::string header(pgm.begin(), pgm.begin() + 11);
  CHECK(header == "P5\n2 2\n255\n");
  REQUIRE(pgm.size() == 11 + 4);
  CHECK(pgm[11] == 85);   // 1/3 of 255
  CHECK(pgm[14] == 255);
  CHECK(pgm[12] == 0);
}

TEST_CASE("reports serialise every subject") {
  report r;
  r.counts = {1, 0, 1, 0};
  r.values = metrics_from_confusion(r.counts);
  r.rows = {{"sub-000", subject_kind::clean, 0.1, 0.6, false}, {"sub-001", subject_kind::distortion, 0.3, 0.01, true}};
  const auto csv = report_csv(r);
  CHECK(csv.rfind("subject_id,kind,l_con1,score,predicted,truth\n", 0) == 0);
  CHECK(csv.find("sub-001,distortion,0.29999999999999999,0.01,artifact,artifact") != std::string::npos);
  const auto js = report_json(r);
  CHECK(js.find("\"udad-report/1\"") != std::string::npos);
  CHECK(js.find("\"positive_class\"") != std::string::npos);
}

TEST_CASE("an untrained model ranks near chance on average") {
  double sum = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    auto m = small_manifest(1000 + static_cast<std::uint64_t>(s));
    m.n_clean = 6;
    m.n_artifact = 4;
    m = resolve(m);
    auto model = training::initialize_model(m.train);
    training::finalize_stats(model, training_set(m));
    sum += evaluate(m, model).auc_rank;
  }
  const double mean = sum / seeds;
  MESSAGE("mean null AUC " << mean);
  CHECK(mean >= 0.3);
  CHECK(mean <= 0.7);
}

}
