#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "udad/error.hpp"
#include "udad/parallel.hpp"
#include "udad/rng.hpp"
#include "udad/volume.hpp"

using namespace udad;

namespace {

phantom_spec small_spec(std::uint64_t seed = 3, double noise = 0.0) {
  phantom_spec s;
  s.dims = {8, 8, 8};
  s.n_directions = 30;
  s.seed = seed;
  s.noise_sigma = noise;
  return s;
}

double norm(const vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

// Direct antipodal angle, written independently of the library.
double axis_angle(const vec3& a, const vec3& b) {
  const double c = std::abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (norm(a) * norm(b));
  return std::acos(std::min(1.0, c));
}

double min_angle_of(const std::vector<vec3>& dirs) {
  double best = std::numbers::pi;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j) best = std::min(best, axis_angle(dirs[i], dirs[j]));
  return best;
}

}  // namespace

TEST_SUITE("volume") {

TEST_CASE("dims index is row-major with depth fastest") {
  const dims3 d{2, 3, 4};
  CHECK(d.voxels() == 24);
  CHECK(d.index(0, 0, 1) == 1);
  CHECK(d.index(0, 1, 0) == 4);
  CHECK(d.index(1, 0, 0) == 12);
  CHECK(d.index(1, 2, 3) == 23);
}

TEST_CASE("gradient scheme validation") {
  CHECK_THROWS_AS(gradient_scheme({{{1, 1, 0}, 1000}}).validate(), validation_error);
  CHECK_THROWS_AS(gradient_scheme({{{0, 0, 0}, -1}}).validate(), validation_error);
  CHECK_NOTHROW(gradient_scheme({{{0, 0, 0}, 0}, {{1, 0, 0}, 1000}}).validate());

  std::vector<gradient_entry> e{{{0, 0, 0}, 0}};
  for (const auto& d : half_sphere_directions(5, 0)) e.push_back({d, 1000});
  CHECK_THROWS_AS(gradient_scheme(e).validate_for_fit(), validation_error);
  e.push_back({{0, 0, 1}, 1000});
  CHECK_NOTHROW(gradient_scheme(e).validate_for_fit());
  e.erase(e.begin());
  CHECK_THROWS_AS(gradient_scheme(e).validate_for_fit(), validation_error);
}

TEST_CASE("half-sphere directions are unit, spread and seeded") {
  const auto a = half_sphere_directions(90, 1);
  REQUIRE(a.size() == 90);
  for (const auto& d : a) CHECK(norm(d) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(min_angle_of(a) > 0.1);
  CHECK(half_sphere_directions(90, 1) == a);
  CHECK(half_sphere_directions(90, 2) != a);
}

TEST_CASE("phantom: b0 equals S0 in the brain and zero outside when noiseless") {
  const auto spec = small_spec();
  const auto stack = make_phantom(spec);
  const auto truth = phantom_tensors(spec);
  REQUIRE(stack.channels() == 31);
  CHECK(stack.scheme.b0_indices() == std::vector<std::size_t>{0});
  const auto b0 = stack.signal.channel(0);
  std::size_t inside = 0;
  for (std::size_t v = 0; v < b0.size(); ++v) {
    if (truth.mask[v]) {
      CHECK(b0[v] == doctest::Approx(phantom_s0));
      ++inside;
    } else {
      CHECK(b0[v] == 0.0f);
    }
  }
  CHECK(inside > 0);
  CHECK_NOTHROW(stack.validate());
}

TEST_CASE("phantom: noise stays inside the brain and the stack is deterministic") {
  const auto spec = small_spec(4, 0.05);
  const auto a = make_phantom(spec);
  const auto truth = phantom_tensors(spec);
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (std::size_t v = 0; v < a.dims().voxels(); ++v)
      if (!truth.mask[v]) CHECK(a.signal.channel(c)[v] == 0.0f);
  CHECK(make_phantom(spec).signal.data == a.signal.data);
  auto other = spec;
  other.seed = 5;
  CHECK(make_phantom(other).signal.data != a.signal.data);
}

TEST_CASE("isotropic phantom has equal DWI signals per voxel") {
  auto spec = small_spec();
  spec.anatomy = phantom_anatomy::isotropic;
  const auto s = make_phantom(spec);
  const dims3 d = s.dims();
  const std::size_t v = d.index(4, 4, 4);
  for (std::size_t c = 2; c < s.channels(); ++c)
    CHECK(s.signal.channel(c)[v] == doctest::Approx(s.signal.channel(1)[v]).epsilon(1e-5));
}

TEST_CASE("subsample keeps the b0 and k ascending DWIs") {
  const auto stack = make_phantom(small_spec());
  const auto idx = subsample_indices(stack.scheme, 6, 0);
  REQUIRE(idx.size() == 7);
  CHECK(idx.front() == 0);
  CHECK(std::is_sorted(idx.begin() + 1, idx.end()));
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());

  const auto sub = subsample(stack, 6, 0);
  REQUIRE(sub.channels() == 7);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    CHECK(sub.scheme[i].direction == stack.scheme[idx[i]].direction);
    CHECK(std::equal(sub.signal.channel(i).begin(), sub.signal.channel(i).end(),
                     stack.signal.channel(idx[i]).begin()));
  }
  CHECK(subsample_indices(stack.scheme, 6, 0) == idx);
  CHECK_THROWS_AS(subsample(stack, 31, 0), validation_error);
  CHECK_THROWS_AS(subsample(stack, 0, 0), validation_error);
}

TEST_CASE("subsample spreads directions better than random draws") {
  phantom_spec spec = small_spec();
  spec.n_directions = 90;
  const auto scheme = phantom_scheme(spec);
  const auto idx = subsample_indices(scheme, 6, 7);
  std::vector<vec3> chosen;
  for (std::size_t i = 1; i < idx.size(); ++i) chosen.push_back(scheme[idx[i]].direction);
  const double greedy = min_angle_of(chosen);
  CHECK(min_pairwise_angle(chosen) == doctest::Approx(greedy).epsilon(1e-12));

  rng gen(11);
  std::vector<std::size_t> dwis = scheme.dwi_indices();
  int beaten = 0;
  const int draws = 1000;
  for (int t = 0; t < draws; ++t) {
    for (std::size_t i = dwis.size(); i > 1; --i) std::swap(dwis[i - 1], dwis[gen.below(i)]);
    std::vector<vec3> pick;
    for (std::size_t i = 0; i < 6; ++i) pick.push_back(scheme[dwis[i]].direction);
    if (greedy >= min_angle_of(pick)) ++beaten;
  }
  CHECK(beaten >= 990);
}

TEST_CASE("min pairwise angle") {
  CHECK(min_pairwise_angle(std::vector<vec3>{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}) ==
        doctest::Approx(std::numbers::pi / 2));
  CHECK(min_pairwise_angle(std::vector<vec3>{{1, 0, 0}, {-1, 0, 0}}) == doctest::Approx(0.0));
}

TEST_CASE("average of DWIs excludes the b0") {
  gradient_scheme scheme({{{0, 0, 0}, 0}, {{1, 0, 0}, 1000}, {{0, 1, 0}, 1000}, {{0, 0, 1}, 1000}});
  dwi_stack s{channel_array(4, {1, 1, 2}), scheme};
  const float vals[4][2] = {{100, 50}, {10, 1}, {20, 2}, {60, 6}};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t v = 0; v < 2; ++v) s.signal.channel(c)[v] = vals[c][v];
  const auto avg = average_dwis(s);
  REQUIRE(avg.channels == 1);
  CHECK(avg.data[0] == doctest::Approx(30.0));
  CHECK(avg.data[1] == doctest::Approx(3.0));
}

TEST_CASE("channel concatenation with an empty operand is the identity") {
  const auto s = make_phantom(small_spec());
  const auto same = concat_channels(s.signal, channel_array{});
  CHECK(same.data == s.signal.data);
  const auto both = concat_channels(s, s);
  CHECK(both.channels() == 2 * s.channels());
  CHECK(both.scheme.size() == 2 * s.scheme.size());
  CHECK(std::equal(s.signal.data.begin(), s.signal.data.end(), both.signal.channel(s.channels()).begin()));
  CHECK_THROWS_AS(concat_channels(s.signal, channel_array(1, {2, 2, 2})), shape_error);
}

TEST_CASE("DVOL round trip is byte exact") {
  auto s = make_phantom(small_spec(1, 0.02));
  s.voxel_size = {1.25, 1.5, 2.0};
  const auto bytes = encode_dvol(s);
  const auto back = decode_dvol(bytes);
  CHECK(back.signal.data == s.signal.data);
  CHECK(back.voxel_size == s.voxel_size);
  CHECK(back.scheme.size() == s.scheme.size());
  CHECK(encode_dvol(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "udad_volume_roundtrip.dvol";
  save_dvol(s, path);
  CHECK(encode_dvol(load_dvol(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("DVOL decoding rejects bad input") {
  const auto bytes = encode_dvol(make_phantom(small_spec()));
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_dvol(bad);
    FAIL("expected format_error");
  } catch (const format_error& e) {
    CHECK(e.code() == format_errc::magic_mismatch);
  }
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 5);
  try {
    decode_dvol(cut);
    FAIL("expected format_error");
  } catch (const format_error& e) {
    CHECK(e.code() == format_errc::truncated);
  }
  CHECK_THROWS_AS(load_dvol("/nonexistent/none.dvol"), format_error);
}

TEST_CASE("FA map files keep values and take the mask from the support") {
  fa_map fa;
  fa.dims = {2, 2, 2};
  fa.data = {0, 0.25f, 0.5f, 0, 1, 0.125f, 0, 0.75f};
  fa.mask = {0, 1, 1, 0, 1, 1, 0, 1};
  const auto path = std::filesystem::temp_directory_path() / "udad_volume_fa.dvol";
  save_fa_map(fa, path);
  const auto back = load_fa_map(path);
  CHECK(back.data == fa.data);
  CHECK(back.mask == fa.mask);
  CHECK(back.mask_count() == 5);
  std::filesystem::remove(path);
}

TEST_CASE("parallel_for covers every index once for any worker count") {
  for (int threads : {1, 2, 3, 8}) {
    set_thread_count(threads);
    std::vector<int> hits(1001, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
  set_thread_count(1);
}

TEST_CASE("phantom is independent of the worker count") {
  set_thread_count(1);
  const auto one = make_phantom(small_spec(9, 0.03));
  set_thread_count(4);
  const auto four = make_phantom(small_spec(9, 0.03));
  set_thread_count(1);
  CHECK(one.signal.data == four.signal.data);
}

}
