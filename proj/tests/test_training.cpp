#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "udad/error.hpp"
#include "udad/training.hpp"

using namespace udad;
using namespace udad::training;

namespace {

std::vector<sample> tiny_dataset(std::size_t n, std::size_t size, double noise = 0.005) {
  std::vector<sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    phantom_spec s;
    s.dims = {size, size, size};
    s.n_directions = 30;
    s.seed = 100 + i;
    s.noise_sigma = noise;
    out.push_back(prepare_sample(make_phantom(s), 6, 0));
  }
  return out;
}

train_config small_config(int epochs) {
  train_config c;
  c.epochs = epochs;
  c.depth = 2;
  c.base_width = 4;
  c.seed = 7;
  return c;
}

nn::tensor volume_of(std::vector<float> v) {
  const std::size_t n = v.size();
  return nn::tensor({1, 1, 1, 1, n}, std::move(v));
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("enum names round trip") {
  for (auto m : {activation_mode::sigmoid, activation_mode::relu, activation_mode::none})
    CHECK(activation_from_string(to_string(m)) == m);
  for (auto m : {gb_output_mode::b0_plus_mean_dwi, gb_output_mode::b0_plus_6dwis})
    CHECK(gb_output_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(activation_from_string("tanh"), validation_error);
}

TEST_CASE("config validation") {
  train_config c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), validation_error);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), validation_error);
  c = {};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), validation_error);
}

TEST_CASE("L_con1 is zero on a match and an L1 mean otherwise") {
  const nn::tensor fa_star = volume_of({0.2f, 0.5f, 0.9f});
  const nn::tensor mask = volume_of({1, 1, 1});
  const auto exact = nn::var::constant(volume_of({0.2f, 0.5f, 0.9f}));
  CHECK(loss_con1(exact, fa_star, mask, activation_mode::none).value()[0] == doctest::Approx(0.0));
  CHECK(loss_con1(exact, fa_star, mask, activation_mode::relu).value()[0] == doctest::Approx(0.0));
  const auto logits = nn::var::constant(volume_of({0.0f, 0.0f, 0.0f}));
  // sigmoid(0) = 0.5 -> |0.3| + 0 + |0.4| over 3.
  CHECK(loss_con1(logits, fa_star, mask, activation_mode::sigmoid).value()[0] == doctest::Approx(0.7 / 3));
  CHECK(loss_con1(logits, fa_star, mask, activation_mode::relu).value()[0] == doctest::Approx(1.6 / 3));
}

TEST_CASE("L_con2 checks the channel count of its mode") {
  const nn::tensor mask({1, 1, 2, 2, 2}, 1.0f);
  const nn::tensor target({1, 2, 2, 2, 2}, 0.5f);
  const auto pred = nn::var::constant(nn::tensor({1, 2, 2, 2, 2}, 0.25f));
  CHECK(loss_con2(pred, target, mask, gb_output_mode::b0_plus_mean_dwi).value()[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(loss_con2(pred, target, mask, gb_output_mode::b0_plus_6dwis), shape_error);
}

TEST_CASE("generator objective weights") {
  CHECK(loss_gen({0.1, 0.2, 0.3}, loss_weights{}) == doctest::Approx(50 * 0.1 + 10 * 0.2 + 0.3));
  CHECK(loss_gen({1, 1, 1}, loss_weights{1, 2, 3}) == doctest::Approx(6.0));
}

TEST_CASE("least-squares discriminator objective") {
  const auto real = nn::var::constant(nn::tensor({2, 1}, std::vector<float>{1.0f, 0.0f}));
  const auto fake = nn::var::constant(nn::tensor({2, 1}, std::vector<float>{0.0f, 1.0f}));
  CHECK(discriminator_loss(real, fake).value()[0] == doctest::Approx(0.5 + 0.5));
  CHECK(discriminator_loss(real, real).value()[0] == doctest::Approx(0.5 + 0.5));
}

TEST_CASE("samples pair a 7-channel input with the full-acquisition FA") {
  const auto data = tiny_dataset(1, 8);
  CHECK(data[0].input.channels() == 7);
  CHECK(data[0].fa_star.dims == dims3{8, 8, 8});
  const auto cfg = small_config(1);
  const auto b = make_batch({&data[0], &data[0]}, cfg);
  CHECK(b.input.shape() == nn::shape_t{2, 7, 8, 8, 8});
  CHECK(b.gb_target.shape() == nn::shape_t{2, 2, 8, 8, 8});
  auto six = cfg;
  six.gb_output = gb_output_mode::b0_plus_6dwis;
  CHECK(make_batch({&data[0]}, six).gb_target.shape() == nn::shape_t{1, 7, 8, 8, 8});
  CHECK_THROWS_AS(make_batch({}, cfg), validation_error);
}

TEST_CASE("gradient checks pass for every op and loss") {
  const auto results = gradcheck_suite(1);
  CHECK(results.size() >= 20);
  for (const auto& r : results) {
    INFO(r.name << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("one epoch on two tiny phantoms gives finite stats") {
  const auto data = tiny_dataset(2, 8);
  const auto m = train(data, small_config(1));
  REQUIRE(m.stats.epochs.size() == 1);
  CHECK(std::isfinite(m.stats.epochs[0].gen));
  CHECK(std::isfinite(m.stats.mu_train));
  CHECK(m.stats.sigma_train > 0.0);
  CHECK(m.stats.train_con1.size() == 2);
}

TEST_CASE("training is deterministic for a seed") {
  const auto data = tiny_dataset(3, 8);
  const auto a = train(data, small_config(2));
  const auto b = train(data, small_config(2));
  CHECK(nn::encode_network(a.g_a) == nn::encode_network(b.g_a));
  CHECK(a.stats.mu_train == b.stats.mu_train);
  auto other = small_config(2);
  other.seed = 8;
  CHECK(nn::encode_network(train(data, other).g_a) != nn::encode_network(a.g_a));
}

TEST_CASE("L_con1 falls between epoch 1 and epoch 20 on 16^3 phantoms") {
  const auto data = tiny_dataset(4, 16);
  train_config cfg;
  cfg.epochs = 20;
  cfg.seed = 3;
  const auto m = train(data, cfg);
  REQUIRE(m.stats.epochs.size() == 20);
  CHECK(m.stats.epochs[19].con1 < m.stats.epochs[0].con1);
}

TEST_CASE("a non-finite loss aborts with its epoch and batch") {
  auto data = tiny_dataset(2, 8);
  data[1].fa_star.data[data[1].fa_star.dims.index(4, 4, 4)] = std::numeric_limits<float>::quiet_NaN();
  data[1].fa_star.mask[data[1].fa_star.dims.index(4, 4, 4)] = 1;
  try {
    train(data, small_config(1));
    FAIL("expected divergence_error");
  } catch (const divergence_error& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() >= 0);
  }
}

TEST_CASE("checkpoints round trip") {
  const auto data = tiny_dataset(2, 8);
  const auto m = train(data, small_config(1));
  const auto dir = std::filesystem::temp_directory_path() / "udad_training_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(m, dir);
  const auto back = load_checkpoint(dir);
  CHECK(nn::encode_network(back.g_a) == nn::encode_network(m.g_a));
  CHECK(nn::encode_network(back.d_b) == nn::encode_network(m.d_b));
  CHECK(back.stats.mu_train == m.stats.mu_train);
  CHECK(back.stats.sigma_train == m.stats.sigma_train);
  CHECK(back.config.activation == m.config.activation);
  CHECK(evaluate_con1(back, data[0]) == evaluate_con1(m, data[0]));
  std::filesystem::remove(dir / "D_A.udnn");
  CHECK_THROWS(load_checkpoint(dir));
  std::filesystem::remove_all(dir);
}

TEST_CASE("stats need a spread") {
  const auto data = tiny_dataset(1, 8);
  auto m = initialize_model(small_config(1));
  CHECK_THROWS_AS(finalize_stats(m, data), validation_error);
}

}
