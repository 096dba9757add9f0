#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "udad/error.hpp"
#include "udad/nn/network.hpp"
#include "udad/parallel.hpp"

using namespace udad;
using namespace udad::nn;

namespace {

tensor filled(shape_t s, float v) { return tensor(std::move(s), v); }

var sum_all(const var& x) { return weighted_sum(x, tensor(x.shape(), 1.0f)); }

tensor ramp(shape_t s) {
  tensor t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i)));
  return t;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("tensor construction checks the value count") {
  CHECK_THROWS_AS(tensor({2, 2}, std::vector<float>{1, 2, 3}), shape_error);
  tensor t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t[5] == 1.5f);
  CHECK(shape_string({1, 2, 3}) == "(1,2,3)");
}

TEST_CASE("box kernel on a constant volume sums 27 neighbours inside") {
  const float c = 0.75f;
  const auto x = var::constant(filled({1, 1, 4, 4, 4}, c));
  const auto w = var::constant(filled({1, 1, 3, 3, 3}, 1.0f));
  const auto b = var::constant(filled({1}, 0.0f));
  const auto y = conv3d(x, w, b, 1, 1).value();
  REQUIRE(y.shape() == shape_t{1, 1, 4, 4, 4});
  CHECK(y[(1 * 4 + 1) * 4 + 1] == doctest::Approx(27 * c));
  CHECK(y[0] == doctest::Approx(8 * c));                  // corner
  CHECK(y[(0 * 4 + 1) * 4 + 1] == doctest::Approx(18 * c));  // face
  const auto s2 = conv3d(x, w, b, 2, 1).value();
  CHECK(s2.shape() == shape_t{1, 1, 2, 2, 2});
}

TEST_CASE("1x1x1 unit kernel with zero bias is the identity") {
  const auto x = var::constant(ramp({2, 1, 2, 4, 2}));
  const auto y = conv3d(x, var::constant(filled({1, 1, 1, 1, 1}, 1.0f)), var::constant(filled({1}, 0.0f)), 1, 0);
  CHECK(std::equal(y.value().values().begin(), y.value().values().end(), x.value().values().begin()));
}

TEST_CASE("elementwise ops and reshaping ops") {
  const auto x = var::constant(tensor({1, 2, 1, 1, 2}, std::vector<float>{-1, 2, 0, -3}));
  CHECK(relu(x).value()[0] == 0.0f);
  CHECK(relu(x).value()[1] == 2.0f);
  CHECK(sigmoid(x).value()[2] == doctest::Approx(0.5));
  CHECK(sigmoid(var::constant(filled({1}, 1.0f))).value()[0] == doctest::Approx(0.7310586).epsilon(1e-6));
  const auto up = upsample2(x).value();
  CHECK(up.shape() == shape_t{1, 2, 2, 2, 4});
  CHECK(up[0] == -1.0f);
  CHECK(up[2] == 2.0f);
  const auto cat = concat(x, x).value();
  CHECK(cat.shape() == shape_t{1, 4, 1, 1, 2});
  CHECK(slice_channels(var::constant(cat), 2, 1).value()[1] == 2.0f);
  const auto gap = global_avg_pool(x).value();
  CHECK(gap.shape() == shape_t{1, 2});
  CHECK(gap[0] == doctest::Approx(0.5));
  CHECK(gap[1] == doctest::Approx(-1.5));
  CHECK_THROWS_AS(add(x, var::constant(filled({1}, 0))), shape_error);
}

TEST_CASE("masked mean absolute error counts only masked voxels") {
  const auto pred = var::constant(tensor({1, 1, 1, 1, 4}, std::vector<float>{0.2f, 0.9f, 0.5f, 0.0f}));
  const tensor target({1, 1, 1, 1, 4}, std::vector<float>{0.0f, 0.4f, 0.5f, 1.0f});
  const tensor mask({1, 1, 1, 1, 4}, std::vector<float>{1, 1, 0, 0});
  CHECK(masked_mean_abs(pred, target, mask).value()[0] == doctest::Approx(0.35));
}

TEST_CASE("reverse mode through a small chain") {
  auto w = var::parameter(tensor({1, 3}, std::vector<float>{1, -2, 0.5f}), "w");
  const auto b = var::parameter(tensor({1}, std::vector<float>{0.25f}), "b");
  const auto x = var::constant(tensor({2, 3}, std::vector<float>{1, 2, 3, -1, 0, 2}));
  // y_n = w . x_n + b ; loss = mean (y - 1)^2
  const auto loss = mean_squared_to(linear(x, w, b), 1.0);
  // y = (-1.25, 0.25); d loss / d y = (y - 1) -> (-2.25, -0.75)
  CHECK(loss.value()[0] == doctest::Approx((2.25 * 2.25 + 0.75 * 0.75) / 2));
  backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(-2.25 * 1 + -0.75 * -1));
  CHECK(w.grad()[1] == doctest::Approx(-2.25 * 2));
  CHECK(w.grad()[2] == doctest::Approx(-2.25 * 3 + -0.75 * 2));
  CHECK(b.grad()[0] == doctest::Approx(-3.0));
  w.zero_grad();
  CHECK(w.grad().empty());
}

TEST_CASE("no_grad records nothing") {
  const auto w = var::parameter(filled({2}, 1.0f), "w");
  {
    no_grad_guard guard;
    const auto y = scale(w, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(scale(w, 2.0).requires_grad());
  CHECK_FALSE(w.detach().requires_grad());
}

TEST_CASE("generator and discriminator shapes") {
  const auto g = build_generator(7, 1, 2, 4, 1);
  const auto y = forward_generator(g, var::constant(filled({1, 7, 16, 16, 16}, 0.5f)));
  CHECK(y.output.value().shape() == shape_t{1, 1, 16, 16, 16});
  REQUIRE(y.features.size() == 2);
  CHECK(y.features[0].value().shape() == shape_t{1, 4, 8, 8, 8});
  CHECK(y.features[1].value().shape() == shape_t{1, 8, 4, 4, 4});
  CHECK_THROWS_AS(forward_generator(g, var::constant(filled({1, 7, 6, 8, 8}, 0.5f))), shape_error);
  CHECK_THROWS_AS(forward_generator(g, var::constant(filled({1, 3, 8, 8, 8}, 0.5f))), shape_error);

  const auto d = build_discriminator(2, 2, 4, 1);
  CHECK(forward_discriminator(d, var::constant(filled({3, 2, 8, 8, 8}, 0.5f))).value().shape() == shape_t{3, 1});
  CHECK_THROWS_AS(forward_discriminator(g, var::constant(filled({1, 7, 8, 8, 8}, 0.5f))), validation_error);
  CHECK_THROWS_AS(build_generator(7, 1, 1, 4, 1), validation_error);
}

TEST_CASE("parameter counts match the layer layout") {
  // Hand count: enc0 2*1*27+2, enc1 4*2*27+4, dec1 2*6*27+2, dec0 2*3*27+2, head 1*2+1.
  const architecture g{net_role::generator, 1, 1, 2, 2};
  CHECK(expected_parameter_count(g) == 56 + 220 + 326 + 164 + 3);
  CHECK(build_network<float>(g, 0).parameter_count() == expected_parameter_count(g));
  const architecture d{net_role::discriminator, 1, 1, 2, 2};
  CHECK(expected_parameter_count(d) == 56 + 220 + 5);
}

TEST_CASE("initialisation is seeded He-uniform with zero biases") {
  const architecture arch{net_role::generator, 7, 1, 2, 8};
  const auto a = build_network<float>(arch, 3), b = build_network<float>(arch, 3), c = build_network<float>(arch, 4);
  CHECK(encode_network(a) == encode_network(b));
  CHECK(encode_network(a) != encode_network(c));
  const double bound = std::sqrt(6.0 / (7 * 27));
  for (float v : a.params[0].value().values()) CHECK(std::abs(v) <= bound);
  for (float v : a.params[1].value().values()) CHECK(v == 0.0f);
}

TEST_CASE("first Adam step moves by lr whatever the gradient scale") {
  for (float g : {1e-4f, 1.0f, 250.0f, -3.0f}) {
    std::vector<var> params{var::parameter(filled({3}, 1.0f), "p")};
    auto s = sum_all(params[0]);
    backward(scale(s, static_cast<double>(g)));
    adam_state state;
    adam_step(params, state, {1e-3});
    const double moved = 1.0 - params[0].value()[0];
    CHECK(std::abs(moved) == doctest::Approx(1e-3).epsilon(1e-4));
    CHECK((moved > 0) == (g > 0));
    CHECK(state.step == 1);
  }
}

TEST_CASE("non-finite values are refused where they appear") {
  const auto p = var::parameter(filled({2}, 1.0f), "blk");
  CHECK_THROWS_AS(scale(sum_all(p), std::nan("")), poison_error);
}

TEST_CASE("network files round trip exactly") {
  const auto net = build_generator(7, 2, 2, 4, 11);
  const auto bytes = encode_network(net);
  const auto back = decode_network(bytes);
  CHECK(back.arch == net.arch);
  CHECK(encode_network(back) == bytes);
  auto bad = bytes;
  bad[1] = 'x';
  CHECK_THROWS_AS(decode_network(bad), format_error);
  CHECK_THROWS_AS(decode_network(std::span(bytes).first(bytes.size() - 4)), format_error);
  const auto path = std::filesystem::temp_directory_path() / "udad_nn_roundtrip.udnn";
  save_network(net, path);
  CHECK(encode_network(load_network(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("forward and backward do not depend on the worker count") {
  const auto net = build_generator(7, 1, 2, 4, 5);
  auto run = [&](int threads) {
    set_thread_count(threads);
    auto copy = net.clone();
    const auto out = forward_generator(copy, var::constant(ramp({2, 7, 8, 8, 8})));
    backward(sum_all(out.output));
    std::vector<float> all(out.output.value().values().begin(), out.output.value().values().end());
    for (const auto& p : copy.params) all.insert(all.end(), p.grad().values().begin(), p.grad().values().end());
    return all;
  };
  const auto one = run(1);
  CHECK(run(3) == one);
  CHECK(run(4) == one);
  set_thread_count(1);
}

}
