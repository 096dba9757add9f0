#include <algorithm>
#include <cmath>
#include <functional>

#include "udad/rng.hpp"
#include "udad/training.hpp"

namespace udad::training {

namespace {

using dtensor = nn::basic_tensor<double>;
using dvar = nn::basic_var<double>;
using dnet = nn::basic_network<double>;
using graph_fn = std::function<dvar(const std::vector<dvar>&)>;

class checker {
 public:
  checker(std::uint64_t seed, double h, double tol) : gen_(seed, 0x6C), h_(h), tol_(tol) {}

  dtensor uniform(const nn::shape_t& shape, double lo, double hi) {
    dtensor t(shape);
    for (auto& v : t.values()) v = gen_.uniform(lo, hi);
    return t;
  }

  // Magnitudes in [0.2, 1] with random sign, so kinks at zero stay out of reach of +-h.
  dtensor signed_away(const nn::shape_t& shape) {
    dtensor t(shape);
    for (auto& v : t.values()) v = (gen_.uniform() < 0.5 ? -1.0 : 1.0) * gen_.uniform(0.2, 1.0);
    return t;
  }

  dtensor mask(const nn::shape_t& shape) {
    dtensor t(shape);
    for (auto& v : t.values()) v = gen_.uniform() < 0.7 ? 1.0 : 0.0;
    t[0] = 1.0;
    return t;
  }

  // Reduces f to a scalar through fixed random weights and compares the
  // reverse-mode gradient of every input element with central differences.
  void check(const std::string& name, const std::vector<dtensor>& inputs, const graph_fn& f, double step_scale = 1.0) {
    const double h = h_ * step_scale;
    dtensor weights;
    {
      nn::no_grad_guard guard;
      std::vector<dvar> consts;
      for (const auto& x : inputs) consts.push_back(dvar::constant(x));
      weights = uniform(f(consts).shape(), 0.5, 1.5);
    }
    auto loss = [&](const std::vector<dvar>& xs) { return nn::weighted_sum(f(xs), weights); };

    std::vector<dvar> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back(dvar::parameter(inputs[i], "in" + std::to_string(i)));
    nn::backward(loss(params));

    gradcheck_result r;
    r.name = name;
    r.step = h;
    nn::no_grad_guard guard;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (std::size_t j = 0; j < inputs[i].size(); ++j) {
        std::vector<dvar> xs;
        for (const auto& x : inputs) xs.push_back(dvar::constant(x));
        xs[i].mutable_value()[j] = inputs[i][j] + h;
        const double fp = loss(xs).value()[0];
        xs[i].mutable_value()[j] = inputs[i][j] - h;
        const double fm = loss(xs).value()[0];
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = params[i].grad().empty() ? 0.0 : params[i].grad()[j];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic - numeric) / denom);
        ++r.checked;
      }
    }
    r.passed = r.max_rel_error < tol_;
    results_.push_back(r);
  }

  rng& gen() { return gen_; }
  std::vector<gradcheck_result> take() { return std::move(results_); }

 private:
  rng gen_;
  double h_, tol_;
  std::vector<gradcheck_result> results_;
};

dnet with_params(const dnet& shape_of, const std::vector<dvar>& xs, std::size_t first) {
  dnet net;
  net.arch = shape_of.arch;
  net.params.assign(xs.begin() + static_cast<std::ptrdiff_t>(first),
                    xs.begin() + static_cast<std::ptrdiff_t>(first + shape_of.params.size()));
  return net;
}

// Zero biases put whole dead receptive fields exactly on the ReLU kink,
// where a central difference sees half the slope.
dnet with_random_biases(dnet net, checker& c) {
  for (auto& p : net.params)
    if (p.value().rank() == 1) p = dvar::parameter(c.uniform(p.value().shape(), -0.2, 0.2), p.label());
  return net;
}

std::vector<dtensor> values_of(const dnet& net) {
  std::vector<dtensor> out;
  for (const auto& p : net.params) out.push_back(p.value());
  return out;
}

template <class V>
std::vector<V> cat(std::vector<V> a, const std::vector<V>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::vector<gradcheck_result> gradcheck_suite(std::uint64_t seed, double h, double tolerance) {
  checker c(seed, h, tolerance);

  // Ops
  c.check("conv3d_stride1", {c.uniform({2, 2, 4, 4, 4}, -1, 1), c.uniform({3, 2, 3, 3, 3}, -1, 1), c.uniform({3}, -1, 1)},
          [](const auto& x) { return nn::conv3d(x[0], x[1], x[2], 1, 1); });
  c.check("conv3d_stride2", {c.uniform({2, 2, 4, 4, 4}, -1, 1), c.uniform({3, 2, 3, 3, 3}, -1, 1), c.uniform({3}, -1, 1)},
          [](const auto& x) { return nn::conv3d(x[0], x[1], x[2], 2, 1); });
  c.check("conv3d_1x1", {c.uniform({2, 3, 2, 2, 2}, -1, 1), c.uniform({2, 3, 1, 1, 1}, -1, 1), c.uniform({2}, -1, 1)},
          [](const auto& x) { return nn::conv3d(x[0], x[1], x[2], 1, 0); });
  c.check("relu", {c.signed_away({2, 2, 2, 2, 2})}, [](const auto& x) { return nn::relu(x[0]); });
  c.check("sigmoid", {c.uniform({2, 2, 2, 2, 2}, -3, 3)}, [](const auto& x) { return nn::sigmoid(x[0]); });
  c.check("upsample2", {c.uniform({1, 2, 2, 2, 2}, -1, 1)}, [](const auto& x) { return nn::upsample2(x[0]); });
  c.check("concat", {c.uniform({2, 1, 2, 2, 2}, -1, 1), c.uniform({2, 2, 2, 2, 2}, -1, 1)},
          [](const auto& x) { return nn::concat(x[0], x[1]); });
  c.check("global_avg_pool", {c.uniform({2, 3, 2, 2, 2}, -1, 1)}, [](const auto& x) { return nn::global_avg_pool(x[0]); });
  c.check("linear", {c.uniform({2, 3}, -1, 1), c.uniform({2, 3}, -1, 1), c.uniform({2}, -1, 1)},
          [](const auto& x) { return nn::linear(x[0], x[1], x[2]); });
  c.check("add", {c.uniform({2, 3}, -1, 1), c.uniform({2, 3}, -1, 1)}, [](const auto& x) { return nn::add(x[0], x[1]); });
  c.check("scale", {c.uniform({2, 3}, -1, 1)}, [](const auto& x) { return nn::scale(x[0], -1.7); });
  c.check("slice_channels", {c.uniform({2, 3, 2, 2, 2}, -1, 1)},
          [](const auto& x) { return nn::slice_channels(x[0], 1, 2); });
  c.check("rms_difference", {c.uniform({2, 2, 2, 2, 2}, -1, 1), c.uniform({2, 2, 2, 2, 2}, -1, 1)},
          [](const auto& x) { return nn::rms_difference(x[0], x[1]); });
  c.check("mean_squared_to", {c.uniform({3, 1}, -1, 1)}, [](const auto& x) { return nn::mean_squared_to(x[0], 1.0); });

  // L_con1 under each activation; targets sit >= 0.2 away from predictions.
  const nn::shape_t fa_shape{2, 1, 4, 4, 4};
  const dtensor fa_mask = c.mask(fa_shape);
  for (auto mode : {activation_mode::sigmoid, activation_mode::relu, activation_mode::none}) {
    dtensor logits = c.uniform(fa_shape, 0.2, 1.5);
    dtensor target(fa_shape);
    {
      nn::no_grad_guard guard;
      const auto act = activate(dvar::constant(logits), mode).value();
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = act[i] + (c.gen().uniform() < 0.5 ? -0.2 : 0.2);
    }
    c.check("loss_con1_" + to_string(mode), {logits},
            [=](const auto& x) { return loss_con1(x[0], target, fa_mask, mode); });
  }

  // L_con2 in both reconstruction modes.
  for (auto mode : {gb_output_mode::b0_plus_mean_dwi, gb_output_mode::b0_plus_6dwis}) {
    const nn::shape_t s{2, gb_channels(mode), 4, 4, 4};
    const dtensor target = c.uniform(s, 0, 1);
    c.check("loss_con2_" + to_string(mode), {c.uniform(s, 0, 1)},
            [=](const auto& x) { return loss_con2(x[0], target, fa_mask, mode); });
  }

  // L_enc over two levels, both sides differentiable.
  c.check("loss_enc",
          {c.uniform({2, 2, 4, 4, 4}, 0, 1), c.uniform({2, 4, 2, 2, 2}, 0, 1), c.uniform({2, 2, 4, 4, 4}, 0, 1),
           c.uniform({2, 4, 2, 2, 2}, 0, 1)},
          [](const auto& x) { return loss_enc<double>({x[0], x[1]}, {x[2], x[3]}); });

  // Least-squares objectives on discriminator outputs.
  c.check("lsgan_discriminator", {c.uniform({3, 1}, -1, 2), c.uniform({3, 1}, -1, 2)},
          [](const auto& x) { return discriminator_loss(x[0], x[1]); });
  c.check("lsgan_generator", {c.uniform({3, 1}, -1, 2), c.uniform({3, 1}, -1, 2)}, [](const auto& x) {
    return nn::add(nn::mean_squared_to(x[0], 1.0), nn::mean_squared_to(x[1], 1.0));
  });

  // The same terms through small discriminators, against inputs and weights.
  constexpr double through_network = 1e-2;
  const dnet d_a =
      with_random_biases(nn::build_network<double>({nn::net_role::discriminator, 1, 1, 2, 2}, splitmix64(seed ^ 0xDA)), c);
  const dnet d_b =
      with_random_biases(nn::build_network<double>({nn::net_role::discriminator, 2, 1, 2, 2}, splitmix64(seed ^ 0xDB)), c);
  const dtensor fake_fa = c.uniform({2, 1, 8, 8, 8}, 0, 1);
  const dtensor fake_pair = c.uniform({2, 2, 8, 8, 8}, 0, 1);
  c.check("d_loss_a", cat({c.uniform({2, 1, 8, 8, 8}, 0, 1)}, values_of(d_a)), [&](const auto& x) {
    return d_loss_a(x[0], dvar::constant(fake_fa), with_params(d_a, x, 1));
  }, through_network);
  c.check("d_loss_b", cat({c.uniform({2, 2, 8, 8, 8}, 0, 1)}, values_of(d_b)), [&](const auto& x) {
    return d_loss_b(x[0], dvar::constant(fake_pair), with_params(d_b, x, 1));
  }, through_network);
  c.check("g_adv", cat(cat({fake_fa, fake_pair}, values_of(d_a)), values_of(d_b)), [&](const auto& x) {
    return g_adv(x[0], x[1], with_params(d_a, x, 2), with_params(d_b, x, 2 + d_a.params.size()));
  }, through_network);
  c.check("loss_gen", {c.uniform({1}, 0, 1), c.uniform({1}, 0, 1), c.uniform({1}, 0, 1)},
          [](const auto& x) { return loss_gen(x[0], x[1], x[2], loss_weights{}); });

  // Whole generator, input and weights.
  const dnet g =
      with_random_biases(nn::build_network<double>({nn::net_role::generator, 2, 1, 2, 2}, splitmix64(seed ^ 0x6A)), c);
  c.check("generator", cat({c.uniform({1, 2, 4, 4, 4}, 0, 1)}, values_of(g)),
          [&](const auto& x) { return nn::forward_generator(with_params(g, x, 1), x[0]).output; }, through_network);

  return c.take();
}

}  // namespace udad::training
