#include "udad/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "udad/dti.hpp"
#include "udad/rng.hpp"

namespace udad::training {

std::string to_string(activation_mode m) {
  switch (m) {
    case activation_mode::sigmoid: return "sigmoid";
    case activation_mode::relu: return "relu";
    case activation_mode::none: return "none";
  }
  return "sigmoid";
}

std::string to_string(gb_output_mode m) {
  return m == gb_output_mode::b0_plus_mean_dwi ? "b0_plus_mean_dwi" : "b0_plus_6dwis";
}

activation_mode activation_from_string(const std::string& s) {
  if (s == "sigmoid") return activation_mode::sigmoid;
  if (s == "relu") return activation_mode::relu;
  if (s == "none") return activation_mode::none;
  throw validation_error("unknown activation_mode '" + s + "' (expected sigmoid, relu or none)");
}

gb_output_mode gb_output_from_string(const std::string& s) {
  if (s == "b0_plus_mean_dwi") return gb_output_mode::b0_plus_mean_dwi;
  if (s == "b0_plus_6dwis") return gb_output_mode::b0_plus_6dwis;
  throw validation_error("unknown gb_output_mode '" + s + "' (expected b0_plus_mean_dwi or b0_plus_6dwis)");
}

void train_config::validate() const {
  if (epochs < 1) throw validation_error("epochs must be >= 1");
  if (batch_size < 1) throw validation_error("batch_size must be >= 1");
  if (!(lr > 0.0)) throw validation_error("lr must be > 0");
  if (weights.alpha1 < 0 || weights.alpha2 < 0 || weights.alpha3 < 0)
    throw validation_error("loss weights must be non-negative");
  if (!(adversarial_weight >= 0.0)) throw validation_error("adversarial_weight must be >= 0");
  if (depth < 2) throw validation_error("depth must be >= 2");
  if (base_width < 1) throw validation_error("base_width must be >= 1");
  if (!(input_scale > 0.0)) throw validation_error("input_scale must be > 0");
}

double loss_gen(const generator_terms& t, const loss_weights& w) {
  return w.alpha1 * t.con1 + w.alpha2 * t.con2 + w.alpha3 * t.enc;
}

sample prepare_sample(const dwi_stack& full, std::size_t k, std::uint64_t subsample_seed) {
  return {subsample(full, k, subsample_seed), dti::compute_fa_map(full)};
}

nn::tensor stack_tensor(const dwi_stack& stack, double scale) {
  const auto& d = stack.dims();
  nn::tensor t({1, stack.channels(), d.w, d.h, d.d});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(static_cast<double>(stack.signal.data[i]) / scale);
  return t;
}

batch make_batch(const std::vector<const sample*>& samples, const train_config& cfg) {
  if (samples.empty()) throw validation_error("make_batch: empty batch");
  const dims3 dims = samples.front()->input.dims();
  const std::size_t n = samples.size(), c = samples.front()->input.channels(), vox = dims.voxels();
  const std::size_t gc = gb_channels(cfg.gb_output);
  batch b;
  b.input = nn::tensor({n, c, dims.w, dims.h, dims.d});
  b.fa_star = nn::tensor({n, 1, dims.w, dims.h, dims.d});
  b.mask = nn::tensor({n, 1, dims.w, dims.h, dims.d});
  b.gb_target = nn::tensor({n, gc, dims.w, dims.h, dims.d});
  for (std::size_t i = 0; i < n; ++i) {
    const sample& s = *samples[i];
    if (!(s.input.dims() == dims) || s.input.channels() != c || !(s.fa_star.dims == dims))
      throw shape_error("make_batch: samples differ in shape");
    for (std::size_t j = 0; j < c * vox; ++j)
      b.input[i * c * vox + j] = static_cast<float>(static_cast<double>(s.input.signal.data[j]) / cfg.input_scale);
    for (std::size_t v = 0; v < vox; ++v) {
      b.fa_star[i * vox + v] = s.fa_star.data[v];
      b.mask[i * vox + v] = s.fa_star.mask[v] ? 1.0f : 0.0f;
    }
    if (cfg.gb_output == gb_output_mode::b0_plus_6dwis) {
      if (c != gc) throw shape_error("b0_plus_6dwis needs a 7-channel input");
      std::copy_n(b.input.data() + i * c * vox, c * vox, b.gb_target.data() + i * gc * vox);
    } else {
      const auto b0 = s.input.scheme.b0_indices();
      if (b0.empty()) throw validation_error("make_batch: sample input has no b0 channel");
      const auto mean = average_dwis(s.input);
      for (std::size_t v = 0; v < vox; ++v) {
        b.gb_target[(i * gc) * vox + v] =
            static_cast<float>(static_cast<double>(s.input.signal.channel(b0.front())[v]) / cfg.input_scale);
        b.gb_target[(i * gc + 1) * vox + v] = static_cast<float>(static_cast<double>(mean.data[v]) / cfg.input_scale);
      }
    }
  }
  return b;
}

model initialize_model(const train_config& cfg, std::size_t input_channels) {
  cfg.validate();
  model m;
  m.config = cfg;
  const std::size_t gc = gb_channels(cfg.gb_output);
  m.g_a = nn::build_generator(input_channels, 1, cfg.depth, cfg.base_width, splitmix64(cfg.seed ^ 0xA));
  // Start the sigmoid FA head near isotropic tissue. From 0.5 the first
  // Adam steps overshoot into saturation and the head never recovers.
  if (cfg.activation == activation_mode::sigmoid)
    m.g_a.params.back().mutable_value()[0] = static_cast<float>(std::log(fa_head_prior / (1.0 - fa_head_prior)));
  m.g_b = nn::build_generator(1, gc, cfg.depth, cfg.base_width, splitmix64(cfg.seed ^ 0xB));
  m.d_a = nn::build_discriminator(1, cfg.depth, cfg.base_width, splitmix64(cfg.seed ^ 0xC));
  m.d_b = nn::build_discriminator(gc, cfg.depth, cfg.base_width, splitmix64(cfg.seed ^ 0xD));
  return m;
}

namespace {

std::vector<nn::var> joined(std::vector<nn::var> a, const std::vector<nn::var>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double scalar(const nn::var& v) { return static_cast<double>(v.value()[0]); }

}  // namespace

epoch_losses train_step(model& m, const batch& b, nn::adam_state& opt_g, nn::adam_state& opt_d) {
  const auto& cfg = m.config;
  const nn::var x = nn::var::constant(b.input);
  const nn::var fa_star = nn::var::constant(b.fa_star);
  const nn::var real_pair = nn::var::constant(b.gb_target);

  auto ga = nn::forward_generator(m.g_a, x);
  const nn::var fa_hat = activate(ga.output, cfg.activation);
  auto gb = nn::forward_generator(m.g_b, fa_hat);

  epoch_losses out;

  // Discriminators on detached fakes.
  m.d_a.zero_grad();
  m.d_b.zero_grad();
  const nn::var lda = d_loss_a(fa_star, fa_hat, m.d_a);
  const nn::var ldb = d_loss_b(real_pair, gb.output, m.d_b);
  nn::backward(nn::add(lda, ldb));
  auto d_params = joined(m.d_a.params, m.d_b.params);
  nn::adam_step(d_params, opt_d, {cfg.lr});
  out.d_a = scalar(lda);
  out.d_b = scalar(ldb);

  // Generators against the updated discriminators.
  m.g_a.zero_grad();
  m.g_b.zero_grad();
  const nn::var con1 = nn::masked_mean_abs(fa_hat, b.fa_star, b.mask);
  const nn::var con2 = loss_con2(gb.output, b.gb_target, b.mask, cfg.gb_output);
  const nn::var enc = loss_enc(ga.features, gb.features);
  const nn::var adv = g_adv(fa_hat, gb.output, m.d_a, m.d_b);
  const nn::var gen = loss_gen(con1, con2, enc, cfg.weights);
  nn::backward(nn::add(gen, nn::scale(adv, cfg.adversarial_weight)));
  auto g_params = joined(m.g_a.params, m.g_b.params);
  nn::adam_step(g_params, opt_g, {cfg.lr});
  m.d_a.zero_grad();
  m.d_b.zero_grad();

  out.con1 = scalar(con1);
  out.con2 = scalar(con2);
  out.enc = scalar(enc);
  out.g_adv = scalar(adv);
  out.gen = scalar(gen);
  return out;
}

double evaluate_con1(const model& m, const sample& s) {
  nn::no_grad_guard guard;
  const nn::var x = nn::var::constant(stack_tensor(s.input, m.config.input_scale));
  const auto ga = nn::forward_generator(m.g_a, x);
  const auto& d = s.fa_star.dims;
  nn::tensor fa({1, 1, d.w, d.h, d.d}), mask({1, 1, d.w, d.h, d.d});
  for (std::size_t v = 0; v < d.voxels(); ++v) {
    fa[v] = s.fa_star.data[v];
    mask[v] = s.fa_star.mask[v] ? 1.0f : 0.0f;
  }
  return scalar(loss_con1(ga.output, fa, mask, m.config.activation));
}

void finalize_stats(model& m, const std::vector<sample>& dataset) {
  auto& st = m.stats;
  st.train_con1.clear();
  for (const auto& s : dataset) st.train_con1.push_back(evaluate_con1(m, s));
  const double n = static_cast<double>(st.train_con1.size());
  st.mu_train = std::accumulate(st.train_con1.begin(), st.train_con1.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : st.train_con1) ss += (v - st.mu_train) * (v - st.mu_train);
  st.sigma_train = st.train_con1.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  if (!(st.sigma_train > 0.0))
    throw validation_error("training L_con1 has zero spread (sigma_train = 0); need >= 2 distinct samples");
}

model train(const std::vector<sample>& dataset, const train_config& cfg, const epoch_callback& on_epoch) {
  if (dataset.empty()) throw validation_error("train: empty dataset");
  model m = initialize_model(cfg, dataset.front().input.channels());
  nn::adam_state opt_g, opt_d;
  std::vector<std::size_t> order(dataset.size());
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng gen(cfg.seed, 0x5EED0000ull + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[gen.below(i)]);

    epoch_losses sum;
    double weight = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
      std::vector<const sample*> members;
      for (std::size_t j = start; j < std::min(order.size(), start + bs); ++j) members.push_back(&dataset[order[j]]);
      epoch_losses l;
      try {
        l = train_step(m, make_batch(members, cfg), opt_g, opt_d);
      } catch (const poison_error& e) {
        throw divergence_error(epoch + 1, batch_index, "training diverged at epoch " + std::to_string(epoch + 1) +
                                                           ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
      for (double v : {l.con1, l.con2, l.enc, l.g_adv, l.d_a, l.d_b, l.gen})
        if (!std::isfinite(v))
          throw divergence_error(epoch + 1, batch_index, "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                                             ", batch " + std::to_string(batch_index));
      const double w = static_cast<double>(members.size());
      sum.con1 += w * l.con1;
      sum.con2 += w * l.con2;
      sum.enc += w * l.enc;
      sum.g_adv += w * l.g_adv;
      sum.d_a += w * l.d_a;
      sum.d_b += w * l.d_b;
      sum.gen += w * l.gen;
      weight += w;
    }
    epoch_losses mean{sum.con1 / weight, sum.con2 / weight, sum.enc / weight, sum.g_adv / weight,
                      sum.d_a / weight,  sum.d_b / weight,  sum.gen / weight};
    m.stats.epochs.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  finalize_stats(m, dataset);
  return m;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {

nlohmann::ordered_json config_json(const train_config& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["seed"] = c.seed;
  j["activation_mode"] = to_string(c.activation);
  j["gb_output_mode"] = to_string(c.gb_output);
  j["alpha"] = {c.weights.alpha1, c.weights.alpha2, c.weights.alpha3};
  j["adversarial_weight"] = c.adversarial_weight;
  j["depth"] = c.depth;
  j["base_width"] = c.base_width;
  j["input_scale"] = c.input_scale;
  return j;
}

train_config config_from_json(const nlohmann::json& j) {
  train_config c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.activation = activation_from_string(j.at("activation_mode").get<std::string>());
  c.gb_output = gb_output_from_string(j.at("gb_output_mode").get<std::string>());
  const auto a = j.at("alpha").get<std::vector<double>>();
  if (a.size() != 3) throw validation_error("alpha must have three entries");
  c.weights = {a[0], a[1], a[2]};
  c.adversarial_weight = j.at("adversarial_weight").get<double>();
  c.depth = j.at("depth").get<std::size_t>();
  c.base_width = j.at("base_width").get<std::size_t>();
  c.input_scale = j.at("input_scale").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_network(m.g_a, dir / "G_A.udnn");
  nn::save_network(m.g_b, dir / "G_B.udnn");
  nn::save_network(m.d_a, dir / "D_A.udnn");
  nn::save_network(m.d_b, dir / "D_B.udnn");

  nlohmann::ordered_json j;
  j["schema"] = "udad-stats/1";
  j["mu_train"] = m.stats.mu_train;
  j["sigma_train"] = m.stats.sigma_train;
  j["train_con1"] = m.stats.train_con1;
  nlohmann::ordered_json curves;
  std::vector<double> con1, con2, enc, adv, da, db, gen;
  for (const auto& e : m.stats.epochs) {
    con1.push_back(e.con1);
    con2.push_back(e.con2);
    enc.push_back(e.enc);
    adv.push_back(e.g_adv);
    da.push_back(e.d_a);
    db.push_back(e.d_b);
    gen.push_back(e.gen);
  }
  curves["l_con1"] = con1;
  curves["l_con2"] = con2;
  curves["l_enc"] = enc;
  curves["g_adv"] = adv;
  curves["d_a"] = da;
  curves["d_b"] = db;
  curves["l_gen"] = gen;
  j["loss_curves"] = curves;
  j["train_config"] = config_json(m.config);
  std::ofstream out(dir / "stats.json", std::ios::trunc);
  if (!out) throw format_error(format_errc::io, "cannot write " + (dir / "stats.json").string());
  out << j.dump(2) << "\n";
}

model load_checkpoint(const std::filesystem::path& dir) {
  for (const char* f : {"G_A.udnn", "G_B.udnn", "D_A.udnn", "D_B.udnn", "stats.json"})
    if (!std::filesystem::exists(dir / f))
      throw validation_error("checkpoint " + dir.string() + " is missing " + std::string(f));
  model m;
  m.g_a = nn::load_network(dir / "G_A.udnn");
  m.g_b = nn::load_network(dir / "G_B.udnn");
  m.d_a = nn::load_network(dir / "D_A.udnn");
  m.d_b = nn::load_network(dir / "D_B.udnn");
  std::ifstream in(dir / "stats.json");
  try {
    const auto j = nlohmann::json::parse(in);
    m.stats.mu_train = j.at("mu_train").get<double>();
    m.stats.sigma_train = j.at("sigma_train").get<double>();
    m.stats.train_con1 = j.at("train_con1").get<std::vector<double>>();
    const auto& curves = j.at("loss_curves");
    const auto con1 = curves.at("l_con1").get<std::vector<double>>();
    const auto con2 = curves.at("l_con2").get<std::vector<double>>();
    const auto enc = curves.at("l_enc").get<std::vector<double>>();
    const auto adv = curves.at("g_adv").get<std::vector<double>>();
    const auto da = curves.at("d_a").get<std::vector<double>>();
    const auto db = curves.at("d_b").get<std::vector<double>>();
    const auto gen = curves.at("l_gen").get<std::vector<double>>();
    for (std::size_t i = 0; i < con1.size(); ++i)
      m.stats.epochs.push_back({con1[i], con2.at(i), enc.at(i), adv.at(i), da.at(i), db.at(i), gen.at(i)});
    m.config = config_from_json(j.at("train_config"));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(format_errc::bad_header, std::string("stats.json: ") + e.what());
  }
  if (!(m.stats.sigma_train > 0.0)) throw validation_error("checkpoint has non-positive sigma_train");
  return m;
}

}  // namespace udad::training
