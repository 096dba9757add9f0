#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "udad/nn/network.hpp"
#include "udad/volume.hpp"

namespace udad::training {

/// Activation applied to G_A logits before comparing with FA*.
enum class activation_mode { sigmoid, relu, none };

/// What G_B reconstructs from the generated FA map.
enum class gb_output_mode {
  b0_plus_mean_dwi,  // b0 and the mean of the input DWIs (2 channels)
  b0_plus_6dwis,     // every input channel (7 channels)
};

std::string to_string(activation_mode m);
std::string to_string(gb_output_mode m);
activation_mode activation_from_string(const std::string& s);
gb_output_mode gb_output_from_string(const std::string& s);

struct loss_weights {
  double alpha1 = 50.0;  // FA enhancement
  double alpha2 = 10.0;  // cycle reconstruction
  double alpha3 = 1.0;   // encoder feature consistency
};

struct train_config {
  int epochs = 50;
  int batch_size = 1;
  double lr = 3e-4;
  std::uint64_t seed = 0;
  activation_mode activation = activation_mode::sigmoid;
  gb_output_mode gb_output = gb_output_mode::b0_plus_mean_dwi;
  loss_weights weights;
  /// Coefficient of the generator's adversarial term.
  double adversarial_weight = 1.0;
  std::size_t depth = 3;
  std::size_t base_width = 8;
  /// Signals are divided by this before entering the networks.
  double input_scale = 1000.0;

  void validate() const;
};

/// Initial sigmoid output of G_A's head.
inline constexpr double fa_head_prior = 0.05;

struct epoch_losses {
  double con1 = 0, con2 = 0, enc = 0, g_adv = 0, d_a = 0, d_b = 0, gen = 0;
};

struct train_stats {
  std::vector<epoch_losses> epochs;
  /// Final-pass L_con1 of every training sample, in dataset order.
  std::vector<double> train_con1;
  double mu_train = 0.0;
  double sigma_train = 0.0;
};

struct model {
  train_config config;
  nn::network g_a, g_b, d_a, d_b;
  train_stats stats;
};

/// One network-ready subject: the 1 b0 + 6 DWI input and the reference FA
/// map from every channel of the full acquisition.
struct sample {
  dwi_stack input;
  fa_map fa_star;
};

/// FA* from all channels of `full`, input from subsample(full, k, seed).
sample prepare_sample(const dwi_stack& full, std::size_t k, std::uint64_t subsample_seed);

// ---------------------------------------------------------------------------
// Losses. Inputs are (N, C, W, H, D); masks are (N, 1, W, H, D) with 1 for
// in-support voxels. Every term is a per-sample mean or RMS, then a batch mean.

template <class T>
nn::basic_var<T> activate(const nn::basic_var<T>& logits, activation_mode mode) {
  switch (mode) {
    case activation_mode::sigmoid: return nn::sigmoid(logits);
    case activation_mode::relu: return nn::relu(logits);
    case activation_mode::none: return logits;
  }
  return logits;
}

/// Mean absolute error between activation(logits) and FA* over the mask.
template <class T>
nn::basic_var<T> loss_con1(const nn::basic_var<T>& logits, const nn::basic_tensor<T>& fa_star,
                           const nn::basic_tensor<T>& mask, activation_mode mode) {
  return nn::masked_mean_abs(activate(logits, mode), fa_star, mask);
}

inline std::size_t gb_channels(gb_output_mode m) { return m == gb_output_mode::b0_plus_mean_dwi ? 2 : 7; }

/// Sum over reconstructed channels of the masked RMS error.
template <class T>
nn::basic_var<T> loss_con2(const nn::basic_var<T>& pred, const nn::basic_tensor<T>& target,
                           const nn::basic_tensor<T>& mask, gb_output_mode mode) {
  const std::size_t want = gb_channels(mode);
  if (pred.shape().size() != 5 || pred.shape()[1] != want || target.shape().size() != 5 || target.shape()[1] != want)
    throw shape_error("loss_con2: " + to_string(mode) + " needs " + std::to_string(want) + " channels, got " +
                      nn::shape_string(pred.shape()) + " vs target " + nn::shape_string(target.shape()));
  return nn::masked_channel_rms(pred, target, mask);
}

/// Mean over encoder levels of the per-level RMS feature distance.
template <class T>
nn::basic_var<T> loss_enc(const std::vector<nn::basic_var<T>>& a, const std::vector<nn::basic_var<T>>& b) {
  if (a.size() != b.size() || a.empty())
    throw shape_error("loss_enc: feature lists have " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                      " levels");
  nn::basic_var<T> total = nn::rms_difference(a[0], b[0]);
  for (std::size_t i = 1; i < a.size(); ++i) total = nn::add(total, nn::rms_difference(a[i], b[i]));
  return nn::scale(total, 1.0 / static_cast<double>(a.size()));
}

/// Least-squares discriminator objective on precomputed outputs:
/// mean (real - 1)^2 + mean fake^2.
template <class T>
nn::basic_var<T> discriminator_loss(const nn::basic_var<T>& real_out, const nn::basic_var<T>& fake_out) {
  return nn::add(nn::mean_squared_to(real_out, 1.0), nn::mean_squared_to(fake_out, 0.0));
}

/// D_A on FA* (real) and the detached generated FA map (fake).
template <class T>
nn::basic_var<T> d_loss_a(const nn::basic_var<T>& real_fa, const nn::basic_var<T>& fake_fa,
                          const nn::basic_network<T>& d_a) {
  return discriminator_loss(nn::forward_discriminator(d_a, real_fa),
                            nn::forward_discriminator(d_a, fake_fa.detach()));
}

/// D_B on b0 + mean DWI (real) and the detached reconstruction (fake).
template <class T>
nn::basic_var<T> d_loss_b(const nn::basic_var<T>& real_pair, const nn::basic_var<T>& fake_pair,
                          const nn::basic_network<T>& d_b) {
  return discriminator_loss(nn::forward_discriminator(d_b, real_pair),
                            nn::forward_discriminator(d_b, fake_pair.detach()));
}

/// Generator side: mean (D_A(fake_fa) - 1)^2 + mean (D_B(fake_pair) - 1)^2,
/// with gradients flowing into the fakes.
template <class T>
nn::basic_var<T> g_adv(const nn::basic_var<T>& fake_fa, const nn::basic_var<T>& fake_pair,
                       const nn::basic_network<T>& d_a, const nn::basic_network<T>& d_b) {
  return nn::add(nn::mean_squared_to(nn::forward_discriminator(d_a, fake_fa), 1.0),
                 nn::mean_squared_to(nn::forward_discriminator(d_b, fake_pair), 1.0));
}

struct generator_terms {
  double con1 = 0, con2 = 0, enc = 0;
};

/// alpha1 * con1 + alpha2 * con2 + alpha3 * enc.
double loss_gen(const generator_terms& terms, const loss_weights& weights);

template <class T>
nn::basic_var<T> loss_gen(const nn::basic_var<T>& con1, const nn::basic_var<T>& con2, const nn::basic_var<T>& enc,
                          const loss_weights& w) {
  return nn::add(nn::add(nn::scale(con1, w.alpha1), nn::scale(con2, w.alpha2)), nn::scale(enc, w.alpha3));
}

// ---------------------------------------------------------------------------
// Batches

struct batch {
  nn::tensor input;      // (N, 7, W, H, D), scaled
  nn::tensor fa_star;    // (N, 1, W, H, D)
  nn::tensor mask;       // (N, 1, W, H, D)
  nn::tensor gb_target;  // (N, 2 or 7, W, H, D), scaled
};

batch make_batch(const std::vector<const sample*>& samples, const train_config& cfg);

/// Input tensor (1, C, W, H, D) of one stack, divided by `scale`.
nn::tensor stack_tensor(const dwi_stack& stack, double scale);

// ---------------------------------------------------------------------------
// Training

/// Called after every epoch with the epoch index and its mean losses.
using epoch_callback = std::function<void(int, const epoch_losses&)>;

model initialize_model(const train_config& cfg, std::size_t input_channels = 7);

/// Runs one discriminator update followed by one generator update on a
/// batch and returns the batch losses.
epoch_losses train_step(model& m, const batch& b, nn::adam_state& opt_g, nn::adam_state& opt_d);

/// Full training run. Samples must be artifact-free. Throws
/// divergence_error with the epoch and batch of the first non-finite loss.
model train(const std::vector<sample>& dataset, const train_config& cfg, const epoch_callback& on_epoch = {});

/// L_con1 of one sample under the model, without recording a graph.
double evaluate_con1(const model& m, const sample& s);

/// Recomputes stats.train_con1, mu_train and sigma_train (sample standard
/// deviation). Throws validation_error when sigma is not positive.
void finalize_stats(model& m, const std::vector<sample>& dataset);

// Checkpoint: G_A.udnn, G_B.udnn, D_A.udnn, D_B.udnn and stats.json.
void save_checkpoint(const model& m, const std::filesystem::path& dir);
model load_checkpoint(const std::filesystem::path& dir);

/// Library-level gradient check suite over every op and loss, run in double
/// precision against central differences.
struct gradcheck_result {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Finite-difference step used. Checks through whole networks use h / 100
  /// so that the step does not straddle ReLU kinks.
  double step = 0.0;
  bool passed = false;
};

std::vector<gradcheck_result> gradcheck_suite(std::uint64_t seed, double h = 1e-3, double tolerance = 1e-3);

}  // namespace udad::training
