#include "udad/detection.hpp"

#include <cmath>

#include "udad/dti.hpp"

namespace udad::detection {

double confidence_score(double l_value, double mu, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw validation_error("confidence_score: sigma must be positive");
  if (!std::isfinite(l_value) || !std::isfinite(mu)) throw validation_error("confidence_score: non-finite input");
  const double z = (l_value - mu) / sigma;
  // 1 - sigmoid(z) written so neither branch overflows.
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

detection_result classify(double l_value, const training::train_stats& stats, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw validation_error("gamma must lie in (0, 1)");
  detection_result r;
  r.l_con1 = l_value;
  r.gamma = gamma;
  r.score = confidence_score(l_value, stats.mu_train, stats.sigma_train);
  r.is_artifact = r.score < gamma;
  return r;
}

detection_result score_sample(const dwi_stack& x_test, const fa_map& fa_star_test, const training::model& m,
                              double gamma) {
  if (x_test.channels() != m.g_a.arch.in_channels)
    throw shape_error("score_sample: model expects " + std::to_string(m.g_a.arch.in_channels) +
                      " input channels, got " + std::to_string(x_test.channels()));
  if (!(x_test.dims() == fa_star_test.dims)) throw shape_error("score_sample: input and FA* dims differ");
  if (fa_star_test.mask_count() == 0) throw validation_error("score_sample: FA* mask is empty");
  const training::sample s{x_test, fa_star_test};
  return classify(training::evaluate_con1(m, s), m.stats, gamma);
}

detection_result score_subject(const dwi_stack& full, const training::model& m, std::size_t k,
                               std::span<const std::uint64_t> subsample_seeds, double gamma) {
  if (subsample_seeds.empty()) throw validation_error("score_subject: need at least one sub-sampling draw");
  const fa_map fa_star = dti::compute_fa_map(full);
  detection_result best;
  for (std::size_t i = 0; i < subsample_seeds.size(); ++i) {
    const auto r = score_sample(subsample(full, k, subsample_seeds[i]), fa_star, m, gamma);
    if (i == 0 || r.score < best.score) best = r;
  }
  return best;
}

}  // namespace udad::detection
