#pragma once

#include <cstdint>
#include <span>

#include "udad/training.hpp"

namespace udad::detection {

inline constexpr double default_gamma = 0.1;

/// S = 1 - sigmoid((l - mu) / sigma). Throws validation_error unless sigma > 0.
double confidence_score(double l_value, double mu, double sigma);

struct detection_result {
  double score = 0.0;
  bool is_artifact = false;
  double l_con1 = 0.0;
  double gamma = default_gamma;
};

detection_result classify(double l_value, const training::train_stats& stats, double gamma = default_gamma);

/// Scores one 7-channel input against the FA* of the same subject.
detection_result score_sample(const dwi_stack& x_test, const fa_map& fa_star_test, const training::model& m,
                              double gamma = default_gamma);

/// FA* from every channel of `full` (artifacts included), then one score per
/// sub-sampling seed. The reported result is the draw with the lowest score.
detection_result score_subject(const dwi_stack& full, const training::model& m, std::size_t k,
                               std::span<const std::uint64_t> subsample_seeds, double gamma = default_gamma);

}  // namespace udad::detection
