#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "udad/artifacts.hpp"
#include "udad/detection.hpp"
#include "udad/training.hpp"

namespace udad::eval {

// ---------------------------------------------------------------------------
// Metrics. The positive class is artifact-free.

struct confusion {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  std::size_t total() const { return tp + fn + tn + fp; }
};

struct metrics {
  double acc = 0, f1 = 0, sen = 0, spe = 0;
};

/// Throws validation_error when either class is empty.
metrics metrics_from_confusion(const confusion& c);

/// Mann-Whitney estimate of P(pos > neg) with ties counted half.
double auc_from_scores(std::span<const double> positives, std::span<const double> negatives);

// ---------------------------------------------------------------------------
// Experiment manifest

struct phantom_config {
  dims3 dims{16, 16, 16};
  std::size_t n_directions = 90;
  double bvalue = 1000.0;
  double noise_sigma = 0.005;
  std::uint64_t scheme_seed = 0;
};

struct artifact_config {
  double bias_amplitude = 0.5;
  /// Bias sigma as a fraction of the mean volume extent in mm.
  double bias_sigma_frac = 0.25;
  std::size_t grid_spacing = 8;
  double displacement_sigma = 2.0;
  std::size_t n_corrupted = 1;
};

enum class subject_kind { clean, bias_field, distortion, corrupted };

std::string to_string(subject_kind k);
subject_kind kind_from_string(const std::string& s);

/// One held-out test subject: a phantom and the artifact injected into it.
struct subject_entry {
  std::string id;
  std::uint64_t phantom_seed = 0;
  std::optional<artifacts::artifact_spec> artifact;

  subject_kind kind() const;
};

struct manifest {
  std::uint64_t seed = 0;
  phantom_config phantom;
  std::size_t subsample_k = 6;
  std::uint64_t subsample_seed = 0;
  /// Sub-sampling draws scored per test subject; the lowest score is kept.
  std::size_t draws = 1;
  std::size_t n_train = 16;
  training::train_config train;
  std::size_t n_clean = 12;
  std::size_t n_artifact = 8;
  artifact_config artifacts;
  /// Explicit cohort. Empty means "plan from n_clean / n_artifact and seed".
  std::vector<subject_entry> subjects;
  double gamma = detection::default_gamma;
  std::filesystem::path checkpoint = "checkpoint";
  std::filesystem::path out = "report";
  bool export_slices = false;

  void validate() const;
};

/// Parses and schema-checks a manifest document. Unknown keys are errors.
manifest manifest_from_json(const std::string& text);
manifest load_manifest(const std::filesystem::path& path);
/// Canonical JSON with every field spelled out, including the planned cohort.
std::string manifest_to_json(const manifest& m);

phantom_spec subject_phantom(const manifest& m, std::uint64_t phantom_seed);

/// Phantom seeds of the training subjects, derived from the manifest seed.
std::vector<std::uint64_t> training_seeds(const manifest& m);

/// Cohort with artifact kinds assigned round-robin (bias field, distortion,
/// corruption) to a seeded random subset. Returns m.subjects when set.
std::vector<subject_entry> plan_cohort(const manifest& m);

/// m with seed-derived fields made explicit: train.seed and the cohort.
manifest resolve(manifest m);

std::vector<training::sample> training_set(const manifest& m);
training::model train_from_manifest(const manifest& m, const training::epoch_callback& on_epoch = {});

// ---------------------------------------------------------------------------
// Reports

struct subject_score {
  std::string id;
  subject_kind kind = subject_kind::clean;
  double l_con1 = 0.0;
  double score = 0.0;
  bool predicted_artifact = false;
};

struct report {
  confusion counts;
  metrics values;
  double auc_rank = 0.0;
  double auc_balanced = 0.0;
  double gamma = detection::default_gamma;
  double mu_train = 0.0, sigma_train = 0.0;
  std::vector<subject_score> rows;
};

/// Realizes one subject: phantom, then its artifact.
dwi_stack realize_subject(const manifest& m, const subject_entry& s);

/// Scores the cohort with an already trained model.
report evaluate(const manifest& m, const training::model& model);

/// Loads m.checkpoint and evaluates. Throws validation_error when missing.
report run_experiment(const manifest& m);

std::string report_json(const report& r);
std::string report_csv(const report& r);

/// 8-bit binary PGM of the mid-axial slice (z = D/2), min-max normalized.
std::vector<std::uint8_t> mid_axial_pgm(std::span<const float> volume, const dims3& dims);

/// Writes report.json, scores.csv and, when m.export_slices is set,
/// slices/<id>_{x_b0,fa_hat,fa_star}.pgm under m.out.
void write_report(const report& r, const manifest& m, const training::model* model = nullptr);

}  // namespace udad::eval
