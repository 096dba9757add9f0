// udad: command-line front end for phantom generation, FA maps, artifact
// injection, training, scoring and cohort evaluation.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "udad/artifacts.hpp"
#include "udad/detection.hpp"
#include "udad/dti.hpp"
#include "udad/eval.hpp"
#include "udad/parallel.hpp"
#include "udad/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw udad::format_error(udad::format_errc::io, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw udad::validation_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes the effective config next to a file output and echoes it.
void emit_config(const ojson& cfg, const fs::path& where) {
  const std::string text = cfg.dump(2) + "\n";
  write_text(where, text);
  std::cerr << text;
}

fs::path file_config_path(const fs::path& out) { return fs::path(out.string() + ".config.json"); }

void require_input(const fs::path& p) {
  if (p.empty()) throw udad::validation_error("--in is required");
  if (!fs::exists(p)) throw udad::validation_error("input file not found: " + p.string());
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("UDAD_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument("trailing text");
    std::cerr << "\n*** WARNING: UDAD_SEED=" << v << " overrides the configured seed. Smoke testing only. ***\n\n";
    return v;
  } catch (const std::exception&) {
    throw udad::validation_error(std::string("UDAD_SEED is not an unsigned integer: ") + s);
  }
}

/// Values from a --config file replace flag values; an explicitly passed flag
/// that disagrees triggers a warning.
class config_overlay {
 public:
  config_overlay(CLI::App* app, const std::string& path) : app_(app) {
    if (path.empty()) return;
    try {
      cfg_ = json::parse(read_text(path));
    } catch (const json::exception& e) {
      throw udad::validation_error("config " + path + ": " + e.what());
    }
    if (!cfg_.is_object()) throw udad::validation_error("config " + path + " must be a JSON object");
    active_ = true;
  }

  template <class T>
  void bind(const char* key, const char* flag, T& field) {
    seen_.insert(key);
    if (!active_ || !cfg_.contains(key)) return;
    T v;
    try {
      v = cfg_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw udad::validation_error(std::string("config key '") + key + "': " + e.what());
    }
    if (app_->count(flag) > 0 && !(v == field))
      warn(std::string("config value for '") + key + "' overrides " + flag + " on the command line");
    field = v;
  }

  void finish() const {
    if (!active_) return;
    for (const auto& [key, value] : cfg_.items()) {
      (void)value;
      if (key != "command" && !seen_.count(key)) throw udad::validation_error("unknown config key '" + key + "'");
    }
  }

 private:
  CLI::App* app_;
  json cfg_;
  bool active_ = false;
  std::set<std::string> seen_;
};

udad::dims3 dims_from(const std::vector<std::size_t>& v) {
  if (v.size() != 3) throw udad::validation_error("--dims needs three comma-separated values");
  return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------
// phantom

struct phantom_args {
  std::vector<std::size_t> dims{16, 16, 16};
  std::size_t dirs = 90;
  double bvalue = 1000.0;
  std::uint64_t seed = 0;
  double noise = 0.0;
  std::uint64_t scheme_seed = 0;
  std::string anatomy = "fibers";
  std::string out;
  std::string config;
};

void add_phantom(CLI::App& app, phantom_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("phantom", "Generate a synthetic diffusion phantom (DVOL)");
  cmd->add_option("--dims", a.dims, "W,H,D")->delimiter(',');
  cmd->add_option("--dirs", a.dirs, "Number of DWI directions");
  cmd->add_option("--bvalue", a.bvalue, "b-value in s/mm^2");
  cmd->add_option("--seed", a.seed, "Subject seed (geometry and noise)");
  cmd->add_option("--noise", a.noise, "Gaussian noise std as a fraction of S0");
  cmd->add_option("--scheme-seed", a.scheme_seed, "Gradient direction seed");
  cmd->add_option("--anatomy", a.anatomy, "fibers or isotropic")->check(CLI::IsMember({"fibers", "isotropic"}));
  cmd->add_option("--out", a.out, "Output .dvol")->required();
  cmd->add_option("--config", a.config, "Effective-config JSON to replay");
  cmd->callback([cmd, &a, &run] {
    run = [cmd, &a] {
      config_overlay c(cmd, a.config);
      c.bind("dims", "--dims", a.dims);
      c.bind("n_directions", "--dirs", a.dirs);
      c.bind("bvalue", "--bvalue", a.bvalue);
      c.bind("seed", "--seed", a.seed);
      c.bind("noise_sigma", "--noise", a.noise);
      c.bind("scheme_seed", "--scheme-seed", a.scheme_seed);
      c.bind("anatomy", "--anatomy", a.anatomy);
      c.finish();
      if (auto s = env_seed()) a.seed = *s;
      udad::phantom_spec spec;
      spec.dims = dims_from(a.dims);
      spec.n_directions = a.dirs;
      spec.bvalue = a.bvalue;
      spec.seed = a.seed;
      spec.noise_sigma = a.noise;
      spec.scheme_seed = a.scheme_seed;
      if (a.anatomy != "fibers" && a.anatomy != "isotropic")
        throw udad::validation_error("anatomy must be fibers or isotropic");
      spec.anatomy = a.anatomy == "fibers" ? udad::phantom_anatomy::fibers : udad::phantom_anatomy::isotropic;
      udad::save_dvol(udad::make_phantom(spec), a.out);
      emit_config({{"command", "phantom"},
                   {"dims", a.dims},
                   {"n_directions", a.dirs},
                   {"bvalue", a.bvalue},
                   {"seed", a.seed},
                   {"noise_sigma", a.noise},
                   {"scheme_seed", a.scheme_seed},
                   {"anatomy", a.anatomy}},
                  file_config_path(a.out));
    };
  });
}

// ---------------------------------------------------------------------------
// fa

struct io_args {
  std::string in, out, config;
};

void add_fa(CLI::App& app, io_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("fa", "Fit tensors on every channel and write the FA map (DVOL, C=1)");
  cmd->add_option("--in", a.in, "Input .dvol")->required();
  cmd->add_option("--out", a.out, "Output FA .dvol")->required();
  cmd->add_option("--config", a.config, "Effective-config JSON to replay");
  cmd->callback([cmd, &a, &run] {
    run = [cmd, &a] {
      config_overlay c(cmd, a.config);
      c.bind("in", "--in", a.in);
      c.finish();
      require_input(a.in);
      udad::save_fa_map(udad::dti::compute_fa_map(udad::load_dvol(a.in)), a.out);
      emit_config({{"command", "fa"}, {"in", a.in}}, file_config_path(a.out));
    };
  });
}

// ---------------------------------------------------------------------------
// subsample

struct subsample_args {
  std::string in, out, config;
  std::size_t k = 6;
  std::uint64_t seed = 0;
};

void add_subsample(CLI::App& app, subsample_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("subsample", "Keep one b0 and k well-spread DWIs");
  cmd->add_option("--in", a.in, "Input .dvol")->required();
  cmd->add_option("--out", a.out, "Output .dvol")->required();
  cmd->add_option("--k", a.k, "DWIs to keep");
  cmd->add_option("--seed", a.seed, "Starting-direction seed");
  cmd->add_option("--config", a.config, "Effective-config JSON to replay");
  cmd->callback([cmd, &a, &run] {
    run = [cmd, &a] {
      config_overlay c(cmd, a.config);
      c.bind("in", "--in", a.in);
      c.bind("k", "--k", a.k);
      c.bind("seed", "--seed", a.seed);
      c.finish();
      require_input(a.in);
      udad::save_dvol(udad::subsample(udad::load_dvol(a.in), a.k, a.seed), a.out);
      emit_config({{"command", "subsample"}, {"in", a.in}, {"k", a.k}, {"seed", a.seed}}, file_config_path(a.out));
    };
  });
}

// ---------------------------------------------------------------------------
// inject

struct inject_args {
  std::string kind, in, out, config;
  std::vector<std::size_t> channels;
  std::vector<double> center;
  double sigma_mm = 4.0, amplitude = 0.5;
  std::size_t grid_spacing = 8;
  double displacement_sigma = 2.0;
  std::uint64_t seed = 0;
};

void add_inject(CLI::App& app, inject_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("inject", "Inject a bias field, a distortion or corrupted channels");
  cmd->add_option("--kind", a.kind, "bias_field, distortion or corrupted")
      ->required()
      ->check(CLI::IsMember({"bias_field", "distortion", "corrupted"}));
  cmd->add_option("--in", a.in, "Input .dvol")->required();
  cmd->add_option("--out", a.out, "Output .dvol")->required();
  cmd->add_option("--channels", a.channels, "corrupted: channel indices")->delimiter(',');
  cmd->add_option("--center", a.center, "bias_field: x,y,z in voxels (default volume centre)")->delimiter(',');
  cmd->add_option("--sigma-mm", a.sigma_mm, "bias_field: Gaussian width in mm");
  cmd->add_option("--amplitude", a.amplitude, "bias_field: peak gain minus one");
  cmd->add_option("--grid-spacing", a.grid_spacing, "distortion: control grid spacing in voxels");
  cmd->add_option("--displacement-sigma", a.displacement_sigma, "distortion: control displacement std in voxels");
  cmd->add_option("--seed", a.seed, "distortion: seed");
  cmd->add_option("--config", a.config, "Effective-config JSON to replay");
  cmd->callback([cmd, &a, &run] {
    run = [cmd, &a] {
      config_overlay c(cmd, a.config);
      c.bind("kind", "--kind", a.kind);
      c.bind("in", "--in", a.in);
      c.bind("channels", "--channels", a.channels);
      c.bind("center", "--center", a.center);
      c.bind("sigma_mm", "--sigma-mm", a.sigma_mm);
      c.bind("amplitude", "--amplitude", a.amplitude);
      c.bind("grid_spacing", "--grid-spacing", a.grid_spacing);
      c.bind("displacement_sigma", "--displacement-sigma", a.displacement_sigma);
      c.bind("seed", "--seed", a.seed);
      c.finish();
      require_input(a.in);
      const auto stack = udad::load_dvol(a.in);
      ojson cfg{{"command", "inject"}, {"kind", a.kind}, {"in", a.in}};
      udad::dwi_stack out;
      if (a.kind == "bias_field") {
        udad::artifacts::bias_field b;
        if (a.center.empty()) {
          const auto& d = stack.dims();
          a.center = {(static_cast<double>(d.w) - 1) / 2, (static_cast<double>(d.h) - 1) / 2,
                      (static_cast<double>(d.d) - 1) / 2};
        }
        if (a.center.size() != 3) throw udad::validation_error("--center needs three values");
        b.center = {a.center[0], a.center[1], a.center[2]};
        b.sigma_mm = a.sigma_mm;
        b.amplitude = a.amplitude;
        out = udad::artifacts::inject_bias_field(stack, b);
        cfg["center"] = a.center;
        cfg["sigma_mm"] = a.sigma_mm;
        cfg["amplitude"] = a.amplitude;
      } else if (a.kind == "distortion") {
        out = udad::artifacts::inject_distortion(stack, {a.grid_spacing, a.displacement_sigma, a.seed});
        cfg["grid_spacing"] = a.grid_spacing;
        cfg["displacement_sigma"] = a.displacement_sigma;
        cfg["seed"] = a.seed;
      } else if (a.kind == "corrupted") {
        auto r = udad::artifacts::corrupt_volumes(stack, {a.channels});
        if (r.warning) warn(*r.warning);
        out = std::move(r.stack);
        cfg["channels"] = a.channels;
      } else {
        throw udad::validation_error("unknown --kind '" + a.kind + "'");
      }
      udad::save_dvol(out, a.out);
      emit_config(cfg, file_config_path(a.out));
    };
  });
}

// ---------------------------------------------------------------------------
// train / eval share the manifest flags

// Defaults come from the library so flags and manifests agree.
const udad::eval::manifest default_manifest{};

struct manifest_args {
  std::string manifest;
  std::uint64_t seed = default_manifest.seed;
  std::vector<std::size_t> dims{default_manifest.phantom.dims.w, default_manifest.phantom.dims.h,
                                default_manifest.phantom.dims.d};
  std::size_t dirs = default_manifest.phantom.n_directions;
  double noise = default_manifest.phantom.noise_sigma;
  std::uint64_t scheme_seed = default_manifest.phantom.scheme_seed;
  std::size_t k = default_manifest.subsample_k;
  std::uint64_t subsample_seed = default_manifest.subsample_seed;
  std::size_t draws = default_manifest.draws;
  std::size_t n_train = default_manifest.n_train;
  int epochs = default_manifest.train.epochs;
  int batch_size = default_manifest.train.batch_size;
  double lr = default_manifest.train.lr;
  std::string activation = udad::training::to_string(default_manifest.train.activation);
  std::string gb_output = udad::training::to_string(default_manifest.train.gb_output);
  std::size_t depth = default_manifest.train.depth;
  std::size_t base_width = default_manifest.train.base_width;
  std::size_t n_clean = default_manifest.n_clean, n_artifact = default_manifest.n_artifact;
  double gamma = default_manifest.gamma;
  std::string checkpoint = default_manifest.checkpoint.string();
  std::string out = default_manifest.out.string();
  bool export_slices = default_manifest.export_slices;
};

void add_manifest_flags(CLI::App* cmd, manifest_args& a) {
  cmd->add_option("--manifest", a.manifest, "Experiment manifest JSON (keys it sets win over flags)");
  cmd->add_option("--seed", a.seed, "Experiment seed");
  cmd->add_option("--dims", a.dims, "Phantom W,H,D")->delimiter(',');
  cmd->add_option("--dirs", a.dirs, "Phantom DWI directions");
  cmd->add_option("--noise", a.noise, "Phantom noise std / S0");
  cmd->add_option("--scheme-seed", a.scheme_seed, "Shared gradient direction seed");
  cmd->add_option("--k", a.k, "Sub-sampled DWIs");
  cmd->add_option("--subsample-seed", a.subsample_seed, "Sub-sampling seed");
  cmd->add_option("--draws", a.draws, "Sub-sampling draws per test subject");
  cmd->add_option("--n-train", a.n_train, "Training phantoms");
  cmd->add_option("--epochs", a.epochs, "Epochs");
  cmd->add_option("--batch-size", a.batch_size, "Batch size");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--activation", a.activation, "sigmoid, relu or none");
  cmd->add_option("--gb-output", a.gb_output, "b0_plus_mean_dwi or b0_plus_6dwis");
  cmd->add_option("--depth", a.depth, "Encoder depth");
  cmd->add_option("--base-width", a.base_width, "Channels at the first level");
  cmd->add_option("--n-clean", a.n_clean, "Clean test subjects");
  cmd->add_option("--n-artifact", a.n_artifact, "Artifact test subjects");
  cmd->add_option("--gamma", a.gamma, "Detection threshold");
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory");
  cmd->add_option("--out", a.out, "Report directory");
  cmd->add_flag("--export-slices", a.export_slices, "Write mid-axial PGM slices");
}

udad::eval::manifest manifest_from_flags(const manifest_args& a) {
  udad::eval::manifest m;
  m.seed = a.seed;
  m.phantom.dims = dims_from(a.dims);
  m.phantom.n_directions = a.dirs;
  m.phantom.noise_sigma = a.noise;
  m.phantom.scheme_seed = a.scheme_seed;
  m.subsample_k = a.k;
  m.subsample_seed = a.subsample_seed;
  m.draws = a.draws;
  m.n_train = a.n_train;
  m.train.epochs = a.epochs;
  m.train.batch_size = a.batch_size;
  m.train.lr = a.lr;
  m.train.activation = udad::training::activation_from_string(a.activation);
  m.train.gb_output = udad::training::gb_output_from_string(a.gb_output);
  m.train.depth = a.depth;
  m.train.base_width = a.base_width;
  m.n_clean = a.n_clean;
  m.n_artifact = a.n_artifact;
  m.gamma = a.gamma;
  m.checkpoint = a.checkpoint;
  m.out = a.out;
  m.export_slices = a.export_slices;
  return m;
}

// A key present in the manifest file wins over its flag; flags fill keys
// the file leaves out.
struct flag_merge {
  CLI::App* cmd;
  const json& file;

  template <class T>
  void operator()(const char* pointer, const char* flag, T& field, const T& flag_value) const {
    if (cmd->count(flag) == 0) return;
    if (!file.contains(json::json_pointer(pointer))) {
      field = flag_value;
    } else if (!(field == flag_value)) {
      warn(std::string("manifest value wins over ") + flag + " on the command line");
    }
  }
};

udad::eval::manifest manifest_from(CLI::App* cmd, const manifest_args& a) {
  udad::eval::manifest m = manifest_from_flags(a);
  if (!a.manifest.empty()) {
    const auto f = m;
    m = udad::eval::load_manifest(a.manifest);
    const json file = json::parse(read_text(a.manifest));
    const flag_merge merge{cmd, file};
    merge("/seed", "--seed", m.seed, f.seed);
    merge("/phantom/dims", "--dims", m.phantom.dims, f.phantom.dims);
    merge("/phantom/n_directions", "--dirs", m.phantom.n_directions, f.phantom.n_directions);
    merge("/phantom/noise_sigma", "--noise", m.phantom.noise_sigma, f.phantom.noise_sigma);
    merge("/phantom/scheme_seed", "--scheme-seed", m.phantom.scheme_seed, f.phantom.scheme_seed);
    merge("/subsample/k", "--k", m.subsample_k, f.subsample_k);
    merge("/subsample/seed", "--subsample-seed", m.subsample_seed, f.subsample_seed);
    merge("/subsample/draws", "--draws", m.draws, f.draws);
    merge("/train/n_subjects", "--n-train", m.n_train, f.n_train);
    merge("/train/epochs", "--epochs", m.train.epochs, f.train.epochs);
    merge("/train/batch_size", "--batch-size", m.train.batch_size, f.train.batch_size);
    merge("/train/lr", "--lr", m.train.lr, f.train.lr);
    merge("/train/activation_mode", "--activation", m.train.activation, f.train.activation);
    merge("/train/gb_output_mode", "--gb-output", m.train.gb_output, f.train.gb_output);
    merge("/train/depth", "--depth", m.train.depth, f.train.depth);
    merge("/train/base_width", "--base-width", m.train.base_width, f.train.base_width);
    merge("/cohort/n_clean", "--n-clean", m.n_clean, f.n_clean);
    merge("/cohort/n_artifact", "--n-artifact", m.n_artifact, f.n_artifact);
    merge("/gamma", "--gamma", m.gamma, f.gamma);
    merge("/checkpoint", "--checkpoint", m.checkpoint, f.checkpoint);
    merge("/out", "--out", m.out, f.out);
    merge("/export_slices", "--export-slices", m.export_slices, f.export_slices);
  }
  if (auto s = env_seed()) m.seed = *s;
  m.train.seed = m.seed;
  m.validate();
  return udad::eval::resolve(m);
}

void add_train(CLI::App& app, manifest_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("train", "Train G_A, G_B, D_A, D_B on clean phantoms and write a checkpoint");
  add_manifest_flags(cmd, a);
  cmd->callback([cmd, &a, &run] {
    run = [cmd, &a] {
      const auto m = manifest_from(cmd, a);
      const auto model = udad::eval::train_from_manifest(m, [&](int epoch, const udad::training::epoch_losses& l) {
        std::cerr << "epoch " << epoch << "/" << m.train.epochs << "  con1 " << l.con1 << "  con2 " << l.con2
                  << "  enc " << l.enc << "  g_adv " << l.g_adv << "  d_a " << l.d_a << "  d_b " << l.d_b << "\n";
      });
      udad::training::save_checkpoint(model, m.checkpoint);
      emit_config(json::parse(udad::eval::manifest_to_json(m)), m.checkpoint / "config.json");
      std::cout << "mu_train " << model.stats.mu_train << " sigma_train " << model.stats.sigma_train << "\n";
    };
  });
}

void add_eval(CLI::App& app, manifest_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("eval", "Score a planned cohort with a trained checkpoint and write the report");
  add_manifest_flags(cmd, a);
  cmd->callback([cmd, &a, &run] {
    run = [cmd, &a] {
      const auto m = manifest_from(cmd, a);
      const auto model = [&] {
        if (!fs::exists(m.checkpoint / "stats.json"))
          throw udad::validation_error("checkpoint '" + m.checkpoint.string() + "' not found; run train first");
        return udad::training::load_checkpoint(m.checkpoint);
      }();
      const auto r = udad::eval::evaluate(m, model);
      udad::eval::write_report(r, m, &model);
      emit_config(ojson::parse(udad::eval::manifest_to_json(m)), m.out / "config.json");
      std::cout << "acc " << r.values.acc << " f1 " << r.values.f1 << " sen " << r.values.sen << " spe "
                << r.values.spe << " auc_rank " << r.auc_rank << " auc_balanced " << r.auc_balanced << "\n";
    };
  });
}

// ---------------------------------------------------------------------------
// score

struct score_args {
  std::vector<std::string> inputs;
  std::vector<std::string> ids;
  std::string checkpoint = "checkpoint";
  double gamma = 0.1;
  std::size_t k = 6;
  std::uint64_t subsample_seed = 0;
  std::size_t draws = 1;
};

void add_score(CLI::App& app, score_args& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("score", "Confidence score of full acquisitions (one JSON line each)");
  cmd->add_option("--in", a.inputs, "Input .dvol files (all channels)")->required();
  cmd->add_option("--id", a.ids, "Subject ids (default: file stems)");
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory");
  cmd->add_option("--gamma", a.gamma, "Detection threshold");
  cmd->add_option("--k", a.k, "Sub-sampled DWIs");
  cmd->add_option("--subsample-seed", a.subsample_seed, "Sub-sampling seed");
  cmd->add_option("--draws", a.draws, "Draws per subject; the lowest score is kept");
  cmd->callback([&a, &run] {
    run = [&a] {
      if (!a.ids.empty() && a.ids.size() != a.inputs.size())
        throw udad::validation_error("--id must be given once per --in");
      for (const auto& p : a.inputs) require_input(p);
      if (!fs::exists(fs::path(a.checkpoint) / "stats.json"))
        throw udad::validation_error("checkpoint '" + a.checkpoint + "' not found");
      const auto model = udad::training::load_checkpoint(a.checkpoint);
      std::vector<std::uint64_t> seeds;
      for (std::size_t d = 0; d < a.draws; ++d) seeds.push_back(a.subsample_seed + d);
      for (std::size_t i = 0; i < a.inputs.size(); ++i) {
        const auto r = udad::detection::score_subject(udad::load_dvol(a.inputs[i]), model, a.k, seeds, a.gamma);
        const std::string id = a.ids.empty() ? fs::path(a.inputs[i]).stem().string() : a.ids[i];
        ojson line{{"id", id}, {"l_con1", r.l_con1}, {"score", r.score}, {"is_artifact", r.is_artifact},
                   {"gamma", r.gamma}};
        std::cout << line.dump() << "\n";
      }
      std::cerr << ojson{{"command", "score"},       {"checkpoint", a.checkpoint}, {"gamma", a.gamma},
                         {"k", a.k},                 {"subsample_seed", a.subsample_seed},
                         {"draws", a.draws}}
                       .dump(2)
                << "\n";
    };
  });
}

// ---------------------------------------------------------------------------
// gradcheck

struct gradcheck_args {
  std::uint64_t seed = 0;
  double h = 1e-3, tol = 1e-3;
};

void add_gradcheck(CLI::App& app, gradcheck_args& a, std::function<void()>& run, int& status) {
  auto* cmd = app.add_subcommand("gradcheck", "Compare autodiff gradients with central differences");
  cmd->add_option("--seed", a.seed, "Seed for random inputs");
  cmd->add_option("--step", a.h, "Finite-difference step");
  cmd->add_option("--tol", a.tol, "Maximum relative error");
  cmd->callback([&a, &run, &status] {
    run = [&a, &status] {
      bool ok = true;
      for (const auto& r : udad::training::gradcheck_suite(a.seed, a.h, a.tol)) {
        std::printf("%-28s %6zu elems  h %.0e  max rel err %.3e  %s\n", r.name.c_str(), r.checked, r.step,
                    r.max_rel_error, r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
      }
      std::cerr << ojson{{"command", "gradcheck"}, {"seed", a.seed}, {"h", a.h}, {"tol", a.tol}}.dump(2) << "\n";
      status = ok ? 0 : 2;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"udad: unsupervised dMRI artifact detection toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

  std::function<void()> run;
  int status = 0;
  phantom_args phantom;
  io_args fa;
  subsample_args sub;
  inject_args inj;
  manifest_args train, evaluation;
  score_args score;
  gradcheck_args grad;
  add_phantom(app, phantom, run);
  add_fa(app, fa, run);
  add_subsample(app, sub, run);
  add_inject(app, inj, run);
  add_train(app, train, run);
  add_score(app, score, run);
  add_eval(app, evaluation, run);
  add_gradcheck(app, grad, run, status);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    udad::set_thread_count(threads);
    run();
    return status;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
