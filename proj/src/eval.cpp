#include "udad/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "udad/dti.hpp"
#include "udad/rng.hpp"

namespace udad::eval {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

metrics metrics_from_confusion(const confusion& c) {
  const std::size_t pos = c.tp + c.fn, neg = c.tn + c.fp;
  if (pos == 0 || neg == 0) throw validation_error("metrics need at least one artifact-free and one artifact subject");
  metrics m;
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.sen = static_cast<double>(c.tp) / static_cast<double>(pos);
  m.spe = static_cast<double>(c.tn) / static_cast<double>(neg);
  m.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return m;
}

double auc_from_scores(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw validation_error("auc_from_scores: empty score list");
  double wins = 0.0;
  for (double p : positives)
    for (double n : negatives) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

std::string to_string(subject_kind k) {
  switch (k) {
    case subject_kind::clean: return "clean";
    case subject_kind::bias_field: return "bias_field";
    case subject_kind::distortion: return "distortion";
    case subject_kind::corrupted: return "corrupted";
  }
  return "clean";
}

subject_kind kind_from_string(const std::string& s) {
  if (s == "clean") return subject_kind::clean;
  if (s == "bias_field") return subject_kind::bias_field;
  if (s == "distortion") return subject_kind::distortion;
  if (s == "corrupted") return subject_kind::corrupted;
  throw validation_error("unknown subject kind '" + s + "' (expected clean, bias_field, distortion or corrupted)");
}

subject_kind subject_entry::kind() const {
  if (!artifact) return subject_kind::clean;
  switch (artifact->index()) {
    case 0: return subject_kind::bias_field;
    case 1: return subject_kind::distortion;
    default: return subject_kind::corrupted;
  }
}

// ---------------------------------------------------------------------------
// manifest

void manifest::validate() const {
  phantom_spec p;
  p.dims = phantom.dims;
  p.n_directions = phantom.n_directions;
  p.validate();
  if (!(phantom.bvalue > 0.0)) throw validation_error("phantom.bvalue must be > 0");
  if (!(phantom.noise_sigma >= 0.0)) throw validation_error("phantom.noise_sigma must be >= 0");
  if (subsample_k < 6 || subsample_k > phantom.n_directions)
    throw validation_error("subsample.k must lie in [6, phantom.n_directions]");
  if (draws < 1) throw validation_error("subsample.draws must be >= 1");
  if (n_train < 2) throw validation_error("train.n_subjects must be >= 2 (sigma_train needs two samples)");
  train.validate();
  const std::size_t div = std::size_t{1} << train.depth;
  if (phantom.dims.w % div || phantom.dims.h % div || phantom.dims.d % div)
    throw validation_error("phantom.dims " + to_string(phantom.dims) + " must be divisible by 2^depth = " +
                           std::to_string(div));
  if (!(gamma > 0.0 && gamma < 1.0)) throw validation_error("gamma must lie in (0, 1)");
  if (!(artifacts.bias_amplitude >= 0.0)) throw validation_error("artifacts.bias_amplitude must be >= 0");
  if (!(artifacts.bias_sigma_frac > 0.0)) throw validation_error("artifacts.bias_sigma_frac must be > 0");
  if (artifacts.grid_spacing < 2) throw validation_error("artifacts.grid_spacing must be >= 2");
  if (!(artifacts.displacement_sigma >= 0.0)) throw validation_error("artifacts.displacement_sigma must be >= 0");
  if (artifacts.n_corrupted < 1 || artifacts.n_corrupted > subsample_k + 1)
    throw validation_error("artifacts.n_corrupted must lie in [1, subsample.k + 1]");
  if (subjects.empty()) {
    if (n_clean < 1 || n_artifact < 1) throw validation_error("cohort needs at least one clean and one artifact subject");
  } else {
    std::set<std::string> ids;
    std::size_t clean = 0;
    for (const auto& s : subjects) {
      if (s.id.empty() || !ids.insert(s.id).second) throw validation_error("cohort subject ids must be unique and non-empty");
      if (s.kind() == subject_kind::clean) ++clean;
    }
    if (clean == 0 || clean == subjects.size())
      throw validation_error("cohort needs at least one clean and one artifact subject");
  }
}

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw validation_error(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw validation_error("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

dims3 dims_from(const json& j) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 3) throw validation_error("phantom.dims must have three entries");
  return {v[0], v[1], v[2]};
}

subject_entry subject_from(const json& j) {
  subject_entry s;
  const std::string kind = j.at("kind").get<std::string>();
  switch (kind_from_string(kind)) {
    case subject_kind::clean:
      check_keys(j, {"id", "phantom_seed", "kind"}, "cohort subject");
      break;
    case subject_kind::bias_field: {
      check_keys(j, {"id", "phantom_seed", "kind", "center", "sigma_mm", "amplitude"}, "cohort subject");
      artifacts::bias_field b;
      const auto c = j.at("center").get<std::vector<double>>();
      if (c.size() != 3) throw validation_error("bias_field center must have three entries");
      b.center = {c[0], c[1], c[2]};
      b.sigma_mm = j.at("sigma_mm").get<double>();
      b.amplitude = j.at("amplitude").get<double>();
      s.artifact = b;
      break;
    }
    case subject_kind::distortion: {
      check_keys(j, {"id", "phantom_seed", "kind", "grid_spacing", "displacement_sigma", "seed"}, "cohort subject");
      artifacts::distortion d;
      d.grid_spacing = j.at("grid_spacing").get<std::size_t>();
      d.displacement_sigma = j.at("displacement_sigma").get<double>();
      d.seed = j.at("seed").get<std::uint64_t>();
      s.artifact = d;
      break;
    }
    case subject_kind::corrupted: {
      check_keys(j, {"id", "phantom_seed", "kind", "channels"}, "cohort subject");
      s.artifact = artifacts::corrupted{j.at("channels").get<std::vector<std::size_t>>()};
      break;
    }
  }
  s.id = j.at("id").get<std::string>();
  s.phantom_seed = j.at("phantom_seed").get<std::uint64_t>();
  return s;
}

ojson subject_to(const subject_entry& s) {
  ojson j;
  j["id"] = s.id;
  j["phantom_seed"] = s.phantom_seed;
  j["kind"] = to_string(s.kind());
  if (!s.artifact) return j;
  if (const auto* b = std::get_if<artifacts::bias_field>(&*s.artifact)) {
    j["center"] = {b->center[0], b->center[1], b->center[2]};
    j["sigma_mm"] = b->sigma_mm;
    j["amplitude"] = b->amplitude;
  } else if (const auto* d = std::get_if<artifacts::distortion>(&*s.artifact)) {
    j["grid_spacing"] = d->grid_spacing;
    j["displacement_sigma"] = d->displacement_sigma;
    j["seed"] = d->seed;
  } else {
    j["channels"] = std::get<artifacts::corrupted>(*s.artifact).channel_indices;
  }
  return j;
}

}  // namespace

manifest manifest_from_json(const std::string& text) {
  manifest m;
  try {
    const json j = json::parse(text);
    check_keys(j, {"schema", "seed", "phantom", "subsample", "train", "cohort", "artifacts", "gamma", "checkpoint", "out",
                   "export_slices"},
               "manifest");
    if (j.value("schema", std::string()) != "udad-manifest/1")
      throw validation_error("manifest schema must be \"udad-manifest/1\"");
    read(j, "seed", m.seed);
    if (j.contains("phantom")) {
      const auto& p = j.at("phantom");
      check_keys(p, {"dims", "n_directions", "bvalue", "noise_sigma", "scheme_seed"}, "phantom");
      if (p.contains("dims")) m.phantom.dims = dims_from(p.at("dims"));
      read(p, "n_directions", m.phantom.n_directions);
      read(p, "bvalue", m.phantom.bvalue);
      read(p, "noise_sigma", m.phantom.noise_sigma);
      read(p, "scheme_seed", m.phantom.scheme_seed);
    }
    if (j.contains("subsample")) {
      const auto& s = j.at("subsample");
      check_keys(s, {"k", "seed", "draws"}, "subsample");
      read(s, "k", m.subsample_k);
      read(s, "seed", m.subsample_seed);
      read(s, "draws", m.draws);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"n_subjects", "epochs", "batch_size", "lr", "activation_mode", "gb_output_mode", "alpha",
                     "adversarial_weight", "depth", "base_width", "input_scale"},
                 "train");
      read(t, "n_subjects", m.n_train);
      read(t, "epochs", m.train.epochs);
      read(t, "batch_size", m.train.batch_size);
      read(t, "lr", m.train.lr);
      if (t.contains("activation_mode"))
        m.train.activation = training::activation_from_string(t.at("activation_mode").get<std::string>());
      if (t.contains("gb_output_mode"))
        m.train.gb_output = training::gb_output_from_string(t.at("gb_output_mode").get<std::string>());
      if (t.contains("alpha")) {
        const auto a = t.at("alpha").get<std::vector<double>>();
        if (a.size() != 3) throw validation_error("train.alpha must have three entries");
        m.train.weights = {a[0], a[1], a[2]};
      }
      read(t, "adversarial_weight", m.train.adversarial_weight);
      read(t, "depth", m.train.depth);
      read(t, "base_width", m.train.base_width);
      read(t, "input_scale", m.train.input_scale);
    }
    if (j.contains("cohort")) {
      const auto& c = j.at("cohort");
      check_keys(c, {"n_clean", "n_artifact", "subjects"}, "cohort");
      read(c, "n_clean", m.n_clean);
      read(c, "n_artifact", m.n_artifact);
      if (c.contains("subjects"))
        for (const auto& s : c.at("subjects")) m.subjects.push_back(subject_from(s));
    }
    if (j.contains("artifacts")) {
      const auto& a = j.at("artifacts");
      check_keys(a, {"bias_amplitude", "bias_sigma_frac", "grid_spacing", "displacement_sigma", "n_corrupted"},
                 "artifacts");
      read(a, "bias_amplitude", m.artifacts.bias_amplitude);
      read(a, "bias_sigma_frac", m.artifacts.bias_sigma_frac);
      read(a, "grid_spacing", m.artifacts.grid_spacing);
      read(a, "displacement_sigma", m.artifacts.displacement_sigma);
      read(a, "n_corrupted", m.artifacts.n_corrupted);
    }
    read(j, "gamma", m.gamma);
    if (j.contains("checkpoint")) m.checkpoint = j.at("checkpoint").get<std::string>();
    if (j.contains("out")) m.out = j.at("out").get<std::string>();
    read(j, "export_slices", m.export_slices);
  } catch (const json::exception& e) {
    throw validation_error(std::string("manifest: ") + e.what());
  }
  m.train.seed = m.seed;
  m.validate();
  return m;
}

manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot read manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return manifest_from_json(buf.str());
}

std::string manifest_to_json(const manifest& m) {
  ojson j;
  j["schema"] = "udad-manifest/1";
  j["seed"] = m.seed;
  j["phantom"] = {{"dims", {m.phantom.dims.w, m.phantom.dims.h, m.phantom.dims.d}},
                  {"n_directions", m.phantom.n_directions},
                  {"bvalue", m.phantom.bvalue},
                  {"noise_sigma", m.phantom.noise_sigma},
                  {"scheme_seed", m.phantom.scheme_seed}};
  j["subsample"] = {{"k", m.subsample_k}, {"seed", m.subsample_seed}, {"draws", m.draws}};
  j["train"] = {{"n_subjects", m.n_train},
                {"epochs", m.train.epochs},
                {"batch_size", m.train.batch_size},
                {"lr", m.train.lr},
                {"activation_mode", training::to_string(m.train.activation)},
                {"gb_output_mode", training::to_string(m.train.gb_output)},
                {"alpha", {m.train.weights.alpha1, m.train.weights.alpha2, m.train.weights.alpha3}},
                {"adversarial_weight", m.train.adversarial_weight},
                {"depth", m.train.depth},
                {"base_width", m.train.base_width},
                {"input_scale", m.train.input_scale}};
  ojson cohort;
  cohort["n_clean"] = m.n_clean;
  cohort["n_artifact"] = m.n_artifact;
  if (!m.subjects.empty()) {
    cohort["subjects"] = ojson::array();
    for (const auto& s : m.subjects) cohort["subjects"].push_back(subject_to(s));
  }
  j["cohort"] = cohort;
  j["artifacts"] = {{"bias_amplitude", m.artifacts.bias_amplitude},
                    {"bias_sigma_frac", m.artifacts.bias_sigma_frac},
                    {"grid_spacing", m.artifacts.grid_spacing},
                    {"displacement_sigma", m.artifacts.displacement_sigma},
                    {"n_corrupted", m.artifacts.n_corrupted}};
  j["gamma"] = m.gamma;
  j["checkpoint"] = m.checkpoint.generic_string();
  j["out"] = m.out.generic_string();
  j["export_slices"] = m.export_slices;
  return j.dump(2) + "\n";
}

phantom_spec subject_phantom(const manifest& m, std::uint64_t phantom_seed) {
  phantom_spec p;
  p.dims = m.phantom.dims;
  p.n_directions = m.phantom.n_directions;
  p.bvalue = m.phantom.bvalue;
  p.noise_sigma = m.phantom.noise_sigma;
  p.scheme_seed = m.phantom.scheme_seed;
  p.seed = phantom_seed;
  return p;
}

namespace {

// Distinct 31-bit seeds drawn from one stream, skipping anything in `taken`.
std::vector<std::uint64_t> draw_seeds(std::uint64_t seed, std::uint64_t stream, std::size_t n,
                                      std::set<std::uint64_t>& taken) {
  rng gen(seed, stream);
  std::vector<std::uint64_t> out;
  while (out.size() < n) {
    const std::uint64_t s = gen.below(std::uint64_t{1} << 31);
    if (taken.insert(s).second) out.push_back(s);
  }
  return out;
}

}  // namespace

std::vector<std::uint64_t> training_seeds(const manifest& m) {
  std::set<std::uint64_t> taken;
  return draw_seeds(m.seed, 0x7A1, m.n_train, taken);
}

std::vector<subject_entry> plan_cohort(const manifest& m) {
  if (!m.subjects.empty()) return m.subjects;
  std::set<std::uint64_t> taken;
  draw_seeds(m.seed, 0x7A1, m.n_train, taken);
  const std::size_t n = m.n_clean + m.n_artifact;
  const auto seeds = draw_seeds(m.seed, 0xC0, n, taken);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng shuffle(m.seed, 0xC1);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  std::vector<subject_entry> cohort(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(id, sizeof id, "sub-%03zu", i);
    cohort[i].id = id;
    cohort[i].phantom_seed = seeds[i];
  }
  const auto& a = m.artifacts;
  const auto& d = m.phantom.dims;
  const double extent = (static_cast<double>(d.w) + static_cast<double>(d.h) + static_cast<double>(d.d)) / 3.0;
  for (std::size_t r = 0; r < m.n_artifact; ++r) {
    const std::size_t i = order[r];
    rng gen(m.seed, 0xC200 + i);
    switch (r % 3) {
      case 0: {
        artifacts::bias_field b;
        const std::array<std::size_t, 3> dd{d.w, d.h, d.d};
        for (int ax = 0; ax < 3; ++ax) {
          const double n_ax = static_cast<double>(dd[ax]);
          b.center[ax] = (n_ax - 1.0) / 2.0 + gen.uniform(-0.2, 0.2) * n_ax;
        }
        b.sigma_mm = a.bias_sigma_frac * extent;
        b.amplitude = a.bias_amplitude;
        cohort[i].artifact = b;
        break;
      }
      case 1:
        cohort[i].artifact = artifacts::distortion{a.grid_spacing, a.displacement_sigma, gen.below(std::uint64_t{1} << 31)};
        break;
      default: {
        const auto scheme = phantom_scheme(subject_phantom(m, cohort[i].phantom_seed));
        auto pool = subsample_indices(scheme, m.subsample_k, m.subsample_seed);
        std::vector<std::size_t> chosen;
        for (std::size_t c = 0; c < a.n_corrupted; ++c) {
          const std::size_t pick = static_cast<std::size_t>(gen.below(pool.size()));
          chosen.push_back(pool[pick]);
          pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        std::sort(chosen.begin(), chosen.end());
        cohort[i].artifact = artifacts::corrupted{chosen};
        break;
      }
    }
  }
  return cohort;
}

manifest resolve(manifest m) {
  m.subjects = plan_cohort(m);
  m.train.seed = m.seed;
  return m;
}

std::vector<training::sample> training_set(const manifest& m) {
  std::vector<training::sample> out;
  for (std::uint64_t s : training_seeds(m))
    out.push_back(training::prepare_sample(make_phantom(subject_phantom(m, s)), m.subsample_k, m.subsample_seed));
  return out;
}

training::model train_from_manifest(const manifest& m, const training::epoch_callback& on_epoch) {
  auto cfg = m.train;
  cfg.seed = m.seed;
  return training::train(training_set(m), cfg, on_epoch);
}

// ---------------------------------------------------------------------------
// evaluation

dwi_stack realize_subject(const manifest& m, const subject_entry& s) {
  dwi_stack full = make_phantom(subject_phantom(m, s.phantom_seed));
  if (s.artifact) full = artifacts::inject(full, *s.artifact);
  return full;
}

namespace {

std::vector<std::uint64_t> draw_seeds_for(const manifest& m) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t d = 0; d < m.draws; ++d) seeds.push_back(m.subsample_seed + d);
  return seeds;
}

}  // namespace

report evaluate(const manifest& m, const training::model& model) {
  report r;
  r.gamma = m.gamma;
  r.mu_train = model.stats.mu_train;
  r.sigma_train = model.stats.sigma_train;
  const auto seeds = draw_seeds_for(m);
  std::vector<double> pos, neg;
  for (const auto& s : plan_cohort(m)) {
    const auto d = detection::score_subject(realize_subject(m, s), model, m.subsample_k, seeds, m.gamma);
    subject_score row{s.id, s.kind(), d.l_con1, d.score, d.is_artifact};
    const bool clean = row.kind == subject_kind::clean;
    if (clean) {
      pos.push_back(row.score);
      ++(row.predicted_artifact ? r.counts.fn : r.counts.tp);
    } else {
      neg.push_back(row.score);
      ++(row.predicted_artifact ? r.counts.tn : r.counts.fp);
    }
    r.rows.push_back(row);
  }
  std::sort(r.rows.begin(), r.rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  r.values = metrics_from_confusion(r.counts);
  r.auc_rank = auc_from_scores(pos, neg);
  r.auc_balanced = (r.values.sen + r.values.spe) / 2.0;
  return r;
}

report run_experiment(const manifest& m) {
  if (!std::filesystem::exists(m.checkpoint / "stats.json"))
    throw validation_error("checkpoint '" + m.checkpoint.string() + "' not found; run train first");
  return evaluate(m, training::load_checkpoint(m.checkpoint));
}

std::string report_json(const report& r) {
  ojson j;
  j["schema"] = "udad-report/1";
  j["gamma"] = r.gamma;
  j["mu_train"] = r.mu_train;
  j["sigma_train"] = r.sigma_train;
  j["confusion"] = {{"tp", r.counts.tp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}, {"fp", r.counts.fp}};
  j["metrics"] = {{"acc", r.values.acc},         {"f1", r.values.f1},
                  {"sen", r.values.sen},         {"spe", r.values.spe},
                  {"auc_rank", r.auc_rank},      {"auc_balanced", r.auc_balanced}};
  j["positive_class"] = "clean";
  auto rows = ojson::array();
  for (const auto& s : r.rows)
    rows.push_back({{"id", s.id},
                    {"kind", to_string(s.kind)},
                    {"l_con1", s.l_con1},
                    {"score", s.score},
                    {"predicted", s.predicted_artifact ? "artifact" : "clean"},
                    {"truth", s.kind == subject_kind::clean ? "clean" : "artifact"}});
  j["subjects"] = rows;
  return j.dump(2) + "\n";
}

std::string report_csv(const report& r) {
  std::string out = "subject_id,kind,l_con1,score,predicted,truth\n";
  char buf[256];
  for (const auto& s : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%s,%s\n", s.id.c_str(), to_string(s.kind).c_str(), s.l_con1,
                  s.score, s.predicted_artifact ? "artifact" : "clean",
                  s.kind == subject_kind::clean ? "clean" : "artifact");
    out += buf;
  }
  return out;
}

std::vector<std::uint8_t> mid_axial_pgm(std::span<const float> volume, const dims3& dims) {
  if (volume.size() < dims.voxels()) throw shape_error("mid_axial_pgm: volume smaller than dims");
  const std::size_t z = dims.d / 2;
  float lo = 0.0f, hi = 0.0f;
  for (std::size_t y = 0; y < dims.h; ++y)
    for (std::size_t x = 0; x < dims.w; ++x) {
      const float v = volume[dims.index(x, y, z)];
      if ((x == 0 && y == 0) || v < lo) lo = v;
      if ((x == 0 && y == 0) || v > hi) hi = v;
    }
  const std::string head = "P5\n" + std::to_string(dims.w) + " " + std::to_string(dims.h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  for (std::size_t y = 0; y < dims.h; ++y)
    for (std::size_t x = 0; x < dims.w; ++x) {
      const double v = volume[dims.index(x, y, z)];
      const double t = hi > lo ? (v - lo) / (static_cast<double>(hi) - lo) : 0.0;
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
    }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error(format_errc::io, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

std::vector<float> predict_fa(const training::model& model, const dwi_stack& input) {
  nn::no_grad_guard guard;
  const auto out = nn::forward_generator(model.g_a, nn::var::constant(training::stack_tensor(input, model.config.input_scale)));
  const auto act = training::activate(out.output, model.config.activation).value();
  return {act.values().begin(), act.values().end()};
}

}  // namespace

void write_report(const report& r, const manifest& m, const training::model* model) {
  std::filesystem::create_directories(m.out);
  const std::string js = report_json(r), csv = report_csv(r);
  write_file(m.out / "report.json", js.data(), js.size());
  write_file(m.out / "scores.csv", csv.data(), csv.size());
  if (!m.export_slices || model == nullptr) return;
  const auto dir = m.out / "slices";
  std::filesystem::create_directories(dir);
  for (const auto& s : plan_cohort(m)) {
    const dwi_stack full = realize_subject(m, s);
    const fa_map fa_star = dti::compute_fa_map(full);
    const dwi_stack x = subsample(full, m.subsample_k, m.subsample_seed);
    const auto dims = x.dims();
    const auto b0 = x.scheme.b0_indices();
    const auto emit = [&](const std::string& tag, std::span<const float> v) {
      const auto bytes = mid_axial_pgm(v, dims);
      write_file(dir / (s.id + "_" + tag + ".pgm"), bytes.data(), bytes.size());
    };
    emit("x_b0", x.signal.channel(b0.front()));
    const auto fa_hat = predict_fa(*model, x);
    emit("fa_hat", fa_hat);
    emit("fa_star", fa_star.data);
  }
}

}  // namespace udad::eval
