#include "udad/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "udad/error.hpp"
#include "udad/parallel.hpp"
#include "udad/rng.hpp"

namespace udad {

std::string to_string(const dims3& dims) {
  std::ostringstream out;
  out << dims.w << "x" << dims.h << "x" << dims.d;
  return out.str();
}

// ---------------------------------------------------------------------------
// gradient_scheme

gradient_scheme::gradient_scheme(std::vector<gradient_entry> entries) : entries_(std::move(entries)) {}

std::vector<std::size_t> gradient_scheme::b0_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].is_b0()) out.push_back(i);
  return out;
}

std::vector<std::size_t> gradient_scheme::dwi_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (!entries_[i].is_b0()) out.push_back(i);
  return out;
}

void gradient_scheme::validate() const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (!std::isfinite(e.bvalue) || e.bvalue < 0.0)
      throw validation_error("gradient entry " + std::to_string(i) + ": bvalue must be finite and >= 0");
    if (e.bvalue > 0.0) {
      const auto& g = e.direction;
      const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      if (!(std::abs(norm - 1.0) <= 1e-6))
        throw validation_error("gradient entry " + std::to_string(i) + ": direction is not unit length (|g| = " +
                               std::to_string(norm) + ")");
    }
  }
}

void gradient_scheme::validate_for_fit(std::size_t min_dwis) const {
  validate();
  if (b0_indices().empty()) throw validation_error("gradient scheme has no b0 entry");
  const auto n = dwi_indices().size();
  if (n < min_dwis)
    throw validation_error("gradient scheme has " + std::to_string(n) + " diffusion-weighted entries, need at least " +
                           std::to_string(min_dwis));
}

void dwi_stack::validate() const {
  if (signal.data.size() != signal.channels * signal.dims.voxels())
    throw validation_error("stack data length does not match C*W*H*D");
  if (scheme.size() != signal.channels)
    throw validation_error("gradient scheme has " + std::to_string(scheme.size()) + " entries for " +
                           std::to_string(signal.channels) + " channels");
  for (float v : signal.data)
    if (!std::isfinite(v) || v < 0.0f) throw validation_error("stack contains negative or non-finite signal");
  scheme.validate();
}

std::size_t fa_map::mask_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// phantom

void phantom_spec::validate() const {
  if (dims.w < 8 || dims.h < 8 || dims.d < 8)
    throw validation_error("phantom dims must be >= 8 per axis, got " + to_string(dims));
  if (n_directions < 6)
    throw validation_error("phantom needs >= 6 directions, got " + std::to_string(n_directions));
  if (!std::isfinite(bvalue) || bvalue <= 0.0) throw validation_error("phantom bvalue must be > 0");
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) throw validation_error("phantom noise_sigma must be >= 0");
}

namespace {

using mat3 = std::array<std::array<double, 3>, 3>;

mat3 mat_mul(const mat3& a, const mat3& b) {
  mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

mat3 rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  mat3 r{};
  r[axis][axis] = 1.0;
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  r[i][i] = c;
  r[i][j] = -s;
  r[j][i] = s;
  r[j][j] = c;
  return r;
}

vec3 mat_vec(const mat3& m, const vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2], m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

vec3 normalized(vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

std::array<double, 6> stick_tensor(const vec3& axis, double parallel, double perpendicular) {
  const vec3 a = normalized(axis);
  const double d = parallel - perpendicular;
  return {perpendicular + d * a[0] * a[0], d * a[0] * a[1], d * a[0] * a[2],
          perpendicular + d * a[1] * a[1], d * a[1] * a[2], perpendicular + d * a[2] * a[2]};
}

std::array<double, 6> iso_tensor(double value) { return {value, 0.0, 0.0, value, 0.0, value}; }

double quadratic_form(const std::array<double, 6>& t, const vec3& g) {
  return t[0] * g[0] * g[0] + 2.0 * t[1] * g[0] * g[1] + 2.0 * t[2] * g[0] * g[2] + t[3] * g[1] * g[1] +
         2.0 * t[4] * g[1] * g[2] + t[5] * g[2] * g[2];
}

constexpr double parenchyma_diffusivity = 0.7e-3;
constexpr double csf_diffusivity = 3.0e-3;
constexpr double fiber_parallel = 1.7e-3;
constexpr double fiber_perpendicular = 0.3e-3;

}  // namespace

std::vector<vec3> half_sphere_directions(std::size_t n, std::uint64_t seed) {
  // Fibonacci lattice on the upper half-sphere.
  std::vector<vec3> dirs;
  dirs.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  rng gen(seed, 0xD1);
  const mat3 rot = mat_mul(rotation(2, gen.uniform(0.0, 2.0 * std::numbers::pi)),
                           mat_mul(rotation(1, std::acos(gen.uniform(-1.0, 1.0))),
                                   rotation(2, gen.uniform(0.0, 2.0 * std::numbers::pi))));
  for (auto& g : dirs) {
    g = normalized(mat_vec(rot, g));
    if (g[2] < 0.0 || (g[2] == 0.0 && g[1] < 0.0)) g = {-g[0], -g[1], -g[2]};
  }
  return dirs;
}

gradient_scheme phantom_scheme(const phantom_spec& spec) {
  std::vector<gradient_entry> entries;
  entries.push_back({{0.0, 0.0, 0.0}, 0.0});
  for (const auto& g : half_sphere_directions(spec.n_directions, spec.scheme_seed))
    entries.push_back({g, spec.bvalue});
  return gradient_scheme(std::move(entries));
}

phantom_truth phantom_tensors(const phantom_spec& spec) {
  spec.validate();
  const dims3 dims = spec.dims;
  rng gen(spec.seed, 0xA1);

  const vec3 extent{static_cast<double>(dims.w), static_cast<double>(dims.h), static_cast<double>(dims.d)};
  vec3 center{}, radius{};
  for (int a = 0; a < 3; ++a) {
    center[a] = (extent[a] - 1.0) / 2.0 + gen.uniform(-0.5, 0.5);
    radius[a] = 0.42 * extent[a] * (1.0 + gen.uniform(-0.05, 0.05));
  }

  struct bundle {
    vec3 point, axis;
    double radius;
  };
  const double min_extent = std::min({extent[0], extent[1], extent[2]});
  std::array<bundle, 2> bundles{};
  for (int b = 0; b < 2; ++b) {
    // First bundle runs roughly along x, second roughly along y.
    const double tilt = gen.uniform(-0.45, 0.45);
    const double twist = gen.uniform(-0.45, 0.45);
    vec3 axis = b == 0 ? vec3{1.0, 0.0, 0.0} : vec3{0.0, 1.0, 0.0};
    axis = mat_vec(mat_mul(rotation(2, tilt), rotation(b == 0 ? 1 : 0, twist)), axis);
    vec3 point = center;
    for (int a = 0; a < 3; ++a) point[a] += gen.uniform(-0.12, 0.12) * extent[a];
    bundles[b] = {point, normalized(axis), 0.14 * min_extent * (1.0 + gen.uniform(-0.1, 0.1))};
  }

  phantom_truth truth;
  truth.dims = dims;
  truth.tensors.assign(dims.voxels(), {0, 0, 0, 0, 0, 0});
  truth.mask.assign(dims.voxels(), 0);
  for (std::size_t x = 0; x < dims.w; ++x)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t z = 0; z < dims.d; ++z) {
        const vec3 v{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        double rho2 = 0.0;
        for (int a = 0; a < 3; ++a) rho2 += std::pow((v[a] - center[a]) / radius[a], 2);
        if (rho2 > 1.0) continue;
        const std::size_t i = dims.index(x, y, z);
        truth.mask[i] = 1;
        if (spec.anatomy == phantom_anatomy::isotropic) {
          truth.tensors[i] = iso_tensor(parenchyma_diffusivity);
          continue;
        }
        if (std::sqrt(rho2) > 0.8) {
          truth.tensors[i] = iso_tensor(csf_diffusivity);
          continue;
        }
        truth.tensors[i] = iso_tensor(parenchyma_diffusivity);
        for (const auto& b : bundles) {
          const vec3 rel{v[0] - b.point[0], v[1] - b.point[1], v[2] - b.point[2]};
          const double along = rel[0] * b.axis[0] + rel[1] * b.axis[1] + rel[2] * b.axis[2];
          double dist2 = 0.0;
          for (int a = 0; a < 3; ++a) dist2 += std::pow(rel[a] - along * b.axis[a], 2);
          if (dist2 <= b.radius * b.radius) {
            truth.tensors[i] = stick_tensor(b.axis, fiber_parallel, fiber_perpendicular);
            break;
          }
        }
      }
  return truth;
}

dwi_stack make_phantom(const phantom_spec& spec) {
  const phantom_truth truth = phantom_tensors(spec);
  dwi_stack stack;
  stack.scheme = phantom_scheme(spec);
  stack.signal = channel_array(stack.scheme.size(), spec.dims);
  const std::size_t nvox = spec.dims.voxels();

  parallel_for(stack.scheme.size(), [&](std::size_t c) {
    const auto& entry = stack.scheme[c];
    auto out = stack.signal.channel(c);
    for (std::size_t i = 0; i < nvox; ++i) {
      if (!truth.mask[i]) continue;
      const double s = entry.is_b0() ? phantom_s0
                                     : phantom_s0 * std::exp(-entry.bvalue * quadratic_form(truth.tensors[i], entry.direction));
      out[i] = static_cast<float>(s);
    }
  });

  if (spec.noise_sigma > 0.0) {
    rng gen(spec.seed, 0xB2);
    const double sd = spec.noise_sigma * phantom_s0;
    for (std::size_t c = 0; c < stack.channels(); ++c) {
      auto ch = stack.signal.channel(c);
      for (std::size_t i = 0; i < nvox; ++i) {
        if (!truth.mask[i]) continue;
        ch[i] = static_cast<float>(std::max(0.0, static_cast<double>(ch[i]) + gen.normal(0.0, sd)));
      }
    }
  }
  return stack;
}

// ---------------------------------------------------------------------------
// channel utilities

namespace {

double angle_between(const vec3& a, const vec3& b) {
  const double dot = std::abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
  return std::acos(std::min(1.0, dot));
}

}  // namespace

double min_pairwise_angle(std::span<const vec3> directions) {
  double best = std::numbers::pi;
  for (std::size_t i = 0; i < directions.size(); ++i)
    for (std::size_t j = i + 1; j < directions.size(); ++j)
      best = std::min(best, angle_between(directions[i], directions[j]));
  return best;
}

std::vector<std::size_t> subsample_indices(const gradient_scheme& scheme, std::size_t k, std::uint64_t seed) {
  const auto b0s = scheme.b0_indices();
  const auto dwis = scheme.dwi_indices();
  if (b0s.empty()) throw validation_error("subsample: stack has no b0 channel");
  if (k == 0) throw validation_error("subsample: k must be >= 1");
  if (k > dwis.size())
    throw validation_error("subsample: requested " + std::to_string(k) + " DWIs but only " +
                           std::to_string(dwis.size()) + " are available");

  std::vector<std::size_t> chosen;
  std::vector<double> closest(dwis.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(dwis.size(), false);
  std::size_t next = seed % dwis.size();
  for (std::size_t step = 0; step < k; ++step) {
    taken[next] = true;
    chosen.push_back(dwis[next]);
    const vec3& g = scheme[dwis[next]].direction;
    for (std::size_t j = 0; j < dwis.size(); ++j)
      if (!taken[j]) closest[j] = std::min(closest[j], angle_between(g, scheme[dwis[j]].direction));
    double best = -1.0;
    for (std::size_t j = 0; j < dwis.size(); ++j)
      if (!taken[j] && closest[j] > best) {
        best = closest[j];
        next = j;
      }
  }
  std::sort(chosen.begin(), chosen.end());
  chosen.insert(chosen.begin(), b0s.front());
  return chosen;
}

dwi_stack select_channels(const dwi_stack& stack, std::span<const std::size_t> indices) {
  dwi_stack out;
  out.voxel_size = stack.voxel_size;
  out.signal = channel_array(indices.size(), stack.dims());
  std::vector<gradient_entry> entries;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= stack.channels()) throw validation_error("channel index out of range");
    const auto src = stack.signal.channel(indices[i]);
    std::copy(src.begin(), src.end(), out.signal.channel(i).begin());
    entries.push_back(stack.scheme[indices[i]]);
  }
  out.scheme = gradient_scheme(std::move(entries));
  return out;
}

dwi_stack subsample(const dwi_stack& stack, std::size_t k, std::uint64_t seed) {
  const auto idx = subsample_indices(stack.scheme, k, seed);
  return select_channels(stack, idx);
}

channel_array average_dwis(const dwi_stack& stack) {
  const auto dwis = stack.scheme.dwi_indices();
  if (dwis.empty()) throw validation_error("average_dwis: stack has no diffusion-weighted channels");
  channel_array out(1, stack.dims());
  const std::size_t nvox = stack.dims().voxels();
  const double n = static_cast<double>(dwis.size());
  for (std::size_t i = 0; i < nvox; ++i) {
    double sum = 0.0;
    for (std::size_t c : dwis) sum += static_cast<double>(stack.signal.channel(c)[i]);
    out.data[i] = static_cast<float>(sum / n);
  }
  return out;
}

channel_array concat_channels(const channel_array& a, const channel_array& b) {
  if (a.channels == 0) return b;
  if (b.channels == 0) return a;
  if (!(a.dims == b.dims))
    throw shape_error("concat_channels: spatial dims differ (" + to_string(a.dims) + " vs " + to_string(b.dims) + ")");
  channel_array out;
  out.channels = a.channels + b.channels;
  out.dims = a.dims;
  out.data.reserve(a.data.size() + b.data.size());
  out.data.insert(out.data.end(), a.data.begin(), a.data.end());
  out.data.insert(out.data.end(), b.data.begin(), b.data.end());
  return out;
}

dwi_stack concat_channels(const dwi_stack& a, const dwi_stack& b) {
  dwi_stack out;
  out.signal = concat_channels(a.signal, b.signal);
  out.voxel_size = a.channels() > 0 ? a.voxel_size : b.voxel_size;
  auto entries = a.scheme.entries();
  entries.insert(entries.end(), b.scheme.entries().begin(), b.scheme.entries().end());
  out.scheme = gradient_scheme(std::move(entries));
  return out;
}

// ---------------------------------------------------------------------------
// DVOL container

namespace {

constexpr char dvol_magic[] = {'D', 'V', 'O', 'L', '1', '\n'};
constexpr std::size_t magic_size = sizeof(dvol_magic);

struct raw_volume {
  channel_array array;
  std::vector<double> bvals;
  std::vector<vec3> bvecs;
  vec3 voxel_size{1.0, 1.0, 1.0};
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> encode_raw(const raw_volume& raw) {
  nlohmann::ordered_json header;
  const auto& a = raw.array;
  header["dims"] = {a.channels, a.dims.w, a.dims.h, a.dims.d};
  header["voxel_size_mm"] = {raw.voxel_size[0], raw.voxel_size[1], raw.voxel_size[2]};
  header["bvals"] = raw.bvals;
  auto bvecs = nlohmann::ordered_json::array();
  for (const auto& g : raw.bvecs) bvecs.push_back({g[0], g[1], g[2]});
  header["bvecs"] = bvecs;
  header["dtype"] = "f32le";
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(dvol_magic), std::end(dvol_magic));
  out.reserve(magic_size + 4 + text.size() + 4 * a.data.size());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float f : a.data) put_f32(out, f);
  return out;
}

raw_volume decode_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < magic_size) throw format_error(format_errc::truncated, "DVOL: file shorter than magic");
  if (!std::equal(std::begin(dvol_magic), std::end(dvol_magic), bytes.begin(),
                  [](char m, std::uint8_t b) { return static_cast<std::uint8_t>(m) == b; }))
    throw format_error(format_errc::magic_mismatch, "DVOL: bad magic, not a DVOL1 file");
  if (bytes.size() < magic_size + 4) throw format_error(format_errc::truncated, "DVOL: missing header length");
  const std::size_t header_len = get_u32(bytes.data() + magic_size);
  const std::size_t payload_at = magic_size + 4 + header_len;
  if (bytes.size() < payload_at) throw format_error(format_errc::truncated, "DVOL: header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + magic_size + 4, bytes.begin() + static_cast<std::ptrdiff_t>(payload_at));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(format_errc::bad_header, std::string("DVOL: header is not valid JSON: ") + e.what());
  }

  raw_volume raw;
  try {
    const auto dims = header.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 4) throw format_error(format_errc::bad_header, "DVOL: dims must have 4 entries");
    if (header.at("dtype").get<std::string>() != "f32le")
      throw format_error(format_errc::bad_header, "DVOL: unsupported dtype");
    const auto vs = header.at("voxel_size_mm").get<std::vector<double>>();
    if (vs.size() != 3) throw format_error(format_errc::bad_header, "DVOL: voxel_size_mm must have 3 entries");
    raw.voxel_size = {vs[0], vs[1], vs[2]};
    raw.bvals = header.at("bvals").get<std::vector<double>>();
    for (const auto& g : header.at("bvecs")) {
      const auto v = g.get<std::vector<double>>();
      if (v.size() != 3) throw format_error(format_errc::bad_header, "DVOL: bvecs entries must have 3 components");
      raw.bvecs.push_back({v[0], v[1], v[2]});
    }
    if (raw.bvals.size() != raw.bvecs.size())
      throw format_error(format_errc::bad_header, "DVOL: bvals and bvecs lengths differ");
    raw.array.channels = dims[0];
    raw.array.dims = {dims[1], dims[2], dims[3]};
  } catch (const nlohmann::json::exception& e) {
    throw format_error(format_errc::bad_header, std::string("DVOL: malformed header: ") + e.what());
  }

  const std::size_t volume_bytes = 4 * raw.array.dims.voxels();
  const std::size_t expected = volume_bytes * raw.array.channels;
  const std::size_t payload = bytes.size() - payload_at;
  if (payload != expected) {
    if (volume_bytes == 0 || payload % volume_bytes != 0)
      throw format_error(format_errc::truncated, "DVOL: payload truncated (" + std::to_string(payload) +
                                                     " bytes, expected " + std::to_string(expected) + ")");
    throw format_error(format_errc::size_mismatch,
                       "DVOL: header declares " + std::to_string(raw.array.channels) + " channels but payload holds " +
                           std::to_string(payload / volume_bytes));
  }
  raw.array.data.resize(raw.array.channels * raw.array.dims.voxels());
  const std::uint8_t* p = bytes.data() + payload_at;
  for (std::size_t i = 0; i < raw.array.data.size(); ++i, p += 4) raw.array.data[i] = std::bit_cast<float>(get_u32(p));
  return raw;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error(format_errc::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error(format_errc::io, "write failed: " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(format_errc::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_dvol(const dwi_stack& stack) {
  raw_volume raw;
  raw.array = stack.signal;
  raw.voxel_size = stack.voxel_size;
  for (const auto& e : stack.scheme.entries()) {
    raw.bvals.push_back(e.bvalue);
    raw.bvecs.push_back(e.direction);
  }
  return encode_raw(raw);
}

dwi_stack decode_dvol(std::span<const std::uint8_t> bytes) {
  raw_volume raw = decode_raw(bytes);
  if (raw.bvals.size() != raw.array.channels)
    throw format_error(format_errc::bad_header, "DVOL: " + std::to_string(raw.bvals.size()) + " bvals for " +
                                                    std::to_string(raw.array.channels) + " channels");
  dwi_stack stack;
  stack.signal = std::move(raw.array);
  stack.voxel_size = raw.voxel_size;
  std::vector<gradient_entry> entries;
  for (std::size_t i = 0; i < raw.bvals.size(); ++i) entries.push_back({raw.bvecs[i], raw.bvals[i]});
  stack.scheme = gradient_scheme(std::move(entries));
  return stack;
}

void save_dvol(const dwi_stack& stack, const std::filesystem::path& path) { write_bytes(path, encode_dvol(stack)); }

dwi_stack load_dvol(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return decode_dvol(bytes);
}

void save_fa_map(const fa_map& fa, const std::filesystem::path& path) {
  raw_volume raw;
  raw.array.channels = 1;
  raw.array.dims = fa.dims;
  raw.array.data = fa.data;
  raw.voxel_size = fa.voxel_size;
  write_bytes(path, encode_raw(raw));
}

fa_map load_fa_map(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  raw_volume raw = decode_raw(bytes);
  if (raw.array.channels != 1)
    throw format_error(format_errc::bad_header, "FA map must have exactly one channel, got " +
                                                    std::to_string(raw.array.channels));
  fa_map fa;
  fa.dims = raw.array.dims;
  fa.voxel_size = raw.voxel_size;
  fa.data = std::move(raw.array.data);
  fa.mask.resize(fa.data.size());
  for (std::size_t i = 0; i < fa.data.size(); ++i) fa.mask[i] = fa.data[i] > 0.0f ? 1 : 0;
  return fa;
}

}  // namespace udad
