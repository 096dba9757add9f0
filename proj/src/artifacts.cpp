#include "udad/artifacts.hpp"

#include <algorithm>
#include <cmath>

#include "udad/error.hpp"
#include "udad/parallel.hpp"
#include "udad/rng.hpp"

namespace udad::artifacts {

std::string kind_name(const artifact_spec& spec) {
  struct visitor {
    std::string operator()(const bias_field&) const { return "bias_field"; }
    std::string operator()(const distortion&) const { return "distortion"; }
    std::string operator()(const corrupted&) const { return "corrupted"; }
  };
  return std::visit(visitor{}, spec);
}

dwi_stack inject_bias_field(const dwi_stack& stack, const bias_field& spec) {
  const dims3 dims = stack.dims();
  if (!(spec.amplitude >= 0.0) || !std::isfinite(spec.amplitude))
    throw validation_error("bias field amplitude must be finite and >= 0");
  if (!(spec.sigma_mm > 0.0)) throw validation_error("bias field sigma must be > 0");
  const double extent[3] = {static_cast<double>(dims.w), static_cast<double>(dims.h), static_cast<double>(dims.d)};
  for (int a = 0; a < 3; ++a)
    if (!(spec.center[a] >= 0.0 && spec.center[a] <= extent[a] - 1.0))
      throw validation_error("bias field center lies outside the volume");

  dwi_stack out = stack;
  if (spec.amplitude == 0.0) return out;

  std::vector<double> field(dims.voxels());
  const double two_sigma2 = 2.0 * spec.sigma_mm * spec.sigma_mm;
  for (std::size_t x = 0; x < dims.w; ++x)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t z = 0; z < dims.d; ++z) {
        const double dx = (static_cast<double>(x) - spec.center[0]) * stack.voxel_size[0];
        const double dy = (static_cast<double>(y) - spec.center[1]) * stack.voxel_size[1];
        const double dz = (static_cast<double>(z) - spec.center[2]) * stack.voxel_size[2];
        field[dims.index(x, y, z)] = 1.0 + spec.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) / two_sigma2);
      }
  parallel_for(out.channels(), [&](std::size_t c) {
    auto ch = out.signal.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = static_cast<float>(static_cast<double>(ch[i]) * field[i]);
  });
  return out;
}

namespace {

/// Trilinear sample of a (possibly vector-valued) lattice at continuous
/// coordinates; points outside [0, n-1] read `outside`.
template <class T, class Get>
T trilinear(const dims3& dims, double x, double y, double z, Get get, T outside) {
  const double lim[3] = {static_cast<double>(dims.w) - 1.0, static_cast<double>(dims.h) - 1.0,
                         static_cast<double>(dims.d) - 1.0};
  const double p[3] = {x, y, z};
  std::size_t i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    if (p[a] < 0.0 || p[a] > lim[a]) return outside;
    double base = std::floor(p[a]);
    if (base >= lim[a]) base = std::max(0.0, lim[a] - 1.0);
    i0[a] = static_cast<std::size_t>(base);
    f[a] = p[a] - base;
  }
  T acc{};
  for (int corner = 0; corner < 8; ++corner) {
    std::size_t idx[3];
    double w = 1.0;
    for (int a = 0; a < 3; ++a) {
      const bool hi = (corner >> a) & 1;
      if (hi && f[a] == 0.0) {
        w = 0.0;
        break;
      }
      idx[a] = i0[a] + (hi ? 1 : 0);
      w *= hi ? f[a] : 1.0 - f[a];
    }
    if (w == 0.0) continue;
    acc = acc + get(idx[0], idx[1], idx[2]) * w;
  }
  return acc;
}

struct v3 {
  double x = 0, y = 0, z = 0;
  v3 operator+(const v3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  v3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

}  // namespace

displacement_field make_displacement_field(const dims3& dims, const distortion& spec) {
  if (spec.grid_spacing < 2) throw validation_error("distortion grid_spacing must be >= 2");
  if (!(spec.displacement_sigma >= 0.0)) throw validation_error("distortion displacement_sigma must be >= 0");
  const double s = static_cast<double>(spec.grid_spacing);
  auto points = [&](std::size_t n) {
    return static_cast<std::size_t>(std::ceil((static_cast<double>(n) - 1.0) / s)) + 1;
  };
  const dims3 grid{points(dims.w), points(dims.h), points(dims.d)};
  std::vector<v3> control(grid.voxels());
  rng gen(spec.seed, 0xE1);
  for (auto& c : control) {
    c.x = gen.normal(0.0, spec.displacement_sigma);
    c.y = gen.normal(0.0, spec.displacement_sigma);
    c.z = gen.normal(0.0, spec.displacement_sigma);
  }

  displacement_field field;
  field.dims = dims;
  field.offsets.resize(dims.voxels());
  for (std::size_t x = 0; x < dims.w; ++x)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t z = 0; z < dims.d; ++z) {
        const v3 d = trilinear<v3>(
            grid, static_cast<double>(x) / s, static_cast<double>(y) / s, static_cast<double>(z) / s,
            [&](std::size_t i, std::size_t j, std::size_t k) { return control[grid.index(i, j, k)]; }, v3{});
        field.offsets[dims.index(x, y, z)] = {d.x, d.y, d.z};
      }
  return field;
}

dwi_stack warp(const dwi_stack& stack, const displacement_field& field) {
  const dims3 dims = stack.dims();
  if (!(field.dims == dims)) throw shape_error("warp: displacement field dims differ from stack dims");
  dwi_stack out = stack;
  parallel_for(stack.channels(), [&](std::size_t c) {
    const auto src = stack.signal.channel(c);
    auto dst = out.signal.channel(c);
    for (std::size_t x = 0; x < dims.w; ++x)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t z = 0; z < dims.d; ++z) {
          const std::size_t i = dims.index(x, y, z);
          const vec3& off = field.offsets[i];
          const double v = trilinear<double>(
              dims, static_cast<double>(x) - off[0], static_cast<double>(y) - off[1], static_cast<double>(z) - off[2],
              [&](std::size_t a, std::size_t b, std::size_t k) { return static_cast<double>(src[dims.index(a, b, k)]); },
              0.0);
          dst[i] = static_cast<float>(std::max(0.0, v));
        }
  });
  return out;
}

dwi_stack inject_distortion(const dwi_stack& stack, const distortion& spec) {
  const auto field = make_displacement_field(stack.dims(), spec);
  if (spec.displacement_sigma == 0.0) return stack;
  return warp(stack, field);
}

corruption_result corrupt_volumes(const dwi_stack& stack, const corrupted& spec) {
  for (std::size_t c : spec.channel_indices)
    if (c >= stack.channels())
      throw validation_error("corrupt_volumes: channel " + std::to_string(c) + " out of range for " +
                             std::to_string(stack.channels()) + " channels");
  corruption_result result{stack, std::nullopt};
  if (stack.scheme.dwi_indices().empty())
    result.warning = "stack has no diffusion-weighted channels; nothing meaningful to corrupt";
  for (std::size_t c : spec.channel_indices) {
    auto ch = result.stack.signal.channel(c);
    std::fill(ch.begin(), ch.end(), 0.0f);
  }
  return result;
}

dwi_stack inject(const dwi_stack& stack, const artifact_spec& spec) {
  struct visitor {
    const dwi_stack& stack;
    dwi_stack operator()(const bias_field& s) const { return inject_bias_field(stack, s); }
    dwi_stack operator()(const distortion& s) const { return inject_distortion(stack, s); }
    dwi_stack operator()(const corrupted& s) const { return corrupt_volumes(stack, s).stack; }
  };
  return std::visit(visitor{stack}, spec);
}

}  // namespace udad::artifacts
