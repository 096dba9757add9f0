#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "udad/volume.hpp"

namespace udad::artifacts {

/// Smooth multiplicative inhomogeneity: 1 + amplitude * exp(-|v - c|^2 / (2 sigma^2)).
struct bias_field {
  vec3 center{0.0, 0.0, 0.0};  // voxel coordinates
  double sigma_mm = 4.0;
  double amplitude = 0.5;
};

/// Elastic warp from a random coarse displacement grid.
struct distortion {
  std::size_t grid_spacing = 8;     // voxels
  double displacement_sigma = 2.0;  // voxels
  std::uint64_t seed = 0;
};

/// Channels replaced by zeros.
struct corrupted {
  std::vector<std::size_t> channel_indices;
};

using artifact_spec = std::variant<bias_field, distortion, corrupted>;

std::string kind_name(const artifact_spec& spec);

/// Per-voxel displacement in voxels, one vec3 per voxel in dims3 order.
struct displacement_field {
  dims3 dims;
  std::vector<vec3> offsets;
};

dwi_stack inject_bias_field(const dwi_stack& stack, const bias_field& spec);

/// Seeded control-grid displacements upsampled trilinearly to voxel
/// resolution.
displacement_field make_displacement_field(const dims3& dims, const distortion& spec);

/// out(v) = in(v - offset(v)) by trilinear interpolation, zero outside the
/// volume. The same field is applied to every channel.
dwi_stack warp(const dwi_stack& stack, const displacement_field& field);

dwi_stack inject_distortion(const dwi_stack& stack, const distortion& spec);

struct corruption_result {
  dwi_stack stack;
  /// Set when the input had no diffusion-weighted channel to corrupt.
  std::optional<std::string> warning;
};

corruption_result corrupt_volumes(const dwi_stack& stack, const corrupted& spec);

/// Dispatches on the spec kind. Corruption warnings are dropped.
dwi_stack inject(const dwi_stack& stack, const artifact_spec& spec);

}  // namespace udad::artifacts
