#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace udad {

using vec3 = std::array<double, 3>;

struct dims3 {
  std::size_t w = 0, h = 0, d = 0;

  std::size_t voxels() const { return w * h * d; }
  /// Row-major offset with d fastest.
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * h + y) * d + z; }
  bool operator==(const dims3&) const = default;
};

std::string to_string(const dims3& dims);

struct gradient_entry {
  vec3 direction{0.0, 0.0, 0.0};
  double bvalue = 0.0;  // s/mm^2

  bool is_b0() const { return bvalue == 0.0; }
};

/// Per-channel diffusion encoding.
class gradient_scheme {
 public:
  gradient_scheme() = default;
  explicit gradient_scheme(std::vector<gradient_entry> entries);

  const std::vector<gradient_entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const gradient_entry& operator[](std::size_t i) const { return entries_[i]; }

  std::vector<std::size_t> b0_indices() const;
  std::vector<std::size_t> dwi_indices() const;

  /// Throws validation_error unless bvalues are non-negative and every
  /// b > 0 direction is unit length within 1e-6.
  void validate() const;
  /// validate() plus at least one b0 and `min_dwis` diffusion-weighted entries.
  void validate_for_fit(std::size_t min_dwis = 6) const;

 private:
  std::vector<gradient_entry> entries_;
};

/// Plain channel-major 4D array (C, W, H, D).
struct channel_array {
  std::size_t channels = 0;
  dims3 dims;
  std::vector<float> data;

  channel_array() = default;
  channel_array(std::size_t c, dims3 d, float fill = 0.0f)
      : channels(c), dims(d), data(c * d.voxels(), fill) {}

  std::span<float> channel(std::size_t c) {
    return {data.data() + c * dims.voxels(), dims.voxels()};
  }
  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * dims.voxels(), dims.voxels()};
  }
  float& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
    return data[c * dims.voxels() + dims.index(x, y, z)];
  }
  float at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return data[c * dims.voxels() + dims.index(x, y, z)];
  }
};

/// Diffusion-weighted acquisition: signal plus its encoding.
struct dwi_stack {
  channel_array signal;
  gradient_scheme scheme;
  vec3 voxel_size{1.0, 1.0, 1.0};  // mm

  std::size_t channels() const { return signal.channels; }
  const dims3& dims() const { return signal.dims; }

  /// Checks data length, finiteness, non-negativity and scheme length.
  void validate() const;
};

/// Scalar map in [0, 1] with its support mask. Out-of-mask values are 0.
struct fa_map {
  dims3 dims;
  std::vector<float> data;
  std::vector<std::uint8_t> mask;
  vec3 voxel_size{1.0, 1.0, 1.0};

  std::size_t mask_count() const;
};

enum class phantom_anatomy {
  fibers,     // isotropic parenchyma, CSF rim, two anisotropic bundles
  isotropic,  // whole ellipsoid at parenchyma diffusivity
};

struct phantom_spec {
  dims3 dims{16, 16, 16};
  std::size_t n_directions = 90;
  double bvalue = 1000.0;
  std::uint64_t seed = 0;
  /// Gaussian noise standard deviation as a fraction of S0.
  double noise_sigma = 0.0;
  /// Seed for the gradient directions. Subjects sharing a protocol share it.
  std::uint64_t scheme_seed = 0;
  phantom_anatomy anatomy = phantom_anatomy::fibers;

  void validate() const;
};

inline constexpr double phantom_s0 = 1000.0;

/// Near-uniform unit directions on the z >= 0 half-sphere, rotated by a
/// seeded random rotation.
std::vector<vec3> half_sphere_directions(std::size_t n, std::uint64_t seed);

/// One b0 entry followed by n_directions DWIs at spec.bvalue.
gradient_scheme phantom_scheme(const phantom_spec& spec);

/// Ground-truth tensors of the phantom, (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz) per
/// voxel in mm^2/s, plus the brain mask.
struct phantom_truth {
  dims3 dims;
  std::vector<std::array<double, 6>> tensors;
  std::vector<std::uint8_t> mask;
};

phantom_truth phantom_tensors(const phantom_spec& spec);

dwi_stack make_phantom(const phantom_spec& spec);

/// Channel indices picked by subsample(): the first b0 followed by the k
/// chosen DWIs in ascending channel order.
std::vector<std::size_t> subsample_indices(const gradient_scheme& scheme, std::size_t k,
                                           std::uint64_t seed);

/// 1 b0 + k DWIs chosen by greedy farthest-point selection over
/// antipodally-symmetric angular distance. The seed picks the starting
/// direction; ties go to the lower channel index.
dwi_stack subsample(const dwi_stack& stack, std::size_t k, std::uint64_t seed);

dwi_stack select_channels(const dwi_stack& stack, std::span<const std::size_t> indices);

/// Voxelwise mean over the DWI channels (b0 excluded). One-channel result.
channel_array average_dwis(const dwi_stack& stack);

/// a's channels followed by b's. An empty operand (0 channels) is the identity.
channel_array concat_channels(const channel_array& a, const channel_array& b);
dwi_stack concat_channels(const dwi_stack& a, const dwi_stack& b);

/// Smallest pairwise angle (radians, antipodally symmetric) among the
/// directions of the given scheme entries.
double min_pairwise_angle(std::span<const vec3> directions);

void save_dvol(const dwi_stack& stack, const std::filesystem::path& path);
dwi_stack load_dvol(const std::filesystem::path& path);

/// In-memory DVOL encoding, used by save_dvol/load_dvol.
std::vector<std::uint8_t> encode_dvol(const dwi_stack& stack);
dwi_stack decode_dvol(std::span<const std::uint8_t> bytes);

void save_fa_map(const fa_map& fa, const std::filesystem::path& path);
/// The mask of a loaded map is its non-zero support.
fa_map load_fa_map(const std::filesystem::path& path);

}  // namespace udad
