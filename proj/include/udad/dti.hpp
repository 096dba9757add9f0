#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "udad/volume.hpp"

namespace udad::dti {

/// Unique entries of a symmetric tensor: (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).
using tensor6 = std::array<double, 6>;

struct eigen_triple {
  double l1 = 0.0, l2 = 0.0, l3 = 0.0;  // l1 >= l2 >= l3
};

struct tensor_field {
  dims3 dims;
  std::vector<tensor6> tensors;
  std::vector<std::uint8_t> mask;
};

/// Signals below this fraction of S0 are raised to it before the log.
inline constexpr double signal_floor = 1e-6;

/// S0 * exp(-b g^T D g). Throws validation_error for a non-unit direction
/// when b > 0, or for negative b / S0.
double predict_signal(const tensor6& tensor, double s0, const vec3& dir, double b);

/// Voxel support used by fitting and FA maps: any channel strictly positive.
std::vector<std::uint8_t> support_mask(const dwi_stack& stack);

/// Log-linear ordinary least squares over all DWI channels. S0 is the mean
/// of the b0 channels; voxels with S0 <= 0 or outside the support get a
/// zero tensor. Throws fit_error if the design matrix is rank deficient.
tensor_field fit_tensor(const dwi_stack& stack);

/// Descending eigenvalues of a symmetric 3x3 matrix. Closed-form
/// trigonometric solution, falling back to cyclic Jacobi rotations near
/// repeated roots.
eigen_triple eig_sym3(const tensor6& tensor);

/// Same, always via Jacobi rotations.
eigen_triple eig_sym3_jacobi(const tensor6& tensor);

/// Fractional anisotropy. Negative eigenvalues are clamped to zero first;
/// the all-zero triple maps to 0.
double fa_from_eigs(const eigen_triple& e);

/// fit_tensor -> eig_sym3 -> fa_from_eigs per voxel, clamped to [0, 1].
fa_map compute_fa_map(const dwi_stack& stack);

fa_map fa_map_from_tensors(const tensor_field& field, const vec3& voxel_size = {1.0, 1.0, 1.0});

}  // namespace udad::dti
