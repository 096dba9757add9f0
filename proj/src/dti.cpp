#include "udad/dti.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "udad/error.hpp"
#include "udad/parallel.hpp"

namespace udad::dti {

double predict_signal(const tensor6& t, double s0, const vec3& g, double b) {
  if (!(b >= 0.0) || !(s0 >= 0.0)) throw validation_error("predict_signal: b and S0 must be >= 0");
  if (b == 0.0) return s0;
  const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
  if (!(std::abs(norm - 1.0) <= 1e-6)) throw validation_error("predict_signal: gradient direction is not unit length");
  const double q = t[0] * g[0] * g[0] + 2.0 * t[1] * g[0] * g[1] + 2.0 * t[2] * g[0] * g[2] + t[3] * g[1] * g[1] +
                   2.0 * t[4] * g[1] * g[2] + t[5] * g[2] * g[2];
  return s0 * std::exp(-b * q);
}

std::vector<std::uint8_t> support_mask(const dwi_stack& stack) {
  const std::size_t nvox = stack.dims().voxels();
  std::vector<std::uint8_t> mask(nvox, 0);
  for (std::size_t c = 0; c < stack.channels(); ++c) {
    const auto ch = stack.signal.channel(c);
    for (std::size_t i = 0; i < nvox; ++i)
      if (ch[i] > 0.0f) mask[i] = 1;
  }
  return mask;
}

tensor_field fit_tensor(const dwi_stack& stack) {
  stack.scheme.validate_for_fit(6);
  const auto b0s = stack.scheme.b0_indices();
  const auto dwis = stack.scheme.dwi_indices();

  Eigen::MatrixXd design(static_cast<Eigen::Index>(dwis.size()), 6);
  for (std::size_t r = 0; r < dwis.size(); ++r) {
    const auto& e = stack.scheme[dwis[r]];
    const auto& g = e.direction;
    const auto row = static_cast<Eigen::Index>(r);
    design(row, 0) = e.bvalue * g[0] * g[0];
    design(row, 1) = e.bvalue * 2.0 * g[0] * g[1];
    design(row, 2) = e.bvalue * 2.0 * g[0] * g[2];
    design(row, 3) = e.bvalue * g[1] * g[1];
    design(row, 4) = e.bvalue * 2.0 * g[1] * g[2];
    design(row, 5) = e.bvalue * g[2] * g[2];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 6) {
    std::ostringstream msg;
    msg << "fit_tensor: design matrix has rank " << qr.rank() << " < 6; the " << dwis.size()
        << " gradient directions are collinear or lie on a common cone";
    throw fit_error(msg.str());
  }
  // Rows of the pseudo-inverse map -ln(S/S0) to the six tensor entries.
  const Eigen::MatrixXd pinv = qr.solve(Eigen::MatrixXd::Identity(design.rows(), design.rows()));

  tensor_field field;
  field.dims = stack.dims();
  field.mask = support_mask(stack);
  const std::size_t nvox = field.dims.voxels();
  field.tensors.assign(nvox, {0, 0, 0, 0, 0, 0});

  const std::size_t slab = field.dims.h * field.dims.d;
  parallel_for(field.dims.w, [&](std::size_t x) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(dwis.size()));
    for (std::size_t i = x * slab; i < (x + 1) * slab; ++i) {
      if (!field.mask[i]) continue;
      double s0 = 0.0;
      for (std::size_t c : b0s) s0 += static_cast<double>(stack.signal.channel(c)[i]);
      s0 /= static_cast<double>(b0s.size());
      if (!(s0 > 0.0)) continue;
      const double floor = signal_floor * s0;
      for (std::size_t r = 0; r < dwis.size(); ++r) {
        const double s = std::max(static_cast<double>(stack.signal.channel(dwis[r])[i]), floor);
        y(static_cast<Eigen::Index>(r)) = -std::log(s / s0);
      }
      const Eigen::VectorXd d = pinv * y;
      field.tensors[i] = {d(0), d(1), d(2), d(3), d(4), d(5)};
    }
  });
  return field;
}

namespace {

void check_finite(const tensor6& t) {
  for (double v : t)
    if (!std::isfinite(v)) throw validation_error("eig_sym3: non-finite tensor entry");
}

eigen_triple sorted(double a, double b, double c) {
  if (a < b) std::swap(a, b);
  if (b < c) std::swap(b, c);
  if (a < b) std::swap(a, b);
  return {a, b, c};
}

}  // namespace

eigen_triple eig_sym3_jacobi(const tensor6& t) {
  check_finite(t);
  double a[3][3] = {{t[0], t[1], t[2]}, {t[1], t[3], t[4]}, {t[2], t[4], t[5]}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off <= 1e-32 * diag || off == 0.0) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double tn = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tn * tn + 1.0);
        const double s = tn * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  return sorted(a[0][0], a[1][1], a[2][2]);
}

eigen_triple eig_sym3(const tensor6& t) {
  check_finite(t);
  const double off = t[1] * t[1] + t[2] * t[2] + t[4] * t[4];
  if (off == 0.0) return sorted(t[0], t[3], t[5]);

  const double q = (t[0] + t[3] + t[5]) / 3.0;
  const double b00 = t[0] - q, b11 = t[3] - q, b22 = t[5] - q;
  const double p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off;
  const double p = std::sqrt(p2 / 6.0);
  const double scale = std::max({std::abs(t[0]), std::abs(t[3]), std::abs(t[5]), std::sqrt(off)});
  if (p <= 1e-9 * scale) return eig_sym3_jacobi(t);

  // det((A - qI) / p) / 2, in [-1, 1] up to rounding.
  const double det = b00 * (b11 * b22 - t[4] * t[4]) - t[1] * (t[1] * b22 - t[4] * t[2]) +
                     t[2] * (t[1] * t[4] - b11 * t[2]);
  const double r = det / (2.0 * p * p * p);
  if (std::abs(r) > 1.0 - 1e-6) return eig_sym3_jacobi(t);

  const double phi = std::acos(r) / 3.0;
  const double l1 = q + 2.0 * p * std::cos(phi);
  const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double l2 = 3.0 * q - l1 - l3;
  return sorted(l1, l2, l3);
}

double fa_from_eigs(const eigen_triple& e) {
  const double l1 = std::max(0.0, e.l1), l2 = std::max(0.0, e.l2), l3 = std::max(0.0, e.l3);
  const double den = 2.0 * (l1 * l1 + l2 * l2 + l3 * l3);
  if (den == 0.0) return 0.0;
  const double num = (l1 - l2) * (l1 - l2) + (l1 - l3) * (l1 - l3) + (l2 - l3) * (l2 - l3);
  return std::clamp(std::sqrt(num / den), 0.0, 1.0);
}

fa_map fa_map_from_tensors(const tensor_field& field, const vec3& voxel_size) {
  fa_map fa;
  fa.dims = field.dims;
  fa.voxel_size = voxel_size;
  fa.mask = field.mask;
  fa.data.assign(field.dims.voxels(), 0.0f);
  for (std::size_t i = 0; i < fa.data.size(); ++i) {
    if (!fa.mask[i]) continue;
    const double v = fa_from_eigs(eig_sym3(field.tensors[i]));
    fa.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return fa;
}

fa_map compute_fa_map(const dwi_stack& stack) {
  return fa_map_from_tensors(fit_tensor(stack), stack.voxel_size);
}

}  // namespace udad::dti
