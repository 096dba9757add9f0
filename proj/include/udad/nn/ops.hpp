#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "udad/nn/autodiff.hpp"
#include "udad/parallel.hpp"

namespace udad::nn {

namespace detail {

inline void expect_rank(const char* op, const shape_t& s, std::size_t rank) {
  if (s.size() != rank)
    throw shape_error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

template <class T>
void accumulate(basic_tensor<T>& dst, const basic_tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

struct conv_geometry {
  std::size_t n, ci, co, k, stride, pad;
  std::size_t in[3], out[3];
};

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Range of output indices o with 0 <= o*stride + k - pad < in.
inline void valid_range(std::size_t in, std::size_t out, std::size_t stride, std::size_t k, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  const long long kk = static_cast<long long>(k) - static_cast<long long>(pad);
  long long l = 0;
  if (kk < 0) l = (-kk + static_cast<long long>(stride) - 1) / static_cast<long long>(stride);
  long long h = (static_cast<long long>(in) - 1 - kk);
  h = h < 0 ? -1 : h / static_cast<long long>(stride);
  h = std::min<long long>(h, static_cast<long long>(out) - 1);
  lo = static_cast<std::size_t>(l);
  hi = h < l ? lo : static_cast<std::size_t>(h + 1);
}

}  // namespace detail

/// 3D cross-correlation. x: (N, Ci, W, H, D), weight: (Co, Ci, k, k, k),
/// bias: (Co). Accumulation is in double, in a fixed order.
template <class T>
basic_var<T> conv3d(const basic_var<T>& x, const basic_var<T>& weight, const basic_var<T>& bias, std::size_t stride,
                    std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  detail::expect_rank("conv3d input", xs, 5);
  detail::expect_rank("conv3d weight", ws, 5);
  if (ws[1] != xs[1])
    throw shape_error("conv3d: weight expects " + std::to_string(ws[1]) + " input channels, got " + std::to_string(xs[1]));
  if (bias.value().size() != ws[0]) throw shape_error("conv3d: bias length does not match output channels");
  if (ws[2] != ws[3] || ws[2] != ws[4]) throw shape_error("conv3d: kernel must be cubic");
  if (stride != 1 && stride != 2) throw shape_error("conv3d: stride must be 1 or 2");

  detail::conv_geometry g{xs[0], xs[1], ws[0], ws[2], stride, pad, {xs[2], xs[3], xs[4]}, {}};
  for (int a = 0; a < 3; ++a) {
    if (g.in[a] + 2 * pad < g.k) throw shape_error("conv3d: kernel larger than padded input");
    g.out[a] = detail::conv_out(g.in[a], g.k, stride, pad);
  }
  const std::size_t in_vox = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vox = g.out[0] * g.out[1] * g.out[2];
  const std::size_t k3 = g.k * g.k * g.k;

  basic_tensor<T> out({g.n, g.co, g.out[0], g.out[1], g.out[2]});
  const T* xv = x.value().data();
  const T* wv = weight.value().data();
  const T* bv = bias.value().data();

  parallel_for(g.n * g.co, [&](std::size_t task) {
    const std::size_t n = task / g.co, co = task % g.co;
    std::vector<double> acc(out_vox, static_cast<double>(bv[co]));
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      const T* xc = xv + (n * g.ci + ci) * in_vox;
      const T* wc = wv + (co * g.ci + ci) * k3;
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        std::size_t ox0, ox1;
        detail::valid_range(g.in[0], g.out[0], stride, kx, pad, ox0, ox1);
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          std::size_t oy0, oy1;
          detail::valid_range(g.in[1], g.out[1], stride, ky, pad, oy0, oy1);
          for (std::size_t kz = 0; kz < g.k; ++kz) {
            std::size_t oz0, oz1;
            detail::valid_range(g.in[2], g.out[2], stride, kz, pad, oz0, oz1);
            const double w = static_cast<double>(wc[(kx * g.k + ky) * g.k + kz]);
            for (std::size_t ox = ox0; ox < ox1; ++ox) {
              const std::size_t ix = ox * stride + kx - pad;
              for (std::size_t oy = oy0; oy < oy1; ++oy) {
                const std::size_t iy = oy * stride + ky - pad;
                const T* row = xc + (ix * g.in[1] + iy) * g.in[2];
                double* arow = acc.data() + (ox * g.out[1] + oy) * g.out[2];
                if (stride == 1) {
                  const T* r = row + (oz0 + kz - pad);
                  double* a = arow + oz0;
                  for (std::size_t j = 0; j < oz1 - oz0; ++j) a[j] += w * static_cast<double>(r[j]);
                } else {
                  for (std::size_t oz = oz0; oz < oz1; ++oz)
                    arow[oz] += w * static_cast<double>(row[oz * stride + kz - pad]);
                }
              }
            }
          }
        }
      }
    }
    T* o = out.data() + task * out_vox;
    for (std::size_t i = 0; i < out_vox; ++i) o[i] = static_cast<T>(acc[i]);
  });

  return make_result<T>("conv3d", std::move(out), {x, weight, bias}, [g, in_vox, out_vox, k3](node<T>& self) {
    const auto& dy = self.grad;
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    auto& bin = *self.inputs[2];
    const T* dyv = dy.data();
    const T* xv = xin.value.data();
    const T* wv = win.value.data();
    const std::size_t stride = g.stride, pad = g.pad;

    if (bin.requires_grad) {
      auto& db = bin.grad_buffer();
      for (std::size_t co = 0; co < g.co; ++co) {
        double s = 0.0;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* d = dyv + (n * g.co + co) * out_vox;
          for (std::size_t i = 0; i < out_vox; ++i) s += static_cast<double>(d[i]);
        }
        db[co] += static_cast<T>(s);
      }
    }

    if (win.requires_grad) {
      auto& dw = win.grad_buffer();
      parallel_for(g.co, [&](std::size_t co) {
        std::vector<double> acc(g.ci * k3, 0.0);
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* d = dyv + (n * g.co + co) * out_vox;
          for (std::size_t ci = 0; ci < g.ci; ++ci) {
            const T* xc = xv + (n * g.ci + ci) * (g.in[0] * g.in[1] * g.in[2]);
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              std::size_t ox0, ox1;
              detail::valid_range(g.in[0], g.out[0], stride, kx, pad, ox0, ox1);
              for (std::size_t ky = 0; ky < g.k; ++ky) {
                std::size_t oy0, oy1;
                detail::valid_range(g.in[1], g.out[1], stride, ky, pad, oy0, oy1);
                for (std::size_t kz = 0; kz < g.k; ++kz) {
                  std::size_t oz0, oz1;
                  detail::valid_range(g.in[2], g.out[2], stride, kz, pad, oz0, oz1);
                  double s = 0.0;
                  for (std::size_t ox = ox0; ox < ox1; ++ox) {
                    const std::size_t ix = ox * stride + kx - pad;
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                      const std::size_t iy = oy * stride + ky - pad;
                      const T* row = xc + (ix * g.in[1] + iy) * g.in[2];
                      const T* drow = d + (ox * g.out[1] + oy) * g.out[2];
                      for (std::size_t oz = oz0; oz < oz1; ++oz)
                        s += static_cast<double>(drow[oz]) * static_cast<double>(row[oz * stride + kz - pad]);
                    }
                  }
                  acc[ci * k3 + (kx * g.k + ky) * g.k + kz] += s;
                }
              }
            }
          }
        }
        T* dwc = dw.data() + co * g.ci * k3;
        for (std::size_t i = 0; i < g.ci * k3; ++i) dwc[i] += static_cast<T>(acc[i]);
      });
    }

    if (xin.requires_grad) {
      auto& dx = xin.grad_buffer();
      parallel_for(g.n * g.ci, [&](std::size_t task) {
        const std::size_t n = task / g.ci, ci = task % g.ci;
        std::vector<double> acc(in_vox, 0.0);
        for (std::size_t co = 0; co < g.co; ++co) {
          const T* d = dyv + (n * g.co + co) * out_vox;
          const T* wc = wv + (co * g.ci + ci) * k3;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t ox0, ox1;
            detail::valid_range(g.in[0], g.out[0], stride, kx, pad, ox0, ox1);
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              std::size_t oy0, oy1;
              detail::valid_range(g.in[1], g.out[1], stride, ky, pad, oy0, oy1);
              for (std::size_t kz = 0; kz < g.k; ++kz) {
                std::size_t oz0, oz1;
                detail::valid_range(g.in[2], g.out[2], stride, kz, pad, oz0, oz1);
                const double w = static_cast<double>(wc[(kx * g.k + ky) * g.k + kz]);
                for (std::size_t ox = ox0; ox < ox1; ++ox) {
                  const std::size_t ix = ox * stride + kx - pad;
                  for (std::size_t oy = oy0; oy < oy1; ++oy) {
                    const std::size_t iy = oy * stride + ky - pad;
                    double* arow = acc.data() + (ix * g.in[1] + iy) * g.in[2];
                    const T* drow = d + (ox * g.out[1] + oy) * g.out[2];
                    for (std::size_t oz = oz0; oz < oz1; ++oz)
                      arow[oz * stride + kz - pad] += w * static_cast<double>(drow[oz]);
                  }
                }
              }
            }
          }
        }
        T* dxc = dx.data() + task * in_vox;
        for (std::size_t i = 0; i < in_vox; ++i) dxc[i] += static_cast<T>(acc[i]);
      });
    }
  });
}

template <class T>
basic_var<T> relu(const basic_var<T>& x) {
  basic_tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return make_result<T>("relu", std::move(out), {x}, [](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (in.value[i] > T{0}) dx[i] += self.grad[i];
  });
}

template <class T>
basic_var<T> sigmoid(const basic_var<T>& x) {
  basic_tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(xv[i]);
  return make_result<T>("sigmoid", std::move(out), {x}, [](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = self.value[i];
      dx[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

/// Nearest-neighbour x2 upsampling of the three spatial axes.
template <class T>
basic_var<T> upsample2(const basic_var<T>& x) {
  const auto& s = x.shape();
  detail::expect_rank("upsample2", s, 5);
  const std::size_t nc = s[0] * s[1], W = s[2], H = s[3], D = s[4];
  basic_tensor<T> out({s[0], s[1], 2 * W, 2 * H, 2 * D});
  const T* xv = x.value().data();
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t ox = 0; ox < 2 * W; ++ox)
      for (std::size_t oy = 0; oy < 2 * H; ++oy) {
        const T* src = xv + ((c * W + ox / 2) * H + oy / 2) * D;
        T* dst = out.data() + ((c * 2 * W + ox) * 2 * H + oy) * 2 * D;
        for (std::size_t oz = 0; oz < 2 * D; ++oz) dst[oz] = src[oz / 2];
      }
  return make_result<T>("upsample2", std::move(out), {x}, [nc, W, H, D](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    const T* dy = self.grad.data();
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t z = 0; z < D; ++z) {
            double acc = 0.0;
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t e = 0; e < 2; ++e)
                  acc += static_cast<double>(dy[((c * 2 * W + 2 * x + a) * 2 * H + 2 * y + b) * 2 * D + 2 * z + e]);
            dx[((c * W + x) * H + y) * D + z] += static_cast<T>(acc);
          }
  });
}

/// Channel-axis concatenation of two (N, C, W, H, D) tensors.
template <class T>
basic_var<T> concat(const basic_var<T>& a, const basic_var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  detail::expect_rank("concat", sa, 5);
  detail::expect_rank("concat", sb, 5);
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] || sa[4] != sb[4])
    throw shape_error("concat: " + shape_string(sa) + " and " + shape_string(sb) + " differ outside the channel axis");
  const std::size_t vox = spatial_size(sa), ca = sa[1], cb = sb[1], n = sa[0];
  basic_tensor<T> out({n, ca + cb, sa[2], sa[3], sa[4]});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * ca * vox, ca * vox, out.data() + i * (ca + cb) * vox);
    std::copy_n(b.value().data() + i * cb * vox, cb * vox, out.data() + (i * (ca + cb) + ca) * vox);
  }
  return make_result<T>("concat", std::move(out), {a, b}, [n, ca, cb, vox](node<T>& self) {
    auto& ia = *self.inputs[0];
    auto& ib = *self.inputs[1];
    for (std::size_t i = 0; i < n; ++i) {
      const T* g = self.grad.data() + i * (ca + cb) * vox;
      if (ia.requires_grad) {
        T* d = ia.grad_buffer().data() + i * ca * vox;
        for (std::size_t j = 0; j < ca * vox; ++j) d[j] += g[j];
      }
      if (ib.requires_grad) {
        T* d = ib.grad_buffer().data() + i * cb * vox;
        for (std::size_t j = 0; j < cb * vox; ++j) d[j] += g[ca * vox + j];
      }
    }
  });
}

/// Mean over the spatial axes: (N, C, W, H, D) -> (N, C).
template <class T>
basic_var<T> global_avg_pool(const basic_var<T>& x) {
  const auto& s = x.shape();
  detail::expect_rank("global_avg_pool", s, 5);
  const std::size_t nc = s[0] * s[1], vox = spatial_size(s);
  basic_tensor<T> out({s[0], s[1]});
  for (std::size_t c = 0; c < nc; ++c) {
    double acc = 0.0;
    const T* p = x.value().data() + c * vox;
    for (std::size_t i = 0; i < vox; ++i) acc += static_cast<double>(p[i]);
    out[c] = static_cast<T>(acc / static_cast<double>(vox));
  }
  return make_result<T>("global_avg_pool", std::move(out), {x}, [nc, vox](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    for (std::size_t c = 0; c < nc; ++c) {
      const T g = static_cast<T>(static_cast<double>(self.grad[c]) / static_cast<double>(vox));
      for (std::size_t i = 0; i < vox; ++i) dx[c * vox + i] += g;
    }
  });
}

/// Dense layer: x (N, C), weight (O, C), bias (O) -> (N, O).
template <class T>
basic_var<T> linear(const basic_var<T>& x, const basic_var<T>& weight, const basic_var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  detail::expect_rank("linear input", xs, 2);
  detail::expect_rank("linear weight", ws, 2);
  if (ws[1] != xs[1] || bias.value().size() != ws[0]) throw shape_error("linear: weight/bias/input shapes disagree");
  const std::size_t n = xs[0], c = xs[1], o = ws[0];
  basic_tensor<T> out({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = static_cast<double>(bias.value()[j]);
      for (std::size_t k = 0; k < c; ++k)
        acc += static_cast<double>(weight.value()[j * c + k]) * static_cast<double>(x.value()[i * c + k]);
      out[i * o + j] = static_cast<T>(acc);
    }
  return make_result<T>("linear", std::move(out), {x, weight, bias}, [n, c, o](node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    auto& bi = *self.inputs[2];
    const auto& dy = self.grad;
    if (xi.requires_grad) {
      auto& dx = xi.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < o; ++j)
            acc += static_cast<double>(dy[i * o + j]) * static_cast<double>(wi.value[j * c + k]);
          dx[i * c + k] += static_cast<T>(acc);
        }
    }
    if (wi.requires_grad) {
      auto& dw = wi.grad_buffer();
      for (std::size_t j = 0; j < o; ++j)
        for (std::size_t k = 0; k < c; ++k) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            acc += static_cast<double>(dy[i * o + j]) * static_cast<double>(xi.value[i * c + k]);
          dw[j * c + k] += static_cast<T>(acc);
        }
    }
    if (bi.requires_grad) {
      auto& db = bi.grad_buffer();
      for (std::size_t j = 0; j < o; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(dy[i * o + j]);
        db[j] += static_cast<T>(acc);
      }
    }
  });
}

/// Elementwise sum of equal-shaped values.
template <class T>
basic_var<T> add(const basic_var<T>& a, const basic_var<T>& b) {
  if (a.shape() != b.shape()) throw shape_error("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  basic_tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>("add", std::move(out), {a, b}, [](node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) detail::accumulate(in->grad_buffer(), self.grad);
  });
}

template <class T>
basic_var<T> scale(const basic_var<T>& a, double factor) {
  basic_tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(static_cast<double>(a.value()[i]) * factor);
  return make_result<T>("scale", std::move(out), {a}, [factor](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] += static_cast<T>(static_cast<double>(self.grad[i]) * factor);
  });
}

/// Contiguous channel range [begin, begin + count) of a 5D tensor.
template <class T>
basic_var<T> slice_channels(const basic_var<T>& x, std::size_t begin, std::size_t count) {
  const auto& s = x.shape();
  detail::expect_rank("slice_channels", s, 5);
  if (begin + count > s[1]) throw shape_error("slice_channels: range exceeds channel count");
  const std::size_t n = s[0], c = s[1], vox = spatial_size(s);
  basic_tensor<T> out({n, count, s[2], s[3], s[4]});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.value().data() + (i * c + begin) * vox, count * vox, out.data() + i * count * vox);
  return make_result<T>("slice_channels", std::move(out), {x}, [n, c, vox, begin, count](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      T* d = dx.data() + (i * c + begin) * vox;
      const T* g = self.grad.data() + i * count * vox;
      for (std::size_t j = 0; j < count * vox; ++j) d[j] += g[j];
    }
  });
}

/// sum_i x_i * weights_i -> scalar. Used to reduce op outputs for gradient checks.
template <class T>
basic_var<T> weighted_sum(const basic_var<T>& x, const basic_tensor<T>& weights) {
  if (weights.size() != x.value().size()) throw shape_error("weighted_sum: weight count differs from input size");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    acc += static_cast<double>(x.value()[i]) * static_cast<double>(weights[i]);
  basic_tensor<T> out({1}, static_cast<T>(acc));
  return make_result<T>("weighted_sum", std::move(out), {x}, [weights](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
  });
}

/// Per-sample mean of |pred - target| over voxels where mask != 0, then
/// the mean over the batch. pred/target: (N, C, W, H, D), mask: (N, 1, W, H, D).
template <class T>
basic_var<T> masked_mean_abs(const basic_var<T>& pred, const basic_tensor<T>& target, const basic_tensor<T>& mask) {
  const auto& s = pred.shape();
  detail::expect_rank("masked_mean_abs", s, 5);
  if (target.shape() != s) throw shape_error("masked_mean_abs: target shape differs from prediction");
  const std::size_t n = s[0], c = s[1], vox = spatial_size(s);
  if (mask.size() != n * vox) throw shape_error("masked_mean_abs: mask must be (N,1,W,H,D)");
  std::vector<double> counts(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t v = 0; v < vox; ++v)
      if (mask[i * vox + v] != T{0}) counts[i] += 1.0;
    if (counts[i] == 0.0) throw validation_error("masked_mean_abs: empty mask for sample " + std::to_string(i));
    counts[i] *= static_cast<double>(c);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t v = 0; v < vox; ++v) {
        if (mask[i * vox + v] == T{0}) continue;
        const std::size_t j = (i * c + ch) * vox + v;
        acc += std::abs(static_cast<double>(pred.value()[j]) - static_cast<double>(target[j]));
      }
    total += acc / counts[i];
  }
  basic_tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)));
  return make_result<T>("masked_mean_abs", std::move(out), {pred},
                        [target, mask, counts, n, c, vox](node<T>& self) {
                          auto& in = *self.inputs[0];
                          if (!in.requires_grad) return;
                          auto& dx = in.grad_buffer();
                          const double g = static_cast<double>(self.grad[0]) / static_cast<double>(n);
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t ch = 0; ch < c; ++ch)
                              for (std::size_t v = 0; v < vox; ++v) {
                                if (mask[i * vox + v] == T{0}) continue;
                                const std::size_t j = (i * c + ch) * vox + v;
                                const double d = static_cast<double>(in.value[j]) - static_cast<double>(target[j]);
                                if (d == 0.0) continue;
                                dx[j] += static_cast<T>((d > 0.0 ? g : -g) / counts[i]);
                              }
                        });
}

/// For every sample and channel, the root of the masked mean squared
/// difference; summed over channels, averaged over the batch.
template <class T>
basic_var<T> masked_channel_rms(const basic_var<T>& pred, const basic_tensor<T>& target, const basic_tensor<T>& mask) {
  const auto& s = pred.shape();
  detail::expect_rank("masked_channel_rms", s, 5);
  if (target.shape() != s) throw shape_error("masked_channel_rms: target shape differs from prediction");
  const std::size_t n = s[0], c = s[1], vox = spatial_size(s);
  if (mask.size() != n * vox) throw shape_error("masked_channel_rms: mask must be (N,1,W,H,D)");
  std::vector<double> counts(n, 0.0), rms(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t v = 0; v < vox; ++v)
      if (mask[i * vox + v] != T{0}) counts[i] += 1.0;
    if (counts[i] == 0.0) throw validation_error("masked_channel_rms: empty mask for sample " + std::to_string(i));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t v = 0; v < vox; ++v) {
        if (mask[i * vox + v] == T{0}) continue;
        const std::size_t j = (i * c + ch) * vox + v;
        const double d = static_cast<double>(pred.value()[j]) - static_cast<double>(target[j]);
        acc += d * d;
      }
      rms[i * c + ch] = std::sqrt(acc / counts[i]);
      total += rms[i * c + ch];
    }
  basic_tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)));
  return make_result<T>("masked_channel_rms", std::move(out), {pred},
                        [target, mask, counts, rms, n, c, vox](node<T>& self) {
                          auto& in = *self.inputs[0];
                          if (!in.requires_grad) return;
                          auto& dx = in.grad_buffer();
                          const double g = static_cast<double>(self.grad[0]) / static_cast<double>(n);
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              const double r = rms[i * c + ch];
                              if (r == 0.0) continue;
                              const double f = g / (counts[i] * r);
                              for (std::size_t v = 0; v < vox; ++v) {
                                if (mask[i * vox + v] == T{0}) continue;
                                const std::size_t j = (i * c + ch) * vox + v;
                                const double d = static_cast<double>(in.value[j]) - static_cast<double>(target[j]);
                                dx[j] += static_cast<T>(f * d);
                              }
                            }
                        });
}

/// Per-sample root mean squared difference over all non-batch elements,
/// averaged over the batch. Both operands may carry gradients.
template <class T>
basic_var<T> rms_difference(const basic_var<T>& a, const basic_var<T>& b) {
  if (a.shape() != b.shape())
    throw shape_error("rms_difference: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t n = a.shape().at(0), per = a.value().size() / n;
  std::vector<double> rms(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      const double d = static_cast<double>(a.value()[j]) - static_cast<double>(b.value()[j]);
      acc += d * d;
    }
    rms[i] = std::sqrt(acc / static_cast<double>(per));
    total += rms[i];
  }
  basic_tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)));
  return make_result<T>("rms_difference", std::move(out), {a, b}, [rms, n, per](node<T>& self) {
    auto& ia = *self.inputs[0];
    auto& ib = *self.inputs[1];
    const double g = static_cast<double>(self.grad[0]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rms[i] == 0.0) continue;
      const double f = g / (static_cast<double>(per) * rms[i]);
      for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
        const double d = static_cast<double>(ia.value[j]) - static_cast<double>(ib.value[j]);
        if (ia.requires_grad) ia.grad_buffer()[j] += static_cast<T>(f * d);
        if (ib.requires_grad) ib.grad_buffer()[j] -= static_cast<T>(f * d);
      }
    }
  });
}

/// Mean over all elements of (x - target)^2.
template <class T>
basic_var<T> mean_squared_to(const basic_var<T>& x, double target) {
  const std::size_t n = x.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x.value()[i]) - target;
    acc += d * d;
  }
  basic_tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(n)));
  return make_result<T>("mean_squared_to", std::move(out), {x}, [target, n](node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& dx = in.grad_buffer();
    const double g = static_cast<double>(self.grad[0]) * 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] += static_cast<T>(g * (static_cast<double>(in.value[i]) - target));
  });
}

}  // namespace udad::nn
