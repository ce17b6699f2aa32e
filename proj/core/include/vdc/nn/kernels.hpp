#pragma once

#include <Eigen/Core>
#include <type_traits>
#include <span>
#include <vector>

#include "vdc/dual.hpp"
#include "vdc/nn/model.hpp"
#include "vdc/tensor.hpp"

// Layer kernels over [B, C, T, H, W] activations. Every kernel is a template
// on the scalar type so the same code runs in float (training), double
// (gradient checks) and Dual (Hessian-vector products). Convolutions go
// through im2col + Eigen GEMM on real scalars; the Dual overloads expand the
// bilinear product into real GEMMs on the value and tangent parts.
namespace vdc::nn::kernels {

enum class NormMode { batch, running };

template <class R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// dst (+)= a * b. Eigen's matrix-vector and coefficient-wise paths vectorize
// with alignment peeling, so their summation order depends on where the heap
// put the operands; those shapes take a plain loop to keep results bitwise
// reproducible. The blocked GEMM path packs its operands and is unaffected.
template <class Dst, class A, class B>
void product(Dst&& dst, const A& a, const B& b, bool accumulate) {
  const Eigen::Index m = a.rows(), k = a.cols(), n = b.cols();
  if (m == 1 || n == 1 || m + k + n < 24) {
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        typename std::decay_t<Dst>::Scalar acc(0);
        for (Eigen::Index t = 0; t < k; ++t) acc += a(i, t) * b(t, j);
        dst(i, j) = accumulate ? dst(i, j) + acc : acc;
      }
    }
  } else if (accumulate) {
    dst.noalias() += a * b;
  } else {
    dst.noalias() = a * b;
  }
}

struct ConvGeom {
  int cin, cout;
  int t, h, w;     // input extent
  int kt, kh, kw;  // kernel
  int pt, ph, pw;  // padding
  int to, ho, wo;  // output extent
  std::size_t k() const { return static_cast<std::size_t>(cin) * kt * kh * kw; }
  std::size_t in_plane() const { return static_cast<std::size_t>(t) * h * w; }
  std::size_t out_plane() const { return static_cast<std::size_t>(to) * ho * wo; }
};

inline ConvGeom conv_geometry(const Conv3d& c, const Shape& x) {
  ConvGeom g{};
  g.cin = c.in;
  g.cout = c.out;
  g.t = static_cast<int>(x[2]);
  g.h = static_cast<int>(x[3]);
  g.w = static_cast<int>(x[4]);
  g.kt = c.kernel[0];
  g.kh = c.kernel[1];
  g.kw = c.kernel[2];
  g.pt = c.pad[0];
  g.ph = c.pad[1];
  g.pw = c.pad[2];
  g.to = g.t + 2 * g.pt - g.kt + 1;
  g.ho = g.h + 2 * g.ph - g.kh + 1;
  g.wo = g.w + 2 * g.pw - g.kw + 1;
  return g;
}

// col is [K, P] row-major with K = cin*kt*kh*kw, P = to*ho*wo.
template <class R>
void im2col(const R* x, const ConvGeom& g, R* col) {
  const std::size_t P = g.out_plane();
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    const R* xc = x + static_cast<std::size_t>(ci) * g.in_plane();
    for (int dt = 0; dt < g.kt; ++dt) {
      for (int dh = 0; dh < g.kh; ++dh) {
        for (int dw = 0; dw < g.kw; ++dw, ++row) {
          R* dst = col + row * P;
          for (int ot = 0; ot < g.to; ++ot) {
            const int it = ot + dt - g.pt;
            for (int oh = 0; oh < g.ho; ++oh) {
              const int ih = oh + dh - g.ph;
              R* d = dst + (static_cast<std::size_t>(ot) * g.ho + oh) * g.wo;
              if (it < 0 || it >= g.t || ih < 0 || ih >= g.h) {
                std::fill(d, d + g.wo, R(0));
                continue;
              }
              const R* s = xc + (static_cast<std::size_t>(it) * g.h + ih) * g.w;
              for (int ow = 0; ow < g.wo; ++ow) {
                const int iw = ow + dw - g.pw;
                d[ow] = (iw >= 0 && iw < g.w) ? s[iw] : R(0);
              }
            }
          }
        }
      }
    }
  }
}

template <class R>
void col2im_add(const R* col, const ConvGeom& g, R* gx) {
  const std::size_t P = g.out_plane();
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    R* xc = gx + static_cast<std::size_t>(ci) * g.in_plane();
    for (int dt = 0; dt < g.kt; ++dt) {
      for (int dh = 0; dh < g.kh; ++dh) {
        for (int dw = 0; dw < g.kw; ++dw, ++row) {
          const R* src = col + row * P;
          for (int ot = 0; ot < g.to; ++ot) {
            const int it = ot + dt - g.pt;
            if (it < 0 || it >= g.t) continue;
            for (int oh = 0; oh < g.ho; ++oh) {
              const int ih = oh + dh - g.ph;
              if (ih < 0 || ih >= g.h) continue;
              const R* s = src + (static_cast<std::size_t>(ot) * g.ho + oh) * g.wo;
              R* d = xc + (static_cast<std::size_t>(it) * g.h + ih) * g.w;
              for (int ow = 0; ow < g.wo; ++ow) {
                const int iw = ow + dw - g.pw;
                if (iw >= 0 && iw < g.w) d[iw] += s[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <class R>
Tensor<R> conv_forward_real(const Tensor<R>& x, const R* weight, const R* bias, const Conv3d& c) {
  const ConvGeom g = conv_geometry(c, x.shape);
  const std::size_t B = x.dim(0), K = g.k(), P = g.out_plane();
  Tensor<R> y({B, static_cast<std::size_t>(g.cout), static_cast<std::size_t>(g.to), static_cast<std::size_t>(g.ho),
               static_cast<std::size_t>(g.wo)});
  std::vector<R> col(K * P);
  Eigen::Map<const RowMat<R>> wm(weight, g.cout, static_cast<Eigen::Index>(K));
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.ptr() + b * g.cin * g.in_plane(), g, col.data());
    Eigen::Map<const RowMat<R>> cm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    Eigen::Map<RowMat<R>> ym(y.ptr() + b * g.cout * P, g.cout, static_cast<Eigen::Index>(P));
    product(ym, wm, cm, false);
    if (bias) {
      for (int co = 0; co < g.cout; ++co) ym.row(co).array() += bias[co];
    }
  }
  return y;
}

// gw += gy * col(x)^T, gb += row sums of gy.
template <class R>
void conv_backward_weight_real(const Tensor<R>& x, const Tensor<R>& gy, const Conv3d& c, R* gw, R* gb) {
  const ConvGeom g = conv_geometry(c, x.shape);
  const std::size_t B = x.dim(0), K = g.k(), P = g.out_plane();
  std::vector<R> col(K * P);
  Eigen::Map<RowMat<R>> gwm(gw, g.cout, static_cast<Eigen::Index>(K));
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.ptr() + b * g.cin * g.in_plane(), g, col.data());
    Eigen::Map<const RowMat<R>> cm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    Eigen::Map<const RowMat<R>> gym(gy.ptr() + b * g.cout * P, g.cout, static_cast<Eigen::Index>(P));
    product(gwm, gym, cm.transpose(), true);
    if (gb) {
      for (int co = 0; co < g.cout; ++co) {
        const R* row = gy.ptr() + (b * g.cout + static_cast<std::size_t>(co)) * P;
        R acc(0);
        for (std::size_t i = 0; i < P; ++i) acc += row[i];
        gb[co] += acc;
      }
    }
  }
}

template <class R>
Tensor<R> conv_backward_input_real(const R* weight, const Tensor<R>& gy, const Shape& x_shape, const Conv3d& c) {
  const ConvGeom g = conv_geometry(c, x_shape);
  const std::size_t B = x_shape[0], K = g.k(), P = g.out_plane();
  Tensor<R> gx(x_shape);
  std::vector<R> col(K * P);
  Eigen::Map<const RowMat<R>> wm(weight, g.cout, static_cast<Eigen::Index>(K));
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const RowMat<R>> gym(gy.ptr() + b * g.cout * P, g.cout, static_cast<Eigen::Index>(P));
    Eigen::Map<RowMat<R>> cm(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    product(cm, wm.transpose(), gym, false);
    col2im_add(col.data(), g, gx.ptr() + b * g.cin * g.in_plane());
  }
  return gx;
}

template <class R>
bool all_zero(const std::vector<R>& v) {
  for (const R& x : v) {
    if (x != R(0)) return false;
  }
  return true;
}

template <class S>
Tensor<S> conv_forward(const Tensor<S>& x, std::span<const S> theta, const Conv3d& c) {
  const std::size_t wn = static_cast<std::size_t>(c.out) * c.in * c.kernel[0] * c.kernel[1] * c.kernel[2];
  if constexpr (is_dual_v<S>) {
    using R = real_of_t<S>;
    Tensor<R> xv, xd;
    split_dual(x, xv, xd);
    std::vector<R> wv, wd, bv, bd;
    split_dual(theta.subspan(c.weight_offset, wn), wv, wd);
    split_dual(theta.subspan(c.bias_offset, static_cast<std::size_t>(c.out)), bv, bd);
    Tensor<R> yv = conv_forward_real(xv, wv.data(), bv.data(), c);
    Tensor<R> yd = conv_forward_real(xv, wd.data(), bd.data(), c);
    if (!all_zero(xd.data)) {
      const Tensor<R> extra = conv_forward_real(xd, wv.data(), static_cast<const R*>(nullptr), c);
      for (std::size_t i = 0; i < yd.size(); ++i) yd.data[i] += extra.data[i];
    }
    return make_dual(yv, &yd);
  } else {
    return conv_forward_real(x, theta.data() + c.weight_offset, theta.data() + c.bias_offset, c);
  }
}

// Accumulates parameter gradients into gtheta; returns the input gradient
// (empty tensor when need_input is false).
template <class S>
Tensor<S> conv_backward(const Tensor<S>& x, const Tensor<S>& gy, std::span<const S> theta, const Conv3d& c,
                        std::span<S> gtheta, bool need_input) {
  const std::size_t wn = static_cast<std::size_t>(c.out) * c.in * c.kernel[0] * c.kernel[1] * c.kernel[2];
  if constexpr (is_dual_v<S>) {
    using R = real_of_t<S>;
    Tensor<R> xv, xd, gv, gd;
    split_dual(x, xv, xd);
    split_dual(gy, gv, gd);
    std::vector<R> wv, wd;
    split_dual(theta.subspan(c.weight_offset, wn), wv, wd);
    std::vector<R> gw_v(wn, R(0)), gw_d(wn, R(0)), gb_v(static_cast<std::size_t>(c.out), R(0)),
        gb_d(static_cast<std::size_t>(c.out), R(0));
    conv_backward_weight_real(xv, gv, c, gw_v.data(), gb_v.data());
    conv_backward_weight_real(xv, gd, c, gw_d.data(), gb_d.data());
    if (!all_zero(xd.data)) conv_backward_weight_real(xd, gv, c, gw_d.data(), static_cast<R*>(nullptr));
    for (std::size_t i = 0; i < wn; ++i) gtheta[c.weight_offset + i] += S(gw_v[i], gw_d[i]);
    for (std::size_t i = 0; i < static_cast<std::size_t>(c.out); ++i) gtheta[c.bias_offset + i] += S(gb_v[i], gb_d[i]);
    if (!need_input) return {};
    Tensor<R> gxv = conv_backward_input_real(wv.data(), gv, x.shape, c);
    Tensor<R> gxd = conv_backward_input_real(wv.data(), gd, x.shape, c);
    const Tensor<R> extra = conv_backward_input_real(wd.data(), gv, x.shape, c);
    for (std::size_t i = 0; i < gxd.size(); ++i) gxd.data[i] += extra.data[i];
    return make_dual(gxv, &gxd);
  } else {
    conv_backward_weight_real(x, gy, c, gtheta.data() + c.weight_offset, gtheta.data() + c.bias_offset);
    if (!need_input) return {};
    return conv_backward_input_real(theta.data() + c.weight_offset, gy, x.shape, c);
  }
}

// Per-channel statistics cached by a batch-mode forward pass.
template <class S>
struct BnCache {
  std::vector<S> mean, var, invstd;
};

template <class S>
Tensor<S> bn_forward(const Tensor<S>& x, std::span<const S> theta, const BatchNorm& bn, NormMode mode,
                     std::span<const float> buffers, BnCache<S>& cache) {
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.size() / (B * C);
  const auto n = static_cast<real_of_t<S>>(B * plane);
  Tensor<S> y(x.shape);
  cache.mean.assign(C, S(0));
  cache.var.assign(C, S(0));
  cache.invstd.assign(C, S(0));
  for (std::size_t c = 0; c < C; ++c) {
    S mean(0), var(0);
    if (mode == NormMode::batch) {
      for (std::size_t b = 0; b < B; ++b) {
        const S* p = x.ptr() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean = mean / n;
      for (std::size_t b = 0; b < B; ++b) {
        const S* p = x.ptr() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const S d = p[i] - mean;
          var += d * d;
        }
      }
      var = var / n;
    } else {
      mean = S(buffers[bn.stats_offset + c]);
      var = S(buffers[bn.stats_offset + C + c]);
    }
    const S invstd = S(1) / ssqrt(var + S(bn.eps));
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.invstd[c] = invstd;
    const S scale = theta[bn.gamma_offset + c] * invstd;
    const S shift = theta[bn.beta_offset + c] - mean * scale;
    for (std::size_t b = 0; b < B; ++b) {
      const S* p = x.ptr() + (b * C + c) * plane;
      S* q = y.ptr() + (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
    }
  }
  return y;
}

template <class S>
Tensor<S> bn_backward(const Tensor<S>& x, const Tensor<S>& gy, std::span<const S> theta, const BatchNorm& bn,
                      NormMode mode, const BnCache<S>& cache, std::span<S> gtheta) {
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.size() / (B * C);
  const auto n = static_cast<real_of_t<S>>(B * plane);
  Tensor<S> gx(x.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const S mean = cache.mean[c], invstd = cache.invstd[c];
    const S gamma = theta[bn.gamma_offset + c];
    S sum_g(0), sum_gx(0);
    for (std::size_t b = 0; b < B; ++b) {
      const S* p = x.ptr() + (b * C + c) * plane;
      const S* g = gy.ptr() + (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * ((p[i] - mean) * invstd);
      }
    }
    gtheta[bn.gamma_offset + c] += sum_gx;
    gtheta[bn.beta_offset + c] += sum_g;
    const S k = gamma * invstd;
    for (std::size_t b = 0; b < B; ++b) {
      const S* p = x.ptr() + (b * C + c) * plane;
      const S* g = gy.ptr() + (b * C + c) * plane;
      S* q = gx.ptr() + (b * C + c) * plane;
      if (mode == NormMode::batch) {
        const S mg = sum_g / n, mgx = sum_gx / n;
        for (std::size_t i = 0; i < plane; ++i) {
          const S xhat = (p[i] - mean) * invstd;
          q[i] = k * (g[i] - mg - xhat * mgx);
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) q[i] = k * g[i];
      }
    }
  }
  return gx;
}

template <class S>
Tensor<S> relu_forward(const Tensor<S>& x) {
  Tensor<S> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
  return y;
}

template <class S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& gy) {
  Tensor<S> gx(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) gx.data[i] = x.data[i] > S(0) ? gy.data[i] : S(0);
  return gx;
}

// Non-overlapping average pooling; the extent is divisible by the kernel.
template <class S>
Tensor<S> avgpool_forward(const Tensor<S>& x, const AvgPool& pool) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t kt = static_cast<std::size_t>(pool.kernel[0]), kh = static_cast<std::size_t>(pool.kernel[1]),
                    kw = static_cast<std::size_t>(pool.kernel[2]);
  const std::size_t To = T / kt, Ho = H / kh, Wo = W / kw;
  Tensor<S> y({B, C, To, Ho, Wo});
  const auto inv = static_cast<real_of_t<S>>(1.0 / static_cast<double>(kt * kh * kw));
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const S* p = x.ptr() + bc * T * H * W;
    S* q = y.ptr() + bc * To * Ho * Wo;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < H; ++h) {
        const S* row = p + (t * H + h) * W;
        S* out = q + ((t / kt) * Ho + h / kh) * Wo;
        for (std::size_t w = 0; w < W; ++w) out[w / kw] += row[w];
      }
    }
    for (std::size_t i = 0; i < To * Ho * Wo; ++i) q[i] = q[i] * inv;
  }
  return y;
}

template <class S>
Tensor<S> avgpool_backward(const Shape& x_shape, const Tensor<S>& gy, const AvgPool& pool) {
  const std::size_t B = x_shape[0], C = x_shape[1], T = x_shape[2], H = x_shape[3], W = x_shape[4];
  const std::size_t kt = static_cast<std::size_t>(pool.kernel[0]), kh = static_cast<std::size_t>(pool.kernel[1]),
                    kw = static_cast<std::size_t>(pool.kernel[2]);
  const std::size_t Ho = H / kh, Wo = W / kw, To = T / kt;
  Tensor<S> gx(x_shape);
  const auto inv = static_cast<real_of_t<S>>(1.0 / static_cast<double>(kt * kh * kw));
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const S* g = gy.ptr() + bc * To * Ho * Wo;
    S* q = gx.ptr() + bc * T * H * W;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < H; ++h) {
        const S* gin = g + ((t / kt) * Ho + h / kh) * Wo;
        S* row = q + (t * H + h) * W;
        for (std::size_t w = 0; w < W; ++w) row[w] = gin[w / kw] * inv;
      }
    }
  }
  return gx;
}

template <class S>
Tensor<S> gap_forward(const Tensor<S>& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.size() / (B * C);
  Tensor<S> y({B, C});
  const auto inv = static_cast<real_of_t<S>>(1.0 / static_cast<double>(plane));
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    S acc(0);
    const S* p = x.ptr() + bc * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    y.data[bc] = acc * inv;
  }
  return y;
}

template <class S>
Tensor<S> gap_backward(const Shape& x_shape, const Tensor<S>& gy) {
  const std::size_t B = x_shape[0], C = x_shape[1];
  Tensor<S> gx(x_shape);
  const std::size_t plane = gx.size() / (B * C);
  const auto inv = static_cast<real_of_t<S>>(1.0 / static_cast<double>(plane));
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const S v = gy.data[bc] * inv;
    std::fill(gx.ptr() + bc * plane, gx.ptr() + (bc + 1) * plane, v);
  }
  return gx;
}

template <class S>
Tensor<S> linear_forward(const Tensor<S>& x, std::span<const S> theta, const Linear& fc) {
  const std::size_t B = x.dim(0), I = static_cast<std::size_t>(fc.in), O = static_cast<std::size_t>(fc.out);
  Tensor<S> y({B, O});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      S acc = theta[fc.bias_offset + o];
      const S* w = theta.data() + fc.weight_offset + o * I;
      const S* xi = x.ptr() + b * I;
      for (std::size_t i = 0; i < I; ++i) acc += w[i] * xi[i];
      y.data[b * O + o] = acc;
    }
  }
  return y;
}

template <class S>
Tensor<S> linear_backward(const Tensor<S>& x, const Tensor<S>& gy, std::span<const S> theta, const Linear& fc,
                          std::span<S> gtheta) {
  const std::size_t B = x.dim(0), I = static_cast<std::size_t>(fc.in), O = static_cast<std::size_t>(fc.out);
  Tensor<S> gx(x.shape);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      const S g = gy.data[b * O + o];
      gtheta[fc.bias_offset + o] += g;
      const S* w = theta.data() + fc.weight_offset + o * I;
      S* gw = gtheta.data() + fc.weight_offset + o * I;
      const S* xi = x.ptr() + b * I;
      S* gxi = gx.ptr() + b * I;
      for (std::size_t i = 0; i < I; ++i) {
        gw[i] += g * xi[i];
        gxi[i] += g * w[i];
      }
    }
  }
  return gx;
}

}  // namespace vdc::nn::kernels
