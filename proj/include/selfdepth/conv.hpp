#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "selfdepth/ops.hpp"

namespace selfdepth {

namespace detail {

// Geometry of a (possibly degenerate, D=1) 3-D convolution.
struct ConvGeom {
  std::size_t batch, in_ch, out_ch;
  std::array<std::size_t, 3> in;      // D, H, W
  std::array<std::size_t, 3> kernel;  // kd, kh, kw
  std::array<std::size_t, 3> pad;
  std::size_t stride;
  std::array<std::size_t, 3> out;

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::size_t patch() const {
    return in_ch * kernel[0] * kernel[1] * kernel[2];
  }
};

inline ConvGeom make_conv_geom(const Shape& input, const Shape& kernel,
                               std::size_t bias_len, std::size_t stride,
                               std::array<std::size_t, 3> pad,
                               const char* op) {
  // input [B,C,D,H,W], kernel [F,C,kd,kh,kw]
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (input[1] != kernel[1]) {
    throw ShapeError(std::string(op) + ": input has " +
                     std::to_string(input[1]) + " channels but kernel " +
                     shape_str(kernel) + " expects " +
                     std::to_string(kernel[1]));
  }
  if (bias_len != kernel[0]) {
    throw ShapeError(std::string(op) + ": bias length " +
                     std::to_string(bias_len) + " != filter count " +
                     std::to_string(kernel[0]));
  }
  ConvGeom g;
  g.batch = input[0];
  g.in_ch = input[1];
  g.out_ch = kernel[0];
  g.stride = stride;
  g.pad = pad;
  for (int d = 0; d < 3; ++d) {
    g.in[d] = input[2 + d];
    g.kernel[d] = kernel[2 + d];
    if (g.kernel[d] > g.in[d] + 2 * pad[d]) {
      throw ShapeError(std::string(op) + ": kernel " + shape_str(kernel) +
                       " larger than padded input " + shape_str(input));
    }
    g.out[d] = (g.in[d] + 2 * pad[d] - g.kernel[d]) / stride + 1;
  }
  return g;
}

// Unfolds one batch element into a [patch, out_volume] matrix.
template <typename T>
void vol2col(const ConvGeom& g, const T* in, T* col) {
  const std::size_t od = g.out[0], oh = g.out[1], ow = g.out[2];
  const std::size_t sd = g.stride, sh = g.stride, sw = g.stride;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* plane = in + c * g.in_volume();
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          T* dst = col + row * g.out_volume();
          for (std::size_t z = 0; z < od; ++z) {
            long iz = static_cast<long>(z * sd + kz) - static_cast<long>(g.pad[0]);
            for (std::size_t y = 0; y < oh; ++y) {
              long iy = static_cast<long>(y * sh + ky) - static_cast<long>(g.pad[1]);
              bool zy_in = iz >= 0 && iz < static_cast<long>(g.in[0]) &&
                           iy >= 0 && iy < static_cast<long>(g.in[1]);
              const T* src = plane + (zy_in ? (iz * g.in[1] + iy) * g.in[2] : 0);
              for (std::size_t x = 0; x < ow; ++x) {
                long ix = static_cast<long>(x * sw + kx) - static_cast<long>(g.pad[2]);
                *dst++ = (zy_in && ix >= 0 && ix < static_cast<long>(g.in[2]))
                             ? src[ix]
                             : T{0};
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2vol(const ConvGeom& g, const T* col, T* in) {
  const std::size_t od = g.out[0], oh = g.out[1], ow = g.out[2];
  const std::size_t sd = g.stride, sh = g.stride, sw = g.stride;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* plane = in + c * g.in_volume();
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          const T* src = col + row * g.out_volume();
          for (std::size_t z = 0; z < od; ++z) {
            long iz = static_cast<long>(z * sd + kz) - static_cast<long>(g.pad[0]);
            for (std::size_t y = 0; y < oh; ++y) {
              long iy = static_cast<long>(y * sh + ky) - static_cast<long>(g.pad[1]);
              bool zy_in = iz >= 0 && iz < static_cast<long>(g.in[0]) &&
                           iy >= 0 && iy < static_cast<long>(g.in[1]);
              if (!zy_in) {
                src += ow;
                continue;
              }
              T* dst = plane + (iz * g.in[1] + iy) * g.in[2];
              for (std::size_t x = 0; x < ow; ++x, ++src) {
                long ix = static_cast<long>(x * sw + kx) - static_cast<long>(g.pad[2]);
                if (ix >= 0 && ix < static_cast<long>(g.in[2])) dst[ix] += *src;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Operands live in Eigen-owned storage: Eigen picks its vectorised kernels
// from pointer alignment, and std::vector alignment varies between runs.
template <typename T>
RowMat<T> copy_matrix(const T* data, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMat<T>>(data, static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols));
}

template <typename T>
Tensor<T> conv_nd(const Tensor<T>& input, const Tensor<T>& kernel,
                  const Tensor<T>& bias, const ConvGeom& g, Shape out_shape) {
  const std::size_t patch = g.patch(), ov = g.out_volume();
  std::vector<T> out(g.batch * g.out_ch * ov);
  RowMat<T> col(patch, ov), prod(g.out_ch, ov);
  const RowMat<T> K = copy_matrix(kernel.values().data(), g.out_ch, patch);
  for (std::size_t b = 0; b < g.batch; ++b) {
    vol2col(g, input.values().data() + b * g.in_ch * g.in_volume(), col.data());
    prod.noalias() = K * col;
    for (std::size_t f = 0; f < g.out_ch; ++f) prod.row(f).array() += bias[f];
    std::copy(prod.data(), prod.data() + prod.size(), out.data() + b * g.out_ch * ov);
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out),
      {input.node(), kernel.node(), bias.node()}, [g](Node<T>& self) {
        auto& in = *self.parents[0];
        auto& ker = *self.parents[1];
        auto& bi = *self.parents[2];
        const std::size_t patch = g.patch(), ov = g.out_volume();
        RowMat<T> col(patch, ov);
        T* gk = ker.requires_grad ? ker.grad_buffer().data() : nullptr;
        T* gb = bi.requires_grad ? bi.grad_buffer().data() : nullptr;
        T* gi = in.requires_grad ? in.grad_buffer().data() : nullptr;
        RowMat<T> K;
        if (gi) K = copy_matrix(ker.value.data(), g.out_ch, patch);
        RowMat<T> gk_acc;
        if (gk) gk_acc = RowMat<T>::Zero(g.out_ch, patch);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const RowMat<T> G = copy_matrix(self.grad.data() + b * g.out_ch * ov, g.out_ch, ov);
          if (gb) {
            for (std::size_t f = 0; f < g.out_ch; ++f) gb[f] += G.row(f).sum();
          }
          if (gk) {
            vol2col(g, in.value.data() + b * g.in_ch * g.in_volume(), col.data());
            gk_acc.noalias() += G * col.transpose();
          }
          if (gi) {
            col.noalias() = K.transpose() * G;
            col2vol(g, col.data(), gi + b * g.in_ch * g.in_volume());
          }
        }
        if (gk) {
          for (Eigen::Index i = 0; i < gk_acc.size(); ++i) gk[i] += gk_acc.data()[i];
        }
      });
}

}  // namespace detail

/// 2-D convolution (cross-correlation). input [B,C,H,W], kernel [F,C,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (input.ndim() != 4 || kernel.ndim() != 4 || bias.ndim() != 1) {
    throw ShapeError("conv2d: expected input [B,C,H,W], kernel [F,C,kh,kw], "
                     "bias [F]; got " + shape_str(input.shape()) + ", " +
                     shape_str(kernel.shape()) + ", " + shape_str(bias.shape()));
  }
  const Shape& s = input.shape();
  const Shape& k = kernel.shape();
  auto g = detail::make_conv_geom({s[0], s[1], 1, s[2], s[3]},
                                  {k[0], k[1], 1, k[2], k[3]}, bias.numel(),
                                  stride, {0, padding, padding}, "conv2d");
  return detail::conv_nd(input, kernel, bias, g,
                         Shape{g.batch, g.out_ch, g.out[1], g.out[2]});
}

/// 3-D convolution with per-axis padding (depth, height, width).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t stride,
                 std::array<std::size_t, 3> padding) {
  if (input.ndim() != 5 || kernel.ndim() != 5 || bias.ndim() != 1) {
    throw ShapeError("conv3d: expected input [B,C,D,H,W], kernel "
                     "[F,C,kd,kh,kw], bias [F]; got " +
                     shape_str(input.shape()) + ", " +
                     shape_str(kernel.shape()) + ", " + shape_str(bias.shape()));
  }
  auto g = detail::make_conv_geom(input.shape(), kernel.shape(), bias.numel(),
                                  stride, padding, "conv3d");
  return detail::conv_nd(
      input, kernel, bias, g,
      Shape{g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]});
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  return conv3d(input, kernel, bias, stride, {padding, padding, padding});
}

namespace detail {

// Source taps for align_corners=false 2x upsampling along one axis.
struct UpTap {
  std::size_t i0, i1;
  double w1;
};

inline std::vector<UpTap> upsample_taps(std::size_t n) {
  std::vector<UpTap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    std::size_t i1 = std::min(i0 + 1, n - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear 2x upsampling of the last two axes, half-pixel centers.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& input) {
  if (input.ndim() < 2) {
    throw ShapeError("upsample2x: need at least 2 axes, got " +
                     shape_str(input.shape()));
  }
  Shape out_shape = input.shape();
  std::size_t h = out_shape[out_shape.size() - 2];
  std::size_t w = out_shape.back();
  if (h == 0 || w == 0) throw ShapeError("upsample2x: empty spatial extent");
  out_shape[out_shape.size() - 2] = 2 * h;
  out_shape.back() = 2 * w;
  std::size_t planes = input.numel() / (h * w);
  auto ty = detail::upsample_taps(h);
  auto tx = detail::upsample_taps(w);
  std::vector<T> out(planes * 4 * h * w);
  const auto& v = input.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = v.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const auto& a = ty[y];
      T wy = static_cast<T>(a.w1);
      for (std::size_t x = 0; x < 2 * w; ++x) {
        const auto& b = tx[x];
        T wx = static_cast<T>(b.w1);
        T top = src[a.i0 * w + b.i0] * (1 - wx) + src[a.i0 * w + b.i1] * wx;
        T bot = src[a.i1 * w + b.i0] * (1 - wx) + src[a.i1 * w + b.i1] * wx;
        dst[y * 2 * w + x] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {input.node()},
      [ty, tx, planes, h, w](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
          const T* g = self.grad.data() + p * 4 * h * w;
          T* dst = gp.data() + p * h * w;
          for (std::size_t y = 0; y < 2 * h; ++y) {
            const auto& a = ty[y];
            T wy = static_cast<T>(a.w1);
            for (std::size_t x = 0; x < 2 * w; ++x) {
              const auto& b = tx[x];
              T wx = static_cast<T>(b.w1);
              T gv = g[y * 2 * w + x];
              dst[a.i0 * w + b.i0] += gv * (1 - wy) * (1 - wx);
              dst[a.i0 * w + b.i1] += gv * (1 - wy) * wx;
              dst[a.i1 * w + b.i0] += gv * wy * (1 - wx);
              dst[a.i1 * w + b.i1] += gv * wy * wx;
            }
          }
        }
      });
}

/// Reflection padding of the last two axes by `pad` pixels (no edge repeat).
template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& input, std::size_t pad) {
  Shape out_shape = input.shape();
  std::size_t h = out_shape[out_shape.size() - 2];
  std::size_t w = out_shape.back();
  if (h == 0 || w == 0) throw ShapeError("pad_reflect: empty input");
  std::size_t ho = h + 2 * pad, wo = w + 2 * pad;
  out_shape[out_shape.size() - 2] = ho;
  out_shape.back() = wo;
  auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    long period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
  };
  std::vector<std::size_t> src_index(ho * wo);
  for (std::size_t y = 0; y < ho; ++y) {
    long sy = reflect(static_cast<long>(y) - static_cast<long>(pad),
                      static_cast<long>(h));
    for (std::size_t x = 0; x < wo; ++x) {
      long sx = reflect(static_cast<long>(x) - static_cast<long>(pad),
                        static_cast<long>(w));
      src_index[y * wo + x] = static_cast<std::size_t>(sy) * w +
                              static_cast<std::size_t>(sx);
    }
  }
  std::size_t planes = input.numel() / (h * w);
  std::vector<T> out(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t k = 0; k < ho * wo; ++k) {
      out[p * ho * wo + k] = input[p * h * w + src_index[k]];
    }
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {input.node()},
      [src_index = std::move(src_index), planes, h, w, ho,
       wo](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
          for (std::size_t k = 0; k < ho * wo; ++k) {
            gp[p * h * w + src_index[k]] += self.grad[p * ho * wo + k];
          }
        }
      });
}

/// Unpadded k x k mean filter over the last two axes, stride 1.
template <typename T>
Tensor<T> box_filter(const Tensor<T>& input, std::size_t k) {
  Shape out_shape = input.shape();
  std::size_t h = out_shape[out_shape.size() - 2];
  std::size_t w = out_shape.back();
  if (k == 0 || k > h || k > w) {
    throw ShapeError("box_filter: window " + std::to_string(k) +
                     " does not fit " + shape_str(input.shape()));
  }
  std::size_t ho = h - k + 1, wo = w - k + 1;
  out_shape[out_shape.size() - 2] = ho;
  out_shape.back() = wo;
  std::size_t planes = input.numel() / (h * w);
  T norm = T{1} / static_cast<T>(k * k);
  std::vector<T> out(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.values().data() + p * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        T s = 0;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) s += src[(y + dy) * w + x + dx];
        }
        out[(p * ho + y) * wo + x] = s * norm;
      }
    }
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {input.node()},
      [planes, h, w, ho, wo, k, norm](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
          T* dst = gp.data() + p * h * w;
          for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
              T g = self.grad[(p * ho + y) * wo + x] * norm;
              for (std::size_t dy = 0; dy < k; ++dy) {
                for (std::size_t dx = 0; dx < k; ++dx) {
                  dst[(y + dy) * w + x + dx] += g;
                }
              }
            }
          }
        }
      });
}

}  // namespace selfdepth
