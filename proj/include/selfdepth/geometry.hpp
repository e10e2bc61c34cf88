#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdepth/ops.hpp"

namespace selfdepth {

/// Minimum camera-frame Z accepted as a valid projection.
inline constexpr double kMinProjectionDepth = 1e-3;

struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  std::size_t width = 1, height = 1;

  void validate() const {
    if (!(fx > 0 && fy > 0)) {
      throw std::invalid_argument("intrinsics: focal lengths must be positive");
    }
    if (!(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 &&
          cy < static_cast<double>(height))) {
      throw std::invalid_argument("intrinsics: principal point outside image");
    }
  }

  /// Intrinsics of the same camera resampled to a new image size, keeping
  /// half-pixel centre alignment.
  CameraIntrinsics resized(std::size_t new_width, std::size_t new_height) const {
    double sx = static_cast<double>(new_width) / static_cast<double>(width);
    double sy = static_cast<double>(new_height) / static_cast<double>(height);
    return {fx * sx, fy * sy, (cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5,
            new_width, new_height};
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Per-pixel validity, row-major [H,W].
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool fill = true)
      : height(h), width(w), values(h * w, fill ? 1 : 0) {}

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
  }
  bool operator[](std::size_t i) const { return values[i] != 0; }

  Mask operator&(const Mask& o) const {
    if (o.height != height || o.width != width) {
      throw ShapeError("mask: size mismatch");
    }
    Mask m(height, width, false);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m.values[i] = values[i] && o.values[i];
    }
    return m;
  }

  template <typename T>
  std::vector<T> as_factors() const {
    std::vector<T> f(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) f[i] = values[i] ? 1 : 0;
    return f;
  }
};

/// Camera-frame Z per pixel plus validity. Disparity maps share the layout.
template <typename T>
struct DepthMap {
  Tensor<T> values;  // [H,W]
  Mask valid;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }

  static DepthMap all_valid(Tensor<T> v) {
    DepthMap d{std::move(v), {}};
    d.valid = Mask(d.values.dim(0), d.values.dim(1), true);
    return d;
  }
};

// ---------------------------------------------------------------------------
// Rotations

/// Rodrigues rotation for plain values.
inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& w) {
  double theta = w.norm();
  if (theta < 1e-12) {
    Eigen::Matrix3d k;
    k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return Eigen::Matrix3d::Identity() + k;
  }
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

inline Eigen::Vector3d axis_angle_from_rotation(const Eigen::Matrix3d& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

namespace detail {

// Coefficients of R = I + A K + B K^2 and their derivatives w.r.t. s = θ².
struct RodriguesCoeffs {
  double a, b, da, db;
};

inline RodriguesCoeffs rodrigues_coeffs(double s) {
  if (s < 1e-6) {
    return {1 - s / 6 + s * s / 120, 0.5 - s / 24 + s * s / 720,
            -1.0 / 6 + s / 60, -1.0 / 24 + s / 360};
  }
  double t = std::sqrt(s), st = std::sin(t), ct = std::cos(t);
  return {st / t, (1 - ct) / s, (t * ct - st) / (2 * s * t),
          (t * st - 2 * (1 - ct)) / (2 * s * s)};
}

}  // namespace detail

/// Differentiable Rodrigues map: axis-angle [3] -> rotation [3,3].
template <typename T>
Tensor<T> axis_angle_to_matrix(const Tensor<T>& axis_angle) {
  if (axis_angle.numel() != 3) {
    throw ShapeError("axis_angle_to_matrix: expected 3 values, got " +
                     shape_str(axis_angle.shape()));
  }
  double w[3] = {static_cast<double>(axis_angle[0]),
                 static_cast<double>(axis_angle[1]),
                 static_cast<double>(axis_angle[2])};
  double s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  auto c = detail::rodrigues_coeffs(s);
  Eigen::Matrix3d k;
  k << 0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0;
  Eigen::Matrix3d k2 = k * k;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity() + c.a * k + c.b * k2;
  std::vector<T> out(9);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out[i * 3 + j] = static_cast<T>(r(i, j));
  }
  return Tensor<T>::make_result(
      Shape{3, 3}, std::move(out), {axis_angle.node()},
      [k, k2, c, w0 = w[0], w1 = w[1], w2 = w[2]](detail::Node<T>& self) {
        const double wv[3] = {w0, w1, w2};
        Eigen::Matrix3d g;
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) g(i, j) = self.grad[i * 3 + j];
        }
        auto& gp = self.parents[0]->grad_buffer();
        for (int i = 0; i < 3; ++i) {
          Eigen::Matrix3d dk = Eigen::Matrix3d::Zero();
          // d[w]x / dw_i
          if (i == 0) { dk(1, 2) = -1; dk(2, 1) = 1; }
          if (i == 1) { dk(0, 2) = 1; dk(2, 0) = -1; }
          if (i == 2) { dk(0, 1) = -1; dk(1, 0) = 1; }
          Eigen::Matrix3d dr = c.a * dk + c.b * (dk * k + k * dk) +
                               (2 * wv[i] * c.da) * k + (2 * wv[i] * c.db) * k2;
          gp[i] += static_cast<T>((g.array() * dr.array()).sum());
        }
      });
}

/// Rigid transform P = [R(axis_angle) | translation]; maps reference-camera
/// points into the target camera.
template <typename T>
struct RigidPose {
  Tensor<T> axis_angle;   // [3]
  Tensor<T> translation;  // [3]

  static RigidPose identity() {
    return {Tensor<T>::zeros({3}), Tensor<T>::zeros({3})};
  }

  static RigidPose from_values(const Eigen::Vector3d& w,
                               const Eigen::Vector3d& t) {
    return {Tensor<T>({3}, {static_cast<T>(w.x()), static_cast<T>(w.y()),
                            static_cast<T>(w.z())}),
            Tensor<T>({3}, {static_cast<T>(t.x()), static_cast<T>(t.y()),
                            static_cast<T>(t.z())})};
  }

  static RigidPose from_matrix(const Eigen::Matrix4d& m) {
    return from_values(axis_angle_from_rotation(m.topLeftCorner<3, 3>()),
                       m.topRightCorner<3, 1>());
  }

  Eigen::Vector3d axis_angle_values() const {
    return {static_cast<double>(axis_angle[0]),
            static_cast<double>(axis_angle[1]),
            static_cast<double>(axis_angle[2])};
  }
  Eigen::Vector3d translation_values() const {
    return {static_cast<double>(translation[0]),
            static_cast<double>(translation[1]),
            static_cast<double>(translation[2])};
  }

  Eigen::Matrix4d to_matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_from_axis_angle(axis_angle_values());
    m.topRightCorner<3, 1>() = translation_values();
    return m;
  }

  RigidPose inverse() const {
    Eigen::Matrix4d m = to_matrix();
    Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
    inv.topLeftCorner<3, 3>() = m.topLeftCorner<3, 3>().transpose();
    inv.topRightCorner<3, 1>() =
        -m.topLeftCorner<3, 3>().transpose() * m.topRightCorner<3, 1>();
    return from_matrix(inv);
  }
};

// ---------------------------------------------------------------------------
// Projection pipeline

/// Camera-frame points [3,H,W] from a depth map: X=(u-cx)/fx*Z, Y=(v-cy)/fy*Z.
template <typename T>
Tensor<T> backproject(const DepthMap<T>& depth, const CameraIntrinsics& k) {
  std::size_t h = depth.height(), w = depth.width();
  std::vector<T> rays(3 * h * w);
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      std::size_t p = v * w + u;
      rays[p] = static_cast<T>((static_cast<double>(u) - k.cx) / k.fx);
      rays[h * w + p] = static_cast<T>((static_cast<double>(v) - k.cy) / k.fy);
      rays[2 * h * w + p] = T{1};
    }
  }
  Tensor<T> ray_grid({3, h, w}, std::move(rays));
  return mul(ray_grid, reshape(depth.values, {1, h, w}));
}

/// out = R * points + t for points laid out as [3, ...].
template <typename T>
Tensor<T> transform_points(const Tensor<T>& points, const Tensor<T>& rotation,
                           const Tensor<T>& translation) {
  if (points.dim(0) != 3 || rotation.numel() != 9 || translation.numel() != 3) {
    throw ShapeError("transform_points: expected points [3,...], R [3,3], t [3]");
  }
  std::size_t n = points.numel() / 3;
  std::vector<T> out(3 * n);
  const auto& x = points.values();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t p = 0; p < n; ++p) {
      out[i * n + p] = rotation[i * 3] * x[p] + rotation[i * 3 + 1] * x[n + p] +
                       rotation[i * 3 + 2] * x[2 * n + p] + translation[i];
    }
  }
  return Tensor<T>::make_result(
      points.shape(), std::move(out),
      {points.node(), rotation.node(), translation.node()},
      [n](detail::Node<T>& self) {
        auto& pts = *self.parents[0];
        auto& rot = *self.parents[1];
        auto& tr = *self.parents[2];
        const auto& g = self.grad;
        if (pts.requires_grad) {
          auto& gx = pts.grad_buffer();
          for (std::size_t j = 0; j < 3; ++j) {
            for (std::size_t p = 0; p < n; ++p) {
              gx[j * n + p] += rot.value[j] * g[p] +
                               rot.value[3 + j] * g[n + p] +
                               rot.value[6 + j] * g[2 * n + p];
            }
          }
        }
        if (rot.requires_grad) {
          auto& gr = rot.grad_buffer();
          for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
              T acc = 0;
              for (std::size_t p = 0; p < n; ++p) {
                acc += g[i * n + p] * pts.value[j * n + p];
              }
              gr[i * 3 + j] += acc;
            }
          }
        }
        if (tr.requires_grad) {
          auto& gt = tr.grad_buffer();
          for (std::size_t i = 0; i < 3; ++i) {
            T acc = 0;
            for (std::size_t p = 0; p < n; ++p) acc += g[i * n + p];
            gt[i] += acc;
          }
        }
      });
}

/// Pinhole division of camera-frame points [3,H,W] -> pixel coords [2,H,W].
/// Z below kMinProjectionDepth is clamped (and gets no gradient).
template <typename T>
Tensor<T> pinhole_project(const Tensor<T>& points, const CameraIntrinsics& k) {
  std::size_t n = points.numel() / 3;
  std::vector<T> out(2 * n);
  const auto& x = points.values();
  const T zmin = static_cast<T>(kMinProjectionDepth);
  const T fx = static_cast<T>(k.fx), fy = static_cast<T>(k.fy);
  for (std::size_t p = 0; p < n; ++p) {
    T z = std::max(x[2 * n + p], zmin);
    out[p] = fx * x[p] / z + static_cast<T>(k.cx);
    out[n + p] = fy * x[n + p] / z + static_cast<T>(k.cy);
  }
  Shape s = points.shape();
  s[0] = 2;
  return Tensor<T>::make_result(
      std::move(s), std::move(out), {points.node()},
      [n, fx, fy, zmin](detail::Node<T>& self) {
        auto& pts = *self.parents[0];
        auto& gx = pts.grad_buffer();
        const auto& x = pts.value;
        for (std::size_t p = 0; p < n; ++p) {
          T zr = x[2 * n + p];
          bool clamped = zr < zmin;
          T z = clamped ? zmin : zr;
          T gu = self.grad[p], gv = self.grad[n + p];
          gx[p] += gu * fx / z;
          gx[n + p] += gv * fy / z;
          if (!clamped) {
            gx[2 * n + p] -= (gu * fx * x[p] + gv * fy * x[n + p]) / (z * z);
          }
        }
      });
}

template <typename T>
struct Projection {
  Tensor<T> coords;  // [2,H,W]
  Tensor<T> depth;   // [H,W] camera-frame Z in the target
  Mask valid;        // Z > kMinProjectionDepth
};

template <typename T>
Projection<T> project(const Tensor<T>& points, const RigidPose<T>& pose,
                      const CameraIntrinsics& k) {
  if (points.ndim() != 3 || points.dim(0) != 3) {
    throw ShapeError("project: expected points [3,H,W], got " +
                     shape_str(points.shape()));
  }
  std::size_t h = points.dim(1), w = points.dim(2);
  Tensor<T> cam = transform_points(points, axis_angle_to_matrix(pose.axis_angle),
                                   pose.translation);
  Projection<T> out;
  out.coords = pinhole_project(cam, k);
  out.depth = reshape(slice(cam, 0, 2, 3), {h, w});
  out.valid = Mask(h, w, false);
  for (std::size_t p = 0; p < h * w; ++p) {
    out.valid.values[p] = out.depth[p] > static_cast<T>(kMinProjectionDepth);
  }
  return out;
}

template <typename T>
struct Sampled {
  Tensor<T> image;  // [C,H,W]
  Mask valid;
};

/// Bilinear sampling of image [C,H,W] at pixel coords [2,Ho,Wo] (x then y,
/// pixel centres at integers). Out-of-range coords are clamped to the edge and
/// flagged invalid; a clamped axis carries no coordinate gradient.
template <typename T>
Sampled<T> grid_sample_bilinear(const Tensor<T>& image, const Tensor<T>& coords) {
  if (image.ndim() != 3 || coords.ndim() != 3 || coords.dim(0) != 2) {
    throw ShapeError("grid_sample_bilinear: expected image [C,H,W] and coords "
                     "[2,H,W]; got " + shape_str(image.shape()) + ", " +
                     shape_str(coords.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t ho = coords.dim(1), wo = coords.dim(2), n = ho * wo;

  struct Tap {
    std::size_t x0, x1, y0, y1;
    T wx, wy;
    bool clamp_x, clamp_y;
  };
  std::vector<Tap> taps(n);
  Sampled<T> out;
  out.valid = Mask(ho, wo, false);
  const T wmax = static_cast<T>(w - 1), hmax = static_cast<T>(h - 1);
  for (std::size_t p = 0; p < n; ++p) {
    T u = coords[p], v = coords[n + p];
    bool finite = std::isfinite(u) && std::isfinite(v);
    if (!finite) {
      u = 0;
      v = 0;
    }
    Tap tp{};
    tp.clamp_x = !(u >= 0 && u <= wmax);
    tp.clamp_y = !(v >= 0 && v <= hmax);
    out.valid.values[p] = finite && !tp.clamp_x && !tp.clamp_y;
    u = std::clamp(u, T{0}, wmax);
    v = std::clamp(v, T{0}, hmax);
    auto split = [](T coord, std::size_t extent, std::size_t& i0,
                    std::size_t& i1, T& frac) {
      if (extent == 1) {
        i0 = i1 = 0;
        frac = 0;
        return;
      }
      auto f = static_cast<std::size_t>(std::floor(coord));
      f = std::min(f, extent - 2);
      i0 = f;
      i1 = f + 1;
      frac = coord - static_cast<T>(f);
    };
    split(u, w, tp.x0, tp.x1, tp.wx);
    split(v, h, tp.y0, tp.y1, tp.wy);
    taps[p] = tp;
  }
  std::vector<T> res(c * n);
  const auto& im = image.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = im.data() + ch * h * w;
    for (std::size_t p = 0; p < n; ++p) {
      const Tap& t = taps[p];
      T top = src[t.y0 * w + t.x0] * (1 - t.wx) + src[t.y0 * w + t.x1] * t.wx;
      T bot = src[t.y1 * w + t.x0] * (1 - t.wx) + src[t.y1 * w + t.x1] * t.wx;
      res[ch * n + p] = top * (1 - t.wy) + bot * t.wy;
    }
  }
  out.image = Tensor<T>::make_result(
      Shape{c, ho, wo}, std::move(res), {image.node(), coords.node()},
      [taps = std::move(taps), c, h, w, n](detail::Node<T>& self) {
        auto& img = *self.parents[0];
        auto& crd = *self.parents[1];
        const auto& g = self.grad;
        if (img.requires_grad) {
          auto& gi = img.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) {
            T* dst = gi.data() + ch * h * w;
            for (std::size_t p = 0; p < n; ++p) {
              const Tap& t = taps[p];
              T gv = g[ch * n + p];
              dst[t.y0 * w + t.x0] += gv * (1 - t.wx) * (1 - t.wy);
              dst[t.y0 * w + t.x1] += gv * t.wx * (1 - t.wy);
              dst[t.y1 * w + t.x0] += gv * (1 - t.wx) * t.wy;
              dst[t.y1 * w + t.x1] += gv * t.wx * t.wy;
            }
          }
        }
        if (crd.requires_grad) {
          auto& gc = crd.grad_buffer();
          const auto& im = img.value;
          for (std::size_t p = 0; p < n; ++p) {
            const Tap& t = taps[p];
            T du = 0, dv = 0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T* src = im.data() + ch * h * w;
              T i00 = src[t.y0 * w + t.x0], i01 = src[t.y0 * w + t.x1];
              T i10 = src[t.y1 * w + t.x0], i11 = src[t.y1 * w + t.x1];
              T gv = g[ch * n + p];
              du += gv * ((i01 - i00) * (1 - t.wy) + (i11 - i10) * t.wy);
              dv += gv * ((i10 - i00) * (1 - t.wx) + (i11 - i01) * t.wx);
            }
            if (!t.clamp_x && w > 1) gc[p] += du;
            if (!t.clamp_y && h > 1) gc[n + p] += dv;
          }
        }
      });
  return out;
}

template <typename T>
struct Reconstruction {
  Tensor<T> image;  // [C,H,W]
  Mask valid;
};

/// Reconstructs the reference view by sampling `source` where reference
/// pixels land after backprojection with `depth_ref` and rigid motion
/// `pose_ref_to_src`.
template <typename T>
Reconstruction<T> synthesize_view(const Tensor<T>& source,
                                  const DepthMap<T>& depth_ref,
                                  const RigidPose<T>& pose_ref_to_src,
                                  const CameraIntrinsics& k) {
  Tensor<T> points = backproject(depth_ref, k);
  Projection<T> proj = project(points, pose_ref_to_src, k);
  Sampled<T> s = grid_sample_bilinear(source, proj.coords);
  Mask valid = s.valid & proj.valid;
  if (!depth_ref.valid.values.empty()) valid = valid & depth_ref.valid;
  return {s.image, valid};
}

// ---------------------------------------------------------------------------
// Disparity / depth conversions

/// Maps sigmoid outputs s in (0,1) to the inverse-depth range
/// [1/d_max, 1/d_min]: disp = 1/d_max + s (1/d_min - 1/d_max).
template <typename T>
Tensor<T> sigmoid_to_disparity(const Tensor<T>& s, double d_min, double d_max) {
  if (!(d_min > 0 && d_min < d_max)) {
    throw std::invalid_argument("disparity range requires 0 < d_min < d_max");
  }
  double lo = 1.0 / d_max, hi = 1.0 / d_min;
  return add_scalar(scale(s, static_cast<T>(hi - lo)), static_cast<T>(lo));
}

template <typename T>
DepthMap<T> disparity_to_depth(const Tensor<T>& sigmoid_output, double d_min,
                               double d_max) {
  Tensor<T> disp = sigmoid_to_disparity(sigmoid_output, d_min, d_max);
  Tensor<T> depth = div(Tensor<T>::scalar(T{1}), disp);
  const Shape& s = depth.shape();
  DepthMap<T> out{depth, Mask(s[s.size() - 2], s.back(), true)};
  return out;
}

enum class AlignMode { kMedian, kMinMax };

inline AlignMode parse_align_mode(const std::string& s) {
  if (s == "median") return AlignMode::kMedian;
  if (s == "minmax") return AlignMode::kMinMax;
  throw std::invalid_argument("unknown alignment mode '" + s +
                              "' (expected median or minmax)");
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

/// Rescales a predicted depth map onto a reference. Median mode multiplies
/// by median(ref)/median(pred); minmax maps pred's [min,max] affinely onto
/// ref's. Statistics use pixels valid in both maps.
template <typename T>
DepthMap<T> scale_to_reference(const DepthMap<T>& pred, const DepthMap<T>& ref,
                               AlignMode mode) {
  if (pred.values.shape() != ref.values.shape()) {
    throw ShapeError("scale_to_reference: shape mismatch " +
                     shape_str(pred.values.shape()) + " vs " +
                     shape_str(ref.values.shape()));
  }
  Mask both = pred.valid & ref.valid;
  std::vector<double> p, r;
  for (std::size_t i = 0; i < both.values.size(); ++i) {
    if (both[i]) {
      p.push_back(static_cast<double>(pred.values[i]));
      r.push_back(static_cast<double>(ref.values[i]));
    }
  }
  if (p.empty()) {
    throw std::invalid_argument("scale_to_reference: no overlapping valid pixels");
  }
  std::vector<T> out(pred.values.numel());
  if (mode == AlignMode::kMedian) {
    double factor = median_of(r) / median_of(p);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(static_cast<double>(pred.values[i]) * factor);
    }
  } else {
    auto [pmin, pmax] = std::minmax_element(p.begin(), p.end());
    auto [rmin, rmax] = std::minmax_element(r.begin(), r.end());
    double prange = *pmax - *pmin;
    if (!(prange > 0)) {
      throw std::invalid_argument(
          "scale_to_reference: prediction has zero range in minmax mode");
    }
    double gain = (*rmax - *rmin) / prange;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(
          *rmin + (static_cast<double>(pred.values[i]) - *pmin) * gain);
    }
  }
  return {Tensor<T>(pred.values.shape(), std::move(out)), pred.valid};
}

// ---------------------------------------------------------------------------
// Reference depth from point clouds

struct SplatOptions {
  // 0 disables hole filling; otherwise nearest valid pixel within radius.
  int hole_fill_radius = 0;
};

/// Z-buffered splat of world points through a 3x4 projection P = K [R|t].
/// Pixel (u,v) receives the nearest point whose projection rounds to it.
inline DepthMap<double> pointcloud_to_depth(
    const std::vector<Eigen::Vector3d>& points,
    const Eigen::Matrix<double, 3, 4>& projection, std::size_t height,
    std::size_t width, SplatOptions options = {}) {
  Eigen::Matrix3d left = projection.leftCols<3>();
  if (std::abs(left.determinant()) < 1e-12) {
    throw std::invalid_argument("pointcloud_to_depth: singular projection");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> z(height * width, inf);
  for (const auto& x : points) {
    Eigen::Vector3d p = projection * x.homogeneous();
    if (!(p.z() > kMinProjectionDepth)) continue;
    double u = std::round(p.x() / p.z()), v = std::round(p.y() / p.z());
    if (u < 0 || v < 0 || u >= static_cast<double>(width) ||
        v >= static_cast<double>(height)) {
      continue;
    }
    std::size_t idx = static_cast<std::size_t>(v) * width +
                      static_cast<std::size_t>(u);
    z[idx] = std::min(z[idx], p.z());
  }
  Mask valid(height, width, false);
  for (std::size_t i = 0; i < z.size(); ++i) valid.values[i] = z[i] < inf;
  if (options.hole_fill_radius > 0) {
    std::vector<double> filled = z;
    Mask filled_valid = valid;
    const int r = options.hole_fill_radius;
    for (std::size_t v = 0; v < height; ++v) {
      for (std::size_t u = 0; u < width; ++u) {
        std::size_t idx = v * width + u;
        if (valid[idx]) continue;
        double best_d2 = inf, best = inf;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            long yy = static_cast<long>(v) + dy, xx = static_cast<long>(u) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(height) ||
                xx >= static_cast<long>(width)) {
              continue;
            }
            std::size_t j = static_cast<std::size_t>(yy) * width +
                            static_cast<std::size_t>(xx);
            double d2 = dx * dx + dy * dy;
            if (valid[j] && d2 <= r * r && d2 < best_d2) {
              best_d2 = d2;
              best = z[j];
            }
          }
        }
        if (best < inf) {
          filled[idx] = best;
          filled_valid.values[idx] = 1;
        }
      }
    }
    z = std::move(filled);
    valid = std::move(filled_valid);
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!valid[i]) z[i] = std::numeric_limits<double>::quiet_NaN();
  }
  return {Tensor<double>({height, width}, std::move(z)), std::move(valid)};
}

// ---------------------------------------------------------------------------
// Text formats: "fx fy cx cy width height" and one 3x4 [R|t] per line.

inline void write_intrinsics(const std::string& path, const CameraIntrinsics& k) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write intrinsics file " + path);
  os << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' '
     << k.cy << ' ' << k.width << ' ' << k.height << '\n';
  if (!os) throw std::runtime_error("failed writing intrinsics file " + path);
}

inline CameraIntrinsics read_intrinsics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open intrinsics file " + path);
  CameraIntrinsics k;
  if (!(is >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw std::runtime_error("malformed intrinsics file " + path +
                             " (expected: fx fy cx cy width height)");
  }
  k.validate();
  return k;
}

using PoseMatrix = Eigen::Matrix<double, 3, 4>;

inline void write_poses(const std::string& path,
                        const std::vector<PoseMatrix>& poses) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write pose file " + path);
  os << std::setprecision(12);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        os << p(r, c) << ((r == 2 && c == 3) ? '\n' : ' ');
      }
    }
  }
  if (!os) throw std::runtime_error("failed writing pose file " + path);
}

inline std::vector<PoseMatrix> read_poses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pose file " + path);
  std::vector<PoseMatrix> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    PoseMatrix p;
    for (int i = 0; i < 12; ++i) {
      if (!(ls >> p(i / 4, i % 4))) {
        throw std::runtime_error("pose file " + path + " line " +
                                 std::to_string(lineno) +
                                 ": expected 12 numbers");
      }
    }
    poses.push_back(p);
  }
  return poses;
}

inline Eigen::Matrix4d to_homogeneous(const PoseMatrix& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topRows<3>() = p;
  return m;
}

}  // namespace selfdepth
