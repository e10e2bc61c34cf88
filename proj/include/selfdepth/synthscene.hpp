#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdepth/geometry.hpp"
#include "selfdepth/image_io.hpp"
#include "selfdepth/random.hpp"

namespace selfdepth {

// World frame: the ground is the plane z = plane_z; "up" (towards the
// cameras) is -z.

struct TextureSpec {
  std::uint64_t seed = 1;
  double frequency = 0.35;   // cycles per scene unit of the coarsest octave
  int octaves = 4;
  double checker_period = 0;  // 0 disables the checker overlay
  double ramp = 0.02;         // linear brightness ramp per unit along world x
  double contrast = 0.8;
};

struct Box {
  Eigen::Vector3d lo, hi;
};

/// Ground relief h(x,y) >= 0 raised towards the camera, bilinear over a
/// regular grid and clamped beyond it.
struct HeightField {
  double x0 = 0, y0 = 0, spacing = 1;
  std::size_t nx = 0, ny = 0;
  std::vector<double> heights;  // row-major [ny][nx]

  bool empty() const { return heights.empty(); }

  double at(double x, double y) const {
    double gx = std::clamp((x - x0) / spacing, 0.0, static_cast<double>(nx - 1));
    double gy = std::clamp((y - y0) / spacing, 0.0, static_cast<double>(ny - 1));
    std::size_t ix = std::min(static_cast<std::size_t>(gx), nx > 1 ? nx - 2 : 0);
    std::size_t iy = std::min(static_cast<std::size_t>(gy), ny > 1 ? ny - 2 : 0);
    double fx = nx > 1 ? gx - ix : 0, fy = ny > 1 ? gy - iy : 0;
    auto h = [&](std::size_t i, std::size_t j) {
      return heights[std::min(j, ny - 1) * nx + std::min(i, nx - 1)];
    };
    return (h(ix, iy) * (1 - fx) + h(ix + 1, iy) * fx) * (1 - fy) +
           (h(ix, iy + 1) * (1 - fx) + h(ix + 1, iy + 1) * fx) * fy;
  }

  double max_height() const { return *std::max_element(heights.begin(), heights.end()); }
  double min_height() const { return *std::min_element(heights.begin(), heights.end()); }
};

struct SceneSpec {
  double plane_z = 8;
  std::vector<Box> boxes;
  HeightField relief;
  TextureSpec texture;
  Eigen::Vector3d sky_color{0.55, 0.7, 0.9};
};

struct Trajectory {
  CameraIntrinsics intrinsics;
  std::vector<PoseMatrix> world_to_camera;
  double min_baseline = 0;
  double max_baseline = std::numeric_limits<double>::infinity();

  static Eigen::Vector3d center(const PoseMatrix& p) {
    return -p.leftCols<3>().transpose() * p.col(3);
  }

  void validate() const {
    intrinsics.validate();
    if (world_to_camera.empty()) throw std::invalid_argument("trajectory: no frames");
    for (std::size_t i = 1; i < world_to_camera.size(); ++i) {
      double b = (center(world_to_camera[i]) - center(world_to_camera[i - 1])).norm();
      if (b < min_baseline || b > max_baseline) {
        throw std::invalid_argument("trajectory: baseline " + std::to_string(b) +
                                    " between frames " + std::to_string(i - 1) + " and " +
                                    std::to_string(i) + " outside [" +
                                    std::to_string(min_baseline) + ", " +
                                    std::to_string(max_baseline) + "]");
      }
    }
  }

  /// Camera centres start + i*step with a fixed world-to-camera rotation.
  static Trajectory linear(const CameraIntrinsics& k, const Eigen::Vector3d& start,
                           const Eigen::Vector3d& step, std::size_t frames,
                           const Eigen::Matrix3d& rotation) {
    Trajectory t;
    t.intrinsics = k;
    for (std::size_t i = 0; i < frames; ++i) {
      Eigen::Vector3d c = start + static_cast<double>(i) * step;
      PoseMatrix p;
      p.leftCols<3>() = rotation;
      p.col(3) = -rotation * c;
      t.world_to_camera.push_back(p);
    }
    return t;
  }
};

struct RenderedSequence {
  std::vector<Tensor<double>> frames;        // [3,H,W] in [0,1]
  std::vector<DepthMap<double>> depths;      // camera-frame Z, sky invalid
  std::vector<RigidPose<double>> relative;   // frame t -> frame t+1
  Trajectory trajectory;
};

namespace detail {

inline double lattice(std::uint64_t seed, long x, long y, long z) {
  std::uint64_t h = derive_seed(seed, static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL ^
                                          static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL,
                                static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smooth 3-D value noise in [0,1] (quintic fade).
inline double value_noise(std::uint64_t seed, const Eigen::Vector3d& p) {
  double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  long ix = static_cast<long>(fx), iy = static_cast<long>(fy), iz = static_cast<long>(fz);
  auto fade = [](double t) { return t * t * t * (t * (t * 6 - 15) + 10); };
  double u = fade(p.x() - fx), v = fade(p.y() - fy), w = fade(p.z() - fz);
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        double wt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
        acc += wt * lattice(seed, ix + dx, iy + dy, iz + dz);
      }
    }
  }
  return acc;
}

inline Eigen::Vector3d texture_color(const TextureSpec& t, const Eigen::Vector3d& p) {
  Eigen::Vector3d c;
  for (int ch = 0; ch < 3; ++ch) {
    double acc = 0, amp = 1, norm = 0, f = t.frequency;
    for (int o = 0; o < t.octaves; ++o) {
      acc += amp * value_noise(derive_seed(t.seed, ch, o), p * f);
      norm += amp;
      amp *= 0.5;
      f *= 2;
    }
    c[ch] = 0.5 + t.contrast * (acc / norm - 0.5);
  }
  if (t.checker_period > 0) {
    long s = static_cast<long>(std::floor(p.x() / t.checker_period)) +
             static_cast<long>(std::floor(p.y() / t.checker_period));
    c *= (s % 2 == 0) ? 1.0 : 0.75;
  }
  c.array() += t.ramp * p.x();
  return c.cwiseMax(0.02).cwiseMin(0.98);
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal{0, 0, -1};
};

inline void intersect_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                          Hit& best) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return;
      continue;
    }
    double ta = (b.lo[a] - o[a]) / d[a], tb = (b.hi[a] - o[a]) / d[a];
    double s = -1;
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1;
    }
    if (ta > t0) {
      t0 = ta;
      axis = a;
      sign = s;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 0 || axis < 0 || t0 >= best.t) return;
  best.t = t0;
  best.normal = Eigen::Vector3d::Zero();
  best.normal[axis] = sign;
}

inline void intersect_ground(const SceneSpec& s, const Eigen::Vector3d& o,
                             const Eigen::Vector3d& d, Hit& best) {
  if (s.relief.empty()) {
    if (std::abs(d.z()) < 1e-15) return;
    double t = (s.plane_z - o.z()) / d.z();
    if (t > 0 && t < best.t) {
      best.t = t;
      best.normal = {0, 0, d.z() > 0 ? -1.0 : 1.0};
    }
    return;
  }
  // Ray-march the bounding slab of the relief, then bisect.
  auto gap = [&](double t) {
    Eigen::Vector3d p = o + t * d;
    return (s.plane_z - s.relief.at(p.x(), p.y())) - p.z();
  };
  if (!(d.z() > 1e-12)) return;
  double z_top = s.plane_z - s.relief.max_height() - 1e-9;
  double z_bot = s.plane_z - s.relief.min_height() + 1e-9;
  double ta = std::max((z_top - o.z()) / d.z(), 0.0);
  double tb = (z_bot - o.z()) / d.z();
  if (tb <= 0 || ta >= best.t) return;
  const double step = 0.02 / d.norm();
  double prev_t = ta, prev_g = gap(ta);
  if (prev_g <= 0) return;
  for (double t = ta + step;; t += step) {
    t = std::min(t, tb);
    double g = gap(t);
    if (g <= 0) {
      double lo = prev_t, hi = t;
      for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        (gap(mid) > 0 ? lo : hi) = mid;
      }
      double th = 0.5 * (lo + hi);
      if (th < best.t) {
        Eigen::Vector3d p = o + th * d;
        const double e = 1e-4;
        double hx = (s.relief.at(p.x() + e, p.y()) - s.relief.at(p.x() - e, p.y())) / (2 * e);
        double hy = (s.relief.at(p.x(), p.y() + e) - s.relief.at(p.x(), p.y() - e)) / (2 * e);
        best.t = th;
        best.normal = Eigen::Vector3d(hx, hy, -1).normalized();
      }
      return;
    }
    if (t >= tb) return;
    prev_t = t;
    prev_g = g;
  }
}

}  // namespace detail

/// Ray-casts every frame of the trajectory. Shading depends only on the
/// surface normal, so a surface point has the same colour in every view.
inline RenderedSequence render_sequence(const SceneSpec& scene, const Trajectory& traj) {
  traj.validate();
  if (scene.texture.octaves < 1 || !(scene.texture.frequency > 0)) {
    throw std::invalid_argument("scene texture needs at least one octave and frequency > 0");
  }
  const CameraIntrinsics& k = traj.intrinsics;
  const std::size_t h = k.height, w = k.width;
  const Eigen::Vector3d light = Eigen::Vector3d(0.4, -0.5, -0.77).normalized();
  RenderedSequence out;
  out.trajectory = traj;
  for (std::size_t f = 0; f < traj.world_to_camera.size(); ++f) {
    const PoseMatrix& pose = traj.world_to_camera[f];
    Eigen::Matrix3d rcw = pose.leftCols<3>().transpose();
    Eigen::Vector3d origin = Trajectory::center(pose);
    std::vector<double> img(3 * h * w), depth(h * w);
    Mask valid(h, w, false);
    for (std::size_t v = 0; v < h; ++v) {
      for (std::size_t u = 0; u < w; ++u) {
        std::size_t p = v * w + u;
        // Camera-frame direction with unit z, so the hit parameter is depth.
        Eigen::Vector3d dc((static_cast<double>(u) - k.cx) / k.fx,
                           (static_cast<double>(v) - k.cy) / k.fy, 1.0);
        Eigen::Vector3d d = rcw * dc;
        detail::Hit hit;
        detail::intersect_ground(scene, origin, d, hit);
        for (const Box& b : scene.boxes) detail::intersect_box(b, origin, d, hit);
        Eigen::Vector3d color;
        if (std::isfinite(hit.t) && hit.t > kMinProjectionDepth) {
          Eigen::Vector3d x = origin + hit.t * d;
          double shade = 0.75 + 0.25 * std::abs(hit.normal.dot(light));
          color = (detail::texture_color(scene.texture, x) * shade).cwiseMin(1.0);
          depth[p] = hit.t;
          valid.values[p] = 1;
        } else {
          color = scene.sky_color;
          depth[p] = std::numeric_limits<double>::quiet_NaN();
        }
        for (int c = 0; c < 3; ++c) img[c * h * w + p] = color[c];
      }
    }
    if (valid.count() == 0) {
      throw std::runtime_error("render_sequence: frame " + std::to_string(f) +
                               " sees no geometry");
    }
    out.frames.emplace_back(Shape{3, h, w}, std::move(img));
    out.depths.push_back({Tensor<double>({h, w}, std::move(depth)), std::move(valid)});
  }
  for (std::size_t f = 0; f + 1 < traj.world_to_camera.size(); ++f) {
    Eigen::Matrix4d rel = to_homogeneous(traj.world_to_camera[f + 1]) *
                          to_homogeneous(traj.world_to_camera[f]).inverse();
    out.relative.push_back(RigidPose<double>::from_matrix(rel));
  }
  return out;
}

/// Mean absolute-gradient energy of a [3,H,W] image (texture floor checks).
inline double gradient_energy(const Tensor<double>& img) {
  std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x + 1 < w; ++x) {
        acc += std::abs(img[(ch * h + y) * w + x + 1] - img[(ch * h + y) * w + x]);
        ++n;
      }
    }
  }
  return n ? acc / n : 0.0;
}

// ---------------------------------------------------------------------------
// Presets

struct SyntheticSetup {
  SceneSpec scene;
  Trajectory trajectory;
};

/// Default camera for a width x height render: square pixels, hfov ~74 deg.
inline CameraIntrinsics default_intrinsics(std::size_t width, std::size_t height) {
  double f = 2.0 * static_cast<double>(width) / 3.0;
  return {f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
}

/// Rotation of a camera pitched `tilt` radians from nadir towards -y.
inline Eigen::Matrix3d oblique_rotation(double tilt) {
  return Eigen::AngleAxisd(tilt, Eigen::Vector3d::UnitX()).toRotationMatrix().transpose();
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"plane", "boxes", "heightfield", "fronto"};
  return names;
}

/// Named scene + trajectory presets:
///   fronto      nadir camera over a flat plane, pure x translation
///   plane       45-degree oblique camera over a flat textured plane
///   boxes       the oblique plane with seeded boxes standing on it
///   heightfield oblique camera over smooth seeded relief
inline SyntheticSetup make_preset(const std::string& name, std::size_t frames,
                                  std::size_t width, std::size_t height,
                                  std::uint64_t seed) {
  if (frames == 0) throw std::invalid_argument("preset: frame count must be positive");
  SyntheticSetup s;
  s.scene.texture.seed = derive_seed(seed, 100);
  CameraIntrinsics k = default_intrinsics(width, height);
  // Baselines scale so frame-to-frame flow stays near 2 px at any width.
  const double flow_scale = 96.0 / static_cast<double>(width);
  Rng rng(derive_seed(seed, 200));
  if (name == "fronto") {
    s.scene.plane_z = 10;
    s.trajectory = Trajectory::linear(k, {0, 0, 0}, {0.3 * flow_scale, 0, 0}, frames,
                                      Eigen::Matrix3d::Identity());
  } else if (name == "plane" || name == "boxes" || name == "heightfield") {
    s.scene.plane_z = 8;
    Eigen::Vector3d step(0.3 * flow_scale, -0.05 * flow_scale, 0);
    s.trajectory = Trajectory::linear(k, {0, 0, 0}, step, frames,
                                      oblique_rotation(std::numbers::pi / 4));
    double x_end = step.x() * static_cast<double>(frames);
    if (name == "boxes") {
      for (int i = 0; i < 7; ++i) {
        double cx = rng.uniform(-5.0, 5.0 + x_end), cy = rng.uniform(-13.0, -5.0);
        double sx = rng.uniform(0.8, 2.2), sy = rng.uniform(0.8, 2.2);
        double hz = rng.uniform(1.0, 3.5);
        s.scene.boxes.push_back({{cx - sx / 2, cy - sy / 2, s.scene.plane_z - hz},
                                 {cx + sx / 2, cy + sy / 2, s.scene.plane_z}});
      }
    } else if (name == "heightfield") {
      HeightField& hf = s.scene.relief;
      hf.x0 = -20;
      hf.y0 = -40;
      hf.spacing = 2;
      hf.nx = 31 + static_cast<std::size_t>(x_end / 2);
      hf.ny = 25;
      for (std::size_t j = 0; j < hf.ny; ++j) {
        for (std::size_t i = 0; i < hf.nx; ++i) hf.heights.push_back(rng.uniform(0.0, 2.5));
      }
    }
  } else {
    throw std::invalid_argument("unknown scene '" + name +
                                "' (expected plane, boxes, heightfield or fronto)");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace detail {
inline std::string numbered(const std::string& stem, std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%06zu", i);
  return stem + buf + ext;
}
}  // namespace detail

inline std::string frame_filename(std::size_t i) { return detail::numbered("frame", i, ".png"); }
inline std::string depth_filename(std::size_t i) { return detail::numbered("depth", i, ".bin"); }

inline void export_dataset(const RenderedSequence& seq, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + dir + ": " + ec.message());
  fs::path root(dir);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    write_png((root / frame_filename(i)).string(), seq.frames[i]);
    write_depth_bin((root / depth_filename(i)).string(), seq.depths[i]);
  }
  write_poses((root / "poses.txt").string(), seq.trajectory.world_to_camera);
  write_intrinsics((root / "intrinsics.txt").string(), seq.trajectory.intrinsics);
}

/// Frames on disk plus whatever reference data accompanies them.
template <typename T>
struct Dataset {
  std::vector<Tensor<T>> frames;
  std::vector<DepthMap<T>> depths;       // empty if no depth files
  std::vector<PoseMatrix> world_to_camera;  // empty if no poses.txt
  CameraIntrinsics intrinsics;
};

template <typename T>
Dataset<T> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + dir);
  Dataset<T> ds;
  ds.intrinsics = read_intrinsics((root / "intrinsics.txt").string());
  for (std::size_t i = 0;; ++i) {
    fs::path f = root / frame_filename(i);
    if (!fs::exists(f)) break;
    ds.frames.push_back(read_png<T>(f.string()));
    const Tensor<T>& img = ds.frames.back();
    if (img.dim(1) != ds.intrinsics.height || img.dim(2) != ds.intrinsics.width) {
      throw std::runtime_error("frame " + f.string() + " is " + std::to_string(img.dim(2)) +
                               "x" + std::to_string(img.dim(1)) +
                               " but intrinsics.txt says " +
                               std::to_string(ds.intrinsics.width) + "x" +
                               std::to_string(ds.intrinsics.height));
    }
  }
  if (ds.frames.empty()) throw std::runtime_error("no frame_000000.png in " + dir);
  bool have_depth = fs::exists(root / depth_filename(0));
  for (std::size_t i = 0; have_depth && i < ds.frames.size(); ++i) {
    ds.depths.push_back(read_depth_bin<T>((root / depth_filename(i)).string()));
  }
  if (fs::exists(root / "poses.txt")) ds.world_to_camera = read_poses((root / "poses.txt").string());
  return ds;
}

}  // namespace selfdepth
