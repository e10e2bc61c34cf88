#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "selfdepth/geometry.hpp"
#include "selfdepth/gradcheck.hpp"

namespace sd = selfdepth;
using TD = sd::Tensor<double>;

namespace {

sd::CameraIntrinsics test_camera(std::size_t w = 8, std::size_t h = 8) {
  return {10.0, 10.0, (w - 1) / 2.0, (h - 1) / 2.0, w, h};
}

TD random_tensor(const sd::Shape& shape, std::mt19937_64& rng, double lo,
                 double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(sd::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return TD(shape, v);
}

// Smooth test image [C,H,W].
TD smooth_image(std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> v(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        v[(ch * h + y) * w + x] =
            0.5 + 0.3 * std::sin(0.7 * x + 0.3 * ch) * std::cos(0.5 * y + 0.1);
  return TD({c, h, w}, v);
}

}  // namespace

TEST(Rotation, Fixtures) {
  auto r0 = sd::axis_angle_to_matrix(TD({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(r0[i * 3 + j], i == j ? 1 : 0);

  auto r = sd::axis_angle_to_matrix(TD({3}, {0, 0, std::numbers::pi / 2}));
  // R * (1,0,0) = first column.
  EXPECT_NEAR(r[0], 0, 1e-12);
  EXPECT_NEAR(r[3], 1, 1e-12);
  EXPECT_NEAR(r[6], 0, 1e-12);
}

TEST(Rotation, OrthonormalOnRandomInputs) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> d(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    double scale = trial % 3 == 0 ? 1e-5 : 1.0;
    TD w({3}, {scale * d(rng), scale * d(rng), scale * d(rng)});
    auto r = sd::axis_angle_to_matrix(w);
    Eigen::Matrix3d m;
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = r[i];
    EXPECT_LT((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(),
              1e-9);
    EXPECT_NEAR(m.determinant(), 1.0, 1e-9);
    Eigen::Matrix3d ref = sd::rotation_from_axis_angle({w[0], w[1], w[2]});
    EXPECT_LT((m - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rotation, GradientIncludingSmallAngles) {
  std::mt19937_64 rng(22);
  for (double mag : {1e-4, 0.3, 2.0}) {
    TD w = random_tensor({3}, rng, -mag, mag);
    TD g = random_tensor({3, 3}, rng, -1, 1);
    auto rep = sd::grad_check<double>(
        [&] { return sd::sum(sd::mul(sd::axis_angle_to_matrix(w), g)); }, {w});
    EXPECT_TRUE(rep.passed) << "mag " << mag << ": " << rep.worst;
  }
}

TEST(Backproject, Fixtures) {
  sd::CameraIntrinsics k{100, 100, 2, 1, 4, 3};
  TD depth = TD::full({3, 4}, 1.0);
  depth.mutable_data()[1 * 4 + 2] = 5.0;  // pixel (cx, cy)
  auto pts = sd::backproject(sd::DepthMap<double>::all_valid(depth), k);
  std::size_t p = 1 * 4 + 2, n = 12;
  EXPECT_DOUBLE_EQ(pts[p], 0);
  EXPECT_DOUBLE_EQ(pts[n + p], 0);
  EXPECT_DOUBLE_EQ(pts[2 * n + p], 5);

  sd::CameraIntrinsics k1{1, 1, 0, 0, 2, 1};
  auto pts1 = sd::backproject(sd::DepthMap<double>::all_valid(TD::full({1, 2}, 1.0)), k1);
  // Pixel (cx+fx, cy) at depth 1 -> (1,0,1).
  EXPECT_DOUBLE_EQ(pts1[1], 1);
  EXPECT_DOUBLE_EQ(pts1[2 + 1], 0);
  EXPECT_DOUBLE_EQ(pts1[4 + 1], 1);
}

TEST(Project, Fixtures) {
  sd::CameraIntrinsics k{100, 100, 32, 32, 64, 64};
  TD pts({3, 1, 2}, {0, 1, 0, 0, 5, 5});
  auto id = sd::RigidPose<double>::identity();
  auto pr = sd::project(pts, id, k);
  EXPECT_DOUBLE_EQ(pr.coords[0], 32);
  EXPECT_DOUBLE_EQ(pr.coords[2], 32);
  EXPECT_DOUBLE_EQ(pr.depth[0], 5);
  EXPECT_DOUBLE_EQ(pr.coords[1], 52);  // 100 * 1/5 + 32

  auto shift = sd::RigidPose<double>::from_values({0, 0, 0}, {0, 0, -1});
  auto ps = sd::project(pts, shift, k);
  EXPECT_DOUBLE_EQ(ps.depth[0], 4);

  TD behind({3, 1, 1}, {0, 0, -2});
  EXPECT_FALSE(sd::project(behind, id, k).valid[0]);
}

TEST(Project, RoundTripAndInverseCompose) {
  auto k = test_camera(8, 6);
  std::mt19937_64 rng(23);
  TD depth = random_tensor({6, 8}, rng, 2, 6);
  auto pts = sd::backproject(sd::DepthMap<double>::all_valid(depth), k);
  auto pr = sd::project(pts, sd::RigidPose<double>::identity(), k);
  for (std::size_t v = 0; v < 6; ++v)
    for (std::size_t u = 0; u < 8; ++u) {
      EXPECT_NEAR(pr.coords[v * 8 + u], u, 1e-9);
      EXPECT_NEAR(pr.coords[48 + v * 8 + u], v, 1e-9);
    }

  for (int trial = 0; trial < 20; ++trial) {
    auto pose = sd::RigidPose<double>::from_values(
        {0.2 * (rng() % 7 / 7.0 - 0.5), 0.1, -0.05 * trial / 20.0},
        {0.3, -0.1 * trial / 20.0, 0.2});
    auto fwd = sd::transform_points(pts, sd::axis_angle_to_matrix(pose.axis_angle),
                                    pose.translation);
    auto inv = pose.inverse();
    auto back = sd::project(fwd, inv, k);
    for (std::size_t p = 0; p < 48; ++p) {
      ASSERT_TRUE(back.valid[p]);
      EXPECT_NEAR(back.coords[p], pr.coords[p], 1e-6);
      EXPECT_NEAR(back.coords[48 + p], pr.coords[48 + p], 1e-6);
    }
  }
}

TEST(GridSample, Fixtures) {
  TD img = smooth_image(2, 5, 6);
  std::vector<double> grid(2 * 30);
  for (std::size_t v = 0; v < 5; ++v)
    for (std::size_t u = 0; u < 6; ++u) {
      grid[v * 6 + u] = u;
      grid[30 + v * 6 + u] = v;
    }
  auto s = sd::grid_sample_bilinear(img, TD({2, 5, 6}, grid));
  EXPECT_EQ(s.image.values(), img.values());
  EXPECT_EQ(s.valid.count(), 30u);

  TD two({1, 1, 2}, {0, 1});
  auto mid = sd::grid_sample_bilinear(two, TD({2, 1, 1}, {0.5, 0}));
  EXPECT_DOUBLE_EQ(mid.image[0], 0.5);

  auto oob = sd::grid_sample_bilinear(two, TD({2, 1, 1}, {3.0, 0}));
  EXPECT_FALSE(oob.valid[0]);
  EXPECT_DOUBLE_EQ(oob.image[0], 1.0);  // clamp to edge
}

TEST(GridSample, IntegerShiftOnRamp) {
  std::vector<double> ramp(4 * 7);
  for (std::size_t v = 0; v < 4; ++v)
    for (std::size_t u = 0; u < 7; ++u) ramp[v * 7 + u] = 0.1 * u + 0.01 * v * v;
  TD img({1, 4, 7}, ramp);
  std::vector<double> grid(2 * 28);
  for (std::size_t v = 0; v < 4; ++v)
    for (std::size_t u = 0; u < 7; ++u) {
      grid[v * 7 + u] = u + 1.0;
      grid[28 + v * 7 + u] = v;
    }
  auto s = sd::grid_sample_bilinear(img, TD({2, 4, 7}, grid));
  for (std::size_t v = 0; v < 4; ++v)
    for (std::size_t u = 0; u + 1 < 7; ++u) {
      EXPECT_NEAR(s.image[v * 7 + u], ramp[v * 7 + u + 1], 1e-15);
      EXPECT_TRUE(s.valid[v * 7 + u]);
    }
  EXPECT_FALSE(s.valid[6]);
}

TEST(SynthesizeView, IdentityPoseReproducesSource) {
  auto k = test_camera();
  TD src = smooth_image(3, 8, 8);
  std::mt19937_64 rng(24);
  TD depth = random_tensor({8, 8}, rng, 0.5, 20);
  auto rec = sd::synthesize_view(src, sd::DepthMap<double>::all_valid(depth),
                                 sd::RigidPose<double>::identity(), k);
  for (std::size_t i = 0; i < src.numel(); ++i) EXPECT_NEAR(rec.image[i], src[i], 1e-12);
  EXPECT_EQ(rec.valid.count(), 64u);
}

TEST(SynthesizeView, FrontoParallelTranslationShifts) {
  // Plane at depth Z, source camera displaced by +tx: the reference pixel u
  // appears at u - fx*tx/Z in the source.
  const std::size_t w = 16, h = 6;
  sd::CameraIntrinsics k{20, 20, 7.5, 2.5, w, h};
  const double z = 4.0, tx = 0.4, shift = k.fx * tx / z;  // 2 px
  auto f = [](double u) { return 0.5 + 0.4 * std::sin(0.45 * u); };
  std::vector<double> src(h * w), expect(h * w);
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      src[v * w + u] = f(u);
      expect[v * w + u] = f(u - shift);
    }
  // World->source-camera translation is -tx when the camera moves by +tx.
  auto pose = sd::RigidPose<double>::from_values({0, 0, 0}, {-tx, 0, 0});
  auto rec = sd::synthesize_view(TD({1, h, w}, src),
                                 sd::DepthMap<double>::all_valid(TD::full({h, w}, z)),
                                 pose, k);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!rec.valid[i]) continue;
    ++valid;
    EXPECT_NEAR(rec.image[i], expect[i], 1e-12);
  }
  EXPECT_EQ(valid, h * (w - 2));
}

TEST(Geometry, GradientsOnRandom8x8) {
  auto k = test_camera();
  std::mt19937_64 rng(25);
  TD src = smooth_image(3, 8, 8);
  src.set_requires_grad(true);
  TD depth = random_tensor({8, 8}, rng, 3, 5);
  TD aa = random_tensor({3}, rng, -0.05, 0.05);
  TD tr = random_tensor({3}, rng, -0.1, 0.1);
  TD w = random_tensor({3, 8, 8}, rng, -1, 1);
  auto f = [&] {
    sd::RigidPose<double> pose{aa, tr};
    auto rec = sd::synthesize_view(src, sd::DepthMap<double>::all_valid(depth),
                                   pose, k);
    auto m = rec.valid.as_factors<double>();
    std::vector<double> m3;
    for (int c = 0; c < 3; ++c) m3.insert(m3.end(), m.begin(), m.end());
    return sd::sum(sd::mul(sd::mul_constant(rec.image, m3), w));
  };
  auto rep = sd::grad_check<double>(f, {src, depth, aa, tr});
  EXPECT_TRUE(rep.passed) << rep.worst << " rel=" << rep.max_rel_error;

  TD s = random_tensor({8, 8}, rng, 0.05, 0.95);
  auto rep2 = sd::grad_check<double>(
      [&] { return sd::sum(sd::mul(sd::disparity_to_depth(s, 0.1, 100).values, w)); },
      {s});
  EXPECT_TRUE(rep2.passed) << rep2.worst;
}

TEST(DisparityToDepth, EndpointsAndMonotone) {
  TD s({4}, {1.0, 0.0, 0.5, 0.25});
  auto d = sd::disparity_to_depth(s, 0.1, 100);
  EXPECT_NEAR(d.values[0], 0.1, 1e-12);
  EXPECT_NEAR(d.values[1], 100, 1e-9);
  EXPECT_NEAR(d.values[2], 1.0 / (0.01 + 0.5 * (10 - 0.01)), 1e-12);
  EXPECT_NEAR(d.values[2], 0.1998, 1e-4);
  EXPECT_GT(d.values[3], d.values[2]);

  auto c = sd::disparity_to_depth(TD::full({2, 3}, 0.3), 0.1, 100);
  for (double v : c.values.data()) EXPECT_EQ(v, c.values[0]);

  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    double a = u(rng), b = u(rng);
    if (a == b) continue;
    auto da = sd::disparity_to_depth(TD({1}, {a}), 0.1, 100).values[0];
    auto db = sd::disparity_to_depth(TD({1}, {b}), 0.1, 100).values[0];
    EXPECT_EQ(a < b, da > db);
  }
  EXPECT_THROW(sd::disparity_to_depth(s, 1.0, 0.5), std::invalid_argument);
}

TEST(ScaleToReference, MedianAndMinMax) {
  std::mt19937_64 rng(27);
  TD ref = random_tensor({5, 7}, rng, 1, 10);
  auto refm = sd::DepthMap<double>::all_valid(ref);
  auto pred2 = sd::DepthMap<double>::all_valid(sd::scale(ref, 2.0));
  auto aligned = sd::scale_to_reference(pred2, refm, sd::AlignMode::kMedian);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(aligned.values[i], ref[i], 1e-12);

  for (auto mode : {sd::AlignMode::kMedian, sd::AlignMode::kMinMax}) {
    auto same = sd::scale_to_reference(refm, refm, mode);
    for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(same.values[i], ref[i], 1e-12);
  }

  for (int trial = 0; trial < 50; ++trial) {
    auto p = sd::DepthMap<double>::all_valid(random_tensor({4, 6}, rng, 0.1, 50));
    auto r = sd::DepthMap<double>::all_valid(random_tensor({4, 6}, rng, 0.1, 50));
    auto a = sd::scale_to_reference(p, r, sd::AlignMode::kMedian);
    EXPECT_NEAR(sd::median_of(a.values.values()), sd::median_of(r.values.values()), 1e-9);
  }

  auto none = refm;
  none.valid = sd::Mask(5, 7, false);
  EXPECT_THROW(sd::scale_to_reference(none, refm, sd::AlignMode::kMedian),
               std::invalid_argument);
}

TEST(PointCloudToDepth, SplatAndZBuffer) {
  Eigen::Matrix<double, 3, 4> P;
  P << 10, 0, 4, 0, 0, 10, 3, 0, 0, 0, 1, 0;
  std::vector<Eigen::Vector3d> one{{0, 0, 5}};
  auto d = sd::pointcloud_to_depth(one, P, 6, 8);
  ASSERT_TRUE(d.valid[3 * 8 + 4]);
  EXPECT_DOUBLE_EQ(d.values[3 * 8 + 4], 5);
  EXPECT_EQ(d.valid.count(), 1u);
  EXPECT_TRUE(std::isnan(d.values[0]));

  std::vector<Eigen::Vector3d> two{{0, 0, 5}, {0, 0, 3}};
  auto d2 = sd::pointcloud_to_depth(two, P, 6, 8);
  EXPECT_DOUBLE_EQ(d2.values[3 * 8 + 4], 3);

  Eigen::Matrix<double, 3, 4> singular = Eigen::Matrix<double, 3, 4>::Zero();
  EXPECT_THROW(sd::pointcloud_to_depth(one, singular, 6, 8), std::invalid_argument);
}

TEST(PointCloudToDepth, DensePlaneMatchesAnalyticDepth) {
  // Tilted plane Z = 6 + 0.5 Y in camera coordinates, sampled every 0.02.
  sd::CameraIntrinsics k{12, 12, 7.5, 5.5, 16, 12};
  Eigen::Matrix<double, 3, 4> P = Eigen::Matrix<double, 3, 4>::Zero();
  P.leftCols<3>() = k.matrix();
  const double spacing = 0.02;
  std::vector<Eigen::Vector3d> pts;
  for (double x = -8; x <= 8; x += spacing)
    for (double y = -6; y <= 6; y += spacing) pts.emplace_back(x, y, 6 + 0.5 * y);
  auto d = sd::pointcloud_to_depth(pts, P, 12, 16);
  for (std::size_t v = 0; v < 12; ++v)
    for (std::size_t u = 0; u < 16; ++u) {
      std::size_t i = v * 16 + u;
      ASSERT_TRUE(d.valid[i]);
      // Z = 6 / (1 - 0.5 r) along ray r = (v-cy)/fy grows with v, so the
      // z-buffer keeps the depth at the top edge of the pixel footprint.
      double r = (v - 0.5 - k.cy) / k.fy;
      double analytic = 6 / (1 - 0.5 * r);
      EXPECT_NEAR(d.values[i], analytic, 2 * spacing);
    }
  // Hole filling covers a punched-out pixel.
  std::vector<Eigen::Vector3d> sparse;
  for (const auto& p : pts) {
    Eigen::Vector3d q = P * p.homogeneous();
    if (std::lround(q.x() / q.z()) == 5 && std::lround(q.y() / q.z()) == 5) continue;
    sparse.push_back(p);
  }
  auto holes = sd::pointcloud_to_depth(sparse, P, 12, 16);
  EXPECT_FALSE(holes.valid[5 * 16 + 5]);
  auto filled = sd::pointcloud_to_depth(sparse, P, 12, 16, {3});
  EXPECT_TRUE(filled.valid[5 * 16 + 5]);
}

TEST(GeometryFiles, IntrinsicsAndPosesRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "selfdepth_geometry_test";
  std::filesystem::create_directories(dir);
  sd::CameraIntrinsics k{48.5, 49.25, 47.5, 31.5, 96, 64};
  sd::write_intrinsics((dir / "intrinsics.txt").string(), k);
  EXPECT_EQ(sd::read_intrinsics((dir / "intrinsics.txt").string()), k);

  std::vector<sd::PoseMatrix> poses(3);
  for (int i = 0; i < 3; ++i) {
    Eigen::Matrix3d r = sd::rotation_from_axis_angle({0.1 * i, -0.2, 0.05});
    poses[i].leftCols<3>() = r;
    poses[i].col(3) = Eigen::Vector3d(1.0 / 3 + i, -2.5, 0.125);
  }
  sd::write_poses((dir / "poses.txt").string(), poses);
  auto back = sd::read_poses((dir / "poses.txt").string());
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT((back[i] - poses[i]).cwiseAbs().maxCoeff(), 1e-11);
  }
  EXPECT_THROW(sd::read_intrinsics((dir / "missing.txt").string()), std::runtime_error);
}
