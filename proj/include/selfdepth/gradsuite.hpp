#pragma once

#include <chrono>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "selfdepth/gradcheck.hpp"
#include "selfdepth/synthscene.hpp"
#include "selfdepth/trainer.hpp"

namespace selfdepth {

/// Small architecture that fits an 8x8 input (two stride-2 stages) and keeps
/// a full-loss finite-difference sweep within seconds.
inline ModelConfig gradcheck_model_config() {
  ModelConfig m;
  m.depth.encoder_channels = {4, 6};
  m.depth.num_stages = 2;
  m.depth.decoder_3d_channels = {6, 4, 4};
  m.depth.output_scales = {0, 1};
  m.pose.encoder_channels = {4, 6};
  m.pose.num_stages = 2;
  m.pose.decoder_channels = 8;
  return m;
}

struct GradSuiteOptions {
  std::size_t size = 8;  // triplet width and height for the full loss
  std::string scene = "plane";
  std::uint64_t seed = 0;
  GradCheckOptions check;  // eps/rel_tol; kink screening is always on
  std::size_t loss_coords_per_tensor = 2;
  ModelConfig model = gradcheck_model_config();
};

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
  double seconds = 0;
};

namespace detail {

inline Tensor<double> suite_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(shape, std::move(v));
}

inline Tensor<double> smooth_texture(std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> v(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        v[(ch * h + y) * w + x] = 0.5 + 0.3 * std::sin(0.7 * x + 0.3 * ch) * std::cos(0.5 * y + 0.1);
  return Tensor<double>({c, h, w}, std::move(v));
}

}  // namespace detail

/// Finite-difference checks over every differentiable operation followed by
/// the full training loss on a synthetic size x size triplet, all in double.
inline std::vector<GradSuiteCase> run_gradient_suite(const GradSuiteOptions& o = {}) {
  using TD = Tensor<double>;
  GradCheckOptions opt = o.check;
  opt.screen_kinks = true;
  Rng rng(derive_seed(o.seed, 0x9c));
  std::vector<GradSuiteCase> out;
  auto run = [&](const std::string& name, const std::function<TD()>& f,
                 std::vector<TD> inputs, GradCheckOptions co) {
    auto t0 = std::chrono::steady_clock::now();
    GradSuiteCase c{name, grad_check<double>(f, std::move(inputs), co), 0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(c));
  };

  {
    TD a = detail::suite_tensor({3, 4}, rng, 0.5, 1.5), b = detail::suite_tensor({1, 4}, rng, 0.5, 1.5);
    TD c = detail::suite_tensor({3, 4}, rng, -1, 1);
    run("elementwise", [=] {
      auto t1 = div(mul(a, b), add_scalar(square(a), 1.0));
      auto t2 = add(add(elu(c), sigmoid(sub(c, b))), exp(neg(a)));
      auto t3 = sqrt(add_scalar(abs(c), 0.1));
      auto t4 = mul_constant(relu(scale(c, 2.0)), std::vector<double>(12, 0.7));
      return add(sum(mul(mul(t1, t2), t3)), sum(t4));
    }, {a, b, c}, opt);
  }
  {
    TD a = detail::suite_tensor({2, 3, 4}, rng, -1, 1);
    run("reductions", [=] {
      auto r1 = reduce_mean(a, {1}, true);
      auto r2 = reduce_sum(square(a), {0, 2});
      return add(add(sum(mul(r1, r1)), mean(exp(r2))), mean(a));
    }, {a}, opt);
  }
  {
    TD a = detail::suite_tensor({2, 3, 4}, rng, -1, 1), b = detail::suite_tensor({2, 3, 4}, rng, -1, 1);
    TD w = detail::suite_tensor({2, 2, 3, 4}, rng, -1, 1);
    run("shape ops", [=] {
      auto st = stack<double>({a, b}, 0);
      auto sl = slice(st, 3, 1, 3);
      auto cat = concat<double>({a, square(b)}, 1);
      auto g = gather_columns(reshape(b, {6, 4}), {3, 0, 0, 2});
      auto mn = elementwise_min(a, add_scalar(b, 0.05));
      return add(add(add(sum(mul(st, w)), sum(square(sl))), add(sum(square(g)), sum(exp(mn)))),
                 mean(mul(cat, cat)));
    }, {a, b}, opt);
  }
  {
    TD in = detail::suite_tensor({2, 2, 5, 6}, rng, -1, 1), k = detail::suite_tensor({3, 2, 3, 3}, rng, -1, 1);
    TD b = detail::suite_tensor({3}, rng, -1, 1), w = detail::suite_tensor({2, 3, 3, 3}, rng, -1, 1);
    run("conv2d", [=] { return sum(mul(conv2d(in, k, b, 2, 1), w)); }, {in, k, b}, opt);
    TD v = detail::suite_tensor({1, 2, 2, 4, 3}, rng, -1, 1), k3 = detail::suite_tensor({2, 2, 2, 3, 3}, rng, -1, 1);
    TD b3 = detail::suite_tensor({2}, rng, -1, 1);
    run("conv3d", [=] { return sum(square(conv3d(v, k3, b3, 1, {0, 1, 1}))); }, {v, k3, b3}, opt);
  }
  {
    TD y = detail::suite_tensor({2, 4, 5}, rng, -1, 1), w = detail::suite_tensor({2, 8, 10}, rng, -1, 1);
    TD w2 = detail::suite_tensor({2, 4, 5}, rng, -1, 1);
    run("upsample, pad, box filter", [=] {
      return add(sum(mul(upsample2x(y), w)), sum(mul(box_filter(pad_reflect(y, 1), 3), w2)));
    }, {y}, opt);
  }
  {
    const std::size_t s = 8;
    CameraIntrinsics k{10.0, 10.0, (s - 1) / 2.0, (s - 1) / 2.0, s, s};
    TD src = detail::smooth_texture(3, s, s);
    TD depth = detail::suite_tensor({s, s}, rng, 3, 5);
    TD aa = detail::suite_tensor({3}, rng, -0.05, 0.05), tr = detail::suite_tensor({3}, rng, -0.1, 0.1);
    TD w = detail::suite_tensor({3, s, s}, rng, -1, 1);
    run("rotation, transform, projection", [=] {
      auto pts = transform_points(backproject(DepthMap<double>::all_valid(depth), k),
                                  axis_angle_to_matrix(aa), tr);
      return sum(square(pinhole_project(pts, k)));
    }, {depth, aa, tr}, opt);
    run("view synthesis", [=] {
      RigidPose<double> pose{aa, tr};
      auto rec = synthesize_view(src, DepthMap<double>::all_valid(depth), pose, k);
      auto m = rec.valid.as_factors<double>();
      std::vector<double> m3;
      for (int c = 0; c < 3; ++c) m3.insert(m3.end(), m.begin(), m.end());
      return sum(mul(mul_constant(rec.image, m3), w));
    }, {src, depth, aa, tr}, opt);
    TD coords = detail::suite_tensor({2, 4, 4}, rng, 0.6, 6.4);
    TD wc = detail::suite_tensor({3, 4, 4}, rng, -1, 1);
    run("bilinear sampling", [=] { return sum(mul(grid_sample_bilinear(src, coords).image, wc)); },
        {src, coords}, opt);
    TD sg = detail::suite_tensor({s, s}, rng, 0.05, 0.95);
    TD ws = detail::suite_tensor({s, s}, rng, -1, 1);
    run("disparity to depth", [=] { return sum(mul(disparity_to_depth(sg, 0.1, 100).values, ws)); },
        {sg}, opt);
  }
  {
    TD a = detail::suite_tensor({2, 5, 5}, rng, 0, 1), b = detail::suite_tensor({2, 5, 5}, rng, 0, 1);
    TD c = detail::suite_tensor({2, 5, 5}, rng, 0, 1);
    run("ssim and reprojection", [=] {
      auto ra = reduce_mean(reprojection_loss(a, b, 0.85), {0});
      auto rc = reduce_mean(reprojection_loss(a, c, 0.85), {0});
      return add(mean(min_reprojection<double>({ra, rc})), mean(ssim(b, c)));
    }, {a, b, c}, opt);
    TD d = detail::suite_tensor({5, 5}, rng, 0.2, 1);
    run("smoothness", [=] { return smoothness_loss(d, a); }, {d}, opt);
    TD fr = detail::suite_tensor({4, 3, 3}, rng, -1, 1), fc = detail::suite_tensor({4, 3, 3}, rng, -1, 1);
    auto pairs = make_contrastive_pairs(9, 3);
    run("contrastive", [=] {
      return contrastive_loss(normalize_features(fr), normalize_features(fc), pairs, 1.0);
    }, {fr, fc}, opt);
  }
  {
    auto setup = make_preset(o.scene, 3, o.size, o.size, o.seed + 1);
    auto seq = render_sequence(setup.scene, setup.trajectory);
    auto triplets = build_triplets(seq.frames, seq.trajectory.intrinsics, 1);
    ModelConfig model = o.model;
    model.check_resolution(o.size, o.size);
    auto params = init_model<double>(model, derive_seed(o.seed, 0x9d));
    std::vector<TD> inputs;
    for (auto& [name, t] : params) inputs.push_back(t);
    GradCheckOptions lo = opt;
    lo.max_coords_per_tensor = o.loss_coords_per_tensor;
    LossWeights w;
    const FrameTriplet<double> tr = triplets.at(0);
    run("full loss " + std::to_string(o.size) + "x" + std::to_string(o.size), [=, &params] {
      return triplet_loss(params, model, tr, w, 0.1, 100, derive_seed(o.seed, 0x9e)).loss.total;
    }, inputs, lo);
  }
  return out;
}

inline std::string format_gradient_suite(const std::vector<GradSuiteCase>& cases) {
  std::ostringstream os;
  for (const auto& c : cases) {
    os << (c.report.passed ? "ok   " : "FAIL ") << std::left << std::setw(34) << c.name
       << std::right << " max_rel=" << std::scientific << std::setprecision(3)
       << c.report.max_rel_error << " coords=" << c.report.coords_checked
       << " skipped=" << c.report.coords_skipped << std::fixed << std::setprecision(2)
       << " " << c.seconds << "s";
    if (!c.report.passed) os << "  " << c.report.worst;
    os << '\n';
  }
  return os.str();
}

}  // namespace selfdepth
