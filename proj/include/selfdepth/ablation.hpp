#pragma once

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "selfdepth/synthscene.hpp"
#include "selfdepth/trainer.hpp"

namespace selfdepth {

struct AblationVariant {
  std::string label;
  std::set<std::string> losses{"reproj", "smooth", "mask", "contrast"};
  bool pretrained = true;
  double resolution_scale = 1.0;  // 0.5 halves width and height
  bool moving_patch = false;      // paste a patch that moves with the camera
};

/// Four losses pretrained and from scratch, half resolution, the two
/// three-loss variants and reprojection + smoothness only.
inline std::vector<AblationVariant> default_ablation_grid() {
  return {
      {"pretrained, four losses", {"reproj", "smooth", "mask", "contrast"}, true, 1.0},
      {"scratch, four losses", {"reproj", "smooth", "mask", "contrast"}, false, 1.0},
      {"pretrained, four losses, half resolution",
       {"reproj", "smooth", "mask", "contrast"}, true, 0.5},
      {"pretrained, reproj + smooth + contrast", {"reproj", "smooth", "contrast"}, true, 1.0},
      {"pretrained, reproj + smooth + mask", {"reproj", "smooth", "mask"}, true, 1.0},
      {"pretrained, reproj + smooth", {"reproj", "smooth"}, true, 1.0},
  };
}

struct AblationResult {
  std::string label;
  MetricReport metrics;
  double final_mask_fraction = 0;  // mean over the final epoch's steps
  double final_loss = 0;
  std::size_t steps = 0;
  std::size_t width = 0, height = 0;
};

struct AblationOptions {
  std::size_t max_steps = 0;  // per variant; 0 runs all epochs
  std::uint64_t patch_seed = 77;
  std::ostream* progress = nullptr;
  std::size_t threads = 1;
};

/// Square patch used by moving_patch variants: a sixth of the width, placed
/// left of centre.
inline void patch_geometry(std::size_t w, std::size_t h, std::size_t& x0, std::size_t& y0,
                           std::size_t& size) {
  size = std::max<std::size_t>(2, w / 6);
  x0 = w * 2 / 5;
  y0 = h / 3;
}

/// Trains each variant from the same base config and seed on the same frames
/// and evaluates against the reference depths at the variant's resolution
/// (predictions upsampled back when the reference is larger).
template <typename T>
std::vector<AblationResult> run_ablation(const std::vector<Tensor<T>>& frames,
                                         const std::vector<DepthMap<T>>& refs,
                                         const CameraIntrinsics& k, const TrainConfig& base,
                                         const std::vector<AblationVariant>& grid,
                                         const EvalConfig& ecfg,
                                         const AblationOptions& opt = {}) {
  if (grid.empty()) throw std::invalid_argument("run_ablation: empty grid");
  std::vector<AblationResult> out;
  for (const auto& v : grid) {
    TrainConfig cfg = base;
    cfg.enabled_losses = v.losses;
    if (!v.pretrained) cfg.pretrained_load_path.clear();
    if (v.pretrained && cfg.pretrained_load_path.empty()) {
      throw std::invalid_argument("variant '" + v.label + "' needs a pretrained checkpoint");
    }
    std::size_t w = base.width ? base.width : k.width;
    std::size_t h = base.height ? base.height : k.height;
    cfg.width = static_cast<std::size_t>(std::lround(static_cast<double>(w) * v.resolution_scale));
    cfg.height = static_cast<std::size_t>(std::lround(static_cast<double>(h) * v.resolution_scale));
    CameraIntrinsics kv;
    auto vf = resample_frames(frames, k, cfg.width, cfg.height, kv);
    auto triplets = build_triplets(vf, kv, cfg.frame_stride);
    if (v.moving_patch) {
      std::size_t x0, y0, size;
      patch_geometry(cfg.width, cfg.height, x0, y0, size);
      inject_moving_patch(triplets, x0, y0, size, opt.patch_seed);
    }
    if (opt.progress) {
      *opt.progress << "variant '" << v.label << "' at " << cfg.width << "x" << cfg.height
                    << ", " << triplets.size() << " triplets" << std::endl;
    }
    TrainOptions topt;
    topt.max_steps = opt.max_steps;
    topt.threads = opt.threads;
    auto res = run_training(triplets, cfg, topt);
    AblationResult r;
    r.label = v.label;
    r.width = cfg.width;
    r.height = cfg.height;
    r.steps = res.rows.size();
    r.metrics = evaluate_model(res.state.params, cfg, vf, refs, ecfg);
    std::size_t last_epoch = res.rows.back().epoch, count = 0;
    for (const auto& row : res.rows) {
      if (row.epoch == last_epoch) {
        r.final_mask_fraction += row.mask_fraction;
        ++count;
      }
    }
    r.final_mask_fraction /= static_cast<double>(count);
    r.final_loss = res.rows.back().total;
    out.push_back(r);
  }
  return out;
}

inline std::vector<ReportRow> ablation_rows(const std::vector<AblationResult>& results) {
  std::vector<ReportRow> rows;
  for (const auto& r : results) rows.emplace_back(r.label, r.metrics);
  return rows;
}

/// Per-variant training summary printed under the metric table.
inline std::string ablation_summary(const std::vector<AblationResult>& results) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (const auto& r : results) {
    os << r.label << ": " << r.width << "x" << r.height << ", " << r.steps
       << " steps, final loss " << r.final_loss << ", mask_fraction "
       << r.final_mask_fraction << '\n';
  }
  return os.str();
}

/// Stand-in for externally pretrained encoders: trains the full model on a
/// different synthetic scene and saves it; load_pretrained_encoders then
/// copies only the encoders.
inline std::string pretrain_on_preset(const TrainConfig& base, const std::string& preset,
                                      std::size_t frames, std::size_t width, std::size_t height,
                                      std::uint64_t scene_seed, std::size_t max_steps,
                                      const std::string& out_dir, std::size_t threads = 1) {
  auto setup = make_preset(preset, frames, width, height, scene_seed);
  auto seq = render_sequence(setup.scene, setup.trajectory);
  std::vector<Tensor<float>> fr;
  for (const auto& f : seq.frames) {
    fr.emplace_back(f.shape(), std::vector<float>(f.data().begin(), f.data().end()));
  }
  TrainConfig cfg = base;
  cfg.pretrained_load_path.clear();
  cfg.width = 0;
  cfg.height = 0;
  TrainOptions topt;
  topt.out_dir = out_dir;
  topt.max_steps = max_steps;
  topt.threads = threads;
  run_training(build_triplets(fr, seq.trajectory.intrinsics, cfg.frame_stride), cfg, topt);
  return (std::filesystem::path(out_dir) / "model.sdck").string();
}

}  // namespace selfdepth
