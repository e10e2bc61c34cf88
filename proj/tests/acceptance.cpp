// End-to-end acceptance checks, one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "selfdepth/ablation.hpp"
#include "selfdepth/gradsuite.hpp"
#include "selfdepth/losses.hpp"
#include "selfdepth/synthscene.hpp"
#include "selfdepth/trainer.hpp"

namespace sd = selfdepth;
namespace fs = std::filesystem;
using TD = sd::Tensor<double>;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("selfdepth_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct FloatScene {
  std::vector<sd::Tensor<float>> frames;
  std::vector<sd::DepthMap<float>> depths;
  sd::CameraIntrinsics k;
};

FloatScene float_scene(const std::string& preset, std::size_t frames, std::size_t w,
                       std::size_t h, std::uint64_t seed) {
  auto s = sd::make_preset(preset, frames, w, h, seed);
  auto seq = sd::render_sequence(s.scene, s.trajectory);
  FloatScene out;
  out.k = seq.trajectory.intrinsics;
  for (const auto& f : seq.frames) {
    out.frames.emplace_back(f.shape(), std::vector<float>(f.data().begin(), f.data().end()));
  }
  for (const auto& d : seq.depths) {
    std::vector<float> v(d.values.data().begin(), d.values.data().end());
    out.depths.push_back({sd::Tensor<float>(d.values.shape(), v), d.valid});
  }
  return out;
}

// ---------------------------------------------------------------------------

void gradient_suite(Outcome& o) {
  auto t0 = std::chrono::steady_clock::now();
  sd::GradSuiteOptions opt;
  opt.size = 8;
  opt.check.eps = 1e-4;
  opt.check.rel_tol = 1e-3;
  opt.loss_coords_per_tensor = 4;
  auto cases = sd::run_gradient_suite(opt);
  double secs = seconds_since(t0), worst = 0;
  std::size_t coords = 0, skipped = 0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.report.max_rel_error);
    coords += c.report.coords_checked;
    skipped += c.report.coords_skipped;
    o.check(c.report.passed, c.name + ": " + c.report.worst);
  }
  std::cout << sd::format_gradient_suite(cases);
  o.detail << cases.size() << " cases, " << coords << " coordinates (" << skipped
           << " straddling a kink), max rel " << std::scientific << std::setprecision(2) << worst
           << std::fixed << ", " << std::setprecision(1) << secs << " s";
  o.check(cases.back().name == "full loss 8x8", "full-loss case present");
  o.check(secs < 120, "runtime under 2 minutes");
}

// Mean |reconstruction - reference| over valid pixels, relative to the
// reference's dynamic range.
void view_synthesis_oracle(Outcome& o) {
  std::size_t passing = 0, tried = 0;
  auto t0 = std::chrono::steady_clock::now();
  for (const char* preset : {"plane", "boxes", "heightfield", "fronto"}) {
    auto s = sd::make_preset(preset, 3, 96, 64, 1);
    auto seq = sd::render_sequence(s.scene, s.trajectory);
    double worst = 0;
    for (std::size_t t = 0; t + 1 < seq.frames.size(); ++t) {
      std::vector<double> z = seq.depths[t].values.values();
      for (auto& v : z) {
        if (!std::isfinite(v)) v = 1.0;
      }
      sd::DepthMap<double> depth{TD(seq.depths[t].values.shape(), z), seq.depths[t].valid};
      auto rec = sd::synthesize_view(seq.frames[t + 1], depth, seq.relative[t],
                                     seq.trajectory.intrinsics);
      const auto& ref = seq.frames[t];
      const std::size_t hw = rec.valid.values.size();
      double err = 0, lo = 1e300, hi = -1e300;
      std::size_t n = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < hw; ++p) {
          lo = std::min(lo, ref[c * hw + p]);
          hi = std::max(hi, ref[c * hw + p]);
          if (!rec.valid[p]) continue;
          err += std::abs(rec.image[c * hw + p] - ref[c * hw + p]);
          ++n;
        }
      }
      worst = std::max(worst, err / static_cast<double>(n) / (hi - lo));
    }
    ++tried;
    if (worst < 0.01) ++passing;
    o.detail << preset << " " << std::setprecision(3) << 100 * worst << "%, ";
  }
  o.detail << passing << "/" << tried << " below 1%, " << std::setprecision(2)
           << seconds_since(t0) << " s";
  o.check(passing >= 3, "at least 3 scene/trajectory combinations below 1%");
}

// Own bilinear lookup so the image-based shift does not reuse the library sampler.
double bilinear(const TD& img, std::size_t c, double x, double y) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  auto at = [&](long yy, long xx) { return img[(c * h + yy) * w + xx]; };
  long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
  double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

void analytic_flow(Outcome& o) {
  const std::size_t w = 96, h = 64;
  auto s = sd::make_preset("fronto", 2, w, h, 1);
  auto seq = sd::render_sequence(s.scene, s.trajectory);
  const auto& k = seq.trajectory.intrinsics;
  const double z = s.scene.plane_z;
  const double tx = std::abs(seq.relative[0].translation_values().x());
  const double expected = k.fx * tx / z;

  // Geometric warp of every pixel.
  auto proj = sd::project(sd::backproject(seq.depths[0], k), seq.relative[0], k);
  double worst_geo = 0, mean_du = 0;
  for (std::size_t p = 0; p < w * h; ++p) {
    double du = proj.coords[p] - static_cast<double>(p % w);
    double dv = proj.coords[w * h + p] - static_cast<double>(p / w);
    worst_geo = std::max({worst_geo, std::abs(std::abs(du) - expected), std::abs(dv)});
    mean_du += du / static_cast<double>(w * h);
  }

  // Image-based: the horizontal shift s minimising the SSD between the
  // reference frame and the next frame sampled at u + s, over interior pixels.
  const TD& ref = seq.frames[0];
  const TD& nxt = seq.frames[1];
  auto ssd = [&](double shift) {
    double acc = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t v = 4; v + 4 < h; ++v)
        for (std::size_t u = 8; u + 8 < w; ++u) {
          double d = bilinear(nxt, c, u + shift, static_cast<double>(v)) - ref[(c * h + v) * w + u];
          acc += d * d;
        }
    return acc;
  };
  double best = 0, best_val = 1e300;
  for (double sft = -4; sft <= 4; sft += 0.05) {
    double val = ssd(sft);
    if (val < best_val) {
      best_val = val;
      best = sft;
    }
  }
  double lo = best - 0.05, hi = best + 0.05;
  const double g = (std::sqrt(5.0) - 1) / 2;
  for (int it = 0; it < 60; ++it) {
    double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (ssd(a) < ssd(b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  double measured = (lo + hi) / 2;
  double err_img = std::abs(std::abs(measured) - expected);
  o.detail << std::setprecision(4) << "fx*tx/Z = " << expected << " px; geometric warp max error "
           << std::scientific << std::setprecision(1) << worst_geo << std::fixed
           << " px; image-measured shift " << std::setprecision(4) << measured << " px (error "
           << err_img << ")";
  o.check(worst_geo < 0.1, "geometric warp within 0.1 px");
  o.check(err_img < 0.1, "image-measured warp within 0.1 px");
  o.check((measured > 0) == (mean_du > 0), "image shift has the geometric direction");
}

sd::DepthMap<double> row(std::vector<double> v) {
  std::size_t n = v.size();
  return sd::DepthMap<double>::all_valid(TD({1, n}, std::move(v)));
}

void metric_fixtures(Outcome& o) {
  const double tol = 1e-12;
  std::size_t checked = 0;
  auto near = [&](double got, double want, const std::string& what) {
    ++checked;
    o.check(std::abs(got - want) <= tol, what + " = " + std::to_string(got));
  };
  // pred {2,2,2} vs ref {1,2,4}: |e|/ref = 1, 0, 0.5; e^2/ref = 1, 0, 1; e^2 = 1, 0, 4;
  // max ratio = 2, 1, 2.
  auto p1 = row({2, 2, 2}), r1 = row({1, 2, 4});
  near(sd::abs_rel(p1, r1), 0.5, "abs_rel fixture 1");
  near(sd::sq_rel(p1, r1), 2.0 / 3.0, "sq_rel fixture 1");
  near(sd::rmse(p1, r1), std::sqrt(5.0 / 3.0), "rmse fixture 1");
  near(sd::delta_accuracy(p1, r1, 1.25), 1.0 / 3.0, "delta 1.25 fixture 1");
  near(sd::delta_accuracy(p1, r1, 2.0), 1.0 / 3.0, "delta 2 fixture 1 (strict)");
  // pred {11,15} vs ref {10,20}: ratios 1.1 and 4/3.
  auto p2 = row({11, 15}), r2 = row({10, 20});
  near(sd::abs_rel(p2, r2), 0.175, "abs_rel fixture 2");
  near(sd::sq_rel(p2, r2), (0.1 + 1.25) / 2, "sq_rel fixture 2");
  near(sd::rmse(p2, r2), std::sqrt(13.0), "rmse fixture 2");
  near(sd::delta_accuracy(p2, r2, 1.05), 0.0, "delta 1.05 fixture 2");
  near(sd::delta_accuracy(p2, r2, 1.15), 0.5, "delta 1.15 fixture 2");
  near(sd::delta_accuracy(p2, r2, 1.25), 0.5, "delta 1.25 fixture 2");
  near(sd::delta_accuracy(p2, r2, 1.4), 1.0, "delta 1.4 fixture 2");
  // Perfect prediction.
  auto r3 = row({3, 5, 7});
  near(sd::abs_rel(r3, r3), 0.0, "abs_rel perfect");
  near(sd::rmse(r3, r3), 0.0, "rmse perfect");
  near(sd::delta_accuracy(r3, r3, 1.05), 1.0, "delta perfect");

  sd::Rng rng(2024);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(64), p(64);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = rng.uniform(0.5, 80.0);
      p[i] = r[i] * std::exp(rng.uniform(-0.4, 0.4));
    }
    auto pr = row(p), rr = row(r);
    double a = sd::delta_accuracy(pr, rr, 1.05), b = sd::delta_accuracy(pr, rr, 1.15),
           c = sd::delta_accuracy(pr, rr, 1.25);
    if (!(0 <= a && a <= b && b <= c && c <= 1)) ++violations;
  }
  o.detail << checked << " fixtures at 1e-12, " << violations
           << " monotonicity violations over 1000 random maps";
  o.check(violations == 0, "delta monotone in the threshold");
}

void learning_smoke(Outcome& o) {
  auto t0 = std::chrono::steady_clock::now();
  auto scene = float_scene("boxes", 12, 96, 64, 1);
  auto triplets = sd::build_triplets(scene.frames, scene.k, 1);
  sd::TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 60;  // 5 steps per epoch
  sd::EvalConfig ec;
  auto init = sd::init_model<float>(cfg.model, cfg.seed);
  auto before = sd::evaluate_model(init, cfg, scene.frames, scene.depths, ec);
  auto res = sd::run_training(triplets, cfg);
  auto after = sd::evaluate_model(res.state.params, cfg, scene.frames, scene.depths, ec);
  double secs = seconds_since(t0);
  double reduction = 1 - after.abs_rel / before.abs_rel;
  o.detail << std::setprecision(4) << res.rows.size() << " steps; Abs Rel " << before.abs_rel
           << " -> " << after.abs_rel << " (" << std::setprecision(1) << 100 * reduction
           << "% lower); d<1.25 " << std::setprecision(4) << before.delta_at(1.25) << " -> "
           << after.delta_at(1.25) << "; " << std::setprecision(0) << secs << " s";
  o.check(res.rows.size() <= 2000, "at most 2000 steps");
  o.check(reduction >= 0.5, "Abs Rel reduced by at least 50%");
  o.check(after.delta_at(1.25) > 0.8, "final d<1.25 above 0.80");
  o.check(secs < 1800, "runtime under 30 minutes");
}

void ablation_parity(Outcome& o) {
  auto t0 = std::chrono::steady_clock::now();
  auto scene = float_scene("boxes", 12, 96, 64, 1);
  sd::TrainConfig base;
  base.batch_size = 2;
  base.epochs = 1000;
  const std::size_t steps = 100;
  fs::path dir = scratch("ablation");
  base.pretrained_load_path = sd::pretrain_on_preset(base, "heightfield", 12, 96, 64, 9, steps,
                                                     (dir / "pretrain").string());
  auto grid = sd::default_ablation_grid();
  const std::size_t grid_rows = grid.size();
  grid.push_back({"pretrained, four losses, moving patch",
                  {"reproj", "smooth", "mask", "contrast"}, true, 1.0, true});
  sd::AblationOptions opt;
  opt.max_steps = steps;
  auto res = sd::run_ablation(scene.frames, scene.depths, scene.k, base, grid, sd::EvalConfig{}, opt);
  auto rows = sd::ablation_rows(res);
  std::string table = sd::report_table(rows), csv = sd::report_csv(rows);
  std::cout << table << sd::ablation_summary(res);

  std::string header = table.substr(0, table.find('\n'));
  std::size_t pos = 0;
  for (const char* col : {"Abs Rel", "Sq Rel", "RMSE", "d<1.25", "d<1.15", "d<1.05"}) {
    std::size_t at = header.find(col, pos);
    o.check(at != std::string::npos, std::string("column ") + col + " in order");
    if (at != std::string::npos) pos = at;
  }
  o.check(csv.substr(0, csv.find('\n')) == sd::kReportCsvHeader, "csv header");
  o.check(res.size() == grid_rows + 1 && grid_rows == 6, "six grid rows plus the patch row");
  bool finite = true;
  for (const auto& r : res) {
    finite = finite && std::isfinite(r.metrics.abs_rel) && std::isfinite(r.metrics.rmse);
  }
  o.check(finite, "finite metrics in every row");
  o.check(res[2].width == 48 && res[2].height == 32, "half-resolution row trained at 48x32");

  std::size_t x0, y0, size;
  sd::patch_geometry(96, 64, x0, y0, size);
  const double patch_area = static_cast<double>(size * size) / (96.0 * 64.0);
  const double plain = res[0].final_mask_fraction, patched = res.back().final_mask_fraction;
  o.detail << grid.size() << " variants x " << steps << " steps; mask_fraction "
           << std::setprecision(4) << plain << " without the patch, " << patched
           << " with it (patch covers " << patch_area << "); " << std::setprecision(0)
           << seconds_since(t0) << " s";
  o.check(plain >= 0.95, "mask_fraction near 1 without the patch");
  o.check(patched < 1.0, "mask_fraction below 1 with the patch");
  o.check(plain - patched >= 0.5 * patch_area, "the patch removes at least half its area");
  fs::remove_all(dir);
}

void loss_fixtures(Outcome& o) {
  std::size_t checked = 0;
  auto expect = [&](bool ok, const std::string& what) {
    ++checked;
    o.check(ok, what);
  };
  TD fa({1, 1}, {0.0}), fb({1, 1}, {0.4});
  double c = sd::contrastive_loss(fa, fb, {{0, 0, 0}}, 1.0).item();
  expect(std::abs(c - 0.18) < 1e-12, "contrastive hinge 0.18, got " + std::to_string(c));
  expect(sd::contrastive_loss(fa, fa, {{1, 0, 0}}, 1.0).item() == 0.0, "matching identical -> 0");
  TD far({1, 1}, {1.5});
  expect(sd::contrastive_loss(fa, far, {{0, 0, 0}}, 1.0).item() == 0.0, "saturated hinge -> 0");

  sd::Rng rng(31);
  std::vector<double> v(3 * 10 * 12);
  for (auto& x : v) x = rng.uniform();
  TD img({3, 10, 12}, v);
  expect(sd::sum(sd::reprojection_loss(img, img.clone(), 0.85)).item() == 0.0,
         "reprojection exactly 0 on identical images");
  expect(sd::smoothness_loss(TD::full({10, 12}, 0.37), img).item() == 0.0,
         "smoothness exactly 0 on constant disparity");

  auto mask = [](double recon, double ident) {
    return sd::auto_mask(TD({1, 1}, {recon}), TD({1, 1}, {ident}))[0];
  };
  expect(mask(0.1, 0.2) == 1, "mask keeps 0.1 vs 0.2");
  expect(mask(0.3, 0.2) == 0, "mask drops 0.3 vs 0.2");
  expect(mask(0.2, 0.2) == 0, "mask drops equal errors");
  o.detail << checked << " fixtures";
}

int run_cli(const std::string& args) {
  std::string cmd = "'" SELFDEPTH_CLI "' " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism(Outcome& o) {
  auto t0 = std::chrono::steady_clock::now();
  fs::path dir = scratch("determinism");
  std::string d = (dir / "data").string();
  o.check(run_cli("synth --scene boxes --frames 12 --resolution 64x32 --seed 3 --out '" + d + "'") == 0,
          "synth");
  const std::string common = "train --data '" + d + "' --epochs 3 --batch 4 --seed 11 --out '";
  o.check(run_cli(common + (dir / "a").string() + "'") == 0, "first train run");
  o.check(run_cli(common + (dir / "b").string() + "'") == 0, "second train run");
  o.check(run_cli(common + (dir / "c").string() + "' --threads 2") == 0, "threaded train run");
  std::size_t files = 0, bytes = 0;
  for (const char* f : {"model.sdck", "checkpoint_epoch_0001.sdck", "checkpoint_epoch_0002.sdck",
                        "checkpoint_epoch_0003.sdck", "train_log.tsv"}) {
    std::string a = slurp(dir / "a" / f);
    o.check(!a.empty(), std::string(f) + " written");
    o.check(a == slurp(dir / "b" / f), std::string(f) + " identical across runs");
    o.check(a == slurp(dir / "c" / f), std::string(f) + " identical with --threads 2");
    ++files;
    bytes += a.size();
  }
  o.detail << files << " artifacts (" << bytes << " bytes) byte-identical across two runs and "
           << "a two-thread run; " << std::setprecision(0) << seconds_since(t0) << " s";
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"gradient suite", gradient_suite},
      {"view-synthesis oracle", view_synthesis_oracle},
      {"analytic flow", analytic_flow},
      {"metric fixtures", metric_fixtures},
      {"end-to-end learning", learning_smoke},
      {"ablation harness", ablation_parity},
      {"loss fixtures", loss_fixtures},
      {"determinism", determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  std::vector<std::string> lines;
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    o.detail << std::fixed;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
         << "): " << o.detail.str();
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
    all = all && o.pass;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return all ? 0 : 1;
}
