#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "selfdepth/ablation.hpp"
#include "selfdepth/gradsuite.hpp"
#include "selfdepth/synthscene.hpp"
#include "selfdepth/trainer.hpp"

namespace sd = selfdepth;
namespace fs = std::filesystem;

namespace {

// Bad invocation or bad input files: exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Resolution {
  std::size_t width = 0, height = 0;
};

Resolution parse_resolution(const std::string& s, const std::string& flag) {
  auto x = s.find('x');
  Resolution r;
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    std::size_t p1 = 0, p2 = 0;
    r.width = std::stoul(s.substr(0, x), &p1);
    r.height = std::stoul(s.substr(x + 1), &p2);
    if (p1 != x || p2 != s.size() - x - 1 || !r.width || !r.height) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw UsageError(flag + ": expected WxH, got '" + s + "'");
  }
  return r;
}

void require_path(const std::string& path, const std::string& flag, bool dir) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (dir ? !fs::is_directory(path) : !fs::is_regular_file(path)) {
    throw UsageError(flag + ": " + (dir ? "directory" : "file") + " not found: " + path);
  }
}

/// Training flags layered over the config file.
struct ConfigFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch, stride;
  std::optional<double> dmin, dmax, lr;
  std::optional<std::string> losses, resolution, pretrained;

  void add(CLI::App* app, bool full) {
    sd::TrainConfig d;
    app->add_option("--config", config, "key=value config file");
    app->add_option("--seed", seed, "Seed for every random choice")->default_str(std::to_string(d.seed));
    if (!full) return;
    app->add_option("--epochs", epochs, "Training epochs")->default_str(std::to_string(d.epochs));
    app->add_option("--batch", batch, "Triplets per step")->default_str(std::to_string(d.batch_size));
    app->add_option("--stride", stride, "Frame offset of the source views")
        ->default_str(std::to_string(d.frame_stride));
    app->add_option("--dmin", dmin, "Nearest depth of the disparity range")->default_str("0.1");
    app->add_option("--dmax", dmax, "Farthest depth of the disparity range")->default_str("100");
    app->add_option("--lr", lr, "Learning rate before the drop; the later rate keeps its ratio")->default_str("0.0001");
    app->add_option("--losses", losses, "Comma list of reproj,smooth,mask,contrast")
        ->default_str("reproj,smooth,mask,contrast");
    app->add_option("--resolution", resolution, "Training resolution WxH")->default_str("native");
    app->add_option("--pretrained", pretrained, "Checkpoint whose encoders initialise the model")
        ->default_str("none");
  }

  sd::TrainConfig resolve(sd::TrainConfig cfg) const {
    if (!config.empty()) {
      require_path(config, "--config", false);
      cfg = sd::load_config_file(config, cfg);
    }
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.epochs = *epochs;
    if (batch) cfg.batch_size = *batch;
    if (stride) cfg.frame_stride = *stride;
    if (dmin) cfg.d_min = *dmin;
    if (dmax) cfg.d_max = *dmax;
    if (lr) {
      cfg.late_lr = cfg.late_lr / cfg.base_lr * *lr;
      cfg.base_lr = *lr;
    }
    if (losses) {
      try {
        cfg.enabled_losses = sd::parse_loss_list(*losses);
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--losses: ") + e.what());
      }
    }
    if (resolution) {
      auto r = parse_resolution(*resolution, "--resolution");
      cfg.width = r.width;
      cfg.height = r.height;
    }
    if (pretrained) {
      require_path(*pretrained, "--pretrained", false);
      cfg.pretrained_load_path = *pretrained;
    }
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
    return cfg;
  }
};

sd::Dataset<float> open_dataset(const std::string& dir, const std::string& flag) {
  require_path(dir, flag, true);
  try {
    return sd::load_dataset<float>(dir);
  } catch (const std::runtime_error& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

sd::Checkpoint open_checkpoint(const std::string& path, const std::string& flag) {
  require_path(path, flag, false);
  try {
    return sd::Checkpoint::load(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

void print_resolved(const std::string& cmd, const sd::TrainConfig* cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
  std::cout << "# " << cmd << " resolved configuration\n";
  for (const auto& [k, v] : extra) std::cout << k << '=' << v << '\n';
  if (cfg) std::cout << sd::format_config(*cfg);
  std::cout << "# end configuration" << std::endl;
}

std::vector<sd::Tensor<float>> frames_at(const std::vector<sd::Tensor<float>>& frames,
                                         const sd::CameraIntrinsics& k, const sd::TrainConfig& cfg,
                                         sd::CameraIntrinsics& k_out) {
  if (!cfg.width || (cfg.width == k.width && cfg.height == k.height)) {
    k_out = k;
    return frames;
  }
  return sd::resample_frames(frames, k, cfg.width, cfg.height, k_out);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string scene = "boxes", out, resolution = "96x64";
  std::size_t frames = 12;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  auto r = parse_resolution(a.resolution, "--resolution");
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.frames < 3) throw UsageError("--frames: need at least 3 frames");
  const auto& names = sd::preset_names();
  if (std::find(names.begin(), names.end(), a.scene) == names.end()) {
    throw UsageError("--scene: unknown scene '" + a.scene + "' (plane, boxes, heightfield, fronto)");
  }
  print_resolved("synth", nullptr,
                 {{"scene", a.scene}, {"frames", std::to_string(a.frames)},
                  {"resolution", a.resolution}, {"seed", std::to_string(a.seed)}, {"out", a.out}});
  auto setup = sd::make_preset(a.scene, a.frames, r.width, r.height, a.seed);
  auto seq = sd::render_sequence(setup.scene, setup.trajectory);
  sd::export_dataset(seq, a.out);
  std::cout << "wrote " << seq.frames.size() << " frames to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  ConfigFlags flags;
  std::string data, out = "run", resume;
  std::size_t max_steps = 0, threads = 1;
};

int cmd_train(const TrainArgs& a) {
  sd::TrainConfig base;
  if (!a.resume.empty()) base = sd::config_from_checkpoint(open_checkpoint(a.resume, "--resume"));
  sd::TrainConfig cfg = a.flags.resolve(base);
  if (a.threads == 0) throw UsageError("--threads must be >= 1");
  auto ds = open_dataset(a.data, "--data");
  sd::CameraIntrinsics k;
  auto frames = frames_at(ds.frames, ds.intrinsics, cfg, k);
  try {
    cfg.model.check_resolution(k.width, k.height);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--resolution: ") + e.what());
  }
  print_resolved("train", &cfg,
                 {{"data", a.data}, {"out", a.out}, {"resume", a.resume.empty() ? "none" : a.resume},
                  {"max_steps", std::to_string(a.max_steps)}, {"threads", std::to_string(a.threads)}});
  auto triplets = sd::build_triplets(frames, k, cfg.frame_stride);
  if (triplets.empty()) throw UsageError("--data: too few frames for --stride " +
                                         std::to_string(cfg.frame_stride));
  sd::TrainOptions opt;
  opt.out_dir = a.out;
  opt.resume_path = a.resume;
  opt.max_steps = a.max_steps;
  opt.threads = a.threads;
  opt.progress = &std::cout;
  auto res = sd::run_training(triplets, cfg, opt);
  if (!res.rows.empty()) std::cout << "final " << sd::format_log_row(res.rows.back()) << '\n';
  std::cout << "checkpoint " << (fs::path(a.out) / "model.sdck").string() << '\n';
  return 0;
}

struct InferArgs {
  std::string checkpoint, data, image, out, ref;
  std::optional<double> dmin, dmax;
  std::size_t threads = 1;
};

// frame_000003.png -> ("depth_000003.bin", "sigmoid_000003.bin"); other names keep their stem.
std::pair<std::string, std::string> output_names(const fs::path& input) {
  std::string stem = input.stem().string();
  if (stem.rfind("frame_", 0) == 0) {
    std::string idx = stem.substr(6);
    return {"depth_" + idx + ".bin", "sigmoid_" + idx + ".bin"};
  }
  return {stem + "_depth.bin", stem + "_sigmoid.bin"};
}

std::pair<double, double> reference_range(const sd::DepthMap<float>& ref, const std::string& src) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (std::size_t i = 0; i < ref.values.numel(); ++i) {
    if (!ref.valid[i]) continue;
    lo = std::min(lo, static_cast<double>(ref.values[i]));
    hi = std::max(hi, static_cast<double>(ref.values[i]));
  }
  if (!(lo > 0 && lo < hi)) throw std::runtime_error("reference " + src + " has no depth range");
  return {lo, hi};
}

int cmd_infer(const InferArgs& a) {
  if (a.data.empty() == a.image.empty()) throw UsageError("give exactly one of --data or --image");
  if (!a.data.empty()) require_path(a.data, "--data", true);
  if (!a.image.empty()) require_path(a.image, "--image", false);
  if (a.out.empty()) throw UsageError("--out is required");
  if (!a.ref.empty()) require_path(a.ref, "--ref", true);
  if (a.ref.empty() && !(a.dmin && a.dmax)) {
    throw UsageError("depth conversion needs --dmin and --dmax, or --ref");
  }
  if (a.dmin && a.dmax && !(*a.dmin > 0 && *a.dmin < *a.dmax)) {
    throw UsageError("--dmin/--dmax: need 0 < dmin < dmax");
  }
  auto ck = open_checkpoint(a.checkpoint, "--checkpoint");
  sd::TrainConfig cfg = sd::config_from_checkpoint(ck);
  auto params = ck.get_all<float>("param/");
  std::vector<fs::path> inputs;
  if (!a.image.empty()) {
    inputs.push_back(a.image);
  } else {
    for (std::size_t i = 0; fs::exists(fs::path(a.data) / sd::frame_filename(i)); ++i) {
      inputs.push_back(fs::path(a.data) / sd::frame_filename(i));
    }
    if (inputs.empty()) throw UsageError("--data: no frame_000000.png in " + a.data);
  }
  print_resolved("infer", &cfg,
                 {{"checkpoint", a.checkpoint}, {"inputs", std::to_string(inputs.size())},
                  {"out", a.out}, {"ref", a.ref.empty() ? "none" : a.ref},
                  {"dmin", a.dmin ? std::to_string(*a.dmin) : "reference"},
                  {"dmax", a.dmax ? std::to_string(*a.dmax) : "reference"}});
  fs::create_directories(a.out);
  for (const auto& in : inputs) {
    auto img = sd::read_png<float>(in.string());
    const std::size_t h = img.dim(1), w = img.dim(2);
    sd::Tensor<float> net_in = img;
    if (cfg.width && (cfg.width != w || cfg.height != h)) {
      sd::CameraIntrinsics k{1, 1, 0, 0, w, h}, ko;
      net_in = sd::resample_frames<float>({img}, k, cfg.width, cfg.height, ko)[0];
    }
    auto s = sd::predict_disparity(params, cfg.model, net_in, h, w);
    auto [depth_name, sig_name] = output_names(in);
    double lo = a.dmin.value_or(0), hi = a.dmax.value_or(0);
    if (!a.ref.empty()) {
      fs::path rp = fs::path(a.ref) / depth_name;
      if (!fs::exists(rp)) throw UsageError("--ref: missing reference " + rp.string());
      std::tie(lo, hi) = reference_range(sd::read_depth_bin<float>(rp.string()), rp.string());
    }
    sd::write_depth_bin((fs::path(a.out) / sig_name).string(),
                        sd::DepthMap<float>{s, sd::Mask(h, w, true)});
    sd::write_depth_bin((fs::path(a.out) / depth_name).string(), sd::disparity_to_depth(s, lo, hi));
    std::cout << in.filename().string() << " -> " << depth_name << ", " << sig_name << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string pred, data, out = "eval", align = "median", method = "model";
  std::vector<double> thresholds{1.25, 1.15, 1.05};
  std::optional<double> depth_cap;
};

int cmd_eval(const EvalArgs& a) {
  require_path(a.pred, "--pred", true);
  require_path(a.data, "--data", true);
  sd::EvalConfig ec;
  ec.thresholds = a.thresholds;
  ec.depth_cap = a.depth_cap;
  if (a.align == "none") {
    ec.align = false;
  } else if (a.align == "median" || a.align == "minmax") {
    ec.alignment = sd::parse_align_mode(a.align);
  } else {
    throw UsageError("--align: expected median, minmax or none, got '" + a.align + "'");
  }
  try {
    ec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--threshold/--depth-cap: ") + e.what());
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a.pred)) {
    std::string n = e.path().filename().string();
    if (n.rfind("depth_", 0) == 0 && e.path().extension() == ".bin") names.push_back(n);
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw UsageError("--pred: no depth_*.bin files in " + a.pred);
  std::ostringstream thr;
  for (std::size_t i = 0; i < a.thresholds.size(); ++i) thr << (i ? "," : "") << a.thresholds[i];
  print_resolved("eval", nullptr,
                 {{"pred", a.pred}, {"data", a.data}, {"out", a.out}, {"align", a.align},
                  {"thresholds", thr.str()},
                  {"depth_cap", a.depth_cap ? std::to_string(*a.depth_cap) : "none"},
                  {"method", a.method}, {"frames", std::to_string(names.size())}});
  std::vector<sd::MetricReport> reports;
  std::vector<sd::ReportRow> per_frame;
  for (const auto& n : names) {
    fs::path rp = fs::path(a.data) / n;
    if (!fs::exists(rp)) throw UsageError("--data: missing reference " + rp.string());
    auto ref = sd::read_depth_bin<double>(rp.string());
    sd::MetricReport r;
    if (ec.align && ec.alignment == sd::AlignMode::kMinMax) {
      std::string sig = "sigmoid_" + n.substr(6);
      fs::path sp = fs::path(a.pred) / sig;
      if (!fs::exists(sp)) throw UsageError("--pred: minmax needs " + sp.string());
      sd::EvalConfig raw = ec;
      raw.align = false;  // the range already comes from the reference
      r = sd::evaluate_disparity(sd::read_depth_bin<double>(sp.string()).values, ref, raw, 1, 2);
    } else {
      r = sd::evaluate(sd::read_depth_bin<double>((fs::path(a.pred) / n).string()), ref, ec);
    }
    reports.push_back(r);
    per_frame.emplace_back(n, r);
  }
  auto mean = sd::mean_report(reports);
  std::vector<sd::ReportRow> rows{{a.method, mean}};
  fs::create_directories(a.out);
  std::ofstream(fs::path(a.out) / "report.csv") << sd::report_csv(rows);
  std::ostringstream table;
  table << sd::report_table(rows);
  for (double t : a.thresholds) {
    if (std::find(std::begin(sd::kReportThresholds), std::end(sd::kReportThresholds), t) ==
        std::end(sd::kReportThresholds)) {
      table << "d<" << t << " " << mean.delta_at(t) << '\n';
    }
  }
  std::ofstream(fs::path(a.out) / "report.txt") << table.str();
  std::ofstream(fs::path(a.out) / "per_frame.csv") << sd::report_csv(per_frame);
  std::cout << table.str();
  return 0;
}

struct GradArgs {
  std::size_t size = 8, coords = 2;
  std::string scene = "plane", out;
  std::uint64_t seed = 0;
  double eps = 1e-4, tol = 1e-3;
};

int cmd_gradcheck(const GradArgs& a) {
  if (a.size < 4 || a.size % 4) throw UsageError("--size must be a positive multiple of 4");
  if (!(a.eps > 0) || !(a.tol > 0)) throw UsageError("--eps and --tol must be positive");
  sd::GradSuiteOptions o;
  o.size = a.size;
  o.scene = a.scene;
  o.seed = a.seed;
  o.check.eps = a.eps;
  o.check.rel_tol = a.tol;
  o.loss_coords_per_tensor = a.coords;
  print_resolved("gradcheck", nullptr,
                 {{"size", std::to_string(a.size)}, {"scene", a.scene}, {"seed", std::to_string(a.seed)},
                  {"eps", std::to_string(a.eps)}, {"tol", std::to_string(a.tol)},
                  {"coords", std::to_string(a.coords)}, {"precision", "float64"}});
  auto cases = sd::run_gradient_suite(o);
  std::string text = sd::format_gradient_suite(cases);
  double worst = 0;
  bool ok = true;
  for (const auto& c : cases) {
    worst = std::max(worst, c.report.max_rel_error);
    ok = ok && c.report.passed;
  }
  std::ostringstream tail;
  tail << "max relative discrepancy " << std::scientific << worst << '\n'
       << (ok ? "PASS" : "FAIL") << '\n';
  std::cout << text << tail.str();
  if (!a.out.empty()) std::ofstream(a.out) << text << tail.str();
  return ok ? 0 : 2;
}

struct AblateArgs {
  ConfigFlags flags;
  std::string data, out = "ablation", pretrain_scene = "heightfield";
  std::size_t max_steps = 0, pretrain_steps = 150, threads = 1;
  bool moving_patch = false;
};

int cmd_ablate(const AblateArgs& a) {
  sd::TrainConfig cfg = a.flags.resolve({});
  if (a.threads == 0) throw UsageError("--threads must be >= 1");
  auto ds = open_dataset(a.data, "--data");
  if (ds.depths.empty()) throw UsageError("--data: ablation needs depth_*.bin references");
  print_resolved("ablate", &cfg,
                 {{"data", a.data}, {"out", a.out}, {"max_steps", std::to_string(a.max_steps)},
                  {"pretrain_scene", a.pretrain_scene},
                  {"pretrain_steps", std::to_string(a.pretrain_steps)},
                  {"moving_patch", a.moving_patch ? "true" : "false"},
                  {"threads", std::to_string(a.threads)}});
  fs::create_directories(a.out);
  if (cfg.pretrained_load_path.empty()) {
    std::size_t w = cfg.width ? cfg.width : ds.intrinsics.width;
    std::size_t h = cfg.height ? cfg.height : ds.intrinsics.height;
    std::cout << "pretraining on " << a.pretrain_scene << '\n';
    cfg.pretrained_load_path =
        sd::pretrain_on_preset(cfg, a.pretrain_scene, ds.frames.size(), w, h,
                               sd::derive_seed(cfg.seed, 0xab), a.pretrain_steps,
                               (fs::path(a.out) / "pretrain").string(), a.threads);
  }
  auto grid = sd::default_ablation_grid();
  if (a.moving_patch) {
    grid.push_back({"pretrained, four losses, moving patch",
                    {"reproj", "smooth", "mask", "contrast"}, true, 1.0, true});
  }
  sd::AblationOptions opt;
  opt.max_steps = a.max_steps;
  opt.threads = a.threads;
  opt.progress = &std::cout;
  auto res = sd::run_ablation(ds.frames, ds.depths, ds.intrinsics, cfg, grid, sd::EvalConfig{}, opt);
  auto rows = sd::ablation_rows(res);
  std::string table = sd::report_table(rows), summary = sd::ablation_summary(res);
  std::ofstream(fs::path(a.out) / "ablation.csv") << sd::report_csv(rows);
  std::ofstream(fs::path(a.out) / "ablation.txt") << table << '\n' << summary;
  std::cout << table << '\n' << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised monocular depth from video triplets"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render a synthetic dataset with reference depth");
  s->add_option("--scene", synth.scene, "plane, boxes, heightfield or fronto")->capture_default_str();
  s->add_option("--frames", synth.frames, "Frame count")->capture_default_str();
  s->add_option("--resolution", synth.resolution, "Width x height")->capture_default_str();
  s->add_option("--seed", synth.seed, "Scene seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output dataset directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train depth and pose networks on a frame sequence");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Run directory for checkpoints and logs")->capture_default_str();
  train.flags.add(t, true);
  t->add_option("--resume", train.resume, "Checkpoint to continue from")->default_str("none");
  t->add_option("--max-steps", train.max_steps, "Stop after this many steps (0: all epochs)")
      ->capture_default_str();
  t->add_option("--threads", train.threads, "Samples processed concurrently")->capture_default_str();

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Predict disparity and depth from single frames");
  i->add_option("--checkpoint", infer.checkpoint, "Trained checkpoint")->required();
  i->add_option("--data", infer.data, "Dataset directory (every frame)")->default_str("none");
  i->add_option("--image", infer.image, "Single PNG frame")->default_str("none");
  i->add_option("--out", infer.out, "Output directory")->required();
  i->add_option("--dmin", infer.dmin, "Nearest depth for conversion")->default_str("none");
  i->add_option("--dmax", infer.dmax, "Farthest depth for conversion")->default_str("none");
  i->add_option("--ref", infer.ref, "Reference depth directory giving the range per frame")
      ->default_str("none");
  i->add_option("--threads", infer.threads, "Unused by inference")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predicted depth against reference depth");
  e->add_option("--pred", ev.pred, "Directory written by infer")->required();
  e->add_option("--data", ev.data, "Dataset directory holding reference depth")->required();
  e->add_option("--out", ev.out, "Report directory")->capture_default_str();
  e->add_option("--threshold", ev.thresholds, "Accuracy threshold (repeatable)")
      ->capture_default_str()->take_all();
  e->add_option("--depth-cap", ev.depth_cap, "Ignore reference depth at or beyond this")
      ->default_str("none");
  e->add_option("--align", ev.align, "median, minmax or none")->capture_default_str();
  e->add_option("--method", ev.method, "Row label in the report")->capture_default_str();

  GradArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference checks of every gradient");
  g->add_option("--size", gc.size, "Triplet width and height for the full loss")->capture_default_str();
  g->add_option("--scene", gc.scene, "Synthetic scene for the triplet")->capture_default_str();
  g->add_option("--seed", gc.seed, "Seed for inputs and weights")->capture_default_str();
  g->add_option("--eps", gc.eps, "Central-difference step")->capture_default_str();
  g->add_option("--tol", gc.tol, "Relative tolerance")->capture_default_str();
  g->add_option("--coords", gc.coords, "Coordinates sampled per parameter tensor")
      ->capture_default_str();
  g->add_option("--out", gc.out, "Also write the report here")->default_str("none");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and score the ablation grid");
  b->add_option("--data", ab.data, "Dataset directory with reference depth")->required();
  b->add_option("--out", ab.out, "Output directory")->capture_default_str();
  ab.flags.add(b, true);
  b->add_option("--max-steps", ab.max_steps, "Steps per variant (0: all epochs)")
      ->capture_default_str();
  b->add_option("--pretrain-scene", ab.pretrain_scene, "Scene used to pretrain the encoders")
      ->capture_default_str();
  b->add_option("--pretrain-steps", ab.pretrain_steps, "Pretraining steps")->capture_default_str();
  b->add_flag("--moving-patch", ab.moving_patch, "Add a variant with a camera-fixed patch");
  b->add_option("--threads", ab.threads, "Samples processed concurrently")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (i->parsed()) return cmd_infer(infer);
    if (e->parsed()) return cmd_eval(ev);
    if (g->parsed()) return cmd_gradcheck(gc);
    if (b->parsed()) return cmd_ablate(ab);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& ex) {
    // Config files and option values rejected while setting up.
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "runtime error: " << ex.what() << '\n';
    return 2;
  }
  return 1;
}
