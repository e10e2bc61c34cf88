#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "selfdepth/checkpoint.hpp"
#include "selfdepth/evalmetrics.hpp"
#include "selfdepth/geometry.hpp"
#include "selfdepth/image_io.hpp"
#include "selfdepth/losses.hpp"
#include "selfdepth/networks.hpp"
#include "selfdepth/random.hpp"

namespace selfdepth {

template <typename T>
struct FrameTriplet {
  Tensor<T> prev, ref, next;  // [3,H,W]
  CameraIntrinsics intrinsics;
  std::size_t sequence_id = 0;
  std::size_t center_index = 0;
};

/// One triplet per centre t with neighbours t - stride and t + stride.
template <typename T>
std::vector<FrameTriplet<T>> build_triplets(const std::vector<Tensor<T>>& frames,
                                            const CameraIntrinsics& k, std::size_t stride,
                                            std::size_t sequence_id = 0) {
  if (stride == 0) throw std::invalid_argument("build_triplets: stride must be >= 1");
  std::vector<FrameTriplet<T>> out;
  if (frames.size() < 2 * stride + 1) {
    std::cerr << "warning: sequence " << sequence_id << " has " << frames.size()
              << " frames, too short for stride " << stride << "; no triplets\n";
    return out;
  }
  for (std::size_t t = stride; t + stride < frames.size(); ++t) {
    out.push_back({frames[t - stride], frames[t], frames[t + stride], k, sequence_id, t});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

inline const std::vector<std::string>& loss_names() {
  static const std::vector<std::string> names{"reproj", "smooth", "mask", "contrast"};
  return names;
}

inline std::set<std::string> parse_loss_list(const std::string& text) {
  std::set<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    bool known = false;
    for (const auto& n : loss_names()) known = known || n == item;
    if (!known) {
      throw std::invalid_argument("unknown loss '" + item +
                                  "' (expected reproj, smooth, mask, contrast)");
    }
    out.insert(item);
  }
  if (!out.count("reproj")) throw std::invalid_argument("loss list must include reproj");
  return out;
}

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 12;
  double base_lr = 1e-4;
  double late_lr = 1e-5;
  double lr_switch_fraction = 0.75;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t frame_stride = 1;
  std::size_t width = 0, height = 0;  // 0: native data resolution
  LossWeights weights;
  std::set<std::string> enabled_losses{"reproj", "smooth", "mask", "contrast"};
  std::string pretrained_load_path;
  double d_min = 0.1, d_max = 100;
  std::size_t checkpoint_every = 1;  // epochs; 0 keeps only the final one
  ModelConfig model;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lr_switch_fraction > 0 && lr_switch_fraction < 1)) {
      throw std::invalid_argument("lr_switch_fraction must be in (0,1)");
    }
    if (!(base_lr > 0 && late_lr > 0)) throw std::invalid_argument("learning rates must be positive");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 &&
          adam_eps > 0)) {
      throw std::invalid_argument("invalid Adam coefficients");
    }
    if (frame_stride == 0) throw std::invalid_argument("frame_stride must be >= 1");
    if ((width == 0) != (height == 0)) {
      throw std::invalid_argument("width and height must both be set or both be 0");
    }
    if (!(d_min > 0 && d_min < d_max)) throw std::invalid_argument("need 0 < d_min < d_max");
    weights.validate();
    model.validate();
    parse_loss_list([&] {
      std::string s;
      for (const auto& l : enabled_losses) s += l + ",";
      return s;
    }());
  }

  /// Loss weights with disabled terms zeroed.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!enabled_losses.count("smooth")) w.lambda2 = 0;
    if (!enabled_losses.count("mask")) w.lambda3 = 0;
    if (!enabled_losses.count("contrast")) w.lambda4 = 0;
    return w;
  }
};

/// Learning rate for an epoch: base_lr before floor(fraction * epochs).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
  }
  auto switch_epoch = static_cast<std::size_t>(
      std::floor(cfg.lr_switch_fraction * static_cast<double>(cfg.epochs)));
  return epoch < switch_epoch ? cfg.base_lr : cfg.late_lr;
}

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty()) {
      throw std::invalid_argument("config key '" + key + "': expected comma-separated integers, got '" +
                                  s + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename N>
N parse_number(const std::string& s, const std::string& key) {
  std::istringstream is(s);
  N v{};
  if (!(is >> v) || !(is >> std::ws).eof()) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + s + "'");
  }
  return v;
}

// Ordered field table shared by the file parser and the printer.
struct ConfigField {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  using C = TrainConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add_size = [&](const std::string& key, auto getter) {
      f.push_back({key, [getter](const C& c) { return std::to_string(*getter(const_cast<C&>(c))); },
                   [getter, key](C& c, const std::string& v) {
                     *getter(c) = parse_number<std::size_t>(v, key);
                   }});
    };
    auto add_double = [&](const std::string& key, auto getter) {
      f.push_back({key, [getter](const C& c) { return format_double(*getter(const_cast<C&>(c))); },
                   [getter, key](C& c, const std::string& v) {
                     *getter(c) = parse_number<double>(v, key);
                   }});
    };
    auto add_list = [&](const std::string& key, auto getter) {
      f.push_back({key, [getter](const C& c) { return join_sizes(*getter(const_cast<C&>(c))); },
                   [getter, key](C& c, const std::string& v) { *getter(c) = parse_sizes(v, key); }});
    };
    add_size("epochs", [](C& c) { return &c.epochs; });
    add_size("batch_size", [](C& c) { return &c.batch_size; });
    add_double("base_lr", [](C& c) { return &c.base_lr; });
    add_double("late_lr", [](C& c) { return &c.late_lr; });
    add_double("lr_switch_fraction", [](C& c) { return &c.lr_switch_fraction; });
    add_double("adam_beta1", [](C& c) { return &c.adam_beta1; });
    add_double("adam_beta2", [](C& c) { return &c.adam_beta2; });
    add_double("adam_eps", [](C& c) { return &c.adam_eps; });
    f.push_back({"seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v, "seed"); }});
    add_size("frame_stride", [](C& c) { return &c.frame_stride; });
    add_size("width", [](C& c) { return &c.width; });
    add_size("height", [](C& c) { return &c.height; });
    add_double("lambda1", [](C& c) { return &c.weights.lambda1; });
    add_double("lambda2", [](C& c) { return &c.weights.lambda2; });
    add_double("lambda3", [](C& c) { return &c.weights.lambda3; });
    add_double("lambda4", [](C& c) { return &c.weights.lambda4; });
    add_double("alpha", [](C& c) { return &c.weights.alpha; });
    add_double("margin", [](C& c) { return &c.weights.margin; });
    f.push_back({"losses",
                 [](const C& c) {
                   std::string s;
                   for (const auto& n : loss_names()) {
                     if (c.enabled_losses.count(n)) s += (s.empty() ? "" : ",") + n;
                   }
                   return s;
                 },
                 [](C& c, const std::string& v) { c.enabled_losses = parse_loss_list(v); }});
    f.push_back({"pretrained", [](const C& c) { return c.pretrained_load_path; },
                 [](C& c, const std::string& v) { c.pretrained_load_path = v; }});
    add_double("d_min", [](C& c) { return &c.d_min; });
    add_double("d_max", [](C& c) { return &c.d_max; });
    add_size("checkpoint_every", [](C& c) { return &c.checkpoint_every; });
    add_list("encoder_channels", [](C& c) { return &c.model.depth.encoder_channels; });
    add_size("num_stages", [](C& c) { return &c.model.depth.num_stages; });
    add_list("decoder_3d_channels", [](C& c) { return &c.model.depth.decoder_3d_channels; });
    add_list("output_scales", [](C& c) { return &c.model.depth.output_scales; });
    add_list("pose_encoder_channels", [](C& c) { return &c.model.pose.encoder_channels; });
    add_size("pose_num_stages", [](C& c) { return &c.model.pose.num_stages; });
    add_size("pose_decoder_channels", [](C& c) { return &c.model.pose.decoder_channels; });
    add_double("pose_output_scale", [](C& c) { return &c.model.pose.output_scale_factor; });
    return f;
  }();
  return fields;
}

}  // namespace detail

/// key=value lines in a fixed order; parse_config accepts exactly these keys.
inline std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

/// Applies key=value lines ('#' comments, blank lines allowed) onto cfg.
inline void parse_config(const std::string& text, TrainConfig& cfg,
                         const std::string& source = "<config>") {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + t + "'");
    }
    try {
      set_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig cfg = {}) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  parse_config(ss.str(), cfg, path);
  return cfg;
}

// ---------------------------------------------------------------------------
// Data preparation

/// Brings frames to width x height by repeated 2x box downsampling.
template <typename T>
std::vector<Tensor<T>> resample_frames(const std::vector<Tensor<T>>& frames,
                                       const CameraIntrinsics& k, std::size_t width,
                                       std::size_t height, CameraIntrinsics& k_out) {
  k_out = k;
  if (width == 0 || (width == k.width && height == k.height)) return frames;
  std::size_t w = k.width, h = k.height, halvings = 0;
  while (w > width && w % 2 == 0 && h % 2 == 0) {
    w /= 2;
    h /= 2;
    ++halvings;
  }
  if (w != width || h != height) {
    throw std::invalid_argument("resolution " + std::to_string(width) + "x" +
                                std::to_string(height) + " is not a power-of-two reduction of " +
                                std::to_string(k.width) + "x" + std::to_string(k.height));
  }
  std::vector<Tensor<T>> out;
  for (Tensor<T> f : frames) {
    for (std::size_t i = 0; i < halvings; ++i) f = downsample2x(f);
    out.push_back(f);
  }
  k_out = k.resized(width, height);
  return out;
}

// ---------------------------------------------------------------------------
// Loss on one triplet

inline constexpr double kInvalidReprojection = 10.0;

template <typename T>
Tensor<T> batch1(const Tensor<T>& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return reshape(x, s);
}

template <typename T>
Tensor<T> unbatch(const Tensor<T>& x) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return reshape(x, s);
}

template <typename T>
struct TripletForward {
  LossBreakdown<T> loss;
  Tensor<T> disparity_sigmoid;  // [H,W]
  std::vector<RigidPose<T>> poses;  // ref -> prev, ref -> next
};

/// Forward pass and the combined loss for one triplet: depth from
/// (I_T, I_{T+1}), poses to both neighbours, two reconstructions.
template <typename T>
TripletForward<T> triplet_loss(const ModelParameters<T>& params, const ModelConfig& model,
                               const FrameTriplet<T>& tr, const LossWeights& w,
                               double d_min, double d_max, std::uint64_t pair_seed) {
  const std::size_t h = tr.ref.dim(1), wd = tr.ref.dim(2);
  Tensor<T> ref = batch1(tr.ref), next = batch1(tr.next), prev = batch1(tr.prev);
  DepthOutput<T> dout = depth_forward(ref, next, params, model.depth);
  Tensor<T> s = reshape(dout.disparity, {h, wd});
  Tensor<T> disp = sigmoid_to_disparity(s, d_min, d_max);
  DepthMap<T> depth = DepthMap<T>::all_valid(div(Tensor<T>::scalar(T{1}), disp));

  Tensor<T> f_ref = pose_features(ref, params, model.pose);
  Tensor<T> f_prev = pose_features(prev, params, model.pose);
  Tensor<T> f_next = pose_features(next, params, model.pose);
  TripletForward<T> out;
  out.disparity_sigmoid = s;
  out.poses.push_back(pose_from_features(f_ref, f_prev, params, model.pose).poses[0]);
  out.poses.push_back(pose_from_features(f_ref, f_next, params, model.pose).poses[0]);

  const Tensor<T>* sources[2] = {&tr.prev, &tr.next};
  std::vector<Tensor<T>> recon_losses, identity_losses;
  std::vector<Tensor<T>> recons;
  Mask any_valid(h, wd, false);
  for (int i = 0; i < 2; ++i) {
    Reconstruction<T> rec = synthesize_view(*sources[i], depth, out.poses[i], tr.intrinsics);
    recons.push_back(rec.image);
    Tensor<T> l = reprojection_loss(tr.ref, rec.image, w.alpha);
    std::vector<T> keep = rec.valid.template as_factors<T>(), pen(h * wd);
    for (std::size_t p = 0; p < h * wd; ++p) {
      pen[p] = keep[p] ? T{0} : static_cast<T>(kInvalidReprojection);
      any_valid.values[p] = any_valid.values[p] || rec.valid.values[p];
    }
    recon_losses.push_back(add(mul_constant(l, keep), Tensor<T>({h, wd}, pen)));
    identity_losses.push_back(reprojection_loss(tr.ref, *sources[i], w.alpha).detach());
  }
  LossTerms<T> terms;
  terms.reprojection = min_reprojection(recon_losses);
  terms.identity = min_reprojection(identity_losses);
  terms.valid = any_valid;
  if (w.lambda2 != 0) terms.smoothness = smoothness_loss(disp, tr.ref);
  if (w.lambda4 != 0) {
    EncoderConfig enc = model.depth.encoder();
    Tensor<T> fr = normalize_features(unbatch(dout.features_ref.back()));
    auto pairs = make_contrastive_pairs(fr.numel() / fr.dim(0), pair_seed);
    Tensor<T> c;
    for (const Tensor<T>& rec : recons) {
      Tensor<T> fc = normalize_features(unbatch(encode(params, "depth.enc_a", batch1(rec), enc).back()));
      Tensor<T> ci = contrastive_loss(fr, fc, pairs, w.margin);
      c = c.defined() ? add(c, ci) : ci;
    }
    terms.contrastive = scale(c, static_cast<T>(0.5));
  }
  out.loss = total_loss(terms, w);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
struct AdamState {
  ModelParameters<T> m, v;
  std::uint64_t step = 0;
};

template <typename T>
void adam_update(ModelParameters<T>& params, AdamState<T>& st, double lr,
                 const TrainConfig& cfg) {
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1 - std::pow(b2, static_cast<double>(st.step));
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    auto it = st.m.find(name);
    if (it == st.m.end()) {
      st.m.emplace(name, Tensor<T>::zeros(p.shape()));
      st.v.emplace(name, Tensor<T>::zeros(p.shape()));
    }
    auto m = st.m.at(name).mutable_data();
    auto v = st.v.at(name).mutable_data();
    auto x = p.mutable_data();
    const auto& g = p.node()->grad;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = static_cast<T>(b1 * m[i] + (1 - b1) * g[i]);
      v[i] = static_cast<T>(b2 * v[i] + (1 - b2) * g[i] * g[i]);
      double mh = m[i] / c1, vh = v[i] / c2;
      x[i] = static_cast<T>(x[i] - lr * mh / (std::sqrt(vh) + cfg.adam_eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Training

template <typename T>
struct StepStats {
  double total = 0, reprojection = 0, smoothness = 0, contrastive = 0, mask_fraction = 0;
};

/// One optimisation step over a batch: per-sample backward with 1/B scaling
/// in batch order, then an Adam update.
namespace detail {

template <typename T>
struct SampleOutcome {
  ModelParameters<T> grads;
  LossBreakdown<T> loss;
  std::string error;
};

}  // namespace detail

/// One Adam step over the batch. Every sample backpropagates into its own
/// copy of the parameters and the gradients are summed in batch order, so the
/// update does not depend on `threads`.
template <typename T>
StepStats<T> train_step(const std::vector<const FrameTriplet<T>*>& batch,
                        ModelParameters<T>& params, AdamState<T>& adam,
                        const TrainConfig& cfg, double lr, std::uint64_t step_index,
                        std::size_t threads = 1) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (threads == 0) throw std::invalid_argument("train_step: threads must be >= 1");
  LossWeights w = cfg.effective_weights();
  StepStats<T> st;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::map<std::string, std::vector<T>> acc;
  for (const auto& [name, p] : params) acc[name].assign(p.numel(), T{0});

  auto run_sample = [&](std::size_t i, detail::SampleOutcome<T>& out) {
    try {
      ModelParameters<T> local;
      for (const auto& [name, p] : params) {
        local.emplace(name, Tensor<T>(p.shape(), p.values(), true));
      }
      auto fwd = triplet_loss(local, cfg.model, *batch[i], w, cfg.d_min, cfg.d_max,
                              derive_seed(cfg.seed, step_index, i));
      out.loss = fwd.loss;
      if (std::isfinite(static_cast<double>(fwd.loss.total.item()))) {
        backward(scale(fwd.loss.total, static_cast<T>(inv_b)));
      }
      out.grads = std::move(local);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  };

  for (std::size_t begin = 0; begin < batch.size(); begin += threads) {
    std::size_t end = std::min(batch.size(), begin + threads);
    std::vector<detail::SampleOutcome<T>> outcomes(end - begin);
    if (end - begin == 1) {
      run_sample(begin, outcomes[0]);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t i = begin; i < end; ++i) {
        pool.emplace_back(run_sample, i, std::ref(outcomes[i - begin]));
      }
      for (auto& t : pool) t.join();
    }
    for (std::size_t i = begin; i < end; ++i) {
      auto& o = outcomes[i - begin];
      if (!o.error.empty()) throw std::runtime_error(o.error);
      const auto& lb = o.loss;
      double total = static_cast<double>(lb.total.item());
      if (!std::isfinite(total)) {
        throw std::runtime_error("non-finite loss at step " + std::to_string(step_index) +
                                 " (sample " + std::to_string(batch[i]->center_index) +
                                 "): " + lb.describe());
      }
      for (auto& [name, g] : o.grads) {
        if (!g.has_grad()) continue;
        auto& a = acc.at(name);
        const auto& gv = g.node()->grad;
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += gv[j];
      }
      st.total += total * inv_b;
      st.reprojection += lb.reprojection * inv_b;
      st.smoothness += lb.smoothness * inv_b;
      st.contrastive += lb.contrastive * inv_b;
      st.mask_fraction += lb.mask_fraction * inv_b;
    }
  }
  for (auto& [name, p] : params) p.node()->grad = std::move(acc.at(name));
  adam_update(params, adam, lr, cfg);
  zero_grads(params);
  return st;
}

struct LogRow {
  std::size_t epoch = 0, step = 0;
  double lr = 0, total = 0, reprojection = 0, smoothness = 0, contrastive = 0,
         mask_fraction = 0;
};

inline constexpr const char* kTrainLogHeader =
    "epoch\tstep\tlr\ttotal\treprojection\tsmoothness\tcontrastive\tmask_fraction";

inline std::string format_log_row(const LogRow& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.epoch << '\t' << r.step << '\t' << r.lr << '\t' << r.total
     << '\t' << r.reprojection << '\t' << r.smoothness << '\t' << r.contrastive << '\t'
     << r.mask_fraction;
  return os.str();
}

template <typename T>
struct TrainState {
  ModelParameters<T> params;
  AdamState<T> adam;
  std::size_t epoch = 0;       // epochs completed
  std::size_t epoch_step = 0;  // batches already taken from the current epoch
  std::uint64_t step = 0;
};

template <typename T>
Checkpoint make_checkpoint(const TrainState<T>& st, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.meta["config"] = format_config(cfg);
  ck.meta["epoch"] = std::to_string(st.epoch);
  ck.meta["step"] = std::to_string(st.step);
  ck.meta["epoch_step"] = std::to_string(st.epoch_step);
  ck.meta["adam_step"] = std::to_string(st.adam.step);
  ck.put_all("param/", st.params);
  ck.put_all("adam.m/", st.adam.m);
  ck.put_all("adam.v/", st.adam.v);
  return ck;
}

template <typename T>
TrainState<T> state_from_checkpoint(const Checkpoint& ck) {
  TrainState<T> st;
  st.params = ck.get_all<T>("param/");
  st.adam.m = ck.get_all<T>("adam.m/");
  st.adam.v = ck.get_all<T>("adam.v/");
  st.epoch = std::stoull(ck.meta_at("epoch"));
  st.step = std::stoull(ck.meta_at("step"));
  st.epoch_step = std::stoull(ck.meta_at("epoch_step"));
  st.adam.step = std::stoull(ck.meta_at("adam_step"));
  if (st.params.empty()) throw std::runtime_error("checkpoint holds no parameters");
  return st;
}

/// Model config stored in a checkpoint's metadata.
inline TrainConfig config_from_checkpoint(const Checkpoint& ck) {
  TrainConfig cfg;
  parse_config(ck.meta_at("config"), cfg, "checkpoint config");
  return cfg;
}

/// Copies encoder weights (both depth encoders and the pose encoder) from a
/// checkpoint; shapes must match.
template <typename T>
std::size_t load_pretrained_encoders(ModelParameters<T>& params, const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  std::size_t copied = 0;
  for (auto& [name, t] : params) {
    bool encoder = name.rfind("depth.enc_a.", 0) == 0 || name.rfind("depth.enc_b.", 0) == 0 ||
                   name.rfind("pose.enc.", 0) == 0;
    if (!encoder) continue;
    auto it = ck.tensors.find("param/" + name);
    if (it == ck.tensors.end()) {
      throw std::runtime_error("pretrained checkpoint " + path + " lacks '" + name + "'");
    }
    if (it->second.shape != t.shape()) {
      throw std::runtime_error("pretrained '" + name + "' has shape " +
                               shape_str(it->second.shape) + ", model expects " +
                               shape_str(t.shape()));
    }
    t = Tensor<T>(t.shape(), std::vector<T>(it->second.values.begin(), it->second.values.end()));
    ++copied;
  }
  return copied;
}

struct TrainOptions {
  std::string out_dir;          // empty: no files written
  std::string resume_path;      // checkpoint to continue from
  std::size_t max_steps = 0;    // 0: run all epochs
  std::ostream* progress = nullptr;
  std::size_t threads = 1;      // samples processed concurrently
};

template <typename T>
struct TrainResult {
  TrainState<T> state;
  std::vector<LogRow> rows;
};

inline std::string checkpoint_filename(std::size_t epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch_%04zu.sdck", epoch);
  return buf;
}

template <typename T>
TrainResult<T> run_training(const std::vector<FrameTriplet<T>>& data, const TrainConfig& cfg,
                            const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("run_training: no triplets");
  for (const auto& t : data) cfg.model.check_resolution(t.ref.dim(2), t.ref.dim(1));
  namespace fs = std::filesystem;
  TrainResult<T> res;
  TrainState<T>& st = res.state;
  if (!opt.resume_path.empty()) {
    st = state_from_checkpoint<T>(Checkpoint::load(opt.resume_path));
  } else {
    st.params = init_model<T>(cfg.model, cfg.seed);
    if (!cfg.pretrained_load_path.empty()) {
      load_pretrained_encoders(st.params, cfg.pretrained_load_path);
    }
  }
  std::ofstream log, timing;
  fs::path dir(opt.out_dir);
  if (!opt.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + opt.out_dir);
    bool append = !opt.resume_path.empty() && fs::exists(dir / "train_log.tsv");
    auto mode = append ? std::ios::app : std::ios::trunc;
    log.open(dir / "train_log.tsv", std::ios::out | mode);
    timing.open(dir / "timing.tsv", std::ios::out | mode);
    if (!log || !timing) throw std::runtime_error("cannot write logs in " + opt.out_dir);
    if (!append) {
      log << kTrainLogHeader << '\n';
      timing << "epoch\tstep\tseconds\n";
    }
  }
  const std::size_t n = data.size(), b = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + b - 1) / b;
  auto t0 = std::chrono::steady_clock::now();
  auto save = [&](bool epoch_end) {
    if (opt.out_dir.empty()) return;
    Checkpoint ck = make_checkpoint(st, cfg);
    if (epoch_end && cfg.checkpoint_every && st.epoch % cfg.checkpoint_every == 0) {
      ck.save((dir / checkpoint_filename(st.epoch)).string());
    }
    ck.save((dir / "model.sdck").string());
  };
  for (std::size_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(epoch, cfg);
    Rng rng(derive_seed(cfg.seed, 0x5eed, epoch));
    std::vector<std::size_t> order = rng.permutation(n);
    for (std::size_t k = st.epoch_step; k < steps_per_epoch; ++k) {
      std::vector<const FrameTriplet<T>*> batch;
      for (std::size_t j = k * b; j < std::min(n, (k + 1) * b); ++j) batch.push_back(&data[order[j]]);
      StepStats<T> s = train_step(batch, st.params, st.adam, cfg, lr, st.step, opt.threads);
      LogRow row{epoch, st.step, lr, s.total, s.reprojection, s.smoothness, s.contrastive,
                 s.mask_fraction};
      res.rows.push_back(row);
      ++st.step;
      st.epoch_step = k + 1;
      if (log) {
        log << format_log_row(row) << '\n';
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timing << epoch << '\t' << row.step << '\t' << secs << '\n';
      }
      if (opt.progress && (row.step % 50 == 0)) *opt.progress << format_log_row(row) << '\n';
      if (opt.max_steps && st.step >= opt.max_steps && st.epoch_step < steps_per_epoch) {
        save(false);
        return res;
      }
    }
    st.epoch = epoch + 1;
    st.epoch_step = 0;
    save(true);
    if (opt.max_steps && st.step >= opt.max_steps) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation against reference depth

/// Sigmoid output [H,W] for one frame via the duplicated-encoder path,
/// upsampled by powers of two to (out_h, out_w) when they differ.
template <typename T>
Tensor<T> predict_disparity(const ModelParameters<T>& params, const ModelConfig& model,
                            const Tensor<T>& frame, std::size_t out_h = 0,
                            std::size_t out_w = 0) {
  Tensor<T> s = depth_infer(batch1(frame), params, model.depth);
  std::size_t h = s.dim(2), w = s.dim(3);
  if (out_h && out_w && (out_h != h || out_w != w)) {
    if (out_h % h || out_w % w || out_h / h != out_w / w) {
      throw std::invalid_argument("prediction cannot be upsampled to the reference size");
    }
    for (std::size_t f = out_h / h; f > 1; f /= 2) s = upsample2x(s);
    h = out_h;
    w = out_w;
  }
  return reshape(s, {h, w});
}

template <typename T>
MetricReport evaluate_model(const ModelParameters<T>& params, const TrainConfig& cfg,
                            const std::vector<Tensor<T>>& frames,
                            const std::vector<DepthMap<T>>& refs, const EvalConfig& ecfg) {
  if (frames.size() != refs.size() || frames.empty()) {
    throw std::invalid_argument("evaluate_model: need one reference per frame");
  }
  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Tensor<T> s = predict_disparity(params, cfg.model, frames[i], refs[i].height(), refs[i].width());
    Tensor<double> sd(s.shape(), std::vector<double>(s.data().begin(), s.data().end()));
    DepthMap<double> ref{Tensor<double>(refs[i].values.shape(),
                                        std::vector<double>(refs[i].values.data().begin(),
                                                            refs[i].values.data().end())),
                         refs[i].valid};
    reports.push_back(evaluate_disparity(sd, ref, ecfg, cfg.d_min, cfg.d_max));
  }
  return mean_report(reports);
}

// ---------------------------------------------------------------------------

/// Pastes a textured square at the same image position into every frame of
/// each triplet, like an object moving with the camera.
template <typename T>
void inject_moving_patch(std::vector<FrameTriplet<T>>& triplets, std::size_t x0, std::size_t y0,
                         std::size_t size, std::uint64_t seed) {
  for (auto& tr : triplets) {
    const std::size_t h = tr.ref.dim(1), w = tr.ref.dim(2);
    if (x0 + size > w || y0 + size > h) throw std::invalid_argument("patch outside the image");
    Rng rng(derive_seed(seed, tr.center_index));
    std::vector<T> patch(3 * size * size);
    for (auto& p : patch) p = static_cast<T>(rng.uniform(0.1, 0.9));
    for (Tensor<T>* img : {&tr.prev, &tr.ref, &tr.next}) {
      std::vector<T> v = img->values();
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            v[(c * h + y0 + y) * w + x0 + x] = patch[(c * size + y) * size + x];
          }
        }
      }
      *img = Tensor<T>(img->shape(), std::move(v));
    }
  }
}

}  // namespace selfdepth
