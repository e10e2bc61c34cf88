#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdepth/conv.hpp"
#include "selfdepth/geometry.hpp"
#include "selfdepth/ops.hpp"
#include "selfdepth/random.hpp"

namespace selfdepth {

/// Named weights and biases of every layer. std::map keeps a stable order for
/// checkpoints and optimizer state.
template <typename T>
using ModelParameters = std::map<std::string, Tensor<T>>;

template <typename T>
std::size_t count_parameters(const ModelParameters<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
const Tensor<T>& param(const ModelParameters<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
void set_requires_grad(ModelParameters<T>& params, bool on) {
  for (auto& [name, t] : params) t.set_requires_grad(on);
}

template <typename T>
void zero_grads(ModelParameters<T>& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

template <typename U, typename T>
ModelParameters<U> cast_parameters(const ModelParameters<T>& params) {
  ModelParameters<U> out;
  for (const auto& [name, t] : params) {
    std::vector<U> v(t.data().begin(), t.data().end());
    out.emplace(name, Tensor<U>(t.shape(), std::move(v)));
  }
  return out;
}

namespace detail {

// Fan-in scaled uniform kernel (variance 1/fan_in), zero bias.
template <typename T>
void add_conv_layer(ModelParameters<T>& params, const std::string& name,
                    Shape kernel_shape, Rng& rng) {
  std::size_t fan_in = shape_numel(kernel_shape) / kernel_shape[0];
  double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<T> w(shape_numel(kernel_shape));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  std::size_t out = kernel_shape[0];
  params.insert_or_assign(name + ".w", Tensor<T>(std::move(kernel_shape), std::move(w)));
  params.insert_or_assign(name + ".b", Tensor<T>::zeros({out}));
}

template <typename T>
Tensor<T> apply_conv2d(const ModelParameters<T>& params, const std::string& name,
                       const Tensor<T>& x, std::size_t stride) {
  const Tensor<T>& w = param(params, name + ".w");
  return conv2d(x, w, param(params, name + ".b"), stride, w.dim(2) / 2);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder: 7x7 stride-2 stem with one residual block, then per stage a
// stride-2 residual block (3x3, 3x3, 1x1 projection shortcut).

struct EncoderConfig {
  std::vector<std::size_t> channels{16, 32, 64, 128};
  std::size_t first_kernel = 7;
  std::size_t inner_kernel = 3;
  std::size_t in_channels = 3;
};

template <typename T>
void init_encoder(ModelParameters<T>& params, const std::string& prefix,
                  const EncoderConfig& cfg, Rng& rng) {
  std::size_t cin = cfg.in_channels, k = cfg.inner_kernel;
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    std::size_t c = cfg.channels[s];
    std::string base = prefix + ".s" + std::to_string(s + 1);
    if (s == 0) {
      detail::add_conv_layer(params, base + ".stem",
                             {c, cin, cfg.first_kernel, cfg.first_kernel}, rng);
      detail::add_conv_layer(params, base + ".conv1", {c, c, k, k}, rng);
      detail::add_conv_layer(params, base + ".conv2", {c, c, k, k}, rng);
    } else {
      detail::add_conv_layer(params, base + ".conv1", {c, cin, k, k}, rng);
      detail::add_conv_layer(params, base + ".conv2", {c, c, k, k}, rng);
      detail::add_conv_layer(params, base + ".short", {c, cin, 1, 1}, rng);
    }
    cin = c;
  }
}

/// Per-stage feature maps; stage s (0-based) has resolution H/2^(s+1).
template <typename T>
std::vector<Tensor<T>> encode(const ModelParameters<T>& params,
                              const std::string& prefix, const Tensor<T>& x,
                              const EncoderConfig& cfg) {
  std::vector<Tensor<T>> feats;
  Tensor<T> h = x;
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    std::string base = prefix + ".s" + std::to_string(s + 1);
    if (s == 0) {
      h = elu(detail::apply_conv2d(params, base + ".stem", h, 2));
      Tensor<T> r = elu(detail::apply_conv2d(params, base + ".conv1", h, 1));
      h = elu(add(detail::apply_conv2d(params, base + ".conv2", r, 1), h));
    } else {
      Tensor<T> r = elu(detail::apply_conv2d(params, base + ".conv1", h, 2));
      Tensor<T> sc = detail::apply_conv2d(params, base + ".short", h, 2);
      h = elu(add(detail::apply_conv2d(params, base + ".conv2", r, 1), sc));
    }
    feats.push_back(h);
  }
  return feats;
}

// ---------------------------------------------------------------------------
// Depth network

struct DepthNetConfig {
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::size_t first_kernel = 7;
  std::size_t inner_kernel = 3;
  std::size_t num_stages = 4;
  // One entry per decoder level, deepest (H/2^num_stages) first, full
  // resolution last: num_stages + 1 entries.
  std::vector<std::size_t> decoder_3d_channels{64, 32, 16, 16, 8};
  // Decoder levels (0 = full resolution) that emit a disparity head.
  std::vector<std::size_t> output_scales{0, 1, 2, 3};

  static DepthNetConfig resnet18_widths() {
    DepthNetConfig c;
    c.encoder_channels = {64, 128, 256, 512};
    c.decoder_3d_channels = {256, 128, 64, 32, 16};
    return c;
  }

  EncoderConfig encoder() const {
    return {encoder_channels, first_kernel, inner_kernel, 3};
  }

  void validate() const {
    if (first_kernel != 7 || inner_kernel != 3) {
      throw std::invalid_argument("depth net: first_kernel must be 7 and inner_kernel 3");
    }
    if (num_stages < 2) throw std::invalid_argument("depth net: num_stages must be >= 2");
    if (encoder_channels.size() != num_stages) {
      throw std::invalid_argument("depth net: encoder_channels needs num_stages entries");
    }
    if (decoder_3d_channels.size() != num_stages + 1) {
      throw std::invalid_argument(
          "depth net: decoder_3d_channels needs num_stages + 1 entries");
    }
    if (output_scales.empty()) throw std::invalid_argument("depth net: no output scales");
    for (std::size_t s : output_scales) {
      if (s > num_stages) {
        throw std::invalid_argument("depth net: output scale " + std::to_string(s) +
                                    " exceeds num_stages");
      }
    }
    for (std::size_t c : encoder_channels) {
      if (c == 0) throw std::invalid_argument("depth net: zero channel count");
    }
    for (std::size_t c : decoder_3d_channels) {
      if (c == 0) throw std::invalid_argument("depth net: zero channel count");
    }
  }

  void check_resolution(std::size_t width, std::size_t height) const {
    std::size_t m = std::size_t{1} << num_stages;
    if (width == 0 || height == 0 || width % m != 0 || height % m != 0) {
      throw std::invalid_argument("resolution " + std::to_string(width) + "x" +
                                  std::to_string(height) + " must be divisible by " +
                                  std::to_string(m) + " (2^num_stages)");
    }
  }

  bool has_output(std::size_t level) const {
    for (std::size_t s : output_scales) {
      if (s == level) return true;
    }
    return false;
  }
};

template <typename T>
void init_depth_net(ModelParameters<T>& params, const DepthNetConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderConfig enc = cfg.encoder();
  init_encoder(params, "depth.enc_a", enc, rng);
  init_encoder(params, "depth.enc_b", enc, rng);
  const std::size_t n = cfg.num_stages, k = cfg.inner_kernel;
  std::size_t prev = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    std::size_t level = n - i;
    std::size_t cin;
    if (level == n) {
      cin = cfg.encoder_channels[n - 1];
    } else {
      std::size_t skip = level == 0 ? 3 : cfg.encoder_channels[level - 1];
      cin = prev + skip;
    }
    std::size_t cout = cfg.decoder_3d_channels[i];
    std::string base = "depth.dec.l" + std::to_string(level);
    detail::add_conv_layer(params, base + ".conv", {cout, cin, 2, k, k}, rng);
    if (cfg.has_output(level)) {
      detail::add_conv_layer(params, base + ".head", {1, cout, k, k}, rng);
    }
    prev = cout;
  }
}

template <typename T>
struct DepthOutput {
  Tensor<T> disparity;  // [B,1,H,W] sigmoid output in (0,1)
  // Per configured scale: sigmoid of that level's head at its own resolution.
  std::vector<std::size_t> scales;
  std::vector<Tensor<T>> scale_outputs;
  std::vector<Tensor<T>> features_ref;   // encoder A stages
  std::vector<Tensor<T>> features_next;  // encoder B stages
};

template <typename T>
Tensor<T> upsample_pow2(Tensor<T> x, std::size_t times) {
  for (std::size_t i = 0; i < times; ++i) x = upsample2x(x);
  return x;
}

/// Two encoders (frame_ref through A, frame_next through B), per-level
/// stacking on a temporal axis of extent 2 collapsed by a (2,3,3) 3-D
/// convolution, and full-resolution averaging of pre-sigmoid heads.
template <typename T>
DepthOutput<T> depth_forward(const Tensor<T>& frame_ref, const Tensor<T>& frame_next,
                             const ModelParameters<T>& params,
                             const DepthNetConfig& cfg) {
  if (frame_ref.ndim() != 4 || frame_ref.shape() != frame_next.shape() ||
      frame_ref.dim(1) != 3) {
    throw ShapeError("depth_forward: expected two [B,3,H,W] frames, got " +
                     shape_str(frame_ref.shape()) + " and " +
                     shape_str(frame_next.shape()));
  }
  cfg.check_resolution(frame_ref.dim(3), frame_ref.dim(2));
  EncoderConfig enc = cfg.encoder();
  DepthOutput<T> out;
  out.features_ref = encode(params, "depth.enc_a", frame_ref, enc);
  out.features_next = encode(params, "depth.enc_b", frame_next, enc);
  const std::size_t n = cfg.num_stages, pad = cfg.inner_kernel / 2;

  Tensor<T> x;
  Tensor<T> logit_sum;
  for (std::size_t i = 0; i <= n; ++i) {
    std::size_t level = n - i;
    Tensor<T> vol;
    if (level == n) {
      vol = stack<T>({out.features_ref[n - 1], out.features_next[n - 1]}, 2);
    } else {
      Tensor<T> up = upsample2x(x);
      const Tensor<T>& sa = level == 0 ? frame_ref : out.features_ref[level - 1];
      const Tensor<T>& sb = level == 0 ? frame_next : out.features_next[level - 1];
      vol = stack<T>({concat<T>({up, sa}, 1), concat<T>({up, sb}, 1)}, 2);
    }
    std::string base = "depth.dec.l" + std::to_string(level);
    Tensor<T> y = conv3d(vol, param(params, base + ".conv.w"),
                         param(params, base + ".conv.b"), 1, {0, pad, pad});
    const Shape& ys = y.shape();
    x = elu(reshape(y, {ys[0], ys[1], ys[3], ys[4]}));
    if (cfg.has_output(level)) {
      Tensor<T> logit = detail::apply_conv2d(params, base + ".head", x, 1);
      out.scales.push_back(level);
      out.scale_outputs.push_back(sigmoid(logit));
      Tensor<T> full = upsample_pow2(logit, level);
      logit_sum = logit_sum.defined() ? add(logit_sum, full) : full;
    }
  }
  out.disparity = sigmoid(scale(logit_sum, static_cast<T>(1.0 / out.scales.size())));
  return out;
}

/// Single-image inference: the frame is fed to both encoders.
template <typename T>
Tensor<T> depth_infer(const Tensor<T>& frame, const ModelParameters<T>& params,
                      const DepthNetConfig& cfg) {
  return depth_forward(frame, frame, params, cfg).disparity;
}

// ---------------------------------------------------------------------------
// Pose network

struct PoseNetConfig {
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::size_t first_kernel = 7;
  std::size_t inner_kernel = 3;
  std::size_t num_stages = 4;
  std::size_t decoder_channels = 256;
  std::size_t decoder_layers = 4;
  std::size_t dof = 6;
  double output_scale_factor = 0.01;

  EncoderConfig encoder() const {
    return {encoder_channels, first_kernel, inner_kernel, 3};
  }

  void validate() const {
    if (first_kernel != 7 || inner_kernel != 3) {
      throw std::invalid_argument("pose net: first_kernel must be 7 and inner_kernel 3");
    }
    if (num_stages < 2 || encoder_channels.size() != num_stages) {
      throw std::invalid_argument("pose net: encoder_channels needs num_stages >= 2 entries");
    }
    if (decoder_layers != 4 || decoder_channels == 0) {
      throw std::invalid_argument("pose net: decoder must have 4 layers");
    }
    if (dof != 6) throw std::invalid_argument("pose net: dof must be 6");
    if (!(output_scale_factor > 0)) {
      throw std::invalid_argument("pose net: output_scale_factor must be positive");
    }
  }
};

template <typename T>
void init_pose_net(ModelParameters<T>& params, const PoseNetConfig& cfg, Rng& rng) {
  cfg.validate();
  init_encoder(params, "pose.enc", cfg.encoder(), rng);
  std::size_t cin = 2 * cfg.encoder_channels.back(), k = cfg.inner_kernel;
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    detail::add_conv_layer(params, "pose.dec.conv" + std::to_string(i + 1),
                           {cfg.decoder_channels, cin, k, k}, rng);
    cin = cfg.decoder_channels;
  }
  detail::add_conv_layer(params, "pose.dec.out", {cfg.dof, cin, 1, 1}, rng);
}

/// Deepest pose-encoder features of a [B,3,H,W] frame.
template <typename T>
Tensor<T> pose_features(const Tensor<T>& frame, const ModelParameters<T>& params,
                        const PoseNetConfig& cfg) {
  return encode(params, "pose.enc", frame, cfg.encoder()).back();
}

template <typename T>
struct PoseOutput {
  std::vector<RigidPose<T>> poses;  // per batch element, ref -> src
  Tensor<T> raw;                    // [B,6] before output_scale_factor
};

template <typename T>
PoseOutput<T> pose_from_features(const Tensor<T>& feat_ref, const Tensor<T>& feat_src,
                                 const ModelParameters<T>& params,
                                 const PoseNetConfig& cfg) {
  Tensor<T> h = concat<T>({feat_ref, feat_src}, 1);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    h = relu(detail::apply_conv2d(params, "pose.dec.conv" + std::to_string(i + 1), h, 1));
  }
  h = detail::apply_conv2d(params, "pose.dec.out", h, 1);
  PoseOutput<T> out;
  out.raw = reduce_mean(h, {2, 3});
  Tensor<T> scaled = scale(out.raw, static_cast<T>(cfg.output_scale_factor));
  std::size_t b = scaled.dim(0);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> row = reshape(slice(scaled, 0, i, i + 1), {cfg.dof});
    out.poses.push_back({slice(row, 0, 0, 3), slice(row, 0, 3, 6)});
  }
  return out;
}

template <typename T>
PoseOutput<T> pose_forward(const Tensor<T>& frame_ref, const Tensor<T>& frame_src,
                           const ModelParameters<T>& params, const PoseNetConfig& cfg) {
  if (frame_ref.ndim() != 4 || frame_ref.shape() != frame_src.shape()) {
    throw ShapeError("pose_forward: frames must share a [B,3,H,W] shape, got " +
                     shape_str(frame_ref.shape()) + " and " +
                     shape_str(frame_src.shape()));
  }
  return pose_from_features(pose_features(frame_ref, params, cfg),
                            pose_features(frame_src, params, cfg), params, cfg);
}

// ---------------------------------------------------------------------------

struct ModelConfig {
  DepthNetConfig depth;
  PoseNetConfig pose;

  void validate() const {
    depth.validate();
    pose.validate();
  }

  void check_resolution(std::size_t width, std::size_t height) const {
    depth.check_resolution(width, height);
    DepthNetConfig probe = depth;
    probe.num_stages = pose.num_stages;
    probe.check_resolution(width, height);
  }
};

template <typename T>
ModelParameters<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParameters<T> params;
  Rng depth_rng(derive_seed(seed, 1));
  Rng pose_rng(derive_seed(seed, 2));
  init_depth_net(params, cfg.depth, depth_rng);
  init_pose_net(params, cfg.pose, pose_rng);
  return params;
}

}  // namespace selfdepth
