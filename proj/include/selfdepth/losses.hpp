#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdepth/conv.hpp"
#include "selfdepth/geometry.hpp"
#include "selfdepth/ops.hpp"
#include "selfdepth/random.hpp"

namespace selfdepth {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossWeights {
  double lambda1 = 1.0;    // reprojection
  double lambda2 = 0.001;  // smoothness
  double lambda3 = 1.0;    // auto-mask on/off
  double lambda4 = 0.5;    // contrastive
  double alpha = 0.85;
  double margin = 1.0;

  void validate() const {
    if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("alpha must be in [0,1]");
    if (!(margin > 0)) throw std::invalid_argument("contrastive margin must be positive");
    if (lambda3 != 0 && lambda3 != 1) throw std::invalid_argument("lambda3 must be 0 or 1");
    if (!(lambda1 >= 0 && lambda2 >= 0 && lambda4 >= 0)) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
  }

  bool mask_enabled() const { return lambda3 != 0; }
};

/// Per-pixel SSIM of [C,H,W] images over 3x3 windows with reflection padding.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.ndim() != 3) {
    throw ShapeError("ssim: expected two equal [C,H,W] images, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  auto pool = [](const Tensor<T>& x) { return box_filter(pad_reflect(x, 1), 3); };
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  Tensor<T> mu_a = pool(a), mu_b = pool(b);
  Tensor<T> mu_ab = mul(mu_a, mu_b);
  Tensor<T> sigma_a = sub(pool(square(a)), square(mu_a));
  Tensor<T> sigma_b = sub(pool(square(b)), square(mu_b));
  Tensor<T> sigma_ab = sub(pool(mul(a, b)), mu_ab);
  Tensor<T> num = mul(add_scalar(scale(mu_ab, T{2}), c1),
                      add_scalar(scale(sigma_ab, T{2}), c2));
  Tensor<T> den = mul(add_scalar(add(square(mu_a), square(mu_b)), c1),
                      add_scalar(add(sigma_a, sigma_b), c2));
  return div(num, den);
}

/// alpha (1 - SSIM)/2 + (1 - alpha)|a - b|, averaged over channels -> [H,W].
template <typename T>
Tensor<T> reprojection_loss(const Tensor<T>& ref, const Tensor<T>& recon, double alpha) {
  Tensor<T> ssim_term = scale(add_scalar(neg(ssim(ref, recon)), T{1}),
                              static_cast<T>(alpha / 2));
  Tensor<T> l1_term = scale(abs(sub(ref, recon)), static_cast<T>(1 - alpha));
  return reduce_mean(add(ssim_term, l1_term), {0});
}

template <typename T>
Tensor<T> min_reprojection(const std::vector<Tensor<T>>& per_source) {
  if (per_source.empty()) throw std::invalid_argument("min_reprojection: no sources");
  Tensor<T> m = per_source[0];
  for (std::size_t i = 1; i < per_source.size(); ++i) m = elementwise_min(m, per_source[i]);
  return m;
}

/// Auto-mask predicate: 1 where the reconstruction error strictly beats the
/// unwarped-source error. A constant for backward purposes.
template <typename T>
Mask auto_mask(const Tensor<T>& recon_loss, const Tensor<T>& identity_loss) {
  if (recon_loss.shape() != identity_loss.shape() || recon_loss.ndim() != 2) {
    throw ShapeError("auto_mask: expected equal [H,W] maps, got " +
                     shape_str(recon_loss.shape()) + " and " +
                     shape_str(identity_loss.shape()));
  }
  Mask m(recon_loss.dim(0), recon_loss.dim(1), false);
  for (std::size_t i = 0; i < recon_loss.numel(); ++i) {
    m.values[i] = recon_loss[i] < identity_loss[i];
  }
  return m;
}

/// Edge-aware smoothness of mean-normalised disparity [H,W] against image
/// [C,H,W]; sum over directions of the mean weighted forward difference.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& disparity, const Tensor<T>& image) {
  if (disparity.ndim() != 2 || image.ndim() != 3 || image.dim(1) != disparity.dim(0) ||
      image.dim(2) != disparity.dim(1)) {
    throw ShapeError("smoothness_loss: expected disparity [H,W] and image [C,H,W], got " +
                     shape_str(disparity.shape()) + " and " + shape_str(image.shape()));
  }
  Tensor<T> m = mean(disparity);
  if (!(m.item() > 0)) {
    throw std::invalid_argument("smoothness_loss: disparity mean must be positive");
  }
  Tensor<T> dn = div(disparity, m);
  const std::size_t h = disparity.dim(0), w = disparity.dim(1);
  Tensor<T> total = Tensor<T>::scalar(T{0});
  auto direction = [&](std::size_t axis, std::size_t extent) {
    if (extent < 2) return;
    Tensor<T> dd = abs(sub(slice(dn, axis, 1, extent), slice(dn, axis, 0, extent - 1)));
    Tensor<T> di = reduce_mean(
        abs(sub(slice(image, axis + 1, 1, extent), slice(image, axis + 1, 0, extent - 1))),
        {0});
    total = add(total, mean(mul(dd, exp(neg(di.detach())))));
  };
  direction(1, w);
  direction(0, h);
  return total;
}

/// Unit-normalises a [F,...] feature map along F at every location.
template <typename T>
Tensor<T> normalize_features(const Tensor<T>& f) {
  Tensor<T> norm = sqrt(add_scalar(reduce_sum(square(f), {0}, true), static_cast<T>(1e-12)));
  return div(f, norm);
}

struct ContrastivePair {
  int y;  // 1 = matching locations, 0 = mismatched
  std::size_t a, b;
};

/// One positive per location and an equal number of negatives pairing a
/// random location with a different random location.
inline std::vector<ContrastivePair> make_contrastive_pairs(std::size_t locations,
                                                           std::uint64_t seed) {
  std::vector<ContrastivePair> pairs;
  for (std::size_t i = 0; i < locations; ++i) pairs.push_back({1, i, i});
  if (locations < 2) return pairs;
  Rng rng(seed);
  for (std::size_t i = 0; i < locations; ++i) {
    std::size_t a = rng.below(locations);
    std::size_t b = rng.below(locations - 1);
    if (b >= a) ++b;
    pairs.push_back({0, a, b});
  }
  return pairs;
}

/// Per pair y d^2/2 + (1-y) max(0, m-d)^2/2 with d the Euclidean distance
/// between feature columns; mean over pairs. Features are [F,...] with the
/// trailing axes flattened into locations.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& features_ref, const Tensor<T>& features_recon,
                           const std::vector<ContrastivePair>& pairs, double margin) {
  if (pairs.empty()) throw std::invalid_argument("contrastive_loss: empty pair set");
  if (!(margin > 0)) throw std::invalid_argument("contrastive_loss: margin must be positive");
  if (features_ref.shape() != features_recon.shape()) {
    throw ShapeError("contrastive_loss: feature shapes differ: " +
                     shape_str(features_ref.shape()) + " vs " +
                     shape_str(features_recon.shape()));
  }
  std::size_t f = features_ref.dim(0), n = features_ref.numel() / f;
  std::vector<std::size_t> ia, ib;
  std::vector<T> pos, negs;
  for (const auto& p : pairs) {
    ia.push_back(p.a);
    ib.push_back(p.b);
    pos.push_back(p.y == 1 ? T{1} : T{0});
    negs.push_back(p.y == 1 ? T{0} : T{1});
  }
  Tensor<T> ra = gather_columns(reshape(features_ref, {f, n}), ia);
  Tensor<T> rb = gather_columns(reshape(features_recon, {f, n}), ib);
  Tensor<T> sq = reduce_sum(square(sub(ra, rb)), {0});
  Tensor<T> pos_term = mul_constant(sq, pos);
  Tensor<T> hinge = relu(add_scalar(neg(sqrt(sq)), static_cast<T>(margin)));
  Tensor<T> neg_term = mul_constant(square(hinge), negs);
  return scale(sum(add(pos_term, neg_term)), static_cast<T>(0.5 / pairs.size()));
}

// ---------------------------------------------------------------------------

template <typename T>
struct LossTerms {
  Tensor<T> reprojection;  // [H,W] min over sources, invalid pixels penalised
  Tensor<T> identity;      // [H,W] min over unwarped sources (constant)
  Mask valid;              // at least one source reconstructs the pixel
  Tensor<T> smoothness;    // scalar, undefined when disabled
  Tensor<T> contrastive;   // scalar, undefined when disabled
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double reprojection = 0, smoothness = 0, contrastive = 0;
  double mask_fraction = 1;  // share of valid pixels kept by the auto-mask
  std::size_t pixels = 0;    // pixels entering the reprojection mean

  std::string describe() const {
    std::ostringstream os;
    os << "total=" << (total.defined() ? static_cast<double>(total.item()) : 0.0)
       << " reprojection=" << reprojection << " smoothness=" << smoothness
       << " contrastive=" << contrastive << " mask_fraction=" << mask_fraction
       << " pixels=" << pixels;
    return os.str();
  }
};

/// lambda1 * masked reprojection mean + lambda2 * smoothness +
/// lambda4 * contrastive; lambda3 switches the auto-mask.
template <typename T>
LossBreakdown<T> total_loss(const LossTerms<T>& terms, const LossWeights& w) {
  w.validate();
  const Tensor<T>& rp = terms.reprojection;
  Mask am = auto_mask(rp, terms.identity);
  Mask masked = am & terms.valid;
  Mask kept = w.mask_enabled() ? masked : terms.valid;
  LossBreakdown<T> out;
  std::size_t nvalid = terms.valid.count();
  out.mask_fraction = nvalid ? static_cast<double>(masked.count()) / nvalid : 0.0;
  out.pixels = kept.count();
  if (out.pixels == 0) {
    throw std::runtime_error("total_loss: no pixels left for the reprojection term (valid=" +
                             std::to_string(nvalid) +
                             ", mask_fraction=" + std::to_string(out.mask_fraction) + ")");
  }
  Tensor<T> rmean = scale(sum(mul_constant(rp, kept.as_factors<T>())),
                          static_cast<T>(1.0 / out.pixels));
  out.reprojection = static_cast<double>(rmean.item());
  Tensor<T> total = scale(rmean, static_cast<T>(w.lambda1));
  if (w.lambda2 != 0 && terms.smoothness.defined()) {
    out.smoothness = static_cast<double>(terms.smoothness.item());
    total = add(total, scale(terms.smoothness, static_cast<T>(w.lambda2)));
  }
  if (w.lambda4 != 0 && terms.contrastive.defined()) {
    out.contrastive = static_cast<double>(terms.contrastive.item());
    total = add(total, scale(terms.contrastive, static_cast<T>(w.lambda4)));
  }
  out.total = total;
  return out;
}

}  // namespace selfdepth
