#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "selfdepth/geometry.hpp"

namespace selfdepth {

/// Pairwise (cascade) summation.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

inline double pairwise_mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean of empty set");
  return pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

struct EvalConfig {
  std::vector<double> thresholds{1.25, 1.15, 1.05};
  std::optional<double> depth_cap;
  AlignMode alignment = AlignMode::kMedian;
  bool align = true;

  void validate() const {
    if (thresholds.empty()) throw std::invalid_argument("eval: no thresholds");
    for (double t : thresholds) {
      if (!(t > 1)) throw std::invalid_argument("eval: thresholds must exceed 1");
    }
    if (depth_cap && !(*depth_cap > 0)) throw std::invalid_argument("eval: depth cap must be positive");
  }
};

struct MetricReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0;
  std::vector<std::pair<double, double>> delta;  // (threshold, fraction)
  std::size_t pixel_count = 0;

  double delta_at(double threshold) const {
    for (const auto& [t, v] : delta) {
      if (t == threshold) return v;
    }
    throw std::out_of_range("no delta for threshold " + std::to_string(threshold));
  }
};

namespace detail {

// (reference d, prediction d') pairs over pixels valid in both maps.
template <typename T>
std::vector<std::pair<double, double>> paired_pixels(const DepthMap<T>& pred,
                                                     const DepthMap<T>& ref) {
  if (pred.values.shape() != ref.values.shape()) {
    throw ShapeError("metrics: shape mismatch " + shape_str(pred.values.shape()) + " vs " +
                     shape_str(ref.values.shape()));
  }
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < ref.values.numel(); ++i) {
    bool pv = pred.valid.values.empty() || pred.valid[i];
    bool rv = ref.valid.values.empty() || ref.valid[i];
    double d = static_cast<double>(ref.values[i]), dp = static_cast<double>(pred.values[i]);
    if (pv && rv && std::isfinite(d) && std::isfinite(dp) && d > 0) out.emplace_back(d, dp);
  }
  if (out.empty()) throw std::invalid_argument("metrics: no overlapping valid pixels");
  return out;
}

template <typename F>
double mean_over(const std::vector<std::pair<double, double>>& px, F f) {
  std::vector<double> terms;
  terms.reserve(px.size());
  for (const auto& [d, dp] : px) terms.push_back(f(d, dp));
  return pairwise_mean(terms);
}

}  // namespace detail

template <typename T>
double abs_rel(const DepthMap<T>& pred, const DepthMap<T>& ref) {
  return detail::mean_over(detail::paired_pixels(pred, ref),
                           [](double d, double dp) { return std::abs(d - dp) / d; });
}

template <typename T>
double sq_rel(const DepthMap<T>& pred, const DepthMap<T>& ref) {
  return detail::mean_over(detail::paired_pixels(pred, ref),
                           [](double d, double dp) { return (d - dp) * (d - dp) / d; });
}

template <typename T>
double rmse(const DepthMap<T>& pred, const DepthMap<T>& ref) {
  return std::sqrt(detail::mean_over(detail::paired_pixels(pred, ref),
                                     [](double d, double dp) { return (d - dp) * (d - dp); }));
}

/// Fraction of pixels with max(d/d', d'/d) < threshold.
template <typename T>
double delta_accuracy(const DepthMap<T>& pred, const DepthMap<T>& ref, double threshold) {
  if (!(threshold > 1)) throw std::invalid_argument("delta threshold must exceed 1");
  return detail::mean_over(detail::paired_pixels(pred, ref), [threshold](double d, double dp) {
    return std::max(d / dp, dp / d) < threshold ? 1.0 : 0.0;
  });
}

template <typename T>
MetricReport compute_metrics(const DepthMap<T>& pred, const DepthMap<T>& ref,
                             const std::vector<double>& thresholds) {
  MetricReport r;
  r.abs_rel = abs_rel(pred, ref);
  r.sq_rel = sq_rel(pred, ref);
  r.rmse = rmse(pred, ref);
  for (double t : thresholds) r.delta.emplace_back(t, delta_accuracy(pred, ref, t));
  r.pixel_count = detail::paired_pixels(pred, ref).size();
  return r;
}

/// Alignment (if enabled), then the depth cap on the reference, then metrics.
template <typename T>
MetricReport evaluate(const DepthMap<T>& pred, const DepthMap<T>& ref, const EvalConfig& cfg) {
  cfg.validate();
  DepthMap<T> p = cfg.align ? scale_to_reference(pred, ref, cfg.alignment) : pred;
  DepthMap<T> r = ref;
  if (r.valid.values.empty()) r.valid = Mask(r.height(), r.width(), true);
  if (cfg.depth_cap) {
    for (std::size_t i = 0; i < r.values.numel(); ++i) {
      if (!(static_cast<double>(r.values[i]) < *cfg.depth_cap)) r.valid.values[i] = 0;
    }
    if ((r.valid & p.valid).count() == 0) {
      throw std::invalid_argument("evaluate: no pixels below the depth cap");
    }
  }
  return compute_metrics(p, r, cfg.thresholds);
}

/// Evaluates a sigmoid disparity output. In minmax mode the disparity range
/// comes from the reference's valid depths; otherwise from (d_min, d_max).
template <typename T>
MetricReport evaluate_disparity(const Tensor<T>& sigmoid_output, const DepthMap<T>& ref,
                                const EvalConfig& cfg, double d_min, double d_max) {
  if (cfg.alignment == AlignMode::kMinMax) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (std::size_t i = 0; i < ref.values.numel(); ++i) {
      if (ref.valid[i]) {
        lo = std::min(lo, static_cast<double>(ref.values[i]));
        hi = std::max(hi, static_cast<double>(ref.values[i]));
      }
    }
    if (!(lo < hi)) throw std::invalid_argument("evaluate: reference has no depth range");
    d_min = lo;
    d_max = hi;
  }
  return evaluate(disparity_to_depth(sigmoid_output, d_min, d_max), ref, cfg);
}

/// Uniform mean of per-image reports.
inline MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
  auto field = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(get(r));
    return pairwise_mean(v);
  };
  MetricReport m;
  m.abs_rel = field([](const MetricReport& r) { return r.abs_rel; });
  m.sq_rel = field([](const MetricReport& r) { return r.sq_rel; });
  m.rmse = field([](const MetricReport& r) { return r.rmse; });
  for (std::size_t k = 0; k < reports[0].delta.size(); ++k) {
    double t = reports[0].delta[k].first;
    m.delta.emplace_back(t, field([&](const MetricReport& r) { return r.delta_at(t); }));
  }
  for (const auto& r : reports) m.pixel_count += r.pixel_count;
  return m;
}

inline constexpr const char* kReportCsvHeader = "method,abs_rel,sq_rel,rmse,d1.25,d1.15,d1.05,pixels";
inline constexpr double kReportThresholds[3] = {1.25, 1.15, 1.05};

namespace detail {
inline double delta_or_nan(const MetricReport& r, double t) {
  for (const auto& [th, v] : r.delta) {
    if (th == t) return v;
  }
  return std::numeric_limits<double>::quiet_NaN();
}
}  // namespace detail

using ReportRow = std::pair<std::string, MetricReport>;

inline std::string report_table(const std::vector<ReportRow>& rows) {
  std::size_t label_w = 6;
  for (const auto& [label, r] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_w)) << "method" << std::right;
  for (const char* c : {"Abs Rel", "Sq Rel", "RMSE", "d<1.25", "d<1.15", "d<1.05"}) {
    os << std::setw(10) << c;
  }
  os << std::setw(9) << "pixels" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& [label, r] : rows) {
    os << std::left << std::setw(static_cast<int>(label_w)) << label << std::right
       << std::setw(10) << r.abs_rel << std::setw(10) << r.sq_rel << std::setw(10) << r.rmse;
    for (double t : kReportThresholds) os << std::setw(10) << detail::delta_or_nan(r, t);
    os << std::setw(9) << r.pixel_count << '\n';
  }
  return os.str();
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << kReportCsvHeader << '\n' << std::setprecision(10);
  for (const auto& [label, r] : rows) {
    os << label << ',' << r.abs_rel << ',' << r.sq_rel << ',' << r.rmse;
    for (double t : kReportThresholds) os << ',' << detail::delta_or_nan(r, t);
    os << ',' << r.pixel_count << '\n';
  }
  return os.str();
}

}  // namespace selfdepth
