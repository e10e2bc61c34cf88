#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "selfdepth/tensor.hpp"

namespace selfdepth {

struct GradCheckOptions {
  double eps = 1e-4;
  double rel_tol = 1e-3;
  // Denominator floor for the relative error; keeps gradients that are
  // numerically zero from dividing rounding noise by ~0.
  double abs_floor = 1e-6;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 7;
  // Skip coordinates whose central differences at eps and eps/2 disagree by
  // more than rel_tol: the step straddles a kink (ReLU, |x|, bilinear cell
  // edge, min or mask switch). Fails if more than max_skipped_fraction of
  // the checked coordinates are skipped.
  bool screen_kinks = false;
  double max_skipped_fraction = 0.05;
};

struct GradCheckReport {
  bool passed = false;
  bool finite = true;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  std::string worst;  // "tensor#index analytic=... numeric=..."
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. `f` must rebuild its graph from the current values of
/// `inputs` on every call.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& f,
                           std::vector<Tensor<T>> inputs,
                           const GradCheckOptions& opt = {}) {
  GradCheckReport rep;
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor<T> y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  if (!std::isfinite(static_cast<double>(y.item()))) {
    rep.finite = false;
    rep.worst = "non-finite f at the base point";
    return rep;
  }
  backward(y);
  std::vector<std::vector<T>> analytic;
  for (auto& x : inputs) analytic.push_back(x.grad());

  std::mt19937_64 rng(opt.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<T>& x = inputs[t];
    std::vector<std::size_t> coords;
    std::size_t n = x.numel();
    if (opt.max_coords_per_tensor == 0 || opt.max_coords_per_tensor >= n) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < opt.max_coords_per_tensor; ++i) {
        coords.push_back(static_cast<std::size_t>(rng() % n));
      }
    }
    for (std::size_t i : coords) {
      auto central = [&](double h, bool& finite) {
        auto data = x.mutable_data();
        T orig = data[i];
        data[i] = orig + static_cast<T>(h);
        double fp = static_cast<double>(f().item());
        data[i] = orig - static_cast<T>(h);
        double fm = static_cast<double>(f().item());
        data[i] = orig;
        finite = std::isfinite(fp) && std::isfinite(fm);
        return (fp - fm) / (2.0 * h);
      };
      bool finite = true;
      double numeric = central(opt.eps, finite);
      ++rep.coords_checked;
      if (!finite) {
        rep.finite = false;
        rep.worst = "non-finite f near tensor#" + std::to_string(t) + "[" +
                    std::to_string(i) + "]";
        return rep;
      }
      if (opt.screen_kinks) {
        double finer = central(opt.eps / 2, finite);
        double scale = std::max({std::abs(numeric), std::abs(finer), opt.abs_floor});
        if (!finite || std::abs(numeric - finer) / scale > opt.rel_tol) {
          ++rep.coords_skipped;
          continue;
        }
      }
      double a = static_cast<double>(analytic[t][i]);
      double abs_err = std::abs(a - numeric);
      double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      double rel = abs_err / denom;
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (rel > rep.max_rel_error || rep.worst.empty()) {
        rep.max_rel_error = rel;
        rep.worst = "tensor#" + std::to_string(t) + "[" + std::to_string(i) +
                    "] analytic=" + std::to_string(a) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  if (static_cast<double>(rep.coords_skipped) >
      opt.max_skipped_fraction * static_cast<double>(rep.coords_checked)) {
    rep.worst = std::to_string(rep.coords_skipped) + " of " +
                std::to_string(rep.coords_checked) + " coordinates straddle kinks";
    return rep;
  }
  rep.passed = rep.finite && rep.max_rel_error <= opt.rel_tol;
  return rep;
}

/// Single-input convenience form.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           const Tensor<T>& x, double eps, double rel_tol) {
  GradCheckOptions opt;
  opt.eps = eps;
  opt.rel_tol = rel_tol;
  Tensor<T> leaf = x.clone();
  return grad_check<T>([&] { return f(leaf); }, {leaf}, opt);
}

}  // namespace selfdepth
