#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "selfdepth/tensor.hpp"

namespace selfdepth {

namespace detail {

// Index maps from a broadcast output back into each operand.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
  bool same = false;
  bool a_scalar = false;
  bool b_scalar = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b,
                                    const char* op) {
  BroadcastPlan plan;
  std::size_t na = shape_numel(a), nb = shape_numel(b);
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  if (nb == 1) {
    plan.out = a;
    plan.b_scalar = true;
    return plan;
  }
  if (na == 1) {
    plan.out = b;
    plan.a_scalar = true;
    return plan;
  }
  std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                       " with " + shape_str(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : acc_a;
    sb[i] = pb[i] == 1 ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }
  std::size_t n = shape_numel(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    plan.a_index[k] = ia;
    plan.b_index[k] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < plan.out[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

inline std::size_t a_at(const BroadcastPlan& p, std::size_t k) {
  return p.same || p.b_scalar ? k : (p.a_scalar ? 0 : p.a_index[k]);
}
inline std::size_t b_at(const BroadcastPlan& p, std::size_t k) {
  return p.same || p.a_scalar ? k : (p.b_scalar ? 0 : p.b_index[k]);
}

// Generic broadcasting binary op. Partials receive (a, b, out).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                    F f, DA da, DB db) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  std::size_t n = shape_numel(plan.out);
  std::vector<T> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = f(av[a_at(plan, k)], bv[b_at(plan, k)]);
  }
  auto an = a.node(), bn = b.node();
  Shape out_shape = plan.out;
  auto result = Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {an, bn},
      [plan = std::move(plan), da, db](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
          auto& ga = pa.grad_buffer();
          for (std::size_t k = 0; k < g.size(); ++k) {
            std::size_t i = a_at(plan, k), j = b_at(plan, k);
            ga[i] += g[k] * da(pa.value[i], pb.value[j], self.value[k]);
          }
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t k = 0; k < g.size(); ++k) {
            std::size_t i = a_at(plan, k), j = b_at(plan, k);
            gb[j] += g[k] * db(pa.value[i], pb.value[j], self.value[k]);
          }
        }
      });
  return result;
}

// Elementwise unary op; derivative receives (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary_op(const Tensor<T>& x, F f, D d) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t k = 0; k < xv.size(); ++k) out[k] = f(xv[k]);
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x.node()}, [d](Node<T>& self) {
        auto& p = *self.parents[0];
        auto& gp = p.grad_buffer();
        for (std::size_t k = 0; k < gp.size(); ++k) {
          gp[k] += self.grad[k] * d(p.value[k], self.value[k]);
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T) { return T{1}; }, [](T, T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T) { return T{1}; }, [](T, T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "div", [](T x, T y) { return x / y; },
      [](T, T y, T) { return T{1} / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T{-1});
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// |x| with subgradient 0 at the origin.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T{1} : (v < 0 ? T{-1} : T{0}); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

/// sqrt with zero gradient at 0 (instead of +inf).
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > 0 ? T{0.5} / y : T{0}; });
}

enum class Activation { kRelu, kElu, kSigmoid };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation mode) {
  switch (mode) {
    case Activation::kRelu:
      return detail::unary_op(
          x, [](T v) { return v > 0 ? v : T{0}; },
          [](T v, T) { return v > 0 ? T{1} : T{0}; });
    case Activation::kElu:
      return detail::unary_op(
          x, [](T v) { return v > 0 ? v : std::expm1(v); },
          [](T v, T y) { return v > 0 ? T{1} : y + T{1}; });
    case Activation::kSigmoid:
      return detail::unary_op(
          x,
          [](T v) {
            // Split by sign so large |v| never overflows exp.
            if (v >= 0) return T{1} / (T{1} + std::exp(-v));
            T e = std::exp(v);
            return e / (T{1} + e);
          },
          [](T, T y) { return y * (T{1} - y); });
  }
  throw std::invalid_argument("activation: unknown mode");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::kRelu); }
template <typename T>
Tensor<T> elu(const Tensor<T>& x) { return activation(x, Activation::kElu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::kSigmoid);
}

/// Multiplies by a constant mask (no gradient to the mask).
template <typename T>
Tensor<T> mul_constant(const Tensor<T>& x, const std::vector<T>& factors) {
  if (factors.size() != x.numel()) {
    throw ShapeError("mul_constant: " + std::to_string(factors.size()) +
                     " factors for tensor " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[k] * factors[k];
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x.node()}, [factors](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < gp.size(); ++k) {
          gp[k] += self.grad[k] * factors[k];
        }
      });
}

/// Per-element minimum; on exact ties the gradient goes to `a`.
template <typename T>
Tensor<T> elementwise_min(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise_min: shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  std::size_t n = a.numel();
  std::vector<T> out(n);
  std::vector<std::uint8_t> pick_a(n);
  for (std::size_t k = 0; k < n; ++k) {
    pick_a[k] = a[k] <= b[k];
    out[k] = pick_a[k] ? a[k] : b[k];
  }
  return Tensor<T>::make_result(
      a.shape(), std::move(out), {a.node(), b.node()},
      [pick_a = std::move(pick_a)](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          auto& g = pa.grad_buffer();
          for (std::size_t k = 0; k < g.size(); ++k) {
            if (pick_a[k]) g[k] += self.grad[k];
          }
        }
        if (pb.requires_grad) {
          auto& g = pb.grad_buffer();
          for (std::size_t k = 0; k < g.size(); ++k) {
            if (!pick_a[k]) g[k] += self.grad[k];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return Tensor<T>::make_result(
      Shape{1}, {s}, {x.node()}, [](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (auto& g : gp) g += self.grad[0];
      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

namespace detail {

// Splits a shape into (outer, reduced, inner) index spaces for a set of axes.
struct ReducePlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // per input element
  std::size_t group = 1;               // elements per output cell
};

inline ReducePlan plan_reduce(const Shape& shape, std::vector<int> axes,
                              bool keepdim, const char* op) {
  std::size_t rank = shape.size();
  std::vector<bool> reduced(rank, false);
  if (axes.empty()) throw ShapeError(std::string(op) + ": no axes given");
  for (int a : axes) {
    int ax = a < 0 ? a + static_cast<int>(rank) : a;
    if (ax < 0 || ax >= static_cast<int>(rank)) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(a) +
                       " out of range for " + shape_str(shape));
    }
    reduced[ax] = true;
  }
  ReducePlan plan;
  Shape kept(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    kept[d] = reduced[d] ? 1 : shape[d];
    if (reduced[d]) plan.group *= shape[d];
    if (!reduced[d] || keepdim) plan.out_shape.push_back(kept[d]);
  }
  if (plan.out_shape.empty()) plan.out_shape.push_back(1);
  if (plan.group == 0) throw ShapeError(std::string(op) + ": empty reduction");
  std::vector<std::size_t> stride(rank);
  std::size_t acc = 1;
  for (std::size_t d = rank; d-- > 0;) {
    stride[d] = reduced[d] ? 0 : acc;
    acc *= kept[d];
  }
  std::size_t n = shape_numel(shape);
  plan.out_index.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < rank; ++d) o += idx[d] * stride[d];
    plan.out_index[k] = o;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

}  // namespace detail

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::vector<int> axes,
                     bool keepdim = false) {
  auto plan = detail::plan_reduce(x.shape(), std::move(axes), keepdim,
                                  "reduce_sum");
  std::vector<T> out(shape_numel(plan.out_shape), T{0});
  for (std::size_t k = 0; k < x.numel(); ++k) out[plan.out_index[k]] += x[k];
  Shape s = plan.out_shape;
  return Tensor<T>::make_result(
      std::move(s), std::move(out), {x.node()},
      [idx = std::move(plan.out_index)](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < gp.size(); ++k) {
          gp[k] += self.grad[idx[k]];
        }
      });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<int> axes,
                      bool keepdim = false) {
  auto plan = detail::plan_reduce(x.shape(), axes, keepdim, "reduce_mean");
  return scale(reduce_sum(x, std::move(axes), keepdim),
               T{1} / static_cast<T>(plan.group));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  }
  return Tensor<T>::make_result(
      std::move(shape), x.values(), {x.node()}, [](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += self.grad[k];
      });
}

namespace detail {

inline void outer_inner(const Shape& s, std::size_t axis, std::size_t& outer,
                        std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
}

}  // namespace detail

/// Joins tensors along an existing axis.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = inputs[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  }
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: ragged shapes " + shape_str(first) + " and " +
                       shape_str(s) + " along axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer, inner;
  detail::outer_inner(first, axis, outer, inner);
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<typename Tensor<T>::NodePtr> parents;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      std::size_t block = extents[i] * inner;
      const auto& v = inputs[i].values();
      std::copy(v.begin() + o * block, v.begin() + (o + 1) * block,
                out.begin() + (o * total + offset) * inner);
      offset += extents[i];
    }
  }
  for (const auto& t : inputs) parents.push_back(t.node());
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), std::move(parents),
      [extents, outer, inner, total](detail::Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
          auto& p = *self.parents[i];
          std::size_t block = extents[i] * inner;
          if (p.requires_grad) {
            auto& gp = p.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = self.grad.data() + (o * total + offset) * inner;
              T* dst = gp.data() + o * block;
              for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
            }
          }
          offset += extents[i];
        }
      });
}

/// Stacks equally-shaped tensors along a new axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ShapeError("stack: no inputs");
  const Shape& first = inputs[0].shape();
  if (axis > first.size()) {
    throw ShapeError("stack: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  }
  std::vector<Tensor<T>> expanded;
  for (const auto& t : inputs) {
    if (t.shape() != first) {
      throw ShapeError("stack: ragged shapes " + shape_str(first) + " and " +
                       shape_str(t.shape()));
    }
    Shape s = first;
    s.insert(s.begin() + axis, 1);
    expanded.push_back(reshape(t, s));
  }
  return concat(expanded, axis);
}

/// Half-open range [begin, end) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer, inner;
  detail::outer_inner(s, axis, outer, inner);
  std::size_t extent = s[axis], len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto& v = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(v.begin() + (o * extent + begin) * inner,
              v.begin() + (o * extent + end) * inner,
              out.begin() + o * len * inner);
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {x.node()},
      [outer, inner, extent, begin, len](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * len * inner;
          T* dst = gp.data() + (o * extent + begin) * inner;
          for (std::size_t k = 0; k < len * inner; ++k) dst[k] += src[k];
        }
      });
}

/// Selects columns of a [F, N] matrix: out[:, j] = x[:, indices[j]].
template <typename T>
Tensor<T> gather_columns(const Tensor<T>& x,
                         const std::vector<std::size_t>& indices) {
  if (x.ndim() != 2) {
    throw ShapeError("gather_columns: expected [F,N], got " +
                     shape_str(x.shape()));
  }
  std::size_t f = x.dim(0), n = x.dim(1), k = indices.size();
  for (std::size_t i : indices) {
    if (i >= n) throw ShapeError("gather_columns: index out of range");
  }
  std::vector<T> out(f * k);
  for (std::size_t r = 0; r < f; ++r) {
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[r * n + indices[j]];
  }
  return Tensor<T>::make_result(
      Shape{f, k}, std::move(out), {x.node()},
      [indices, f, n, k](detail::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < f; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            gp[r * n + indices[j]] += self.grad[r * k + j];
          }
        }
      });
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace selfdepth
