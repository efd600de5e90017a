#pragma once

// Minimal reverse-mode differentiation over dense tensors. A Tape records
// values and backward closures in creation order; backward() walks it in
// reverse. The same graph code runs at float (training) and double
// (finite-difference verification).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "t2i/kernels.hpp"
#include "t2i/tensor.hpp"

namespace t2i::ag {

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var)>;

  Var leaf(Shape shape, std::vector<T> value, bool requires_grad) {
    if (shape.numel() != value.size()) {
      throw std::invalid_argument("Tape::leaf: shape " + shape.str() + " does not match " +
                                  std::to_string(value.size()) + " values");
    }
    nodes_.push_back(Node{std::move(shape), std::move(value), {}, requires_grad, {}});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Var constant(Shape shape, std::vector<T> value) {
    return leaf(std::move(shape), std::move(value), false);
  }

  // Records an op result; `fn` is kept only if some input needs a gradient.
  Var push(Shape shape, std::vector<T> value, std::initializer_list<Var> inputs, Backward fn) {
    bool rg = false;
    for (Var v : inputs) rg = rg || node(v).requires_grad;
    nodes_.push_back(Node{std::move(shape), std::move(value), {}, rg, rg ? std::move(fn) : Backward{}});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Var push(Shape shape, std::vector<T> value, const std::vector<Var>& inputs, Backward fn) {
    bool rg = false;
    for (Var v : inputs) rg = rg || node(v).requires_grad;
    nodes_.push_back(Node{std::move(shape), std::move(value), {}, rg, rg ? std::move(fn) : Backward{}});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Shape& shape(Var v) const { return node(v).shape; }
  std::span<const T> value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  T item(Var v) const {
    if (node(v).value.size() != 1) throw std::invalid_argument("Tape::item on non-scalar");
    return node(v).value[0];
  }

  // Gradient buffer; valid after backward(). Empty for nodes without grad.
  std::span<T> grad(Var v) { return node(v).grad; }
  std::span<const T> grad(Var v) const { return node(v).grad; }

  void backward(Var out) {
    if (node(out).value.size() != 1) throw std::invalid_argument("Tape::backward needs a scalar");
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.value.size(), T(0));
    }
    if (!node(out).requires_grad) return;
    node(out).grad[0] = T(1);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, Var{static_cast<std::uint32_t>(i)});
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: invalid variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: invalid variable");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
void require_same_shape(const Tape<T>& tp, Var a, Var b, const char* op) {
  if (!(tp.shape(a) == tp.shape(b))) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + tp.shape(a).str() + " vs " +
                                tp.shape(b).str());
  }
}

template <class T>
void require_rank(const Tape<T>& tp, Var a, int rank, const char* op) {
  if (tp.shape(a).rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + tp.shape(a).str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Var add(Tape<T>& tp, Var a, Var b) {
  detail::require_same_shape(tp, a, b, "add");
  auto va = tp.value(a), vb = tp.value(b);
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return tp.push(tp.shape(a), std::move(out), {a, b}, [a, b](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      auto gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <class T>
Var sub(Tape<T>& tp, Var a, Var b) {
  detail::require_same_shape(tp, a, b, "sub");
  auto va = tp.value(a), vb = tp.value(b);
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return tp.push(tp.shape(a), std::move(out), {a, b}, [a, b](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& tp, Var a, Var b) {
  detail::require_same_shape(tp, a, b, "mul");
  auto va = tp.value(a), vb = tp.value(b);
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return tp.push(tp.shape(a), std::move(out), {a, b}, [a, b](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto va = t.value(a), vb = t.value(b);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

// out = scale * a + offset
template <class T>
Var affine(Tape<T>& tp, Var a, T scale, T offset) {
  auto va = tp.value(a);
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * va[i] + offset;
  return tp.push(tp.shape(a), std::move(out), {a}, [a, scale](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

// Multiplies every element of leading-dimension row r by coef[r].
template <class T>
Var scale_rows(Tape<T>& tp, Var a, std::vector<T> coef) {
  const Shape s = tp.shape(a);
  const std::size_t rows = static_cast<std::size_t>(s[0]);
  if (coef.size() != rows) throw std::invalid_argument("scale_rows: coefficient count mismatch");
  const std::size_t inner = s.numel() / rows;
  auto va = tp.value(a);
  std::vector<T> out(va.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] = coef[r] * va[r * inner + i];
  return tp.push(s, std::move(out), {a}, [a, coef = std::move(coef), inner](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto ga = t.grad(a);
    for (std::size_t r = 0; r < coef.size(); ++r)
      for (std::size_t i = 0; i < inner; ++i) ga[r * inner + i] += coef[r] * g[r * inner + i];
  });
}

template <class T>
Var silu(Tape<T>& tp, Var a) {
  auto va = tp.value(a);
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] / (T(1) + std::exp(-va[i]));
  return tp.push(tp.shape(a), std::move(out), {a}, [a](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto va = t.value(a);
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sg = T(1) / (T(1) + std::exp(-va[i]));
      ga[i] += g[i] * sg * (T(1) + va[i] * (T(1) - sg));
    }
  });
}

// Gradient passes where lo <= a <= hi.
template <class T>
Var clamp(Tape<T>& tp, Var a, T lo, T hi) {
  auto va = tp.value(a);
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] < lo ? lo : (va[i] > hi ? hi : va[i]);
  return tp.push(tp.shape(a), std::move(out), {a}, [a, lo, hi](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto va = t.value(a);
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (va[i] >= lo && va[i] <= hi) ga[i] += g[i];
  });
}

template <class T>
Var reshape(Tape<T>& tp, Var a, Shape shape) {
  if (shape.numel() != tp.shape(a).numel()) throw std::invalid_argument("reshape: size mismatch");
  auto va = tp.value(a);
  return tp.push(std::move(shape), std::vector<T>(va.begin(), va.end()), {a}, [a](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

// x:[N,F], w:[O,F], b:[O] -> [N,O]
template <class T>
Var linear(Tape<T>& tp, Var x, Var w, Var b) {
  detail::require_rank(tp, x, 2, "linear");
  const kernels::LinearGeom g{tp.shape(x)[0], tp.shape(x)[1], tp.shape(w)[0]};
  if (tp.shape(w) != Shape{g.out, g.in} || tp.shape(b) != Shape{g.out}) {
    throw std::invalid_argument("linear: weight " + tp.shape(w).str() + " incompatible with input " +
                                tp.shape(x).str());
  }
  std::vector<T> out(static_cast<std::size_t>(g.rows) * g.out);
  kernels::linear_forward<T>(g, tp.value(x), tp.value(w), tp.value(b), out);
  return tp.push(Shape{g.rows, g.out}, std::move(out), {x, w, b}, [x, w, b, g](Tape<T>& t, Var o) {
    auto dy = t.grad(o);
    if (t.requires_grad(x)) kernels::linear_backward_input<T>(g, dy, t.value(w), t.grad(x));
    if (t.requires_grad(w) || t.requires_grad(b)) {
      std::vector<T> dw, db;
      std::span<T> dws = t.grad(w), dbs = t.grad(b);
      if (!t.requires_grad(w)) { dw.assign(t.value(w).size(), T(0)); dws = dw; }
      if (!t.requires_grad(b)) { db.assign(t.value(b).size(), T(0)); dbs = db; }
      kernels::linear_backward_params<T>(g, dy, t.value(x), dws, dbs);
    }
  });
}

// x:[N,C,H,W], w:[O,C,3,3], b:[O], zero padding 1.
template <class T>
Var conv3x3(Tape<T>& tp, Var x, Var w, Var b, int stride) {
  detail::require_rank(tp, x, 4, "conv3x3");
  const Shape xs = tp.shape(x);
  const kernels::ConvGeom g{xs[0], xs[1], xs[2], xs[3], tp.shape(w)[0], stride};
  if (tp.shape(w) != Shape{g.out_ch, g.in_ch, 3, 3} || tp.shape(b) != Shape{g.out_ch}) {
    throw std::invalid_argument("conv3x3: weight " + tp.shape(w).str() + " incompatible with input " +
                                xs.str());
  }
  std::vector<T> out(g.out_size());
  kernels::conv3x3_forward<T>(g, tp.value(x), tp.value(w), tp.value(b), out);
  return tp.push(Shape{g.batch, g.out_ch, g.out_h(), g.out_w()}, std::move(out), {x, w, b},
                 [x, w, b, g](Tape<T>& t, Var o) {
                   auto dy = t.grad(o);
                   if (t.requires_grad(x)) kernels::conv3x3_backward_input<T>(g, dy, t.value(w), t.grad(x));
                   if (t.requires_grad(w) || t.requires_grad(b)) {
                     std::vector<T> dw, db;
                     std::span<T> dws = t.grad(w), dbs = t.grad(b);
                     if (!t.requires_grad(w)) { dw.assign(t.value(w).size(), T(0)); dws = dw; }
                     if (!t.requires_grad(b)) { db.assign(t.value(b).size(), T(0)); dbs = db; }
                     kernels::conv3x3_backward_params<T>(g, dy, t.value(x), dws, dbs);
                   }
                 });
}

// x:[N,C,H,W] + c:[N,C] broadcast over the spatial plane.
template <class T>
Var add_channel_bias(Tape<T>& tp, Var x, Var c) {
  const Shape xs = tp.shape(x);
  if (xs.rank() != 4 || tp.shape(c) != Shape{xs[0], xs[1]}) {
    throw std::invalid_argument("add_channel_bias: " + tp.shape(c).str() + " vs " + xs.str());
  }
  const std::size_t planes = static_cast<std::size_t>(xs[0]) * xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  auto vx = tp.value(x), vc = tp.value(c);
  std::vector<T> out(vx.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = vx[p * hw + i] + vc[p];
  return tp.push(xs, std::move(out), {x, c}, [x, c, planes, hw](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(c)) {
      auto gc = t.grad(c);
      for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += g[p * hw + i];
        gc[p] += acc;
      }
    }
  });
}

// Concatenates along dimension 1; both inputs share dimension 0 and any
// trailing dimensions.
template <class T>
Var concat_dim1(Tape<T>& tp, Var a, Var b) {
  const Shape as = tp.shape(a);
  const Shape bs = tp.shape(b);
  if (as.rank() != bs.rank() || as.rank() < 2 || as[0] != bs[0]) {
    throw std::invalid_argument("concat_dim1: " + as.str() + " vs " + bs.str());
  }
  std::size_t trail = 1;
  for (int i = 2; i < as.rank(); ++i) {
    if (as[i] != bs[i]) throw std::invalid_argument("concat_dim1: trailing dims differ");
    trail *= static_cast<std::size_t>(as[i]);
  }
  const std::size_t rows = static_cast<std::size_t>(as[0]);
  const std::size_t ra = static_cast<std::size_t>(as[1]) * trail;
  const std::size_t rb = static_cast<std::size_t>(bs[1]) * trail;
  auto va = tp.value(a), vb = tp.value(b);
  std::vector<T> out(rows * (ra + rb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(va.begin() + r * ra, va.begin() + (r + 1) * ra, out.begin() + r * (ra + rb));
    std::copy(vb.begin() + r * rb, vb.begin() + (r + 1) * rb, out.begin() + r * (ra + rb) + ra);
  }
  std::vector<int> dims = as.dims();
  dims[1] = as[1] + bs[1];
  return tp.push(Shape(std::move(dims)), std::move(out), {a, b}, [a, b, rows, ra, rb](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < ra; ++i) ga[r * ra + i] += g[r * (ra + rb) + i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < rb; ++i) gb[r * rb + i] += g[r * (ra + rb) + ra + i];
    }
  });
}

// Flattens each input to [N, numel/N] and concatenates the rows.
template <class T>
Var flatten_concat(Tape<T>& tp, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("flatten_concat: no inputs");
  const int rows = tp.shape(parts[0])[0];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    if (tp.shape(p)[0] != rows) throw std::invalid_argument("flatten_concat: row count mismatch");
    widths.push_back(tp.shape(p).numel() / static_cast<std::size_t>(rows));
    total += widths.back();
  }
  std::vector<T> out(static_cast<std::size_t>(rows) * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = tp.value(parts[k]);
    for (int r = 0; r < rows; ++r)
      std::copy(v.begin() + r * widths[k], v.begin() + (r + 1) * widths[k],
                out.begin() + r * total + off);
    off += widths[k];
  }
  return tp.push(Shape{rows, static_cast<int>(total)}, std::move(out), parts,
                 [parts, widths, rows, total](Tape<T>& t, Var o) {
                   auto g = t.grad(o);
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < parts.size(); ++k) {
                     if (t.requires_grad(parts[k])) {
                       auto gp = t.grad(parts[k]);
                       for (int r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < widths[k]; ++i)
                           gp[r * widths[k] + i] += g[r * total + off + i];
                     }
                     off += widths[k];
                   }
                 });
}

// Mean of table rows over each token sequence. tokens is [N, L] row-major.
template <class T>
Var embedding_mean(Tape<T>& tp, Var table, std::vector<int> tokens, int seq_len) {
  const int vocab = tp.shape(table)[0];
  const int width = tp.shape(table)[1];
  if (seq_len <= 0 || tokens.size() % static_cast<std::size_t>(seq_len) != 0) {
    throw std::invalid_argument("embedding_mean: token count not a multiple of sequence length");
  }
  const int rows = static_cast<int>(tokens.size() / static_cast<std::size_t>(seq_len));
  for (int id : tokens) {
    if (id < 0 || id >= vocab) throw std::out_of_range("embedding_mean: token id " + std::to_string(id) + " out of range");
  }
  auto tv = tp.value(table);
  std::vector<T> out(static_cast<std::size_t>(rows) * width, T(0));
  const T inv = T(1) / static_cast<T>(seq_len);
  for (int r = 0; r < rows; ++r) {
    T* orow = out.data() + static_cast<std::size_t>(r) * width;
    for (int l = 0; l < seq_len; ++l) {
      const T* e = tv.data() + static_cast<std::size_t>(tokens[r * seq_len + l]) * width;
      for (int k = 0; k < width; ++k) orow[k] += e[k];
    }
    for (int k = 0; k < width; ++k) orow[k] *= inv;
  }
  return tp.push(Shape{rows, width}, std::move(out), {table},
                 [table, tokens = std::move(tokens), seq_len, rows, width, inv](Tape<T>& t, Var o) {
                   if (!t.requires_grad(table)) return;
                   auto g = t.grad(o);
                   auto gt = t.grad(table);
                   for (int r = 0; r < rows; ++r)
                     for (int l = 0; l < seq_len; ++l) {
                       T* e = gt.data() + static_cast<std::size_t>(tokens[r * seq_len + l]) * width;
                       for (int k = 0; k < width; ++k) e[k] += inv * g[static_cast<std::size_t>(r) * width + k];
                     }
                 });
}

// ---------------------------------------------------------------------------
// Image ops
// ---------------------------------------------------------------------------

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// [N,3,H,W] -> [N,1,H,W] (Rec. 601 weights); single-channel input passes through.
template <class T>
Var luminance(Tape<T>& tp, Var x) {
  detail::require_rank(tp, x, 4, "luminance");
  const Shape s = tp.shape(x);
  if (s[1] == 1) return x;
  if (s[1] != 3) throw std::invalid_argument("luminance: expected 1 or 3 channels, got " + s.str());
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  const T w[3] = {T(kLumaR), T(kLumaG), T(kLumaB)};
  auto v = tp.value(x);
  std::vector<T> out(static_cast<std::size_t>(s[0]) * hw);
  for (int n = 0; n < s[0]; ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * 3 * hw + i;
      out[n * hw + i] = w[0] * v[base] + w[1] * v[base + hw] + w[2] * v[base + 2 * hw];
    }
  return tp.push(Shape{s[0], 1, s[2], s[3]}, std::move(out), {x}, [x, hw, n = s[0]](Tape<T>& t, Var o) {
    const T w[3] = {T(kLumaR), T(kLumaG), T(kLumaB)};
    auto g = t.grad(o);
    auto gx = t.grad(x);
    for (int b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c) gx[(static_cast<std::size_t>(b) * 3 + c) * hw + i] += w[c] * g[b * hw + i];
  });
}

// Smoothed Sobel magnitude of every plane of x:[N,C,H,W].
template <class T>
Var sobel_magnitude(Tape<T>& tp, Var x, T delta) {
  detail::require_rank(tp, x, 4, "sobel_magnitude");
  const Shape s = tp.shape(x);
  const kernels::SobelGeom g{s[0] * s[1], s[2], s[3]};
  std::vector<T> gx(g.size()), gy(g.size()), mag(g.size());
  kernels::sobel_forward<T>(g, tp.value(x), delta, gx, gy, mag);
  return tp.push(s, std::move(mag), {x},
                 [x, g, delta, gx = std::move(gx), gy = std::move(gy)](Tape<T>& t, Var o) {
                   kernels::sobel_backward<T>(g, gx, gy, t.value(o), delta, t.grad(o), t.grad(x));
                 });
}

// 2x2 average pooling with stride 2 (H and W must be even).
template <class T>
Var avgpool2(Tape<T>& tp, Var x) {
  detail::require_rank(tp, x, 4, "avgpool2");
  const Shape s = tp.shape(x);
  if (s[2] % 2 || s[3] % 2) throw std::invalid_argument("avgpool2: odd spatial size " + s.str());
  const int planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  auto v = tp.value(x);
  std::vector<T> out(static_cast<std::size_t>(planes) * oh * ow);
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const std::size_t i0 = (static_cast<std::size_t>(p) * h + 2 * y) * w + 2 * xx;
        out[(static_cast<std::size_t>(p) * oh + y) * ow + xx] =
            T(0.25) * (v[i0] + v[i0 + 1] + v[i0 + w] + v[i0 + w + 1]);
      }
  return tp.push(Shape{s[0], s[1], oh, ow}, std::move(out), {x}, [x, planes, h, w, oh, ow](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto gx = t.grad(x);
    for (int p = 0; p < planes; ++p)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const T d = T(0.25) * g[(static_cast<std::size_t>(p) * oh + y) * ow + xx];
          const std::size_t i0 = (static_cast<std::size_t>(p) * h + 2 * y) * w + 2 * xx;
          gx[i0] += d;
          gx[i0 + 1] += d;
          gx[i0 + w] += d;
          gx[i0 + w + 1] += d;
        }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses. Accumulation is in double, in index order.
// ---------------------------------------------------------------------------

template <class T>
Var mean(Tape<T>& tp, Var a) {
  auto v = tp.value(a);
  double acc = 0;
  for (T x : v) acc += static_cast<double>(x);
  const std::size_t n = v.size();
  return tp.push(Shape{}, {static_cast<T>(acc / static_cast<double>(n))}, {a}, [a, n](Tape<T>& t, Var o) {
    const T d = t.grad(o)[0] / static_cast<T>(n);
    for (auto& g : t.grad(a)) g += d;
  });
}

// Sum of a elementwise-weighted by constant c; used to scalarize outputs.
template <class T>
Var dot_const(Tape<T>& tp, Var a, std::vector<T> c) {
  auto v = tp.value(a);
  if (c.size() != v.size()) throw std::invalid_argument("dot_const: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(v[i]) * static_cast<double>(c[i]);
  return tp.push(Shape{}, {static_cast<T>(acc)}, {a}, [a, c = std::move(c)](Tape<T>& t, Var o) {
    const T d = t.grad(o)[0];
    auto g = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * c[i];
  });
}

template <class T>
Var mean_abs_diff(Tape<T>& tp, Var a, Var b) {
  detail::require_same_shape(tp, a, b, "mean_abs_diff");
  auto va = tp.value(a), vb = tp.value(b);
  double acc = 0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += std::abs(static_cast<double>(va[i]) - vb[i]);
  const std::size_t n = va.size();
  return tp.push(Shape{}, {static_cast<T>(acc / n)}, {a, b}, [a, b, n](Tape<T>& t, Var o) {
    const T d = t.grad(o)[0] / static_cast<T>(n);
    auto va = t.value(a), vb = t.value(b);
    const bool ga_on = t.requires_grad(a), gb_on = t.requires_grad(b);
    auto ga = t.grad(a);
    auto gb = t.grad(b);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = va[i] - vb[i];
      const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
      if (ga_on) ga[i] += d * sgn;
      if (gb_on) gb[i] -= d * sgn;
    }
  });
}

template <class T>
Var mse(Tape<T>& tp, Var a, Var b) {
  detail::require_same_shape(tp, a, b, "mse");
  auto va = tp.value(a), vb = tp.value(b);
  double acc = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - vb[i];
    acc += d * d;
  }
  const std::size_t n = va.size();
  return tp.push(Shape{}, {static_cast<T>(acc / n)}, {a, b}, [a, b, n](Tape<T>& t, Var o) {
    const T d = T(2) * t.grad(o)[0] / static_cast<T>(n);
    auto va = t.value(a), vb = t.value(b);
    const bool ga_on = t.requires_grad(a), gb_on = t.requires_grad(b);
    auto ga = t.grad(a);
    auto gb = t.grad(b);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = va[i] - vb[i];
      if (ga_on) ga[i] += d * diff;
      if (gb_on) gb[i] -= d * diff;
    }
  });
}

// Guard on vector norms in cosine similarity.
inline constexpr double kCosineEps = 1e-12;

namespace detail {

// Accumulates d(cos(a,b))/da * g into ga (and likewise for b).
template <class T>
void cosine_pair_backward(const T* a, const T* b, int dim, T g, T* ga, T* gb) {
  double dot = 0, na2 = 0, nb2 = 0;
  for (int k = 0; k < dim; ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na2 += static_cast<double>(a[k]) * a[k];
    nb2 += static_cast<double>(b[k]) * b[k];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double da = std::max(na, kCosineEps), db = std::max(nb, kCosineEps);
  const double sim = dot / (da * db);
  const double ca = na > kCosineEps ? sim / (da * da) : 0.0;
  const double cb = nb > kCosineEps ? sim / (db * db) : 0.0;
  const double inv = 1.0 / (da * db);
  for (int k = 0; k < dim; ++k) {
    if (ga) ga[k] += static_cast<T>(g * (b[k] * inv - ca * a[k]));
    if (gb) gb[k] += static_cast<T>(g * (a[k] * inv - cb * b[k]));
  }
}

template <class T>
double cosine_pair(const T* a, const T* b, int dim) {
  double dot = 0, na2 = 0, nb2 = 0;
  for (int k = 0; k < dim; ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na2 += static_cast<double>(a[k]) * a[k];
    nb2 += static_cast<double>(b[k]) * b[k];
  }
  return dot / (std::max(std::sqrt(na2), kCosineEps) * std::max(std::sqrt(nb2), kCosineEps));
}

}  // namespace detail

// Row-wise cosine similarity of a:[N,D] and b:[N,D] -> [N].
template <class T>
Var cosine_rows(Tape<T>& tp, Var a, Var b) {
  detail::require_same_shape(tp, a, b, "cosine_rows");
  detail::require_rank(tp, a, 2, "cosine_rows");
  const int rows = tp.shape(a)[0], dim = tp.shape(a)[1];
  auto va = tp.value(a), vb = tp.value(b);
  std::vector<T> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r)
    out[r] = static_cast<T>(detail::cosine_pair(va.data() + r * dim, vb.data() + r * dim, dim));
  return tp.push(Shape{rows}, std::move(out), {a, b}, [a, b, rows, dim](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto va = t.value(a), vb = t.value(b);
    T* ga = t.requires_grad(a) ? t.grad(a).data() : nullptr;
    T* gb = t.requires_grad(b) ? t.grad(b).data() : nullptr;
    for (int r = 0; r < rows; ++r)
      detail::cosine_pair_backward(va.data() + r * dim, vb.data() + r * dim, dim, g[r],
                                   ga ? ga + r * dim : nullptr, gb ? gb + r * dim : nullptr);
  });
}

// All-pairs cosine similarity of a:[N,D] and b:[M,D] -> [N,M].
template <class T>
Var cosine_matrix(Tape<T>& tp, Var a, Var b) {
  detail::require_rank(tp, a, 2, "cosine_matrix");
  detail::require_rank(tp, b, 2, "cosine_matrix");
  const int n = tp.shape(a)[0], m = tp.shape(b)[0], dim = tp.shape(a)[1];
  if (tp.shape(b)[1] != dim) throw std::invalid_argument("cosine_matrix: dimension mismatch");
  auto va = tp.value(a), vb = tp.value(b);
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out[static_cast<std::size_t>(i) * m + j] =
          static_cast<T>(detail::cosine_pair(va.data() + i * dim, vb.data() + j * dim, dim));
  return tp.push(Shape{n, m}, std::move(out), {a, b}, [a, b, n, m, dim](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto va = t.value(a), vb = t.value(b);
    T* ga = t.requires_grad(a) ? t.grad(a).data() : nullptr;
    T* gb = t.requires_grad(b) ? t.grad(b).data() : nullptr;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        detail::cosine_pair_backward(va.data() + i * dim, vb.data() + j * dim, dim,
                                     g[static_cast<std::size_t>(i) * m + j], ga ? ga + i * dim : nullptr,
                                     gb ? gb + j * dim : nullptr);
  });
}

// Mean over rows of -log softmax(scale * logits[i,:])[target[i]].
template <class T>
Var softmax_xent(Tape<T>& tp, Var logits, std::vector<int> target, T scale) {
  detail::require_rank(tp, logits, 2, "softmax_xent");
  const int rows = tp.shape(logits)[0], cols = tp.shape(logits)[1];
  if (rows == 0) throw std::invalid_argument("softmax_xent: empty batch");
  if (target.size() != static_cast<std::size_t>(rows)) throw std::invalid_argument("softmax_xent: target count");
  auto v = tp.value(logits);
  std::vector<double> probs(static_cast<std::size_t>(rows) * cols);
  double loss = 0;
  for (int r = 0; r < rows; ++r) {
    const T* row = v.data() + static_cast<std::size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c) mx = std::max(mx, static_cast<double>(scale) * row[c]);
    double z = 0;
    for (int c = 0; c < cols; ++c) z += std::exp(static_cast<double>(scale) * row[c] - mx);
    for (int c = 0; c < cols; ++c)
      probs[static_cast<std::size_t>(r) * cols + c] = std::exp(static_cast<double>(scale) * row[c] - mx) / z;
    loss += -(static_cast<double>(scale) * row[target[r]] - mx - std::log(z));
  }
  loss /= rows;
  return tp.push(Shape{}, {static_cast<T>(loss)}, {logits},
                 [logits, target = std::move(target), probs = std::move(probs), rows, cols, scale](Tape<T>& t, Var o) {
                   const double d = static_cast<double>(t.grad(o)[0]) * static_cast<double>(scale) / rows;
                   auto g = t.grad(logits);
                   for (int r = 0; r < rows; ++r)
                     for (int c = 0; c < cols; ++c) {
                       const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                       g[i] += static_cast<T>(d * (probs[i] - (c == target[r] ? 1.0 : 0.0)));
                     }
                 });
}

template <class T>
Var transpose2d(Tape<T>& tp, Var a) {
  detail::require_rank(tp, a, 2, "transpose2d");
  const int n = tp.shape(a)[0], m = tp.shape(a)[1];
  auto v = tp.value(a);
  std::vector<T> out(v.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j) * n + i] = v[static_cast<std::size_t>(i) * m + j];
  return tp.push(Shape{m, n}, std::move(out), {a}, [a, n, m](Tape<T>& t, Var o) {
    auto g = t.grad(o);
    auto ga = t.grad(a);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) ga[static_cast<std::size_t>(i) * m + j] += g[static_cast<std::size_t>(j) * n + i];
  });
}

// sum_k w[k] * scalars[k]
template <class T>
Var weighted_sum(Tape<T>& tp, const std::vector<Var>& scalars, std::vector<T> weights) {
  if (scalars.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  double acc = 0;
  for (std::size_t k = 0; k < scalars.size(); ++k) acc += static_cast<double>(weights[k]) * tp.item(scalars[k]);
  return tp.push(Shape{}, {static_cast<T>(acc)}, scalars, [scalars, weights = std::move(weights)](Tape<T>& t, Var o) {
    const T d = t.grad(o)[0];
    for (std::size_t k = 0; k < scalars.size(); ++k)
      if (t.requires_grad(scalars[k])) t.grad(scalars[k])[0] += weights[k] * d;
  });
}

}  // namespace t2i::ag
