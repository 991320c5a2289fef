#include "deiqt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace deiqt {

// ---------------------------------------------------------------- kernels

template <typename T>
void gemm_accumulate(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  // Four output rows per pass so each row of b is loaded once per four updates.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T v = bp[j];
        c0[j] += x0 * v;
        c1[j] += x1 * v;
        c2[j] += x2 * v;
        c3[j] += x3 * v;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

namespace {

// c[k x n] += a^T . g, with a [m x k] and g [m x n].
template <typename T>
void gemm_tn_accumulate(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    const T* __restrict g0 = g + i * n;
    const T* __restrict g1 = g0 + n;
    const T* __restrict g2 = g1 + n;
    const T* __restrict g3 = g2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += x0 * g0[j] + x1 * g1[j] + x2 * g2[j] + x3 * g3[j];
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + i * k;
    const T* __restrict gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      T* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

template <typename T>
void require_rank2(const Var<T>& x, const char* op) {
  if (x.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D operand, got " + shape_str(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
T gelu_value(T x) {
  constexpr T kAlpha = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kCubic = static_cast<T>(0.044715);
  const T u = kAlpha * (x + kCubic * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

// ------------------------------------------------------------------- tape

template <typename T>
Var<T> Tape<T>::push_node(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  value.requires_grad = false;
  value.grad.clear();
  node.value = std::move(value);
  return push_node(std::move(node));
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>(this, it->second);
  Node node;
  node.value.shape = p.shape;
  node.value.data = p.data;
  node.param = &p;
  node.needs_grad = record_ && p.requires_grad;
  Var<T> v = push_node(std::move(node));
  param_ids_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("tape: input recorded on a different tape");
      node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(fn);
  }
  return push_node(std::move(node));
}

template <typename T>
std::vector<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!record_) throw ContractError("backward: tape is not recording");
  grad(loss.id())[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.needs_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      const Tensor<T>& p = *n.param;
      if (p.grad.size() != p.numel()) p.grad.assign(p.numel(), T(0));
      accumulate(p.grad, n.grad);
    }
  }
  clear();
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  param_ids_.clear();
}

// -------------------------------------------------------------------- ops

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " +
                     shape_str(b.shape()));
  }
  a.value().check_finite("matmul lhs");
  b.value().check_finite("matmul rhs");
  Tensor<T> out({m, n});
  gemm_accumulate(m, k, n, a.value().data.data(), b.value().data.data(), out.data.data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    if (t.needs_grad(ia)) {
      const auto bt = transposed(t.value(ib).data.data(), k, n);
      gemm_accumulate(m, n, k, g, bt.data(), t.grad(ia).data());
    }
    if (t.needs_grad(ib)) gemm_tn_accumulate(m, k, n, t.value(ia).data.data(), g, t.grad(ib).data());
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r}, transposed(a.value().data.data(), r, c));
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, r, c](Tape<T>& t, std::size_t self) {
    const auto back = transposed(t.grad(self).data(), c, r);
    accumulate(t.grad(ia), back);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) accumulate(t.grad(ia), g);
    if (t.needs_grad(ib)) accumulate(t.grad(ib), g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) accumulate(t.grad(ia), g);
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      const auto& vb = t.value(ib).data;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      const auto& va = t.value(ia).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, factor](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require_same_tape(x, bias, "add_bias");
  const std::size_t width = x.value().last_dim();
  if (bias.numel() != width) {
    throw ShapeError("add_bias: bias of " + std::to_string(bias.numel()) +
                     " elements for last dimension " + std::to_string(width));
  }
  Tensor<T> out = x.value();
  const auto& b = bias.value().data;
  const std::size_t rows = out.numel() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data.data() + r * width;
    for (std::size_t j = 0; j < width; ++j) o[j] += b[j];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().push(std::move(out), {x, bias}, [ix, ib, rows, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ix)) accumulate(t.grad(ix), g);
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < width; ++j) gb[j] += g[r * width + j];
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().data) total += v;
  const std::size_t ix = x.id();
  return x.tape().push(Tensor<T>({1}, {total}), {x}, [ix](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(ix)) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  if (in.numel() == 0) throw ShapeError("softmax_lastdim: empty input");
  in.check_finite("softmax_lastdim input");
  const std::size_t width = in.last_dim();
  const std::size_t rows = in.numel() / width;
  Tensor<T> out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = in.data.data() + r * width;
    T* yi = out.data.data() + r * width;
    const T peak = *std::max_element(xi, xi + width);
    T total = 0;
    for (std::size_t j = 0; j < width; ++j) {
      yi[j] = std::exp(xi[j] - peak);
      total += yi[j];
    }
    for (std::size_t j = 0; j < width; ++j) yi[j] /= total;
  }
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, rows, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * width;
      T dot = 0;
      for (std::size_t j = 0; j < width; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < width; ++j) gx[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const Tensor<T>& in = x.value();
  const std::size_t width = in.last_dim();
  if (gain.numel() != width || bias.numel() != width) {
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(width) + " elements");
  }
  const std::size_t rows = in.numel() / width;
  auto xhat = std::make_shared<std::vector<T>>(in.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(in.shape);
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = in.data.data() + r * width;
    T mu = 0;
    for (std::size_t j = 0; j < width; ++j) mu += xi[j];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<T>(width);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const T h = (xi[j] - mu) * is;
      (*xhat)[r * width + j] = h;
      out.data[r * width + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().push(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, rows, width, xhat, inv_std](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig).data;
        const auto& h = *xhat;
        if (t.needs_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % width] += g[i] * h[i];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g[i];
        }
        if (t.needs_grad(ix)) {
          auto& gx = t.grad(ix);
          const T inv_w = T(1) / static_cast<T>(width);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * width;
            T mean_d = 0, mean_dh = 0;
            for (std::size_t j = 0; j < width; ++j) {
              const T d = g[o + j] * gv[j];
              mean_d += d;
              mean_dh += d * h[o + j];
            }
            mean_d *= inv_w;
            mean_dh *= inv_w;
            const T is = (*inv_std)[r];
            for (std::size_t j = 0; j < width; ++j) {
              const T d = g[o + j] * gv[j];
              gx[o + j] += is * (d - mean_d - h[o + j] * mean_dh);
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kAlpha = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kCubic = static_cast<T>(0.044715);
  Tensor<T> out = x.value();
  std::vector<T> th(out.numel());
  for (std::size_t i = 0; i < th.size(); ++i) {
    const T v = out.data[i];
    th[i] = std::tanh(kAlpha * (v + kCubic * v * v * v));
    out.data[i] = T(0.5) * v * (T(1) + th[i]);
  }
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, th = std::move(th)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(ix).data;
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = xv[i];
      const T dudx = kAlpha * (T(1) + T(3) * kCubic * v * v);
      gx[i] += g[i] * (T(0.5) * (T(1) + th[i]) + T(0.5) * v * (T(1) - th[i] * th[i]) * dudx);
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (x.shape().empty() || begin >= end || end > x.shape()[0]) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + shape_str(x.shape()));
  }
  const std::size_t row_size = x.numel() / x.shape()[0];
  Shape shape = x.shape();
  shape[0] = end - begin;
  const auto& src = x.value().data;
  Tensor<T> out(shape, std::vector<T>(src.begin() + begin * row_size, src.begin() + end * row_size));
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, begin, row_size](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * row_size + i] += g[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (begin >= end || end > cols) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) out.data[r * w + c] = x.value().data[r * cols + begin + c];
  }
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix, rows, cols, begin, w](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat_rows: scalar input");
  const std::size_t row_size = parts[0].numel() / shape[0];
  std::size_t rows = 0;
  std::vector<T> data;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    if (p.shape().size() != shape.size() || p.numel() / p.shape()[0] != row_size) {
      throw ShapeError("concat_rows: incompatible part " + shape_str(p.shape()) + " with " +
                       shape_str(shape));
    }
    ids.push_back(p.id());
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().data.begin(), p.value().data.end());
    rows += p.shape()[0];
  }
  shape[0] = rows;
  return parts[0].tape().push(Tensor<T>(shape, std::move(data)), parts,
                              [ids, offsets](Tape<T>& t, std::size_t self) {
                                const auto& g = t.grad(self);
                                for (std::size_t k = 0; k < ids.size(); ++k) {
                                  if (!t.needs_grad(ids[k])) continue;
                                  auto& gp = t.grad(ids[k]);
                                  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
                                }
                              });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::vector<std::size_t> ids, widths, starts;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != rows) throw ShapeError("concat_cols: row count mismatch");
    ids.push_back(p.id());
    widths.push_back(p.shape()[1]);
    starts.push_back(cols);
    cols += p.shape()[1];
  }
  Tensor<T> out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().data;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.data.data() + r * cols + starts[k]);
    }
  }
  return parts[0].tape().push(std::move(out), parts,
                              [ids, widths, starts, rows, cols](Tape<T>& t, std::size_t self) {
                                const auto& g = t.grad(self);
                                for (std::size_t k = 0; k < ids.size(); ++k) {
                                  if (!t.needs_grad(ids[k])) continue;
                                  auto& gp = t.grad(ids[k]);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t c = 0; c < widths[k]; ++c) {
                                      gp[r * widths[k] + c] += g[r * cols + starts[k] + c];
                                    }
                                  }
                                }
                              });
}

template <typename T>
Var<T> repeat_rows(const Var<T>& row, std::size_t times) {
  require_rank2(row, "repeat_rows");
  if (row.shape()[0] != 1) throw ShapeError("repeat_rows: expected a single row, got " + shape_str(row.shape()));
  if (times == 0) throw ShapeError("repeat_rows: zero copies");
  const std::size_t w = row.shape()[1];
  Tensor<T> out({times, w});
  for (std::size_t r = 0; r < times; ++r) std::copy_n(row.value().data.data(), w, out.data.data() + r * w);
  const std::size_t ix = row.id();
  return row.tape().push(std::move(out), {row}, [ix, times, w](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < times; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[c] += g[r * w + c];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.value().data);
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), {x}, [ix](Tape<T>& t, std::size_t self) {
    accumulate(t.grad(ix), t.grad(self));
  });
}

#define DEIQT_INSTANTIATE_OPS(T)                                                           \
  template class Tape<T>;                                                                  \
  template void gemm_accumulate<T>(std::size_t, std::size_t, std::size_t, const T*,        \
                                   const T*, T*);                                          \
  template T gelu_value<T>(T);                                                             \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> transpose<T>(const Var<T>&);                                             \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> scale<T>(const Var<T>&, T);                                              \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> sum<T>(const Var<T>&);                                                   \
  template Var<T> mean<T>(const Var<T>&);                                                  \
  template Var<T> softmax_lastdim<T>(const Var<T>&);                                       \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);           \
  template Var<T> gelu<T>(const Var<T>&);                                                  \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                  \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);                  \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                                 \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                                 \
  template Var<T> repeat_rows<T>(const Var<T>&, std::size_t);                              \
  template Var<T> reshape<T>(const Var<T>&, Shape);

DEIQT_INSTANTIATE_OPS(float)
DEIQT_INSTANTIATE_OPS(double)

}  // namespace deiqt
