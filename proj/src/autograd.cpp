#include "cmlm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "cmlm/rng.hpp"

namespace cmlm {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node node;
  node.op = "variable";
  node.value = std::move(value);
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(std::size_t index, const Tensor<T>& value) {
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var<T>(this, it->second);
  Var<T> v = variable(value);
  nodes_[v.id()].op = "param";
  param_nodes_.emplace(index, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced by op '" + std::string(op) + "'");
  }
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  bool needs = false;
  if (record_) {
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
  }
  node.requires_grad = needs;
  if (needs) node.backward = std::move(fn);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.grad) node.grad.emplace(node.value.shape(), T{0});
  return *node.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  if (root.value().size() != 1) {
    throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));
  }
  if (backward_done_) throw ContractError("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  grad(root.id()).fill(T{1});
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward && node.grad) node.backward(*this, id);
  }
}

template <typename T>
std::optional<std::size_t> Tape<T>::param_node(std::size_t index) const {
  auto it = param_nodes_.find(index);
  if (it == param_nodes_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::param_grads(const ParamStore<T>& store) const {
  std::vector<Tensor<T>> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto node = param_node(i);
    if (node && nodes_[*node].grad) {
      out.push_back(*nodes_[*node].grad);
    } else {
      out.emplace_back(store[i].shape(), T{0});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, Transpose trans_b) {
  require_same_tape(a, b);
  const bool tb = trans_b == Transpose::yes;
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != kb || a.value().rank() > 2 || b.value().rank() > 2) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         (tb ? "transpose of " : "") + shape_str(b.shape()));
  }
  Tensor<T> out(Shape{m, n});
  kernels::gemm(kernels::default_exec(), false, tb, m, n, k, a.value().data().data(), b.value().data().data(),
                out.data().data(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib}, [ia, ib, m, n, k, tb](Tape<T>& tape, std::size_t self) {
    const T* dout = tape.grad(self).data().data();
    const auto exec = kernels::default_exec();
    if (tape.requires_grad(ia)) {
      kernels::gemm(exec, false, !tb, m, k, n, dout, tape.value(ib).data().data(), tape.grad(ia).data().data(),
                    true);
    }
    if (tape.requires_grad(ib)) {
      if (tb) {
        kernels::gemm(exec, true, false, n, k, m, dout, tape.value(ia).data().data(), tape.grad(ib).data().data(),
                      true);
      } else {
        kernels::gemm(exec, true, false, k, n, m, tape.value(ia).data().data(), dout, tape.grad(ib).data().data(),
                      true);
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!tape.requires_grad(in)) continue;
      auto& d = tape.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.requires_grad(ia)) {
      auto& d = tape.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tape.requires_grad(ib)) {
      auto& d = tape.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.requires_grad(ia)) {
      auto& d = tape.grad(ia);
      const auto& other = tape.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
    if (tape.requires_grad(ib)) {
      auto& d = tape.grad(ib);
      const auto& other = tape.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double factor) {
  Tensor<T> out = x.value();
  const T f = static_cast<T>(factor);
  for (auto& v : out.data()) v *= f;
  const std::size_t ix = x.id();
  return x.tape().record("scale", std::move(out), {ix}, [ix, f](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += f * g[i];
  });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::abs(v);
  const std::size_t ix = x.id();
  return x.tape().record("abs", std::move(out), {ix}, [ix](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& xv = tape.value(ix);
    auto& d = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T{0}) d[i] += g[i];
      else if (xv[i] < T{0}) d[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require_same_tape(x, bias);
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  const auto& b = bias.value();
  for (std::size_t r = 0; r < m; ++r) {
    T* row = out.data().data() + r * n;
    for (std::size_t c = 0; c < n; ++c) row[c] += b[c];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record("add_bias", std::move(out), {ix, ib}, [ix, ib, m, n](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.requires_grad(ix)) {
      auto& d = tape.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tape.requires_grad(ib)) {
      auto& d = tape.grad(ib);
      for (std::size_t r = 0; r < m; ++r) {
        const T* row = g.data().data() + r * n;
        for (std::size_t c = 0; c < n; ++c) d[c] += row[c];
      }
    }
  });
}

template <typename T>
Var<T> add_diagonal(const Var<T>& x, double value) {
  const std::size_t n = x.rows();
  if (x.value().rank() != 2 || x.cols() != n) {
    throw DimensionError("add_diagonal: expected square matrix, got " + shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) += static_cast<T>(value);
  const std::size_t ix = x.id();
  return x.tape().record("add_diagonal", std::move(out), {ix}, [ix](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t ix = x.id();
  return x.tape().record("relu", std::move(out), {ix}, [ix](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& xv = tape.value(ix);
    auto& d = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T{0}) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (auto& v : out.data()) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  const std::size_t ix = x.id();
  return x.tape().record("gelu", std::move(out), {ix}, [ix, inv_sqrt2](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& xv = tape.value(ix);
    auto& d = tape.grad(ix);
    const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
      d[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    T* row = out.data().data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T total{0};
    for (std::size_t c = 0; c < n; ++c) {
      row[c] = std::exp(row[c] - mx);
      total += row[c];
    }
    for (std::size_t c = 0; c < n; ++c) row[c] /= total;
  }
  const std::size_t ix = x.id();
  return x.tape().record("softmax_rows", std::move(out), {ix}, [ix, m, n](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto& y = tape.value(self);
    auto& d = tape.grad(ix);
    for (std::size_t r = 0; r < m; ++r) {
      const T* gr = g.data().data() + r * n;
      const T* yr = y.data().data() + r * n;
      T dot{0};
      for (std::size_t c = 0; c < n; ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < n; ++c) d[r * n + c] += yr[c] * (gr[c] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw DimensionError("layer_norm: scale/bias " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
  }
  auto xhat = std::make_shared<std::vector<T>>(m * n);
  auto rstd = std::make_shared<std::vector<T>>(m);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data().data() + r * n;
    T mu{0};
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(n);
    const T rs = T{1} / std::sqrt(var + static_cast<T>(eps));
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (row[c] - mu) * rs;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      "layer_norm", std::move(out), {ix, ig, ib}, [ix, ig, ib, m, n, xhat, rstd](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.grad(self);
        const auto& gv = tape.value(ig);
        if (tape.requires_grad(ig)) {
          auto& d = tape.grad(ig);
          for (std::size_t i = 0; i < m * n; ++i) d[i % n] += g[i] * (*xhat)[i];
        }
        if (tape.requires_grad(ib)) {
          auto& d = tape.grad(ib);
          for (std::size_t i = 0; i < m * n; ++i) d[i % n] += g[i];
        }
        if (tape.requires_grad(ix)) {
          auto& d = tape.grad(ix);
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t r = 0; r < m; ++r) {
            T mean_dh{0}, mean_dh_h{0};
            for (std::size_t c = 0; c < n; ++c) {
              const T dh = g[r * n + c] * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[r * n + c];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t c = 0; c < n; ++c) {
              const T dh = g[r * n + c] * gv[c];
              d[r * n + c] += (*rstd)[r] * (dh - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  if (x.value().rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out(Shape{n, m});
  const auto& xv = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = xv[r * n + c];
  }
  const std::size_t ix = x.id();
  return x.tape().record("transpose", std::move(out), {ix}, [ix, m, n](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(ix);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) d[r * n + c] += g[c * m + r];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record("reshape", std::move(out), {ix}, [ix](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::vector<std::size_t> indices) {
  const std::size_t rows = table.rows(), n = table.cols();
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                           shape_str(table.shape()));
    }
  }
  Tensor<T> out(Shape{indices.size(), n});
  const auto& tv = table.value();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(tv.data().data() + indices[r] * n, n, out.data().data() + r * n);
  }
  const std::size_t it = table.id();
  return table.tape().record("gather_rows", std::move(out), {it},
                             [it, n, idx = std::move(indices)](Tape<T>& tape, std::size_t self) {
                               const auto& g = tape.grad(self);
                               auto& d = tape.grad(it);
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 const T* src = g.data().data() + r * n;
                                 T* dst = d.data().data() + idx[r] * n;
                                 for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
                               }
                             });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  Tensor<T> out(Shape{m, total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = parts[i].value();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(pv.data().data() + r * widths[i], widths[i], out.data().data() + r * total + offset);
    }
    offset += widths[i];
  }
  return parts[0].tape().record("concat_cols", std::move(out), ids,
                                [ids, widths, m, total](Tape<T>& tape, std::size_t self) {
                                  const auto& g = tape.grad(self);
                                  std::size_t off = 0;
                                  for (std::size_t i = 0; i < ids.size(); ++i) {
                                    if (tape.requires_grad(ids[i])) {
                                      auto& d = tape.grad(ids[i]);
                                      for (std::size_t r = 0; r < m; ++r) {
                                        for (std::size_t c = 0; c < widths[i]; ++c) {
                                          d[r * widths[i] + c] += g[r * total + off + c];
                                        }
                                      }
                                    }
                                    off += widths[i];
                                  }
                                });
}

template <typename T>
Var<T> interleave_blocks(const Var<T>& a, std::size_t a_block, const Var<T>& b, std::size_t b_block,
                         std::size_t groups) {
  require_same_tape(a, b);
  const std::size_t n = a.cols();
  if (b.cols() != n || a.rows() != groups * a_block || b.rows() != groups * b_block) {
    throw DimensionError("interleave_blocks: cannot interleave " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " into " + std::to_string(groups) + " groups");
  }
  const std::size_t stride = a_block + b_block;
  Tensor<T> out(Shape{groups * stride, n});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t g = 0; g < groups; ++g) {
    std::copy_n(av.data().data() + g * a_block * n, a_block * n, out.data().data() + g * stride * n);
    std::copy_n(bv.data().data() + g * b_block * n, b_block * n, out.data().data() + (g * stride + a_block) * n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("interleave_blocks", std::move(out), {ia, ib},
                         [ia, ib, a_block, b_block, groups, n, stride](Tape<T>& tape, std::size_t self) {
                           const auto& g = tape.grad(self);
                           if (tape.requires_grad(ia)) {
                             auto& d = tape.grad(ia);
                             for (std::size_t grp = 0; grp < groups; ++grp) {
                               for (std::size_t i = 0; i < a_block * n; ++i) {
                                 d[grp * a_block * n + i] += g[grp * stride * n + i];
                               }
                             }
                           }
                           if (tape.requires_grad(ib)) {
                             auto& d = tape.grad(ib);
                             for (std::size_t grp = 0; grp < groups; ++grp) {
                               for (std::size_t i = 0; i < b_block * n; ++i) {
                                 d[grp * b_block * n + i] += g[(grp * stride + a_block) * n + i];
                               }
                             }
                           }
                         });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  const std::size_t ix = x.id();
  return x.tape().record("sum", Tensor<T>::scalar(total), {ix}, [ix](Tape<T>& tape, std::size_t self) {
    const T g = tape.grad(self).item();
    for (auto& d : tape.grad(ix).data()) d += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

template <typename T>
Var<T> segment_pool(const Var<T>& x, std::size_t groups, std::size_t seg_len, std::span<const std::uint8_t> mask,
                    PoolKind kind) {
  const std::size_t d = x.cols();
  if (x.rows() != groups * seg_len || mask.size() != groups * seg_len) {
    throw DimensionError("segment_pool: " + shape_str(x.shape()) + " is not " + std::to_string(groups) + " x " +
                         std::to_string(seg_len) + " rows with a matching mask");
  }
  Tensor<T> out(Shape{groups, d});
  const auto& xv = x.value();
  // For max pooling: winning source row per (group, dim). For mean: row counts.
  auto winners = std::make_shared<std::vector<std::size_t>>();
  auto counts = std::make_shared<std::vector<std::size_t>>(groups, 0);
  if (kind == PoolKind::max) winners->assign(groups * d, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t valid = 0;
    for (std::size_t t = 0; t < seg_len; ++t) valid += mask[g * seg_len + t] ? 1 : 0;
    (*counts)[g] = valid;
    if (kind != PoolKind::first && valid == 0) {
      throw ContractError("segment_pool: segment " + std::to_string(g) + " has no unmasked positions");
    }
    T* orow = out.data().data() + g * d;
    switch (kind) {
      case PoolKind::first:
        std::copy_n(xv.data().data() + g * seg_len * d, d, orow);
        break;
      case PoolKind::mean: {
        for (std::size_t t = 0; t < seg_len; ++t) {
          if (!mask[g * seg_len + t]) continue;
          const T* row = xv.data().data() + (g * seg_len + t) * d;
          for (std::size_t c = 0; c < d; ++c) orow[c] += row[c];
        }
        const T inv = T{1} / static_cast<T>(valid);
        for (std::size_t c = 0; c < d; ++c) orow[c] *= inv;
        break;
      }
      case PoolKind::max: {
        for (std::size_t c = 0; c < d; ++c) orow[c] = -std::numeric_limits<T>::infinity();
        for (std::size_t t = 0; t < seg_len; ++t) {
          if (!mask[g * seg_len + t]) continue;
          const std::size_t src = g * seg_len + t;
          const T* row = xv.data().data() + src * d;
          for (std::size_t c = 0; c < d; ++c) {
            if (row[c] > orow[c]) {
              orow[c] = row[c];
              (*winners)[g * d + c] = src;
            }
          }
        }
        break;
      }
    }
  }
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  const std::size_t ix = x.id();
  return x.tape().record(
      "segment_pool", std::move(out), {ix},
      [ix, groups, seg_len, d, kind, winners, counts, m = std::move(mask_copy)](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(ix);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          const T* grow = g.data().data() + grp * d;
          switch (kind) {
            case PoolKind::first:
              for (std::size_t c = 0; c < d; ++c) dx[grp * seg_len * d + c] += grow[c];
              break;
            case PoolKind::mean: {
              const T inv = T{1} / static_cast<T>((*counts)[grp]);
              for (std::size_t t = 0; t < seg_len; ++t) {
                if (!m[grp * seg_len + t]) continue;
                T* drow = dx.data().data() + (grp * seg_len + t) * d;
                for (std::size_t c = 0; c < d; ++c) drow[c] += grow[c] * inv;
              }
              break;
            }
            case PoolKind::max:
              for (std::size_t c = 0; c < d; ++c) dx[(*winners)[grp * d + c] * d + c] += grow[c];
              break;
          }
        }
      });
}

template <typename T>
Var<T> self_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const kernels::AttentionShape& shape,
                      std::vector<std::uint8_t> key_mask) {
  require_same_shape("self_attention", q, k);
  require_same_shape("self_attention", q, v);
  if (q.rows() != shape.batch * shape.seq || q.cols() != shape.width() ||
      key_mask.size() != shape.batch * shape.seq) {
    throw DimensionError("self_attention: input " + shape_str(q.shape()) + " does not match batch " +
                         std::to_string(shape.batch) + ", seq " + std::to_string(shape.seq) + ", width " +
                         std::to_string(shape.width()));
  }
  for (std::size_t b = 0; b < shape.batch; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < shape.seq; ++t) any = any || key_mask[b * shape.seq + t];
    if (!any) throw ContractError("self_attention: sequence " + std::to_string(b) + " is fully masked");
  }
  auto probs = std::make_shared<std::vector<T>>(shape.batch * shape.heads * shape.seq * shape.seq);
  Tensor<T> out(q.shape());
  kernels::attention_forward(kernels::default_exec(), shape, q.value().data().data(), k.value().data().data(),
                             v.value().data().data(), key_mask.data(), probs->data(), out.data().data());
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record("self_attention", std::move(out), {iq, ik, iv},
                         [iq, ik, iv, shape, probs](Tape<T>& tape, std::size_t self) {
                           // The kernel writes all three gradients; unused ones land in scratch.
                           std::vector<T> scratch[3];
                           auto target = [&](std::size_t id, std::vector<T>& spare) -> T* {
                             if (tape.requires_grad(id)) return tape.grad(id).data().data();
                             spare.assign(tape.value(id).size(), T{0});
                             return spare.data();
                           };
                           T* dq = target(iq, scratch[0]);
                           T* dk = target(ik, scratch[1]);
                           T* dv = target(iv, scratch[2]);
                           kernels::attention_backward(kernels::default_exec(), shape, tape.value(iq).data().data(),
                                                       tape.value(ik).data().data(), tape.value(iv).data().data(),
                                                       probs->data(), tape.grad(self).data().data(), dq, dk, dv);
                         });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int64_t> labels) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<T>>(m * n);
  const auto& lv = logits.value();
  double total = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " +
                          std::to_string(n) + ")");
    }
    const T* row = lv.data().data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z{0};
    for (std::size_t c = 0; c < n; ++c) {
      (*probs)[r * n + c] = std::exp(row[c] - mx);
      z += (*probs)[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) (*probs)[r * n + c] /= z;
    total += static_cast<double>(std::log(z) + mx - row[labels[r]]);
  }
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.tape().record("cross_entropy", Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(m))),
                              {il}, [il, m, n, probs, lab = std::move(lab)](Tape<T>& tape, std::size_t self) {
                                const T g = tape.grad(self).item() / static_cast<T>(m);
                                auto& d = tape.grad(il);
                                for (std::size_t r = 0; r < m; ++r) {
                                  for (std::size_t c = 0; c < n; ++c) d[r * n + c] += g * (*probs)[r * n + c];
                                  d[r * n + static_cast<std::size_t>(lab[r])] -= g;
                                }
                              });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto keep = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = rng.uniform() < rate ? T{0} : keep_scale;
    out[i] *= (*keep)[i];
  }
  const std::size_t ix = x.id();
  return x.tape().record("dropout", std::move(out), {ix}, [ix, keep](Tape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*keep)[i];
  });
}

template <typename T>
Var<T> kernel(KernelKind kind, const Var<T>& x, const Var<T>* gamma, const Var<T>* beta) {
  switch (kind) {
    case KernelKind::softmax_rows:
      return softmax_rows(x);
    case KernelKind::gelu:
      return gelu(x);
    case KernelKind::relu:
      return relu(x);
    case KernelKind::layer_norm:
      if (!gamma || !beta) throw ContractError("layer_norm kernel needs scale and bias");
      return layer_norm(x, *gamma, *beta);
  }
  throw ContractError("unknown kernel kind");
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<std::size_t> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = x.data().data() + r * n;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + n) - row);
  }
  return out;
}

#define CMLM_INSTANTIATE_OPS(T)                                                                                   \
  template class Tape<T>;                                                                                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&, Transpose);                                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                              \
  template Var<T> scale(const Var<T>&, double);                                                                   \
  template Var<T> abs(const Var<T>&);                                                                             \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> add_diagonal(const Var<T>&, double);                                                            \
  template Var<T> relu(const Var<T>&);                                                                            \
  template Var<T> gelu(const Var<T>&);                                                                            \
  template Var<T> softmax_rows(const Var<T>&);                                                                    \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);                                \
  template Var<T> transpose(const Var<T>&);                                                                       \
  template Var<T> reshape(const Var<T>&, Shape);                                                                  \
  template Var<T> gather_rows(const Var<T>&, std::vector<std::size_t>);                                           \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                                        \
  template Var<T> interleave_blocks(const Var<T>&, std::size_t, const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> sum(const Var<T>&);                                                                             \
  template Var<T> mean(const Var<T>&);                                                                            \
  template Var<T> segment_pool(const Var<T>&, std::size_t, std::size_t, std::span<const std::uint8_t>, PoolKind); \
  template Var<T> self_attention(const Var<T>&, const Var<T>&, const Var<T>&, const kernels::AttentionShape&,     \
                                 std::vector<std::uint8_t>);                                                      \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::int64_t>);                                    \
  template Var<T> dropout(const Var<T>&, double, Rng&);                                                           \
  template Var<T> kernel(KernelKind, const Var<T>&, const Var<T>*, const Var<T>*);                                \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);

CMLM_INSTANTIATE_OPS(float)
CMLM_INSTANTIATE_OPS(double)

#undef CMLM_INSTANTIATE_OPS

}  // namespace cmlm
