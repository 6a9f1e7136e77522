#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmlm/kernels.hpp"
#include "cmlm/params.hpp"
#include "cmlm/tensor.hpp"

namespace cmlm {

class Rng;
template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
// node vector is already a topological order; backward() walks it in reverse.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  // With record_gradients = false the tape only evaluates (inference mode).
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);

  // Leaf bound to parameter `index`. Repeated calls return the same node, so
  // every use of a parameter within one step shares a single gradient slot.
  Var<T> param(std::size_t index, const Tensor<T>& value);
  Var<T> param(const ParamStore<T>& store, std::string_view name) { return param(store.index(name), store.get(name)); }

  // Appends an op result. `fn` is dropped when no input needs a gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const std::string& op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].grad.has_value(); }

  // Runs the backward pass from a scalar root. May be called once per tape.
  void backward(const Var<T>& root);

  std::optional<std::size_t> param_node(std::size_t index) const;

  // Gradient for every parameter of `store`; parameters the root does not
  // reach get zeros.
  std::vector<Tensor<T>> param_grads(const ParamStore<T>& store) const;

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Rank-2 inputs are [rows x cols]; anything else is
// interpreted through Tensor::rows()/cols().

enum class Transpose { no, yes };

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, Transpose trans_b = Transpose::no);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, double factor);
template <typename T>
Var<T> abs(const Var<T>& x);
// x[m x n] + bias[n] broadcast over rows.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
// Adds `value` to the main diagonal of a square matrix.
template <typename T>
Var<T> add_diagonal(const Var<T>& x, double value);
template <typename T>
Var<T> relu(const Var<T>& x);
// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x);
template <typename T>
Var<T> softmax_rows(const Var<T>& x);
// Normalizes the last axis, then applies gamma/beta of length cols().
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-12);
template <typename T>
Var<T> transpose(const Var<T>& x);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
// out row r = table row indices[r].
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::vector<std::size_t> indices);
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
// For g in [0, groups): a_block rows of a, then b_block rows of b.
template <typename T>
Var<T> interleave_blocks(const Var<T>& a, std::size_t a_block, const Var<T>& b, std::size_t b_block,
                         std::size_t groups);
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

enum class PoolKind { mean, max, first };

// x is [groups*seg_len x d]; mask has groups*seg_len entries. Reduces each
// segment's unmasked rows. `first` takes row 0 of every segment.
template <typename T>
Var<T> segment_pool(const Var<T>& x, std::size_t groups, std::size_t seg_len, std::span<const std::uint8_t> mask,
                    PoolKind kind);

// Multi-head self attention on precomputed q/k/v projections.
template <typename T>
Var<T> self_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const kernels::AttentionShape& shape,
                      std::vector<std::uint8_t> key_mask);

// Mean cross-entropy of rows of logits against integer labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int64_t> labels);

// Inverted dropout; identity when rate == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng);

enum class KernelKind { softmax_rows, layer_norm, gelu, relu };

// Dispatcher over the pointwise/row kernels. layer_norm requires gamma/beta.
template <typename T>
Var<T> kernel(KernelKind kind, const Var<T>& x, const Var<T>* gamma = nullptr, const Var<T>* beta = nullptr);

// Index of the largest entry of each row (lowest index on ties).
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x);

}  // namespace cmlm
