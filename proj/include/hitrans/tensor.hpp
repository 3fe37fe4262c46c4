#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every op whose inputs require
// gradients records its inputs and a local backward rule on the result node, so
// the graph reachable from a loss *is* the differentiation record. DiffRecord
// linearises that graph into topological order for replay.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hitrans {

using Real = double;
using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first touched by backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  std::vector<Real>& ensure_grad();
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  // Direct write access for initialisers and optimisers; bypasses the graph.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t i) const;
  Real at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  // A graph-free copy of the values.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
  std::shared_ptr<detail::Node> node_;
};

// While alive on a thread, ops on that thread record no graph.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

// Builds an op result. The backward rule and inputs are only retained when
// recording is enabled and some input requires a gradient.
Tensor make_op(const char* op, Shape shape, std::vector<Real> data, std::vector<Tensor> inputs,
               std::function<void(Node&)> backward);

}  // namespace detail

class DiffRecord {
public:
  // Every non-leaf node reachable from `loss`, inputs before consumers.
  static DiffRecord trace(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& ops() const { return ops_; }

private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

// Accumulates d(loss)/d(t) into every requires_grad leaf reachable from loss.
// Intermediate gradients are reset at the start of each pass, so calling twice
// without zero_grad on the leaves doubles their gradients exactly.
void backward(const Tensor& loss);
void backward(const Tensor& loss, const DiffRecord& record);

enum class Mode { train, eval };

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Equal shapes, or a [d] vector broadcast over the rows of a [T,d] matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor stack(std::span<const Tensor> rows);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor sum(const Tensor& a);

// Row-wise softmax with max subtraction. Columns whose key_mask entry is 0 get
// weight exactly 0 (a -inf score); an empty mask means all columns are live.
Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> key_mask = {});
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-12);

inline constexpr Real kSeluLambda = 1.0507009873554805;
inline constexpr Real kSeluAlpha = 1.6732632423543772;
Tensor selu(const Tensor& x);
Tensor gelu(const Tensor& x);

// Inverted dropout. Identity in eval mode or when p == 0.
Tensor dropout(const Tensor& x, Real p, Mode mode, Rng* rng);

// Dimension-wise max over rows whose mask entry is nonzero. Ties route the
// gradient to the lowest row index.
Tensor max_pool_rows(const Tensor& x, std::span<const std::uint8_t> row_mask);
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids);

}  // namespace hitrans
