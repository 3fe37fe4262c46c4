#include "hitrans/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "hitrans/errors.hpp"

namespace hitrans {

namespace {

thread_local bool g_grad_enabled = true;

detail::Node& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return *t.node();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

bool wants_grad(const detail::Node& self, std::size_t input) {
  return self.inputs[input]->requires_grad;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::vector<Real>& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this).data.size(); }

std::span<const Real> Tensor::data() const { return node_of(*this).data; }
std::span<Real> Tensor::mutable_data() { return node_of(*this).data; }

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return data()[0];
}

Real Tensor::at(std::size_t i) const {
  if (i >= numel()) throw IndexError("flat index " + std::to_string(i) + " out of range");
  return data()[i];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  require_rank(*this, 2, "at");
  if (row >= dim(0) || col >= dim(1)) {
    throw IndexError("index (" + std::to_string(row) + "," + std::to_string(col) +
                     ") out of range for " + shape_str(shape()));
  }
  return data()[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }
void Tensor::set_requires_grad(bool on) { node_of(*this).requires_grad = on; }

bool Tensor::has_grad() const {
  const auto& n = node_of(*this);
  return n.grad.size() == n.data.size();
}

std::span<const Real> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_of(*this).grad;
}

std::span<Real> Tensor::mutable_grad() { return node_of(*this).ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = node_of(*this);
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return node_of(*this).is_leaf(); }

Tensor Tensor::detach() const {
  const auto& n = node_of(*this);
  return from_data(n.shape, n.data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor detail::make_op(const char* op, Shape shape, std::vector<Real> data,
                       std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool track =
      g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---- differentiation record ----------------------------------------------

DiffRecord DiffRecord::trace(const Tensor& loss) {
  DiffRecord record;
  const auto& root = loss.node();
  if (!root) throw ContractError("trace of an undefined tensor");
  if (root->is_leaf()) return record;

  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (!child->is_leaf() && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    record.ops_.push_back(node);
    stack.pop_back();
  }
  return record;
}

void backward(const Tensor& loss) { backward(loss, DiffRecord::trace(loss)); }

void backward(const Tensor& loss, const DiffRecord& record) {
  auto& root = node_of(loss);
  if (root.data.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;
  if (root.is_leaf()) {
    root.ensure_grad()[0] += 1.0;
    return;
  }
  if (record.size() == 0 || record.ops().back().get() != &root) {
    throw ContractError("differentiation record was not traced from this loss");
  }
  for (const auto& op : record.ops()) {
    auto& g = op->ensure_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  // Leaves collect this pass in a fresh buffer and add it once at the end, so
  // repeated passes accumulate exactly (g + g == 2g) whatever the op order.
  std::vector<std::pair<detail::Node*, std::vector<Real>>> leaves;
  std::unordered_set<const detail::Node*> seen;
  for (const auto& op : record.ops()) {
    for (const auto& in : op->inputs) {
      if (!in->is_leaf() || !in->requires_grad || in->grad.empty()) continue;
      if (!seen.insert(in.get()).second) continue;
      leaves.emplace_back(in.get(), std::exchange(in->grad, std::vector<Real>(in->data.size(), 0.0)));
    }
  }
  root.grad[0] = 1.0;
  for (auto it = record.ops().rbegin(); it != record.ops().rend(); ++it) {
    (*it)->backward(**it);
  }
  for (auto& [leaf, before] : leaves) {
    for (std::size_t i = 0; i < before.size(); ++i) leaf->grad[i] += before[i];
  }
}

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const auto A = a.data();
  const auto B = b.data();
  std::vector<Real> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    Real* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = A[i * k + p];
      const Real* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return detail::make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& G = self.grad;
    const auto& A = self.inputs[0]->data;
    const auto& B = self.inputs[1]->data;
    if (wants_grad(self, 0)) {
      auto& dA = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (wants_grad(self, 1)) {
      auto& dB = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const Real aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
        }
      }
    }
  });
}

namespace {

void check_binary(const Tensor& a, const Tensor& b, const char* op, bool allow_rows) {
  if (a.shape() == b.shape()) return;
  if (allow_rows && a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

Tensor add_impl(const Tensor& a, const Tensor& b, Real sign, const char* op) {
  check_binary(a, b, op, true);
  const auto A = a.data();
  const auto B = b.data();
  const std::size_t width = B.size();
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + sign * B[i % width];
  return detail::make_op(op, a.shape(), std::move(out), {a, b}, [sign, width](detail::Node& self) {
    const auto& G = self.grad;
    if (wants_grad(self, 0)) {
      auto& dA = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
    }
    if (wants_grad(self, 1)) {
      auto& dB = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dB[i % width] += sign * G[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_binary(a, b, "mul", false);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return detail::make_op("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& G = self.grad;
    const auto& A = self.inputs[0]->data;
    const auto& B = self.inputs[1]->data;
    if (wants_grad(self, 0)) {
      auto& dA = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i] * B[i];
    }
    if (wants_grad(self, 1)) {
      auto& dB = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dB[i] += G[i] * A[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  const auto A = a.data();
  std::vector<Real> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * factor;
  return detail::make_op("scale", a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& dA = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dA[i] += factor * self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  // Per part: contiguous chunk length along the output row of width out_chunk.
  std::vector<std::size_t> chunk(parts.size()), offset(parts.size());
  std::size_t out_chunk = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    chunk[p] = parts[p].shape()[axis] * inner;
    offset[p] = out_chunk;
    out_chunk += chunk[p];
  }
  std::vector<Real> out(outer * out_chunk);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * chunk[p], chunk[p], out.begin() + o * out_chunk + offset[p]);
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return detail::make_op("concat", std::move(out_shape), std::move(out), std::move(inputs),
                         [outer, out_chunk, chunk, offset](detail::Node& self) {
                           for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                             if (!wants_grad(self, p)) continue;
                             auto& d = self.inputs[p]->ensure_grad();
                             for (std::size_t o = 0; o < outer; ++o) {
                               const Real* g = self.grad.data() + o * out_chunk + offset[p];
                               Real* dst = d.data() + o * chunk[p];
                               for (std::size_t i = 0; i < chunk[p]; ++i) dst[i] += g[i];
                             }
                           }
                         });
}

Tensor stack(std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack of zero tensors");
  std::vector<Tensor> lifted;
  lifted.reserve(rows.size());
  for (const auto& r : rows) {
    Shape s = r.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(r, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  return detail::make_op("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto A = a.data();
  std::vector<Real> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return detail::make_op("transpose", {c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += self.grad[j * r + i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank(a, 2, "slice_cols");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (count == 0 || begin + count > cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_str(a.shape()));
  }
  const auto A = a.data();
  std::vector<Real> out(rows * count);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(A.begin() + i * cols + begin, count, out.begin() + i * count);
  return detail::make_op("slice_cols", {rows, count}, std::move(out), {a},
                         [rows, cols, begin, count](detail::Node& self) {
                           auto& d = self.inputs[0]->ensure_grad();
                           for (std::size_t i = 0; i < rows; ++i)
                             for (std::size_t j = 0; j < count; ++j)
                               d[i * cols + begin + j] += self.grad[i * count + j];
                         });
}

Tensor sum(const Tensor& a) {
  Real total = 0.0;
  for (Real v : a.data()) total += v;
  return detail::make_op("sum", {}, {total}, {a}, [](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    for (auto& v : d) v += self.grad[0];
  });
}

Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> key_mask) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (!key_mask.empty() && key_mask.size() != n) {
    throw DimensionError("softmax_rows: mask of length " + std::to_string(key_mask.size()) +
                         " for " + shape_str(x.shape()));
  }
  auto live = [&](std::size_t j) { return key_mask.empty() || key_mask[j] != 0; };
  bool any_live = false;
  for (std::size_t j = 0; j < n; ++j) any_live = any_live || live(j);
  if (!any_live) throw ContractError("softmax_rows: every key position is masked");

  const auto X = x.data();
  std::vector<Real> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = X.data() + i * n;
    Real mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j)
      if (live(j)) mx = std::max(mx, row[j]);
    Real total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!live(j)) continue;
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return detail::make_op("softmax_rows", {m, n}, std::move(out), {x}, [m, n](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    const auto& Y = self.data;
    const auto& G = self.grad;
    for (std::size_t i = 0; i < m; ++i) {
      Real dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += Y[i * n + j] * G[i * n + j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += Y[i * n + j] * (G[i * n + j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const auto X = x.data();
  const auto G = gamma.data();
  const auto B = beta.data();
  std::vector<Real> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = X.data() + i * n;
    Real mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<Real>(n);
    Real var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = G[j] * xhat[i * n + j] + B[j];
    }
  }
  return detail::make_op(
      "layer_norm", {m, n}, std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& dy = self.grad;
        const auto& gam = self.inputs[1]->data;
        if (wants_grad(self, 1)) {
          auto& dg = self.inputs[1]->ensure_grad();
          for (std::size_t i = 0; i < m * n; ++i) dg[i % n] += dy[i] * xhat[i];
        }
        if (wants_grad(self, 2)) {
          auto& db = self.inputs[2]->ensure_grad();
          for (std::size_t i = 0; i < m * n; ++i) db[i % n] += dy[i];
        }
        if (wants_grad(self, 0)) {
          auto& dx = self.inputs[0]->ensure_grad();
          const Real inv_n = 1.0 / static_cast<Real>(n);
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const Real dxh = dy[i * n + j] * gam[j];
              mean_d += dxh;
              mean_dx += dxh * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const Real dxh = dy[i * n + j] * gam[j];
              dx[i * n + j] += inv_std[i] * (dxh - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

namespace {

template <typename Fwd, typename Deriv>
Tensor pointwise(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto X = x.data();
  std::vector<Real> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = fwd(X[i]);
  return detail::make_op(op, x.shape(), std::move(out), {x}, [deriv](detail::Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    const auto& in = self.inputs[0]->data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * deriv(in[i]);
  });
}

}  // namespace

Tensor selu(const Tensor& x) {
  return pointwise(
      "selu", x,
      [](Real v) { return v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v); },
      [](Real v) { return v > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(v); });
}

Tensor gelu(const Tensor& x) {
  constexpr Real inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr Real inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return pointwise(
      "gelu", x, [](Real v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](Real v) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor dropout(const Tensor& x, Real p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0,1), got " + std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("train-mode dropout needs a random generator");
  std::uniform_real_distribution<Real> uniform(0.0, 1.0);
  const Real keep_scale = 1.0 / (1.0 - p);
  const auto X = x.data();
  std::vector<Real> mask(X.size()), out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    mask[i] = uniform(*rng) < p ? 0.0 : keep_scale;
    out[i] = X[i] * mask[i];
  }
  return detail::make_op("dropout", x.shape(), std::move(out), {x},
                         [mask = std::move(mask)](detail::Node& self) {
                           auto& d = self.inputs[0]->ensure_grad();
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * mask[i];
                         });
}

Tensor max_pool_rows(const Tensor& x, std::span<const std::uint8_t> row_mask) {
  require_rank(x, 2, "max_pool_rows");
  const std::size_t t = x.dim(0), d = x.dim(1);
  if (row_mask.size() != t) {
    throw DimensionError("max_pool_rows: mask of length " + std::to_string(row_mask.size()) +
                         " for " + shape_str(x.shape()));
  }
  const auto X = x.data();
  std::vector<Real> out(d, 0.0);
  std::vector<std::size_t> winner(d, t);
  for (std::size_t i = 0; i < t; ++i) {
    if (!row_mask[i]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      if (winner[j] == t || X[i * d + j] > out[j]) {
        out[j] = X[i * d + j];
        winner[j] = i;
      }
    }
  }
  if (winner[0] == t) throw ContractError("max_pool_rows: every row is masked");
  return detail::make_op("max_pool_rows", {d}, std::move(out), {x},
                         [d, winner = std::move(winner)](detail::Node& self) {
                           auto& g = self.inputs[0]->ensure_grad();
                           for (std::size_t j = 0; j < d; ++j) g[winner[j] * d + j] += self.grad[j];
                         });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding_lookup");
  const std::size_t v = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ContractError("embedding_lookup: empty id list");
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("embedding id " + std::to_string(id) + " out of range for table of " +
                       std::to_string(v) + " rows");
    }
  }
  const auto T = table.data();
  std::vector<Real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(T.begin() + static_cast<std::size_t>(ids[i]) * d, d, out.begin() + i * d);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  return detail::make_op("embedding_lookup", {ids.size(), d}, std::move(out), {table},
                         [d, rows = std::move(rows)](detail::Node& self) {
                           auto& g = self.inputs[0]->ensure_grad();
                           for (std::size_t i = 0; i < rows.size(); ++i) {
                             Real* dst = g.data() + static_cast<std::size_t>(rows[i]) * d;
                             for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
                           }
                         });
}

}  // namespace hitrans
