// SPDX-License-Identifier: Apache-2.0
#include "instapbm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "instapbm/errors.hpp"

namespace instapbm {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<NodePtr> parents,
                   std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool track = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(rule);
  }
  return Tensor::from_node(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{}, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<Node>()) {
  node_->data.assign(element_count(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<Node>()) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_rank(*this, 2, "at");
  return node_->data[row * node_->shape[1] + col];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ValidationError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) zero_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

void Tensor::clear_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

// ---------------------------------------------------------------------------
// Tape

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::size_t Tape::operation_count() const {
  return static_cast<std::size_t>(
      std::count_if(order_.begin(), order_.end(), [](const NodePtr& n) { return !n->is_leaf(); }));
}

void Tape::replay_backward(double seed) const {
  if (order_.empty()) return;
  for (const auto& node : order_) {
    if (!node->is_leaf()) {
      node->grad.assign(node->data.size(), 0.0);
    } else if (node->grad.size() != node->data.size()) {
      node->grad.assign(node->data.size(), 0.0);
    }
  }
  order_.back()->grad[0] += seed;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& node = **it;
    if (!node.is_leaf()) node.backward(node);
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1 || loss.rank() != 0) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  Tape::record(loss).replay_backward();
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
  const char* name = nullptr;
  switch (kind) {
    case Elementwise::add: name = "add"; break;
    case Elementwise::sub: name = "sub"; break;
    case Elementwise::mul: name = "mul"; break;
    case Elementwise::div: name = "div"; break;
    default: throw ValidationError("elementwise: unary kind given two operands");
  }
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = element_count(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t na = ad.size();
  const std::size_t nb = bd.size();
  std::vector<double> out(n);
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] + bd[i % nb];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] - bd[i % nb];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] * bd[i % nb];
      break;
    case Elementwise::div:
      for (std::size_t i = 0; i < n; ++i) {
        const double den = bd[i % nb];
        if (den == 0.0) throw DomainError("div: division by zero");
        out[i] = ad[i % na] / den;
      }
      break;
    default: break;
  }
  auto rule = [kind, na, nb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = i % na;
      const std::size_t ib = i % nb;
      switch (kind) {
        case Elementwise::add:
          if (pa.requires_grad) pa.grad[ia] += g[i];
          if (pb.requires_grad) pb.grad[ib] += g[i];
          break;
        case Elementwise::sub:
          if (pa.requires_grad) pa.grad[ia] += g[i];
          if (pb.requires_grad) pb.grad[ib] -= g[i];
          break;
        case Elementwise::mul:
          if (pa.requires_grad) pa.grad[ia] += g[i] * pb.data[ib];
          if (pb.requires_grad) pb.grad[ib] += g[i] * pa.data[ia];
          break;
        case Elementwise::div: {
          const double den = pb.data[ib];
          if (pa.requires_grad) pa.grad[ia] += g[i] / den;
          if (pb.requires_grad) pb.grad[ib] -= g[i] * pa.data[ia] / (den * den);
          break;
        }
        default: break;
      }
    }
  };
  return make_result(std::move(out_shape), std::move(out), name, {a.node(), b.node()}, std::move(rule));
}

Tensor elementwise(Elementwise kind, const Tensor& a, double factor) {
  const auto ad = a.data();
  const std::size_t n = ad.size();
  std::vector<double> out(n);
  const char* name = nullptr;
  switch (kind) {
    case Elementwise::exp:
      name = "exp";
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(ad[i]);
      return make_result(a.shape(), std::move(out), name, {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * self.data[i];
      });
    case Elementwise::log:
      name = "log";
      for (std::size_t i = 0; i < n; ++i) {
        if (!(ad[i] > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(ad[i]));
        out[i] = std::log(ad[i]);
      }
      return make_result(a.shape(), std::move(out), name, {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] / p.data[i];
      });
    case Elementwise::relu:
      name = "relu";
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
      return make_result(a.shape(), std::move(out), name, {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
        }
      });
    case Elementwise::neg:
      factor = -1.0;
      [[fallthrough]];
    case Elementwise::scale:
      name = kind == Elementwise::neg ? "neg" : "scale";
      for (std::size_t i = 0; i < n; ++i) out[i] = factor * ad[i];
      return make_result(a.shape(), std::move(out), name, {a.node()}, [factor](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
      });
    default:
      throw ValidationError("elementwise: binary kind requires a second operand");
  }
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::div, a, b); }
Tensor exp(const Tensor& a) { return elementwise(Elementwise::exp, a); }
Tensor log(const Tensor& a) { return elementwise(Elementwise::log, a); }
Tensor relu(const Tensor& a) { return elementwise(Elementwise::relu, a); }
Tensor neg(const Tensor& a) { return elementwise(Elementwise::neg, a); }
Tensor scale(const Tensor& a, double factor) { return elementwise(Elementwise::scale, a, factor); }
Tensor add_scalar(const Tensor& a, double value) { return add(a, Tensor::scalar(value)); }

Tensor clamp_max(const Tensor& a, double bound) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = std::min(ad[i], bound);
  return make_result(a.shape(), std::move(out), "clamp_max", {a.node()}, [bound](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.data[i] < bound) p.grad[i] += self.grad[i];
    }
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator*(double factor, const Tensor& a) { return scale(a, factor); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<double> out(n * m);
  const auto Eidx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  MutMap(out.data(), Eidx(n), Eidx(m)).noalias() =
      ConstMap(a.data().data(), Eidx(n), Eidx(k)) * ConstMap(b.data().data(), Eidx(k), Eidx(m));
  auto rule = [n, k, m, Eidx](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMap g(self.grad.data(), Eidx(n), Eidx(m));
    if (pa.requires_grad) {
      MutMap(pa.grad.data(), Eidx(n), Eidx(k)).noalias() += g * ConstMap(pb.data.data(), Eidx(k), Eidx(m)).transpose();
    }
    if (pb.requires_grad) {
      MutMap(pb.grad.data(), Eidx(k), Eidx(m)).noalias() += ConstMap(pa.data.data(), Eidx(n), Eidx(k)).transpose() * g;
    }
  };
  return make_result(Shape{n, m}, std::move(out), "matmul", {a.node(), b.node()}, std::move(rule));
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  const auto ad = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return make_result(Shape{c, r}, std::move(out), "transpose", {a.node()}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(Reduction kind, const Tensor& a, std::optional<std::size_t> axis) {
  const char* name = kind == Reduction::sum ? "sum" : kind == Reduction::mean ? "mean" : "max";
  const auto ad = a.data();
  std::size_t outer = 1;
  std::size_t extent = ad.size();
  std::size_t inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= a.rank()) {
      throw ShapeError(std::string(name) + ": axis " + std::to_string(*axis) + " out of range for shape " +
                       to_string(a.shape()));
    }
    const Shape& s = a.shape();
    for (std::size_t d = 0; d < *axis; ++d) outer *= s[d];
    extent = s[*axis];
    for (std::size_t d = *axis + 1; d < s.size(); ++d) inner *= s[d];
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != *axis) out_shape.push_back(s[d]);
  }
  if (extent == 0) throw ShapeError(std::string(name) + ": empty reduction over shape " + to_string(a.shape()));

  std::vector<double> out(outer * inner);
  std::vector<std::size_t> argmax;
  if (kind == Reduction::max) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t dst = o * inner + i;
      if (kind == Reduction::max) {
        std::size_t best = o * extent * inner + i;
        for (std::size_t j = 1; j < extent; ++j) {
          const std::size_t src = (o * extent + j) * inner + i;
          if (ad[src] > ad[best]) best = src;
        }
        out[dst] = ad[best];
        argmax[dst] = best;
      } else {
        double acc = 0.0;
        for (std::size_t j = 0; j < extent; ++j) acc += ad[(o * extent + j) * inner + i];
        out[dst] = kind == Reduction::mean ? acc / static_cast<double>(extent) : acc;
      }
    }
  }
  auto rule = [kind, outer, extent, inner, argmax = std::move(argmax)](Node& self) {
    Node& p = *self.parents[0];
    if (kind == Reduction::max) {
      for (std::size_t d = 0; d < self.grad.size(); ++d) p.grad[argmax[d]] += self.grad[d];
      return;
    }
    const double w = kind == Reduction::mean ? 1.0 / static_cast<double>(extent) : 1.0;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < extent; ++j)
        for (std::size_t i = 0; i < inner; ++i) p.grad[(o * extent + j) * inner + i] += w * self.grad[o * inner + i];
  };
  return make_result(std::move(out_shape), std::move(out), name, {a.node()}, std::move(rule));
}

Tensor sum(const Tensor& a, std::optional<std::size_t> axis) { return reduce(Reduction::sum, a, axis); }
Tensor mean(const Tensor& a, std::optional<std::size_t> axis) { return reduce(Reduction::mean, a, axis); }
Tensor max(const Tensor& a, std::optional<std::size_t> axis) { return reduce(Reduction::max, a, axis); }

// ---------------------------------------------------------------------------
// Softmax family

Tensor log_softmax(const Tensor& logits) {
  require_rank(logits, 2, "log_softmax");
  const std::size_t rows = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (k < 2) throw ShapeError("log_softmax: need at least 2 classes, got shape " + to_string(logits.shape()));
  const auto z = logits.data();
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = z.data() + r * k;
    const double top = *std::max_element(row, row + k);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += std::exp(row[c] - top);
    const double lse = top + std::log(acc);
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = row[c] - lse;
  }
  return make_result(logits.shape(), std::move(out), "log_softmax", {logits.node()}, [rows, k](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < k; ++c) gsum += self.grad[r * k + c];
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t i = r * k + c;
        p.grad[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
      }
    }
  });
}

Tensor softmax(const Tensor& logits) { return exp(log_softmax(logits)); }

// ---------------------------------------------------------------------------
// Row manipulation

Tensor index_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0) throw ShapeError("index_rows: scalar input");
  const std::size_t n = a.dim(0);
  const std::size_t width = n == 0 ? 0 : a.size() / n;
  const auto ad = a.data();
  std::vector<double> out;
  out.reserve(rows.size() * width);
  for (auto r : rows) {
    if (r >= n) throw ShapeError("index_rows: row " + std::to_string(r) + " out of range for " + to_string(a.shape()));
    out.insert(out.end(), ad.begin() + static_cast<std::ptrdiff_t>(r * width),
               ad.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  }
  Shape shape = a.shape();
  shape[0] = rows.size();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  return make_result(std::move(shape), std::move(out), "index_rows", {a.node()},
                     [width, picked = std::move(picked)](Node& self) {
                       Node& p = *self.parents[0];
                       for (std::size_t i = 0; i < picked.size(); ++i)
                         for (std::size_t c = 0; c < width; ++c) p.grad[picked[i] * width + c] += self.grad[i * width + c];
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0) throw ShapeError("slice_rows: scalar input");
  if (begin > end || end > a.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + to_string(a.shape()));
  }
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return index_rows(a, rows);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat_rows: scalar input");
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_rows: shape mismatch " + to_string(shape) + " vs " + to_string(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
  }
  shape[0] = rows;
  return make_result(std::move(shape), std::move(out), "concat_rows", std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->data.size();
      if (p->requires_grad)
        for (std::size_t i = 0; i < n; ++i) p->grad[i] += self.grad[offset + i];
      offset += n;
    }
  });
}

}  // namespace instapbm
