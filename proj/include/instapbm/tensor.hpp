// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace instapbm {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient accumulator.
///
/// Tensor is a handle: copies share storage and graph position, the same way
/// framework tensors behave. Use detach() for an independent copy. Operations
/// on tensors that require gradients record a backward rule; backward() then
/// replays those rules in reverse topological order.
class Tensor {
 public:
  Tensor();  // scalar zero
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t flat) const { return node_->data[flat]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the operations that produced a value.
///
/// Built by depth-first traversal from the root, so every entry's inputs
/// precede it. Only nodes that require gradients are recorded.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::size_t operation_count() const;
  std::span<const std::shared_ptr<detail::Node>> nodes() const { return order_; }

  // Seeds d(root)/d(root) = seed and visits every recorded operation once in
  // reverse order. Leaf gradients accumulate; intermediate gradients are reset.
  void replay_backward(double seed = 1.0) const;

 private:
  std::vector<std::shared_ptr<detail::Node>> order_;
};

/// Populates dLoss/dLeaf on every leaf that requires gradients. Repeated calls
/// accumulate.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations

enum class Elementwise { add, sub, mul, div, exp, log, relu, neg, scale };
enum class Reduction { sum, mean, max };

/// Binary kinds (add, sub, mul, div) broadcast the operand of lower rank when
/// its shape equals the trailing dimensions of the other operand.
Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b);
/// Unary kinds (exp, log, relu, neg, scale). `factor` is used by scale only.
Tensor elementwise(Elementwise kind, const Tensor& a, double factor = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor clamp_max(const Tensor& a, double bound);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator*(double factor, const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor reduce(Reduction kind, const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor sum(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor max(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);

/// Row-wise log-softmax of [batch, K] logits with max-subtraction.
Tensor log_softmax(const Tensor& logits);
Tensor softmax(const Tensor& logits);

// Row selection along axis 0.
Tensor index_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace instapbm
