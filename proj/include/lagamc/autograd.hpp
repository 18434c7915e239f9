#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
// Enough to train the bundled reference generator and encoder; not a general
// tensor library.

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace lagamc::ag {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  /// Leaf whose gradient is accumulated by backward().
  static Var parameter(Matrix value) { return Var(std::move(value), true); }

  const Matrix& value() const { return node_->value; }
  /// In-place access for optimizers. Only valid on leaves.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);
  void zero_grad();

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }
  double scalar() const { return node_->value(0, 0); }

  /// Back-propagates from this 1x1 value.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive on the current thread, new results never record a graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Matrix value);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// Adds a 1xN row to every row of `a`.
Var add_row(const Var& a, const Var& row);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var row(const Var& a, Eigen::Index index);
Var concat_rows(const std::vector<Var>& parts);
/// Embedding lookup: one output row per id.
Var gather_rows(const Var& table, const std::vector<int>& ids);

/// Column sums as a 1xN row.
Var sum_rows(const Var& a);
Var mean_rows(const Var& a);
/// Sum of all entries as 1x1.
Var sum(const Var& a);
/// Frobenius inner product as 1x1.
Var dot(const Var& a, const Var& b);

Var softmax_rows(const Var& logits);
/// Mean over rows of -log softmax(logits)[row, target].
Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets);
/// a / sqrt(|a|^2 + eps) over all entries.
Var l2_normalize(const Var& a, double eps = 1e-12);

}  // namespace lagamc::ag
