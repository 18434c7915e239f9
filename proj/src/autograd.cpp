#include "lagamc/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace lagamc::ag {

namespace {

thread_local bool g_grad_enabled = true;

void ensure_grad(Node& n) {
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
}

/// Wraps a computed value. The graph edge is kept only when some parent
/// needs a gradient and recording is enabled.
Var make_result(Matrix value, std::vector<std::shared_ptr<Node>> parents,
                std::function<void(Node&)> backward) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  Var out(std::move(value), false);
  if (needs) {
    auto& n = *out.node();
    n.requires_grad = true;
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::set_requires_grad(bool on) { node_->requires_grad = on; }

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

void Var::backward() const {
  if (!node_ || node_->value.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar output");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid backward order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  }
  node_->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) ensure_grad(*p);
    }
    n->backward(*n);
  }
  // Interior gradients are not needed after the pass.
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  auto pa = a.node();
  auto pb = b.node();
  return make_result(a.value() * b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad.noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad.noalias() += pa->value.transpose() * self.grad;
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto pa = a.node();
  auto pb = b.node();
  return make_result(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad += self.grad;
    if (pb->requires_grad) pb->grad += self.grad;
  });
}

Var add_row(const Var& a, const Var& row_vec) {
  if (row_vec.rows() != 1 || row_vec.cols() != a.cols()) {
    throw std::invalid_argument("add_row: expected a 1xN row matching the columns");
  }
  auto pa = a.node();
  auto pr = row_vec.node();
  Matrix value = a.value();
  value.rowwise() += pr->value.row(0);
  return make_result(std::move(value), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) pa->grad += self.grad;
    if (pr->requires_grad) pr->grad += self.grad.colwise().sum();
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto pa = a.node();
  auto pb = b.node();
  return make_result(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad += self.grad;
    if (pb->requires_grad) pb->grad -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  auto pa = a.node();
  auto pb = b.node();
  return make_result(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad += self.grad.cwiseProduct(pa->value);
  });
}

Var scale(const Var& a, double factor) {
  auto pa = a.node();
  return make_result(a.value() * factor, {pa}, [pa, factor](Node& self) {
    pa->grad += self.grad * factor;
  });
}

Var add_scalar(const Var& a, double offset) {
  auto pa = a.node();
  Matrix value = a.value().array() + offset;
  return make_result(std::move(value), {pa}, [pa](Node& self) { pa->grad += self.grad; });
}

Var tanh(const Var& a) {
  auto pa = a.node();
  Matrix value = a.value().array().tanh();
  return make_result(value, {pa}, [pa, value](Node& self) {
    pa->grad.array() += self.grad.array() * (1.0 - value.array().square());
  });
}

Var sigmoid(const Var& a) {
  auto pa = a.node();
  Matrix value = (1.0 + (-a.value().array()).exp()).inverse();
  return make_result(value, {pa}, [pa, value](Node& self) {
    pa->grad.array() += self.grad.array() * value.array() * (1.0 - value.array());
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range outside matrix");
  }
  auto pa = a.node();
  return make_result(a.value().middleCols(start, count), {pa}, [pa, start, count](Node& self) {
    pa->grad.middleCols(start, count) += self.grad;
  });
}

Var row(const Var& a, Eigen::Index index) {
  if (index < 0 || index >= a.rows()) throw std::out_of_range("row: index outside matrix");
  auto pa = a.node();
  return make_result(a.value().row(index), {pa}, [pa, index](Node& self) {
    pa->grad.row(index) += self.grad.row(0);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
  Eigen::Index rows = 0;
  const auto cols = parts.front().cols();
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    parents.push_back(p.node());
  }
  Matrix value(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    value.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  auto captured = parents;
  return make_result(std::move(value), std::move(parents), [captured](Node& self) {
    Eigen::Index offset = 0;
    for (const auto& p : captured) {
      const auto r = p->value.rows();
      if (p->requires_grad) p->grad += self.grad.middleRows(offset, r);
      offset += r;
    }
  });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  auto pt = table.node();
  Matrix value(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("gather_rows: id out of range");
    value.row(static_cast<Eigen::Index>(i)) = pt->value.row(ids[i]);
  }
  return make_result(std::move(value), {pt}, [pt, ids](Node& self) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      pt->grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var sum_rows(const Var& a) {
  auto pa = a.node();
  return make_result(a.value().colwise().sum(), {pa}, [pa](Node& self) {
    pa->grad.rowwise() += self.grad.row(0);
  });
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var sum(const Var& a) {
  auto pa = a.node();
  Matrix value(1, 1);
  value(0, 0) = a.value().sum();
  return make_result(std::move(value), {pa}, [pa](Node& self) {
    pa->grad.array() += self.grad(0, 0);
  });
}

Var dot(const Var& a, const Var& b) {
  check_same_shape(a, b, "dot");
  auto pa = a.node();
  auto pb = b.node();
  Matrix value(1, 1);
  value(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return make_result(std::move(value), {pa, pb}, [pa, pb](Node& self) {
    const double g = self.grad(0, 0);
    if (pa->requires_grad) pa->grad += g * pb->value;
    if (pb->requires_grad) pb->grad += g * pa->value;
  });
}

Var softmax_rows(const Var& logits) {
  auto pl = logits.node();
  Matrix value = logits.value();
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    const double m = value.row(r).maxCoeff();
    value.row(r) = (value.row(r).array() - m).exp();
    value.row(r) /= value.row(r).sum();
  }
  return make_result(value, {pl}, [pl, value](Node& self) {
    // dL/dx = p * (g - <g, p>) per row
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      const double inner = self.grad.row(r).dot(value.row(r));
      pl->grad.row(r).array() += value.row(r).array() * (self.grad.row(r).array() - inner);
    }
  });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows() || targets.empty()) {
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  }
  auto pl = logits.node();
  const auto& x = logits.value();
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= x.cols()) throw std::out_of_range("cross_entropy_rows: target out of range");
    const double m = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - m).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += -(x(r, t) - m - std::log(z));
  }
  const double n = static_cast<double>(x.rows());
  Matrix value(1, 1);
  value(0, 0) = total / n;
  return make_result(std::move(value), {pl}, [pl, probs, targets, n](Node& self) {
    const double g = self.grad(0, 0) / n;
    Matrix d = probs;
    for (std::size_t r = 0; r < targets.size(); ++r) d(static_cast<Eigen::Index>(r), targets[r]) -= 1.0;
    pl->grad += g * d;
  });
}

Var l2_normalize(const Var& a, double eps) {
  auto pa = a.node();
  const double norm = std::sqrt(a.value().squaredNorm() + eps);
  Matrix value = a.value() / norm;
  return make_result(value, {pa}, [pa, value, norm](Node& self) {
    // d(x/|x|) = (g - y <g, y>) / |x|
    const double inner = self.grad.cwiseProduct(value).sum();
    pa->grad += (self.grad - value * inner) / norm;
  });
}

}  // namespace lagamc::ag
