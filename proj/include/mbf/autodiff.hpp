#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// every operation of one forward pass; backward() then pushes adjoints from a
// scalar root to every node that depends on a trainable leaf.
namespace mbf::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Leaf whose gradient is wanted.
  Var variable(Matrix value);
  /// Leaf treated as a constant.
  Var constant(Matrix value);

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

  // Operations. Shapes follow Eigen conventions; `add_bias` broadcasts a
  // column vector across columns.
  Var matmul(const Var& a, const Var& b);
  Var add_bias(const Var& x, const Var& bias);
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var mul(const Var& a, const Var& b);
  Var scale(const Var& a, double c);
  Var add_scalar(const Var& a, double c);
  Var square(const Var& a);
  Var exp(const Var& a);
  Var leaky_relu(const Var& a, double slope);
  Var sum(const Var& a);

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;
  };
  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward);
  Node& node(const Var& v);
  Matrix& grad_of(int id);
  template <class E>
  void accumulate(int id, const E& e) {
    if (nodes_[id].needs_grad) grad_of(id) += e;
  }
  const Matrix& value_of(int id) const { return nodes_[id].value; }
  const Matrix& upstream(int id) const { return nodes_[id].grad; }
  bool needs(const Var& v) const { return nodes_[v.id_].needs_grad; }
  void check(const Var& v) const;

  std::vector<Node> nodes_;
};

}  // namespace mbf::ad
