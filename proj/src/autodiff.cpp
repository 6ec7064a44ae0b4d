#include "mbf/autodiff.hpp"

#include "mbf/error.hpp"

namespace mbf::ad {

const Matrix& Var::value() const {
  require(tape_ != nullptr, "unbound autodiff variable");
  return tape_->nodes_[id_].value;
}

const Matrix& Var::grad() const {
  require(tape_ != nullptr, "unbound autodiff variable");
  return tape_->nodes_[id_].grad;
}

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "variable is not a scalar");
  return v(0, 0);
}

void Tape::check(const Var& v) const {
  require(v.tape_ == this && v.id_ >= 0 && v.id_ < static_cast<int>(nodes_.size()),
          "variable belongs to a different tape");
}

Tape::Node& Tape::node(const Var& v) {
  check(v);
  return nodes_[v.id_];
}

Matrix& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, needs_grad ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

void Tape::backward(const Var& root) {
  check(root);
  require(nodes_[root.id_].value.size() == 1, "backward needs a scalar root");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_of(root.id_).setOnes();
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

Var Tape::matmul(const Var& a, const Var& b) {
  check(a);
  check(b);
  require(a.cols() == b.rows(), "matmul shape mismatch");
  const int ia = a.id_, ib = b.id_;
  return push(a.value() * b.value(), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(ia, g * t.value_of(ib).transpose());
    t.accumulate(ib, t.value_of(ia).transpose() * g);
  });
}

Var Tape::add_bias(const Var& x, const Var& bias) {
  check(x);
  check(bias);
  require(bias.cols() == 1 && bias.rows() == x.rows(), "bias shape mismatch");
  const int ix = x.id_, ib = bias.id_;
  Matrix v = x.value().colwise() + bias.value().col(0);
  return push(std::move(v), needs(x) || needs(bias), [ix, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(ix, g);
    t.accumulate(ib, g.rowwise().sum());
  });
}

namespace {

void same_shape(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "elementwise shape mismatch");
}

}  // namespace

Var Tape::add(const Var& a, const Var& b) {
  check(a);
  check(b);
  same_shape(a, b);
  const int ia = a.id_, ib = b.id_;
  return push(a.value() + b.value(), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, t.upstream(self));
  });
}

Var Tape::sub(const Var& a, const Var& b) {
  check(a);
  check(b);
  same_shape(a, b);
  const int ia = a.id_, ib = b.id_;
  return push(a.value() - b.value(), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, -t.upstream(self));
  });
}

Var Tape::mul(const Var& a, const Var& b) {
  check(a);
  check(b);
  same_shape(a, b);
  const int ia = a.id_, ib = b.id_;
  return push(a.value().cwiseProduct(b.value()), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(ia, g.cwiseProduct(t.value_of(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value_of(ia)));
  });
}

Var Tape::scale(const Var& a, double c) {
  check(a);
  const int ia = a.id_;
  return push(a.value() * c, needs(a), [ia, c](Tape& t, int self) { t.accumulate(ia, t.upstream(self) * c); });
}

Var Tape::add_scalar(const Var& a, double c) {
  check(a);
  const int ia = a.id_;
  return push(a.value().array() + c, needs(a), [ia](Tape& t, int self) { t.accumulate(ia, t.upstream(self)); });
}

Var Tape::square(const Var& a) {
  check(a);
  const int ia = a.id_;
  return push(a.value().array().square().matrix(), needs(a), [ia](Tape& t, int self) {
    t.accumulate(ia, 2.0 * t.upstream(self).cwiseProduct(t.value_of(ia)));
  });
}

Var Tape::exp(const Var& a) {
  check(a);
  const int ia = a.id_;
  return push(a.value().array().exp().matrix(), needs(a), [ia](Tape& t, int self) {
    t.accumulate(ia, t.upstream(self).cwiseProduct(t.value_of(self)));
  });
}

Var Tape::leaky_relu(const Var& a, double slope) {
  check(a);
  const int ia = a.id_;
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return push(std::move(v), needs(a), [ia, slope](Tape& t, int self) {
    const Matrix& x = t.value_of(ia);
    t.accumulate(ia, t.upstream(self).binaryExpr(x, [slope](double g, double xv) { return xv > 0.0 ? g : slope * g; }));
  });
}

Var Tape::sum(const Var& a) {
  check(a);
  const int ia = a.id_;
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return push(std::move(v), needs(a), [ia](Tape& t, int self) {
    const Matrix& x = t.value_of(ia);
    t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), t.upstream(self)(0, 0)));
  });
}

}  // namespace mbf::ad
