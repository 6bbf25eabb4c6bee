#pragma once

// Dense reverse-mode kernel: just the ops the autoencoder and the probes need.
// Values are row-major (batch x features) matrices; time is unrolled by the
// caller, one node per step.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "random.hpp"

namespace uniprofile::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix<T>::Zero(rows, cols)),
        grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

struct Var {
  int id = -1;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  struct Node {
    Matrix<T> value;
    Matrix<T> grad;  // empty until something flows in
    Backward backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    std::vector<Matrix<T>> saved;
  };

  Var constant(Matrix<T> v) { return push(std::move(v), false, nullptr); }

  // One node per parameter per tape; gradients reach Parameter::grad on backward.
  Var param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {it->second};
    Var v = push(p.value, true, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      n.param->grad += n.grad;
    });
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var push(Matrix<T> value, bool needs_grad, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) { return nodes_[v.id]; }
  Node& node(int id) { return nodes_[id]; }
  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }
  const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Expr>
  void accumulate(Var v, const Expr& e) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = e;
    else
      n.grad += e;
  }

  void backward(Var loss) {
    Node& root = nodes_.at(loss.id);
    if (root.value.rows() != 1 || root.value.cols() != 1)
      throw ContractError("backward requires a scalar loss, got " +
                          std::to_string(root.value.rows()) + "x" +
                          std::to_string(root.value.cols()));
    root.grad = Matrix<T>::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.grad.size() != 0 && n.backward) n.backward(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
};

namespace detail {
inline void check_shape(bool ok, const char* op) {
  if (!ok) throw ShapeError(std::string(op) + ": shape mismatch");
}
template <typename T>
T sigmoid(T x) {
  // Split form keeps exp() from overflowing for large |x|.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  detail::check_shape(t.value(a).cols() == t.value(b).rows(), "matmul");
  Matrix<T> out = t.value(a) * t.value(b);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  detail::check_shape(t.value(a).rows() == t.value(b).rows() &&
                          t.value(a).cols() == t.value(b).cols(),
                      "add");
  Matrix<T> out = t.value(a) + t.value(b);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.node(self).grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

// a (B x n) + row vector b (1 x n) broadcast over rows.
template <typename T>
Var add_row(Tape<T>& t, Var a, Var b) {
  detail::check_shape(t.value(b).rows() == 1 && t.value(a).cols() == t.value(b).cols(),
                      "add_row");
  Matrix<T> out = t.value(a).rowwise() + t.value(b).row(0);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.node(self).grad;
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  detail::check_shape(t.value(a).rows() == t.value(b).rows() &&
                          t.value(a).cols() == t.value(b).cols(),
                      "mul");
  Matrix<T> out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.node(self).grad;
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var a) {
  Matrix<T> out = t.value(a).unaryExpr([](T x) { return detail::sigmoid(x); });
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& t, int self) {
    const auto& n = t.node(self);
    t.accumulate(a, n.grad.cwiseProduct(n.value.cwiseProduct((T(1) - n.value.array()).matrix())));
  });
}

template <typename T>
Var tanh(Tape<T>& t, Var a) {
  Matrix<T> out = t.value(a).array().tanh().matrix();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& t, int self) {
    const auto& n = t.node(self);
    t.accumulate(a, (n.grad.array() * (T(1) - n.value.array().square())).matrix());
  });
}

template <typename T>
Var relu(Tape<T>& t, Var a) {
  Matrix<T> out = t.value(a).cwiseMax(T(0));
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& t, int self) {
    const auto& n = t.node(self);
    t.accumulate(a, (t.value(a).array() > T(0)).select(n.grad.array(), T(0)).matrix());
  });
}

// x W + b with b a 1 x n row.
template <typename T>
Var affine(Tape<T>& t, Var x, Var w, Var b) {
  return add_row(t, matmul(t, x, w), b);
}

template <typename T>
Var sum(Tape<T>& t, Var a) {
  Matrix<T> out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& t, int self) {
    const T g = t.node(self).grad(0, 0);
    t.accumulate(a, Matrix<T>::Constant(t.value(a).rows(), t.value(a).cols(), g));
  });
}

// Rows of an embedding table gathered by id; gradient scatters straight into
// table.grad.
template <typename T>
Var embedding(Tape<T>& t, Parameter<T>& table, std::span<const std::int32_t> ids) {
  const auto rows = table.value.rows();
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows)
      throw IndexError("embedding '" + table.name + "': id " + std::to_string(ids[i]) +
                       " outside [0, " + std::to_string(rows) + ")");
    out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return t.push(std::move(out), true, [&table, kept = std::move(kept)](Tape<T>& t, int self) {
    const Matrix<T>& g = t.node(self).grad;
    for (std::size_t i = 0; i < kept.size(); ++i)
      table.grad.row(kept[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// Inverted dropout. Returns the input unchanged when inactive.
template <typename T>
Var dropout(Tape<T>& t, Var a, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  const T scale = T(1) / T(1.0 - rate);
  Matrix<T> mask(t.value(a).rows(), t.value(a).cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.uniform() < rate ? T(0) : scale;
  Matrix<T> out = t.value(a).cwiseProduct(mask);
  Var v = t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& t, int self) {
    const auto& n = t.node(self);
    t.accumulate(a, n.grad.cwiseProduct(n.saved[0]));
  });
  t.node(v).saved.push_back(std::move(mask));
  return v;
}

// Row b of the result is next.row(b) where keep[b], else prev.row(b).
template <typename T>
Var select_rows(Tape<T>& t, const std::vector<bool>& keep, Var next, Var prev) {
  const auto& vn = t.value(next);
  const auto& vp = t.value(prev);
  detail::check_shape(vn.rows() == vp.rows() && vn.cols() == vp.cols() &&
                          static_cast<Eigen::Index>(keep.size()) == vn.rows(),
                      "select_rows");
  Matrix<T> out = vp;
  for (Eigen::Index b = 0; b < vn.rows(); ++b)
    if (keep[static_cast<std::size_t>(b)]) out.row(b) = vn.row(b);
  return t.push(std::move(out), t.needs_grad(next) || t.needs_grad(prev),
                [keep, next, prev](Tape<T>& t, int self) {
                  const Matrix<T>& g = t.node(self).grad;
                  Matrix<T> gn = Matrix<T>::Zero(g.rows(), g.cols());
                  Matrix<T> gp = Matrix<T>::Zero(g.rows(), g.cols());
                  for (Eigen::Index b = 0; b < g.rows(); ++b) {
                    if (keep[static_cast<std::size_t>(b)])
                      gn.row(b) = g.row(b);
                    else
                      gp.row(b) = g.row(b);
                  }
                  t.accumulate(next, gn);
                  t.accumulate(prev, gp);
                });
}

// Stacks equal-width parts vertically.
template <typename T>
Var concat_rows(Tape<T>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool needs = false;
  for (Var p : parts) {
    detail::check_shape(t.value(p).cols() == cols, "concat_rows");
    rows += t.value(p).rows();
    needs = needs || t.needs_grad(p);
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  return t.push(std::move(out), needs, [parts](Tape<T>& t, int self) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      const auto n = t.value(p).rows();
      if (t.needs_grad(p)) t.accumulate(p, t.node(self).grad.middleRows(r, n));
      r += n;
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

// Single row: loss = -log softmax(logits)[target]; grad = softmax - onehot.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, std::int32_t target, std::span<T> grad) {
  const auto v = static_cast<std::int32_t>(logits.size());
  if (target < 0 || target >= v)
    throw IndexError("cross-entropy target " + std::to_string(target) + " outside [0, " +
                     std::to_string(v) + ")");
  T mx = logits[0];
  for (T x : logits) mx = std::max(mx, x);
  T z = 0;
  for (T x : logits) z += std::exp(x - mx);
  const T log_z = std::log(z) + mx;
  if (!grad.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - log_z);
    grad[static_cast<std::size_t>(target)] -= T(1);
  }
  return log_z - logits[static_cast<std::size_t>(target)];
}

// Scalar: sum_b weight[b] * CE(logits row b, targets[b]). Rows with zero
// weight contribute nothing, not even to the gradient.
template <typename T>
Var softmax_cross_entropy(Tape<T>& t, Var logits, std::vector<std::int32_t> targets,
                          std::vector<T> weights) {
  const Matrix<T>& l = t.value(logits);
  detail::check_shape(static_cast<Eigen::Index>(targets.size()) == l.rows() &&
                          weights.size() == targets.size(),
                      "softmax_cross_entropy");
  Matrix<T> probs = Matrix<T>::Zero(l.rows(), l.cols());
  T total = 0;
  for (Eigen::Index b = 0; b < l.rows(); ++b) {
    const auto bi = static_cast<std::size_t>(b);
    if (weights[bi] == T(0)) continue;
    std::span<const T> row(l.data() + b * l.cols(), static_cast<std::size_t>(l.cols()));
    std::span<T> grow(probs.data() + b * l.cols(), static_cast<std::size_t>(l.cols()));
    total += weights[bi] * softmax_cross_entropy<T>(row, targets[bi], grow);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  Var v = t.push(std::move(out), t.needs_grad(logits),
                 [logits, weights = std::move(weights)](Tape<T>& t, int self) {
                   auto& n = t.node(self);
                   const T g = n.grad(0, 0);
                   Matrix<T>& d = n.saved[0];
                   for (Eigen::Index b = 0; b < d.rows(); ++b)
                     d.row(b) *= g * weights[static_cast<std::size_t>(b)];
                   t.accumulate(logits, d);
                 });
  t.node(v).saved.push_back(std::move(probs));
  return v;
}

// Scalar: scale * sum over all cells of BCE(sigmoid(logit), label).
template <typename T>
Var binary_cross_entropy_with_logits(Tape<T>& t, Var logits, const Matrix<T>& labels, T scale) {
  const Matrix<T>& l = t.value(logits);
  detail::check_shape(l.rows() == labels.rows() && l.cols() == labels.cols(), "bce");
  T total = 0;
  Matrix<T> d(l.rows(), l.cols());
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    const T x = l.data()[i], y = labels.data()[i];
    // softplus(x) - y x, stable for both signs.
    total += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    d.data()[i] = detail::sigmoid(x) - y;
  }
  Matrix<T> out(1, 1);
  out(0, 0) = scale * total;
  Var v = t.push(std::move(out), t.needs_grad(logits), [logits, scale](Tape<T>& t, int self) {
    auto& n = t.node(self);
    t.accumulate(logits, n.saved[0] * (scale * n.grad(0, 0)));
  });
  t.node(v).saved.push_back(std::move(d));
  return v;
}

// ---------------------------------------------------------------------------
// GRU

template <typename T>
struct GruParams {
  int d_in = 0;
  int d_h = 0;
  Parameter<T> w_z, w_r, w_h;  // d_in x d_h
  Parameter<T> u_z, u_r, u_h;  // d_h x d_h
  Parameter<T> b_z, b_r, b_h;  // 1 x d_h

  GruParams() = default;
  GruParams(const std::string& prefix, int in, int hidden)
      : d_in(in),
        d_h(hidden),
        w_z(prefix + ".w_z", in, hidden),
        w_r(prefix + ".w_r", in, hidden),
        w_h(prefix + ".w_h", in, hidden),
        u_z(prefix + ".u_z", hidden, hidden),
        u_r(prefix + ".u_r", hidden, hidden),
        u_h(prefix + ".u_h", hidden, hidden),
        b_z(prefix + ".b_z", 1, hidden),
        b_r(prefix + ".b_r", 1, hidden),
        b_h(prefix + ".b_h", 1, hidden) {}

  ParamList<T> parameters() {
    return {&w_z, &w_r, &w_h, &u_z, &u_r, &u_h, &b_z, &b_r, &b_h};
  }
};

template <typename T>
struct GruActivations {
  Matrix<T> z, r, candidate, h;
};

// Batched forward of one step; rows are independent samples.
//   z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br)
//   c = tanh(x Wh + (r . h) Uh + bh), h' = (1 - z) . h + z . c
template <typename T>
GruActivations<T> gru_forward(const GruParams<T>& p, const Matrix<T>& x, const Matrix<T>& h) {
  detail::check_shape(x.cols() == p.d_in && h.cols() == p.d_h && x.rows() == h.rows(),
                      "gru_cell");
  GruActivations<T> a;
  a.z.noalias() = x * p.w_z.value;
  a.z.noalias() += h * p.u_z.value;
  a.z = (a.z.rowwise() + p.b_z.value.row(0)).unaryExpr([](T v) { return detail::sigmoid(v); });
  a.r.noalias() = x * p.w_r.value;
  a.r.noalias() += h * p.u_r.value;
  a.r = (a.r.rowwise() + p.b_r.value.row(0)).unaryExpr([](T v) { return detail::sigmoid(v); });
  const Matrix<T> rh = a.r.cwiseProduct(h);
  a.candidate.noalias() = x * p.w_h.value;
  a.candidate.noalias() += rh * p.u_h.value;
  a.candidate = (a.candidate.rowwise() + p.b_h.value.row(0)).array().tanh().matrix();
  a.h = (T(1) - a.z.array()).matrix().cwiseProduct(h) + a.z.cwiseProduct(a.candidate);
  return a;
}

template <typename T>
Matrix<T> gru_cell(const GruParams<T>& p, const Matrix<T>& x, const Matrix<T>& h) {
  return gru_forward(p, x, h).h;
}

// Recorded step. Parameter gradients flow straight into GruParams grads.
template <typename T>
Var gru_cell(Tape<T>& t, GruParams<T>& p, Var x, Var h) {
  GruActivations<T> a = gru_forward(p, t.value(x), t.value(h));
  Matrix<T> out = a.h;
  Var v = t.push(std::move(out), true, [&p, x, h](Tape<T>& t, int self) {
    auto& n = t.node(self);
    const Matrix<T>& g = n.grad;
    const Matrix<T>& z = n.saved[0];
    const Matrix<T>& r = n.saved[1];
    const Matrix<T>& c = n.saved[2];
    const Matrix<T>& xv = t.value(x);
    const Matrix<T>& hv = t.value(h);

    Matrix<T> dh = g.cwiseProduct((T(1) - z.array()).matrix());
    const Matrix<T> dz = g.cwiseProduct(c - hv);
    const Matrix<T> dc_pre = g.cwiseProduct(z).cwiseProduct((T(1) - c.array().square()).matrix());
    const Matrix<T> rh = r.cwiseProduct(hv);
    p.w_h.grad.noalias() += xv.transpose() * dc_pre;
    p.u_h.grad.noalias() += rh.transpose() * dc_pre;
    p.b_h.grad += dc_pre.colwise().sum();
    const Matrix<T> drh = dc_pre * p.u_h.value.transpose();
    dh += drh.cwiseProduct(r);
    const Matrix<T> dr_pre =
        drh.cwiseProduct(hv).cwiseProduct(r.cwiseProduct((T(1) - r.array()).matrix()));
    const Matrix<T> dz_pre = dz.cwiseProduct(z.cwiseProduct((T(1) - z.array()).matrix()));
    p.w_r.grad.noalias() += xv.transpose() * dr_pre;
    p.u_r.grad.noalias() += hv.transpose() * dr_pre;
    p.b_r.grad += dr_pre.colwise().sum();
    p.w_z.grad.noalias() += xv.transpose() * dz_pre;
    p.u_z.grad.noalias() += hv.transpose() * dz_pre;
    p.b_z.grad += dz_pre.colwise().sum();
    if (t.needs_grad(h)) {
      dh.noalias() += dr_pre * p.u_r.value.transpose();
      dh.noalias() += dz_pre * p.u_z.value.transpose();
      t.accumulate(h, dh);
    }
    if (t.needs_grad(x)) {
      Matrix<T> dx = dc_pre * p.w_h.value.transpose();
      dx.noalias() += dr_pre * p.w_r.value.transpose();
      dx.noalias() += dz_pre * p.w_z.value.transpose();
      t.accumulate(x, dx);
    }
  });
  auto& n = t.node(v);
  n.saved.push_back(std::move(a.z));
  n.saved.push_back(std::move(a.r));
  n.saved.push_back(std::move(a.candidate));
  return v;
}

// ---------------------------------------------------------------------------
// Optimisation

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
    if (!(hyper_.lr > 0.0)) throw ParameterError("Adam learning rate must be positive");
    for (auto* p : params_) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    for (auto* p : params_)
      if (!p->grad.allFinite())
        throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
    ++steps_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(steps_));
    const T b1 = T(hyper_.beta1), b2 = T(hyper_.beta2);
    const T lr = T(hyper_.lr), eps = T(hyper_.eps);
    const T inv_bc1 = T(1.0 / bc1), inv_bc2 = T(1.0 / bc2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      auto& m = m_[i];
      auto& v = v_[i];
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseAbs2();
      params_[i]->value.array() -=
          lr * (m.array() * inv_bc1) / ((v.array() * inv_bc2).sqrt() + eps);
    }
  }

  std::uint64_t steps() const { return steps_; }
  const AdamHyper& hyper() const { return hyper_; }
  const Matrix<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Matrix<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParamList<T> params_;
  AdamHyper hyper_;
  std::vector<Matrix<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

// Rescales all gradients jointly when their global L2 norm exceeds max_norm.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

// Standalone inverted dropout on a buffer.
template <typename T>
void dropout_inplace(std::span<T> x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return;
  const T scale = T(1) / T(1.0 - rate);
  for (T& v : x) v = rng.uniform() < rate ? T(0) : v * scale;
}

template <typename T>
void init_uniform(Parameter<T>& p, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = T(rng.uniform(-bound, bound));
}

template <typename T>
void init_normal(Parameter<T>& p, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = T(rng.normal(0.0, stddev));
}

}  // namespace uniprofile::nn
