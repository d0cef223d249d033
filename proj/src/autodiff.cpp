#include "focl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace focl {
namespace {

std::uint64_t next_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

Var make_node(Tensor value, const char* op, std::vector<Var> parents,
              bool requires_grad, std::function<void(Node&)> fn) {
  if (!value.finite())
    throw NumericFailure(std::string("non-finite values out of op '") + op +
                         "'");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->parents = std::move(parents);
  n->requires_grad = requires_grad;
  n->backward_fn = std::move(fn);
  n->id = next_id();
  return n;
}

bool any_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a->value.values.rows() == b->value.values.rows() &&
              a->value.values.cols() == b->value.values.cols(),
          std::string(op) + ": shape mismatch");
}

int binary_rank(const Var& a, const Var& b) {
  return std::max(a->value.rank, b->value.rank);
}

}  // namespace

Var constant(Tensor t) {
  return make_node(std::move(t), "constant", {}, false, nullptr);
}

Var constant(Mat m) { return constant(Tensor(std::move(m), 2)); }

Var scalar_const(double v) {
  return make_node(Tensor::scalar(v), "constant", {}, false, nullptr);
}

Var input(Mat m) {
  return make_node(Tensor(std::move(m), 2), "input", {}, true, nullptr);
}

Var leaf(Parameter& p, bool track) {
  auto n = make_node(p.tensor, "leaf", {}, track, nullptr);
  if (track) n->param = &p;
  return n;
}

Var matmul(Var a, Var b) {
  require(a->value.values.cols() == b->value.values.rows(),
          "matmul: inner dimensions disagree");
  Mat out = a->value.values * b->value.values;
  bool rg = any_grad({a, b});
  return make_node(
      Tensor(std::move(out), 2), "matmul", {a, b}, rg, [a, b](Node& self) {
        if (a->requires_grad)
          a->accumulate(self.grad * b->value.values.transpose());
        if (b->requires_grad)
          b->accumulate(a->value.values.transpose() * self.grad);
      });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Mat out = a->value.values + b->value.values;
  bool rg = any_grad({a, b});
  int rank = binary_rank(a, b);
  return make_node(Tensor(std::move(out), rank), "add", {a, b}, rg,
                   [a, b](Node& self) {
                     if (a->requires_grad) a->accumulate(self.grad);
                     if (b->requires_grad) b->accumulate(self.grad);
                   });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Mat out = a->value.values - b->value.values;
  bool rg = any_grad({a, b});
  int rank = binary_rank(a, b);
  return make_node(Tensor(std::move(out), rank), "sub", {a, b}, rg,
                   [a, b](Node& self) {
                     if (a->requires_grad) a->accumulate(self.grad);
                     if (b->requires_grad) b->accumulate(-self.grad);
                   });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Mat out = a->value.values.cwiseProduct(b->value.values);
  bool rg = any_grad({a, b});
  int rank = binary_rank(a, b);
  return make_node(
      Tensor(std::move(out), rank), "mul", {a, b}, rg, [a, b](Node& self) {
        if (a->requires_grad)
          a->accumulate(self.grad.cwiseProduct(b->value.values));
        if (b->requires_grad)
          b->accumulate(self.grad.cwiseProduct(a->value.values));
      });
}

Var add_rowvec(Var x, Var r) {
  require(r->value.values.rows() == 1 &&
              r->value.values.cols() == x->value.values.cols(),
          "add_rowvec: r must be (1, cols of x)");
  Mat out = x->value.values.rowwise() + r->value.values.row(0);
  bool rg = any_grad({x, r});
  return make_node(Tensor(std::move(out), x->value.rank), "add_rowvec", {x, r},
                   rg, [x, r](Node& self) {
                     if (x->requires_grad) x->accumulate(self.grad);
                     if (r->requires_grad)
                       r->accumulate(self.grad.colwise().sum());
                   });
}

Var mul_rowvec(Var x, Var r) {
  require(r->value.values.rows() == 1 &&
              r->value.values.cols() == x->value.values.cols(),
          "mul_rowvec: r must be (1, cols of x)");
  Mat out = x->value.values.array().rowwise() *
            r->value.values.row(0).array();
  bool rg = any_grad({x, r});
  return make_node(
      Tensor(std::move(out), x->value.rank), "mul_rowvec", {x, r}, rg,
      [x, r](Node& self) {
        if (x->requires_grad)
          x->accumulate((self.grad.array().rowwise() *
                         r->value.values.row(0).array())
                            .matrix());
        if (r->requires_grad)
          r->accumulate(
              self.grad.cwiseProduct(x->value.values).colwise().sum());
      });
}

Var add_colvec(Var x, Var v) {
  require(v->value.values.cols() == 1 &&
              v->value.values.rows() == x->value.values.rows(),
          "add_colvec: v must be (rows of x, 1)");
  Mat out = x->value.values.colwise() + v->value.values.col(0);
  bool rg = any_grad({x, v});
  return make_node(Tensor(std::move(out), x->value.rank), "add_colvec", {x, v},
                   rg, [x, v](Node& self) {
                     if (x->requires_grad) x->accumulate(self.grad);
                     if (v->requires_grad)
                       v->accumulate(self.grad.rowwise().sum());
                   });
}

Var scale(Var a, double s) {
  Mat out = a->value.values * s;
  return make_node(Tensor(std::move(out), a->value.rank), "scale", {a},
                   a->requires_grad, [a, s](Node& self) {
                     if (a->requires_grad) a->accumulate(self.grad * s);
                   });
}

Var add_scalar(Var a, double s) {
  Mat out = a->value.values.array() + s;
  return make_node(Tensor(std::move(out), a->value.rank), "add_scalar", {a},
                   a->requires_grad, [a](Node& self) {
                     if (a->requires_grad) a->accumulate(self.grad);
                   });
}

Var relu(Var a) {
  Mat out = a->value.values.cwiseMax(0.0);
  return make_node(
      Tensor(std::move(out), a->value.rank), "relu", {a}, a->requires_grad,
      [a](Node& self) {
        if (!a->requires_grad) return;
        Mat g = (a->value.values.array() > 0.0)
                    .select(self.grad, Mat::Zero(self.grad.rows(),
                                                 self.grad.cols()));
        a->accumulate(g);
      });
}

Var leaky_relu(Var a, double slope) {
  Mat out = (a->value.values.array() > 0.0)
                .select(a->value.values, a->value.values * slope);
  return make_node(
      Tensor(std::move(out), a->value.rank), "leaky_relu", {a},
      a->requires_grad, [a, slope](Node& self) {
        if (!a->requires_grad) return;
        Mat g = (a->value.values.array() > 0.0)
                    .select(self.grad, self.grad * slope);
        a->accumulate(g);
      });
}

Var sigmoid(Var a) {
  Mat out = (1.0 / (1.0 + (-a->value.values.array()).exp())).matrix();
  auto n = make_node(Tensor(std::move(out), a->value.rank), "sigmoid", {a},
                     a->requires_grad, nullptr);
  if (a->requires_grad) {
    std::weak_ptr<Node> self_weak = n;
    n->backward_fn = [a, self_weak](Node& self) {
      Mat y = self.value.values;
      a->accumulate(
          (self.grad.array() * y.array() * (1.0 - y.array())).matrix());
    };
  }
  return n;
}

Var exp_op(Var a) {
  Mat out = a->value.values.array().exp();
  return make_node(Tensor(std::move(out), a->value.rank), "exp", {a},
                   a->requires_grad, [a](Node& self) {
                     if (a->requires_grad)
                       a->accumulate(
                           self.grad.cwiseProduct(self.value.values));
                   });
}

Var log_op(Var a) {
  Mat out = a->value.values.array().log();
  return make_node(Tensor(std::move(out), a->value.rank), "log", {a},
                   a->requires_grad, [a](Node& self) {
                     if (a->requires_grad)
                       a->accumulate(
                           self.grad.cwiseQuotient(a->value.values));
                   });
}

Var square(Var a) {
  Mat out = a->value.values.array().square();
  return make_node(Tensor(std::move(out), a->value.rank), "square", {a},
                   a->requires_grad, [a](Node& self) {
                     if (a->requires_grad)
                       a->accumulate((self.grad.array() * 2.0 *
                                      a->value.values.array())
                                         .matrix());
                   });
}

Var sqrt_op(Var a) {
  Mat out = a->value.values.array().sqrt();
  auto n = make_node(Tensor(std::move(out), a->value.rank), "sqrt", {a},
                     a->requires_grad, nullptr);
  if (a->requires_grad) {
    n->backward_fn = [a](Node& self) {
      a->accumulate(
          (self.grad.array() * 0.5 / self.value.values.array()).matrix());
    };
  }
  return n;
}

Var sum_all(Var a) {
  const double s = a->value.values.sum();
  return make_node(Tensor::scalar(s), "sum", {a}, a->requires_grad,
                   [a](Node& self) {
                     if (a->requires_grad)
                       a->accumulate(Mat::Constant(a->value.values.rows(),
                                                   a->value.values.cols(),
                                                   self.grad(0, 0)));
                   });
}

Var mean_all(Var a) {
  require(a->value.size() > 0, "mean: empty tensor");
  const double n = static_cast<double>(a->value.size());
  const double s = a->value.values.sum() / n;
  return make_node(Tensor::scalar(s), "mean", {a}, a->requires_grad,
                   [a, n](Node& self) {
                     if (a->requires_grad)
                       a->accumulate(Mat::Constant(a->value.values.rows(),
                                                   a->value.values.cols(),
                                                   self.grad(0, 0) / n));
                   });
}

Var row_sum(Var a) {
  Mat out = a->value.values.rowwise().sum();
  return make_node(
      Tensor(std::move(out), 2), "row_sum", {a}, a->requires_grad,
      [a](Node& self) {
        if (a->requires_grad)
          a->accumulate(self.grad * Mat::Ones(1, a->value.values.cols()));
      });
}

Var row_norm(Var a) {
  Mat out = a->value.values.rowwise().norm();
  auto n = make_node(Tensor(std::move(out), 2), "row_norm", {a},
                     a->requires_grad, nullptr);
  if (a->requires_grad) {
    n->backward_fn = [a](Node& self) {
      // d||x||/dx = x / ||x||, rows with zero norm get zero gradient
      Mat g(a->value.values.rows(), a->value.values.cols());
      for (Index i = 0; i < g.rows(); ++i) {
        const double nrm = self.value.values(i, 0);
        if (nrm > 0.0)
          g.row(i) = a->value.values.row(i) * (self.grad(i, 0) / nrm);
        else
          g.row(i).setZero();
      }
      a->accumulate(g);
    };
  }
  return n;
}

Var concat_cols(Var a, Var b) {
  require(a->value.values.rows() == b->value.values.rows(),
          "concat_cols: row counts differ");
  Mat out(a->value.values.rows(),
          a->value.values.cols() + b->value.values.cols());
  out << a->value.values, b->value.values;
  bool rg = any_grad({a, b});
  return make_node(
      Tensor(std::move(out), 2), "concat_cols", {a, b}, rg,
      [a, b](Node& self) {
        const Index ca = a->value.values.cols();
        if (a->requires_grad)
          a->accumulate(self.grad.leftCols(ca));
        if (b->requires_grad)
          b->accumulate(self.grad.rightCols(self.grad.cols() - ca));
      });
}

Var slice_rows(Var a, Index r0, Index n) {
  require(r0 >= 0 && n >= 0 && r0 + n <= a->value.values.rows(),
          "slice_rows: range out of bounds");
  Mat out = a->value.values.middleRows(r0, n);
  return make_node(
      Tensor(std::move(out), 2), "slice_rows", {a}, a->requires_grad,
      [a, r0, n](Node& self) {
        if (!a->requires_grad) return;
        Mat g = Mat::Zero(a->value.values.rows(), a->value.values.cols());
        g.middleRows(r0, n) = self.grad;
        a->accumulate(g);
      });
}

Var slice_cols(Var a, Index c0, Index n) {
  require(c0 >= 0 && n >= 0 && c0 + n <= a->value.values.cols(),
          "slice_cols: range out of bounds");
  Mat out = a->value.values.middleCols(c0, n);
  return make_node(
      Tensor(std::move(out), 2), "slice_cols", {a}, a->requires_grad,
      [a, c0, n](Node& self) {
        if (!a->requires_grad) return;
        Mat g = Mat::Zero(a->value.values.rows(), a->value.values.cols());
        g.middleCols(c0, n) = self.grad;
        a->accumulate(g);
      });
}

Var mean_squared_rowdist(Var a, Var b) {
  check_same_shape(a, b, "mean_squared_rowdist");
  const double n = static_cast<double>(a->value.values.rows());
  return scale(sum_all(square(sub(std::move(a), std::move(b)))), 1.0 / n);
}

Var softmax_cross_entropy(Var logits, Index cls) {
  require(cls >= 0 && cls < logits->value.values.cols(),
          "softmax_cross_entropy: class index out of range");
  // Row-wise max enters as a constant shift; the gradient is unchanged by
  // any fixed shift, so log-sum-exp stays exact and overflow-safe.
  Mat m = logits->value.values.rowwise().maxCoeff();
  Var m_const = make_node(Tensor(m, 2), "constant", {}, false, nullptr);
  Var shifted = add_colvec(logits, scale(m_const, -1.0));
  Var lse = add(log_op(row_sum(exp_op(shifted))), m_const);
  Var picked = slice_cols(logits, cls, 1);
  return mean_all(sub(lse, picked));
}

void backward(const Var& loss) {
  require(loss != nullptr, "backward: null loss");
  require(loss->value.size() == 1,
          "backward: loss must be a scalar (got non-scalar tensor)");
  if (!loss->requires_grad) return;

  // Reachable subgraph, then descending creation id = reverse topological.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.get()};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  loss->accumulate(Mat::Ones(1, 1));
  for (Node* n : order) {
    if (n->grad.size() == 0) continue;
    if (n->backward_fn) {
      n->backward_fn(*n);
      for (const auto& p : n->parents) {
        if (p->requires_grad && p->grad.size() != 0 && !p->grad.allFinite())
          throw NumericFailure(std::string("non-finite gradient out of op '") +
                               n->op + "'");
      }
    }
    if (n->param != nullptr) n->param->grad += n->grad;
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

bool grads_finite(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params)
    if (!p->grad.allFinite()) return false;
  return true;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state) {
  state.step += 1;
  const double b1t = 1.0 - std::pow(state.beta1, double(state.step));
  const double b2t = 1.0 - std::pow(state.beta2, double(state.step));
  for (Parameter* p : params) {
    auto& mom = state.moments[p->id];
    if (mom.m.size() == 0) {
      mom.m = Mat::Zero(p->grad.rows(), p->grad.cols());
      mom.v = Mat::Zero(p->grad.rows(), p->grad.cols());
    }
    require(mom.m.rows() == p->grad.rows() && mom.m.cols() == p->grad.cols(),
            "adam_step: moment/gradient shape mismatch for " + p->id);
    mom.m = state.beta1 * mom.m + (1.0 - state.beta1) * p->grad;
    mom.v = state.beta2 * mom.v +
            (1.0 - state.beta2) * p->grad.cwiseProduct(p->grad);
    Mat m_hat = mom.m / b1t;
    Mat v_hat = mom.v / b2t;
    p->tensor.values.array() -=
        state.lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
    if (!p->tensor.values.allFinite())
      throw NumericFailure("adam_step: parameter " + p->id +
                           " became non-finite");
  }
}

GradCheckResult grad_check(const std::function<Var()>& build_loss,
                           const std::vector<Parameter*>& params,
                           double eps) {
  require(eps > 0.0, "grad_check: eps must be positive");
  Var l1 = build_loss();
  require(l1->value.size() == 1, "grad_check: loss must be scalar");
  Var l2 = build_loss();
  if (l1->value.values(0, 0) != l2->value.values(0, 0))
    throw ContractViolation(
        "grad_check: loss builder is not deterministic (two evaluations "
        "differ)");

  zero_grads(params);
  backward(l1);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    Mat& w = p->tensor.values;
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) {
        const double orig = w(i, j);
        w(i, j) = orig + eps;
        const double up = build_loss()->value.values(0, 0);
        w(i, j) = orig - eps;
        const double dn = build_loss()->value.values(0, 0);
        w(i, j) = orig;
        const double fd = (up - dn) / (2.0 * eps);
        const double an = analytic[pi](i, j);
        const double rel =
            std::abs(an - fd) / std::max(1.0, std::abs(an));
        if (rel > res.max_rel_err) {
          res.max_rel_err = rel;
          res.worst_param = p->id;
          res.worst_index = i * w.cols() + j;
        }
      }
    }
  }
  zero_grads(params);
  return res;
}

}  // namespace focl
