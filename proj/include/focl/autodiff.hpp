#pragma once

#include "focl/common.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace focl {

// Dense 64-bit float tensor. Rank is 0, 1 or 2; storage is always a row-major
// matrix (a scalar is 1x1, a rank-1 vector is 1xn).
struct Tensor {
  Mat values;
  int rank = 2;

  Tensor() : values(0, 0), rank(2) {}
  Tensor(Mat v, int r = 2) : values(std::move(v)), rank(r) {}

  static Tensor scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), 0);
  }

  std::vector<Index> shape() const {
    if (rank == 0) return {};
    if (rank == 1) return {values.cols()};
    return {values.rows(), values.cols()};
  }

  Index size() const { return values.size(); }
  bool finite() const { return values.allFinite(); }
};

// Trainable parameter: values plus a persistent gradient accumulator.
// Gradients accumulate across backward passes until zero_grad().
struct Parameter {
  std::string id;
  Tensor tensor;
  Mat grad;

  Parameter() = default;
  Parameter(std::string id_, Mat values, int rank = 2)
      : id(std::move(id_)), tensor(std::move(values), rank) {
    grad = Mat::Zero(tensor.values.rows(), tensor.values.cols());
  }

  void zero_grad() { grad.setZero(); }
};

struct Node;
using Var = std::shared_ptr<Node>;

// One vertex of a define-by-run graph. Creation order is a valid topological
// order, so backward just walks reachable nodes by descending id.
struct Node {
  Tensor value;
  Mat grad;
  bool requires_grad = false;
  const char* op = "";
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  Parameter* param = nullptr;
  std::uint64_t id = 0;

  void accumulate(const Mat& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

// ---- graph entry points ----
Var constant(Tensor t);
Var constant(Mat m);
Var scalar_const(double v);
// Leaf that tracks its own gradient (for gradients w.r.t. inputs).
Var input(Mat m);
// Parameter leaf; with track=false the parameter is treated as a constant.
Var leaf(Parameter& p, bool track = true);

// ---- primitives ----
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_rowvec(Var x, Var r);  // r broadcast over rows, shape (1, cols)
Var mul_rowvec(Var x, Var r);
Var add_colvec(Var x, Var v);  // v broadcast over columns, shape (rows, 1)
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var square(Var a);
Var sqrt_op(Var a);
Var sum_all(Var a);   // -> rank-0
Var mean_all(Var a);  // -> rank-0
Var row_sum(Var a);   // (n,c) -> (n,1)
Var row_norm(Var a);  // (n,c) -> (n,1), Euclidean norm per row
Var concat_cols(Var a, Var b);
Var slice_rows(Var a, Index r0, Index n);
Var slice_cols(Var a, Index c0, Index n);

inline Var operator+(Var a, Var b) { return add(std::move(a), std::move(b)); }
inline Var operator-(Var a, Var b) { return sub(std::move(a), std::move(b)); }
inline Var operator*(Var a, Var b) { return mul(std::move(a), std::move(b)); }

// Mean over rows of the squared Euclidean distance between paired rows.
Var mean_squared_rowdist(Var a, Var b);
// Softmax cross-entropy of logits (n, classes) against one shared class.
Var softmax_cross_entropy(Var logits, Index cls);

// Reverse-mode sweep from a scalar loss. Leaf nodes bound to a Parameter
// accumulate into Parameter::grad; plain input() leaves keep their gradient
// on the node. Throws NumericFailure when a non-finite gradient shows up.
void backward(const Var& loss);

void zero_grads(const std::vector<Parameter*>& params);
bool grads_finite(const std::vector<Parameter*>& params);

// ---- Adam ----
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;

  struct Moments {
    Mat m, v;
  };
  std::map<std::string, Moments> moments;
};

// One Adam update from the accumulated gradients. Gradients are left
// untouched; the caller decides when to reset them.
void adam_step(const std::vector<Parameter*>& params, AdamState& state);

// ---- finite-difference oracle ----
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  Index worst_index = 0;
};

// Central-difference check of d(loss)/d(param) for every entry of every
// parameter. build_loss must be deterministic; it is called twice up front
// and a mismatch is a contract violation. Relative error is
// |analytic - fd| / max(1, |analytic|).
GradCheckResult grad_check(const std::function<Var()>& build_loss,
                           const std::vector<Parameter*>& params,
                           double eps = 1e-5);

}  // namespace focl
