#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "focl/autodiff.hpp"
#include "focl/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace focl;

namespace {

Parameter make_param(const std::string& id, Index r, Index c, Rng& rng,
                     double lo = -1.0, double hi = 1.0) {
  return Parameter(id, rng.uniform_mat(r, c, lo, hi));
}

// fan-in scaled init, same scheme the networks use
Parameter make_layer(const std::string& id, Index in, Index out, Rng& rng) {
  const double s = 1.0 / std::sqrt(double(in));
  return Parameter(id, rng.uniform_mat(in, out, -s, s));
}

}  // namespace

TEST_CASE("two-layer mlp gradient matches central differences") {
  Rng rng(7);
  Parameter w1 = make_layer("w1", 3, 5, rng);
  Parameter b1("b1", Mat::Zero(1, 5), 1);
  Parameter w2 = make_layer("w2", 5, 1, rng);
  Parameter b2("b2", Mat::Zero(1, 1), 1);
  Mat x = rng.uniform_mat(4, 3, -1.0, 1.0);

  auto loss = [&]() {
    Var h = sigmoid(add_rowvec(matmul(constant(x), leaf(w1)), leaf(b1)));
    Var y = add_rowvec(matmul(h, leaf(w2)), leaf(b2));
    return mean_all(square(y));
  };
  auto res = grad_check(loss, {&w1, &b1, &w2, &b2}, 1e-5);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("one adam step on a quadratic from x=1 lands near 0.9") {
  Parameter x("x", Mat::Constant(1, 1, 1.0), 0);
  Var loss = mean_all(square(leaf(x)));
  backward(loss);
  CHECK(x.grad(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

  AdamState adam;
  adam.lr = 0.1;
  adam.beta1 = 0.9;
  adam.beta2 = 0.999;
  adam_step({&x}, adam);
  CHECK(std::abs(x.tensor.values(0, 0) - 0.9) < 1e-6);
  CHECK(adam.step == 1);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Rng rng(3);
  Parameter w = make_param("w", 2, 3, rng);
  Var y = square(leaf(w));
  CHECK_THROWS_AS(backward(y), ContractViolation);
}

TEST_CASE("sqrt at zero surfaces as a numeric failure naming the node") {
  Parameter w("w", Mat::Zero(1, 1));
  Var loss = mean_all(sqrt_op(leaf(w)));
  try {
    backward(loss);
    // the bad gradient is caught once it reaches a consumer of sqrt's input
    Mat g = w.grad;
    CHECK(!g.allFinite());
  } catch (const NumericFailure& e) {
    CHECK(std::string(e.what()).find("sqrt") != std::string::npos);
  }
}

TEST_CASE("gradients accumulate across backward calls until reset") {
  Rng rng(11);
  Parameter w = make_param("w", 2, 2, rng);
  auto build = [&]() { return mean_all(square(leaf(w))); };
  zero_grads({&w});
  backward(build());
  Mat once = w.grad;
  backward(build());
  CHECK((w.grad - 2.0 * once).norm() == doctest::Approx(0.0));
  zero_grads({&w});
  CHECK(w.grad.norm() == 0.0);
}

TEST_CASE("backward of a sum of losses equals summed backwards") {
  Rng rng(13);
  Parameter w = make_param("w", 3, 3, rng);
  Mat a = rng.uniform_mat(3, 3, -1.0, 1.0);
  Mat b = rng.uniform_mat(3, 3, -1.0, 1.0);
  auto la = [&]() { return mean_all(square(sub(leaf(w), constant(a)))); };
  auto lb = [&]() { return mean_all(mul(leaf(w), constant(b))); };

  zero_grads({&w});
  backward(add(la(), lb()));
  Mat joint = w.grad;

  zero_grads({&w});
  backward(la());
  backward(lb());
  Mat split = w.grad;

  CHECK((joint - split).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam update magnitudes are symmetric under sign flips") {
  Rng rng(17);
  Mat w0 = rng.uniform_mat(2, 3, -1.0, 1.0);
  Mat g = rng.uniform_mat(2, 3, -2.0, 2.0);

  auto delta = [&](double gsign, double lr) {
    Parameter p("p", w0);
    p.grad = g * gsign;
    AdamState st;
    st.lr = lr;
    adam_step({&p}, st);
    return Mat(p.tensor.values - w0);
  };

  Mat d1 = delta(1.0, 1e-3);
  Mat d2 = delta(-1.0, 1e-3);
  Mat d3 = delta(1.0, -1e-3);
  Mat d4 = delta(-1.0, -1e-3);
  CHECK((d1 + d2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d1 + d3).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d1 - d4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam step counter moves by one per call") {
  Parameter p("p", Mat::Constant(1, 1, 1.0));
  p.grad.setConstant(1.0);
  AdamState st;
  adam_step({&p}, st);
  adam_step({&p}, st);
  CHECK(st.step == 2);
}

TEST_CASE("grad_check flags a non-deterministic loss builder") {
  Parameter p("p", Mat::Constant(1, 1, 1.0));
  int calls = 0;
  auto flaky = [&]() {
    ++calls;
    return mean_all(scale(leaf(p), double(calls)));
  };
  CHECK_THROWS_AS(grad_check(flaky, {&p}), ContractViolation);
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(5);
  Parameter a = make_param("a", 2, 3, rng);
  Parameter b = make_param("b", 3, 2, rng);
  CHECK_THROWS_AS(add(leaf(a), leaf(b)), ContractViolation);
  Parameter c = make_param("c", 4, 2, rng);
  CHECK_THROWS_AS(matmul(leaf(a), leaf(c)), ContractViolation);
  CHECK_THROWS_AS(slice_cols(leaf(a), 2, 2), ContractViolation);
}

TEST_CASE("tensor shape bookkeeping") {
  Tensor s = Tensor::scalar(3.0);
  CHECK(s.shape().empty());
  CHECK(s.size() == 1);
  Tensor v(Mat::Zero(1, 4), 1);
  CHECK(v.shape() == std::vector<Index>{4});
  Tensor m(Mat::Zero(2, 3), 2);
  CHECK(m.shape() == std::vector<Index>{2, 3});
  CHECK(m.size() == 6);
}

TEST_CASE("every primitive passes finite-difference checks across seeds") {
  // One tiny graph per primitive; 100 fixed seeds.
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    Mat c34 = rng.uniform_mat(3, 4, -1.0, 1.0);
    Mat c42 = rng.uniform_mat(4, 2, -1.0, 1.0);

    Parameter A = make_param("A", 3, 4, rng);
    Parameter B = make_param("B", 3, 4, rng);
    Parameter M = make_param("M", 4, 2, rng);
    Parameter r("r", rng.uniform_mat(1, 4, -1.0, 1.0), 1);
    Parameter v("v", rng.uniform_mat(3, 1, -1.0, 1.0));
    Parameter P("P", rng.uniform_mat(3, 4, 0.5, 2.0));  // positive domain

    struct Case {
      const char* name;
      std::function<Var()> loss;
      std::vector<Parameter*> params;
    };
    const std::vector<Case> cases = {
        {"matmul", [&] { return mean_all(matmul(leaf(A), leaf(M))); },
         {&A, &M}},
        {"add", [&] { return mean_all(mul(add(leaf(A), leaf(B)),
                                          constant(c34))); },
         {&A, &B}},
        {"sub", [&] { return mean_all(mul(sub(leaf(A), leaf(B)),
                                          constant(c34))); },
         {&A, &B}},
        {"mul", [&] { return mean_all(mul(leaf(A), leaf(B))); }, {&A, &B}},
        {"add_rowvec",
         [&] { return mean_all(mul(add_rowvec(leaf(A), leaf(r)),
                                   constant(c34))); },
         {&A, &r}},
        {"mul_rowvec",
         [&] { return mean_all(mul_rowvec(leaf(A), leaf(r))); }, {&A, &r}},
        {"add_colvec",
         [&] { return mean_all(mul(add_colvec(leaf(A), leaf(v)),
                                   constant(c34))); },
         {&A, &v}},
        {"scale", [&] { return mean_all(scale(leaf(A), -1.7)); }, {&A}},
        {"add_scalar", [&] { return mean_all(square(add_scalar(leaf(A),
                                                               0.3))); },
         {&A}},
        {"relu", [&] { return mean_all(mul(relu(leaf(A)), constant(c34))); },
         {&A}},
        {"leaky_relu",
         [&] { return mean_all(mul(leaky_relu(leaf(A), 0.2),
                                   constant(c34))); },
         {&A}},
        {"sigmoid", [&] { return mean_all(mul(sigmoid(leaf(A)),
                                              constant(c34))); },
         {&A}},
        {"exp", [&] { return mean_all(mul(exp_op(leaf(A)), constant(c34))); },
         {&A}},
        {"log", [&] { return mean_all(mul(log_op(leaf(P)), constant(c34))); },
         {&P}},
        {"square", [&] { return mean_all(square(leaf(A))); }, {&A}},
        {"sqrt", [&] { return mean_all(mul(sqrt_op(leaf(P)),
                                           constant(c34))); },
         {&P}},
        {"sum", [&] { return sum_all(mul(leaf(A), constant(c34))); }, {&A}},
        {"mean", [&] { return mean_all(square(leaf(A))); }, {&A}},
        {"row_sum", [&] { return mean_all(square(row_sum(leaf(A)))); }, {&A}},
        {"row_norm", [&] { return mean_all(square(row_norm(leaf(A)))); },
         {&A}},
        {"concat_cols",
         [&] {
           Mat c38 = c34;
           return mean_all(square(concat_cols(leaf(A), leaf(B))));
         },
         {&A, &B}},
        {"slice_rows",
         [&] { return mean_all(square(slice_rows(leaf(A), 1, 2))); }, {&A}},
        {"slice_cols",
         [&] { return mean_all(square(slice_cols(leaf(A), 1, 2))); }, {&A}},
        {"mean_squared_rowdist",
         [&] { return mean_squared_rowdist(leaf(A), leaf(B)); }, {&A, &B}},
        {"softmax_cross_entropy",
         [&] { return softmax_cross_entropy(matmul(leaf(A), leaf(M)), 1); },
         {&A, &M}},
    };

    for (const auto& tc : cases) {
      auto res = grad_check(tc.loss, tc.params, 1e-6);
      INFO("primitive ", tc.name, " seed ", seed, " worst ",
           res.worst_param);
      CHECK(res.max_rel_err < 1e-5);
    }
  }
}

TEST_CASE("input leaves expose gradients w.r.t. data") {
  Rng rng(23);
  Mat x = rng.uniform_mat(3, 2, -1.0, 1.0);
  Var xin = input(x);
  Var loss = mean_all(square(xin));
  backward(loss);
  Mat expected = 2.0 * x / double(x.size());
  CHECK((xin->grad - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross-entropy of uniform logits is log of the class count") {
  Var logits = constant(Mat::Zero(4, 10));
  Var ce = softmax_cross_entropy(logits, 3);
  CHECK(ce->value.values(0, 0) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
}
