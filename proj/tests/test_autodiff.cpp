#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cgrl/autodiff.hpp"
#include "cgrl/rng.hpp"

using namespace cgrl;

TEST_CASE("softmax of uniform logits is uniform") {
  Tape t;
  Var x = t.constant(Tensor::vec({0.0, 0.0, 0.0}));
  Var y = softmax(x);
  for (int i = 0; i < 3; ++i) REQUIRE(t.val(y)[i] == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + trial % 4, cols = 2 + trial % 5;
    Tensor m = Tensor::zeros({rows, cols});
    for (double& v : m.data) v = rng.normal(0, 5);
    Tape t;
    Var y = softmax(t.constant(m));
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += t.val(y).at2(r, c);
      REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("cosine similarity identities") {
  Tape t;
  Var v = t.constant(Tensor::vec({0.3, -1.2, 2.0}));
  REQUIRE(t.val(cosine_similarity(v, v))[0] == Catch::Approx(1.0).margin(1e-12));

  Var a = t.constant(Tensor::vec({1.0, 0.0}));
  Var b = t.constant(Tensor::vec({0.0, 1.0}));
  REQUIRE(t.val(cosine_similarity(a, b))[0] == Catch::Approx(0.0).margin(1e-12));

  Var z = t.constant(Tensor::vec({0.0, 0.0}));
  REQUIRE(t.val(cosine_similarity(z, v.tape == &t ? a : a))[0] == 0.0);
}

TEST_CASE("sigmoid midpoint") {
  Tape t;
  Var y = sigmoid(t.constant(Tensor::scalar(0.0)));
  REQUIRE(t.val(y)[0] == 0.5);
}

TEST_CASE("shape mismatch and domain errors") {
  Tape t;
  Var a = t.constant(Tensor::vec({1.0, 2.0}));
  Var b = t.constant(Tensor::vec({1.0, 2.0, 3.0}));
  REQUIRE_THROWS_AS(add(a, b), ShapeError);
  REQUIRE_THROWS_AS(mul(a, b), ShapeError);
  REQUIRE_THROWS_AS(log(t.constant(Tensor::vec({1.0, 0.0}))), MathDomainError);
  REQUIRE_THROWS_AS(log(t.constant(Tensor::vec({-2.0}))), MathDomainError);
  Var m = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  REQUIRE_THROWS_AS(matmul(m, a), ShapeError);
}

TEST_CASE("non-scalar loss rejected") {
  Tape t;
  ParamStore store;
  Parameter& p = store.add("x", Tensor::vec({1.0, 2.0}));
  Var x = t.param(p);
  REQUIRE_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  ParamStore store;
  Parameter& p = store.add("x", Tensor::scalar(3.0));
  Tape t;
  Var x = t.param(p);
  Var loss = mul(x, x);
  t.backward(loss);
  REQUIRE(p.grad[0] == Catch::Approx(6.0).margin(1e-12));
}

TEST_CASE("parameters off the loss path get zero gradient") {
  ParamStore store;
  Parameter& used = store.add("used", Tensor::scalar(2.0));
  Parameter& unused = store.add("unused", Tensor::scalar(5.0));
  Tape t;
  Var x = t.param(used);
  t.param(unused);
  t.backward(mul(x, x));
  REQUIRE(used.grad[0] == 4.0);
  REQUIRE(unused.grad[0] == 0.0);
}

TEST_CASE("softmax cross-entropy gradient equals p minus one-hot") {
  ParamStore store;
  Parameter& logits = store.add("logits", Tensor::vec({0.5, -1.0, 2.0, 0.0}));
  const int gold = 2;
  Tape t;
  Var z = t.param(logits);
  Var p = softmax(z);
  Var loss = neg(log(element(p, gold)));
  t.backward(loss);
  for (int i = 0; i < 4; ++i) {
    const double expected = t.val(p)[i] - (i == gold ? 1.0 : 0.0);
    REQUIRE(logits.grad[i] == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("matmul chain gradient matches finite differences") {
  Rng rng(11);
  ParamStore store;
  Parameter& a = store.add("a", Tensor::zeros({3, 4}));
  Parameter& b = store.add("b", Tensor::zeros({4, 2}));
  Parameter& c = store.add("c", Tensor::zeros({2}));
  for (auto* p : {&a, &b, &c}) {
    for (double& v : p->value.data) v = rng.normal(0, 1);
  }
  auto loss_fn = [&](bool with_grad) {
    Tape t;
    Var va = t.param(a);
    Var vb = t.param(b);
    Var vc = t.param(c);
    Var y = matmul(matmul(va, vb), vc);  // [3]
    Var loss = sum(mul(y, y));
    if (with_grad) t.backward(loss);
    return t.val(loss)[0];
  };
  std::vector<Parameter*> params = {&a, &b, &c};
  REQUIRE(gradient_check(loss_fn, params, 1e-5) < 1e-6);
}

TEST_CASE("gradient_check on a quadratic is exact to roundoff") {
  ParamStore store;
  Parameter& x = store.add("x", Tensor::vec({1.5, -0.25, 3.0}));
  auto loss_fn = [&](bool with_grad) {
    Tape t;
    Var v = t.param(x);
    Var loss = sum(mul(v, v));
    if (with_grad) t.backward(loss);
    return t.val(loss)[0];
  };
  std::vector<Parameter*> params = {&x};
  REQUIRE(gradient_check(loss_fn, params, 1e-3) < 1e-9);
}

TEST_CASE("gradient_check rejects out-of-range step") {
  ParamStore store;
  Parameter& x = store.add("x", Tensor::scalar(1.0));
  auto loss_fn = [&](bool) { return 0.0; };
  std::vector<Parameter*> params = {&x};
  REQUIRE_THROWS_AS(gradient_check(loss_fn, params, 0.0), ConfigError);
  REQUIRE_THROWS_AS(gradient_check(loss_fn, params, 1e-2), ConfigError);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(3);
  ParamStore store;
  Parameter& x = store.add("x", Tensor::vec({0.7, -0.3, 1.1}));
  const double ca = 2.5, cb = -1.25;

  auto grads_of = [&](double wa, double wb) {
    store.zero_grads();
    Tape t;
    Var v = t.param(x);
    Var l1 = sum(mul(v, v));
    Var l2 = sum(tanh(v));
    Var loss = add(scale(l1, wa), scale(l2, wb));
    t.backward(loss);
    return x.grad.data;
  };
  auto ga = grads_of(1.0, 0.0);
  auto gb = grads_of(0.0, 1.0);
  auto gc = grads_of(ca, cb);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    REQUIRE(gc[i] == Catch::Approx(ca * ga[i] + cb * gb[i]).margin(1e-9));
  }
  (void)rng;
}

TEST_CASE("identical seed and inputs give bitwise-identical loss") {
  auto run = [] {
    Rng rng(99);
    ParamStore store;
    Parameter& w = store.add("w", Tensor::zeros({4, 4}));
    for (double& v : w.value.data) v = rng.normal(0, 1);
    Tape t;
    Var x = t.constant(Tensor::vec({0.1, 0.2, 0.3, 0.4}));
    Var loss = sum(softmax(matmul(t.param(w), tanh(x))));
    return t.val(loss)[0];
  };
  const double a = run();
  const double b = run();
  REQUIRE(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("structural ops differentiate correctly") {
  Rng rng(17);
  ParamStore store;
  Parameter& a = store.add("a", Tensor::vec({0.5, -1.0, 2.0}));
  Parameter& tab = store.add("tab", Tensor::zeros({5, 3}));
  for (double& v : tab.value.data) v = rng.normal(0, 1);
  auto loss_fn = [&](bool with_grad) {
    Tape t;
    Var va = t.param(a);
    Var vt = t.param(tab);
    Var emb = embedding_lookup(vt, {1, 3, 1});
    Var r0 = row(emb, 0);
    Var r1 = row(emb, 1);
    Var r2 = row(emb, 2);
    Var joined = concat({va, r0, r1, r2});
    Var s = slice(joined, 2, 7);
    Var picked = element(joined, 0);
    Var loss = add(sum(mul(s, s)), mul(picked, picked));
    if (with_grad) t.backward(loss);
    return t.val(loss)[0];
  };
  std::vector<Parameter*> params = {&a, &tab};
  REQUIRE(gradient_check(loss_fn, params, 1e-5) < 1e-8);
}

TEST_CASE("embedding lookup gradient flows only to looked-up rows") {
  ParamStore store;
  Parameter& tab = store.add("tab", Tensor::zeros({4, 2}));
  for (std::size_t i = 0; i < tab.value.size(); ++i) tab.value.data[i] = double(i);
  Tape t;
  Var emb = embedding_lookup(t.param(tab), {2, 2});
  t.backward(sum(emb));
  REQUIRE(tab.grad.at2(0, 0) == 0.0);
  REQUIRE(tab.grad.at2(1, 1) == 0.0);
  REQUIRE(tab.grad.at2(2, 0) == 2.0);  // looked up twice
  REQUIRE(tab.grad.at2(3, 0) == 0.0);
  REQUIRE_THROWS_AS(embedding_lookup(t.param(tab), {4}), DataError);
}

TEST_CASE("clamp blocks gradient outside the interior") {
  ParamStore store;
  Parameter& x = store.add("x", Tensor::vec({-2.0, 0.5, 2.0}));
  Tape t;
  Var v = clamp(t.param(x), 0.0, 1.0);
  t.backward(sum(v));
  REQUIRE(x.grad[0] == 0.0);
  REQUIRE(x.grad[1] == 1.0);
  REQUIRE(x.grad[2] == 0.0);
  REQUIRE(t.val(v)[0] == 0.0);
  REQUIRE(t.val(v)[2] == 1.0);
}

TEST_CASE("scalar broadcast in add and mul") {
  ParamStore store;
  Parameter& s = store.add("s", Tensor::scalar(2.0));
  Parameter& v = store.add("v", Tensor::vec({1.0, 2.0, 3.0}));
  Tape t;
  Var y = mul(t.param(s), t.param(v));
  Var z = add(y, t.param(s));
  t.backward(sum(z));
  REQUIRE(t.val(z)[0] == 4.0);
  REQUIRE(t.val(z)[2] == 8.0);
  REQUIRE(s.grad[0] == Catch::Approx(6.0 + 3.0));  // sum(v) + broadcast count
  REQUIRE(v.grad[1] == 2.0);
}
