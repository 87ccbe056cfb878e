#include <cmath>
#include <vector>

#include "doctest.h"
#include "nestner/autodiff.hpp"
#include "nestner/errors.hpp"
#include "nestner/random.hpp"

using namespace nestner;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Plain central difference of a function of a raw vector; shares no code
// with the tape.
template <typename F>
std::vector<double> numeric_grad(F f, std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = x[i];
    x[i] = s + eps;
    const double up = f(x);
    x[i] = s - eps;
    const double down = f(x);
    x[i] = s;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeMismatch);
  CHECK_THROWS_AS(Tensor({0, 2}), ShapeMismatch);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
}

TEST_CASE("matmul values and gradient") {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var id = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(tape.value(matmul(tape, a, id)) == Tensor::matrix({{1, 2}, {3, 4}}));

  Var r = tape.constant(Tensor::matrix({{1, 2}}));
  Var c = tape.constant(Tensor::matrix({{3}, {4}}));
  CHECK(tape.value(matmul(tape, r, c)) == Tensor::matrix({{11}}));

  Var bad = tape.constant(Tensor::matrix({{1, 2, 3}}));
  CHECK_THROWS_AS(matmul(tape, r, bad), ShapeMismatch);

  // Oracle: d/da sum(a·b) by plain differences at a=[1,2], b=[3,4]ᵀ.
  auto fd = numeric_grad([](const std::vector<double>& x) { return x[0] * 3 + x[1] * 4; }, {1.0, 2.0});
  CHECK(fd[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(fd[1] == doctest::Approx(4.0).epsilon(1e-9));

  Parameter pa{"a", Tensor::matrix({{1, 2}})};
  Tape t2;
  Var la = t2.leaf(pa);
  Var out = sum(t2, matmul(t2, la, t2.constant(Tensor::matrix({{3}, {4}}))));
  t2.backward(out);
  CHECK(t2.gradient(pa) == Tensor::matrix({{3, 4}}));
}

TEST_CASE("elementwise symmetry points") {
  Tape tape;
  Var z = tape.constant(Tensor::scalar(0.0));
  CHECK(tape.value(sigmoid(tape, z))[0] == 0.5);
  CHECK(tape.value(tanh(tape, z))[0] == 0.0);

  Parameter x{"x", Tensor::scalar(0.0)};
  Tape t2;
  Var s = sigmoid(t2, t2.leaf(x));
  t2.backward(s);
  CHECK(t2.gradient(x)[0] == doctest::Approx(0.25).epsilon(1e-15));
  auto fd = numeric_grad([](const std::vector<double>& v) { return 1.0 / (1.0 + std::exp(-v[0])); }, {0.0});
  CHECK(fd[0] == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("broadcast rules") {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var s = tape.constant(Tensor::scalar(2.0));
  CHECK(tape.value(mul(tape, a, s)) == Tensor::matrix({{2, 4}, {6, 8}}));
  CHECK(tape.value(add(tape, s, a)) == Tensor::matrix({{3, 4}, {5, 6}}));
  Var r = tape.constant(Tensor::matrix({{1, 2}}));
  CHECK_THROWS_AS(add(tape, a, r), ShapeMismatch);
  CHECK(tape.value(add_row(tape, a, r)) == Tensor::matrix({{2, 4}, {4, 6}}));
}

TEST_CASE("softmax_rows") {
  CHECK(softmax_rows(Tensor::matrix({{0, 0}})) == Tensor::matrix({{0.5, 0.5}}));
  Tensor big = softmax_rows(Tensor::matrix({{1000, 0}}));
  CHECK(big[0] == 1.0);
  CHECK(big[1] == 0.0);
  Tensor q = softmax_rows(Tensor::matrix({{std::log(1.0), std::log(3.0)}}));
  CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{1}, {2}})), ShapeMismatch);

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, 1 + rng.below(6), 2 + rng.below(6), -20, 20);
    for (double& v : x.data()) v = std::round(v * 1024.0) / 1024.0;
    Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double total = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) total += y.at(i, j);
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    // On a 1/1024 grid the shift and x - max are exact, so the result is bitwise equal.
    Tensor shifted = x;
    for (double& v : shifted.data()) v += 64.0;
    CHECK(softmax_rows(shifted) == y);
  }
}

TEST_CASE("check_gradient reference cases") {
  auto sum_squares = [](Tape& t, Var x) { return sum(t, mul(t, x, x)); };
  CHECK(check_gradient(sum_squares, Tensor::matrix({{1, 2, 3}})) <= 1e-7);
  auto constant = [](Tape& t, Var) { return t.constant(Tensor::scalar(4.0)); };
  CHECK(check_gradient(constant, Tensor::matrix({{1, 2, 3}})) == 0.0);
  auto bad = [](Tape& t, Var x) { return sum(t, scale(t, x, 1e308)); };
  CHECK_THROWS_AS(check_gradient(bad, Tensor::matrix({{1e10, 1e10}})), NonFinite);
}

TEST_CASE("every op passes gradient check on random inputs") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + rng.below(8);
    const std::size_t k = 1 + rng.below(8);
    const std::size_t c = 2 + rng.below(7);
    Tensor a = random_tensor(rng, r, k);
    Tensor b = random_tensor(rng, k, c);
    Tensor w = random_tensor(rng, r, c);  // weights make the scalar output generic
    auto weighted = [&w](Tape& t, Var v) { return sum(t, mul(t, v, t.constant(w))); };

    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, matmul(t, x, t.constant(b))); }, a) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, matmul(t, t.constant(a), x)); }, b) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, tanh(t, x)); }, random_tensor(rng, r, c)) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, sigmoid(t, x)); }, random_tensor(rng, r, c)) <=
          1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, softmax_rows(t, x)); }, random_tensor(rng, r, c)) <=
          1e-6);
    // relu away from its kink
    Tensor rx = random_tensor(rng, r, c);
    for (double& v : rx.data()) v = v < 0 ? v - 0.1 : v + 0.1;
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, relu(t, x)); }, rx) <= 1e-6);

    Tensor other = random_tensor(rng, r, c);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, mul(t, x, t.constant(other))); },
                         random_tensor(rng, r, c)) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, add(t, t.constant(other), x)); },
                         random_tensor(rng, r, c)) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, sub(t, t.constant(other), x)); },
                         random_tensor(rng, r, c)) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, mul(t, t.constant(other), x)); },
                         Tensor::scalar(0.7)) <= 1e-6);
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, add_row(t, t.constant(other), x)); },
                         random_tensor(rng, 1, c)) <= 1e-6);

    Tensor mask = Tensor::zeros(r, c);
    for (double& v : mask.data()) v = rng.bernoulli(0.5) ? 2.0 : 0.0;
    CHECK(check_gradient([&](Tape& t, Var x) { return weighted(t, dropout_mask_apply(t, x, mask)); },
                         random_tensor(rng, r, c)) <= 1e-6);
  }
}

TEST_CASE("structural ops pass gradient check") {
  Rng rng(3);
  Tensor x = random_tensor(rng, 4, 6);
  Tensor w2 = random_tensor(rng, 1, 6);
  CHECK(check_gradient([&](Tape& t, Var v) { return sum(t, mul(t, row(t, v, 2), t.constant(w2))); }, x) <= 1e-6);
  Tensor w3 = random_tensor(rng, 4, 3);
  CHECK(check_gradient([&](Tape& t, Var v) { return sum(t, mul(t, slice_cols(t, v, 2, 3), t.constant(w3))); }, x) <=
        1e-6);
  Tensor w4 = random_tensor(rng, 8, 6);
  CHECK(check_gradient(
            [&](Tape& t, Var v) {
              Var parts[] = {v, tanh(t, v)};
              return sum(t, mul(t, concat_rows(t, parts), t.constant(w4)));
            },
            x) <= 1e-6);
  Tensor w5 = random_tensor(rng, 4, 12);
  CHECK(check_gradient([&](Tape& t, Var v) { return sum(t, mul(t, concat_cols(t, v, v), t.constant(w5))); }, x) <=
        1e-6);
  std::vector<std::size_t> idx = {3, 0, 3, 1};
  CHECK(check_gradient([&](Tape& t, Var v) { return sum(t, mul(t, gather_rows(t, v, idx), t.constant(x))); },
                       random_tensor(rng, 5, 6)) <= 1e-6);
}

TEST_CASE("ops never mutate their inputs") {
  Rng rng(11);
  Parameter p{"p", random_tensor(rng, 3, 3)};
  const Tensor before = p.value;
  Tape t;
  Var x = t.leaf(p);
  Var y = softmax_rows(t, tanh(t, matmul(t, x, x)));
  Var z = sum(t, mul(t, sigmoid(t, add(t, y, x)), relu(t, x)));
  t.backward(z);
  CHECK(p.value == before);
}

TEST_CASE("backward visits nodes in exact reverse order") {
  Tape t;
  std::vector<std::size_t> visited;
  Parameter p{"p", Tensor::scalar(1.0)};
  Var v = t.leaf(p);
  std::vector<std::size_t> recorded;
  for (int i = 0; i < 5; ++i) {
    const std::size_t self = t.size();
    recorded.push_back(self);
    Var parents[] = {v};
    v = t.push(t.value(v), parents, [&visited, self, prev = v](Tape& tp, const Tensor& g) {
      visited.push_back(self);
      tp.accumulate(prev, g);
    });
  }
  t.backward(v);
  std::vector<std::size_t> expected(recorded.rbegin(), recorded.rend());
  CHECK(visited == expected);
  CHECK(t.gradient(p)[0] == 1.0);
}

TEST_CASE("non-finite values are rejected") {
  Tape t;
  CHECK_THROWS_AS(t.constant(Tensor::scalar(std::nan(""))), NonFinite);
  Var big = t.constant(Tensor::scalar(1e300));
  CHECK_THROWS_AS(mul(t, big, big), NonFinite);
}

TEST_CASE("rng is reproducible") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng c(9);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(7) < 7);
  }
}
