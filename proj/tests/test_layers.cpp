#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nestner/errors.hpp"
#include "nestner/layers.hpp"

using namespace nestner;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.data()) v = rng.uniform(-1, 1);
  return t;
}

EmbeddingTable small_table() {
  Vocabulary vocab;
  vocab.add("the");
  vocab.add("cat");
  Tensor vectors = Tensor::matrix({{0, 0, 0}, {0, 0, 0}, {1, 2, 3}, {4, 5, 6}});
  return EmbeddingTable{vocab, Parameter{"embedding", vectors}, true};
}

}  // namespace

TEST_CASE("vocabulary reserves unk and pad") {
  Vocabulary v;
  CHECK(v.size() == 2);
  CHECK(v.index("<unk>") == Vocabulary::kUnk);
  CHECK(v.index("<pad>") == Vocabulary::kPad);
  CHECK(v.add("x") == 2);
  CHECK(v.add("x") == 2);
  CHECK(v.index("never-seen") == Vocabulary::kUnk);
}

TEST_CASE("embed lookup, OOV and context concatenation") {
  EmbeddingTable table = small_table();
  Tape t;
  std::vector<std::string> the = {"the"};
  CHECK(t.value(embed(t, the, table)) == Tensor::matrix({{1, 2, 3}}));

  table.vectors.value.at(Vocabulary::kUnk, 0) = 9;
  std::vector<std::string> oov = {"XaaydaGa"};
  CHECK(t.value(embed(t, oov, table)) == Tensor::matrix({{9, 0, 0}}));

  std::vector<std::string> two = {"the", "cat"};
  Tensor ctx = Tensor::matrix({{7, 8}, {9, 10}});
  Var out = embed(t, two, table, &ctx);
  CHECK(t.value(out).shape() == Shape{2, 5});
  CHECK(t.value(out) == Tensor::matrix({{1, 2, 3, 7, 8}, {4, 5, 6, 9, 10}}));

  Tensor wrong = Tensor::matrix({{1, 2}});
  CHECK_THROWS_AS(embed(t, two, table, &wrong), DimMismatch);
}

TEST_CASE("frozen embeddings receive no gradient") {
  EmbeddingTable table = small_table();
  table.trainable = false;
  Tape t;
  std::vector<std::string> toks = {"cat"};
  Var out = sum(t, embed(t, toks, table));
  CHECK_FALSE(t.requires_grad(out));
  CHECK_FALSE(t.uses(table.vectors));
}

TEST_CASE("embedding text loader") {
  std::istringstream in(
      "the 0.1 0.2 0.3\n"
      "cat 1 2\n"
      "\n"
      "dog 1 x 3\n"
      "bird 4 5 6\n");
  VectorFile file = read_vector_text(in, "vec.txt");
  CHECK(file.dim == 3);
  REQUIRE(file.entries.size() == 2);
  CHECK(file.entries[1].first == "bird");
  REQUIRE(file.warnings.size() == 2);
  CHECK(file.warnings[0].rfind("vec.txt:2:", 0) == 0);
  CHECK(file.warnings[1].rfind("vec.txt:4:", 0) == 0);
}

TEST_CASE("lstm with zero parameters outputs zeros") {
  Rng rng(1);
  LstmParams p = make_lstm(3, 4, 2, 0.0, false, rng);
  for (Parameter* param : p.parameters()) {
    for (double& v : param->value.data()) v = 0.0;
  }
  Tape t;
  Var h = lstm_forward(t, t.constant(random_tensor(rng, 5, 3)), p, Mode::Eval);
  CHECK(t.value(h) == Tensor::zeros(5, 4));
}

TEST_CASE("lstm initialization") {
  Rng rng(2);
  LstmParams p = make_lstm(3, 4, 1, 0.0, false, rng);
  const Tensor& b = p.forward[0].bias.value;
  for (std::size_t j = 0; j < 16; ++j) CHECK(b[j] == (j >= 4 && j < 8 ? 1.0 : 0.0));
  for (double v : p.forward[0].input_weights.value.data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(3.0));
  for (double v : p.forward[0].recurrent_weights.value.data()) CHECK(std::abs(v) <= 0.5);
}

TEST_CASE("single-unit lstm matches hand evaluation of the recurrence") {
  Rng rng(0);
  LstmParams p = make_lstm(1, 1, 1, 0.0, false, rng);
  p.forward[0].input_weights.value = Tensor::matrix({{0.5, -0.3, 0.8, 0.2}});
  p.forward[0].recurrent_weights.value = Tensor::matrix({{0.4, 0.1, -0.6, 0.3}});
  p.forward[0].bias.value = Tensor::matrix({{0.1, 1.0, -0.2, 0.0}});
  Tape t;
  Var h = lstm_forward(t, t.constant(Tensor::matrix({{1.0}, {-0.5}})), p, Mode::Eval);
  // Values evaluated by hand from i,f,o = σ(·), g = tanh(·), c = f·c + i·g, h = o·tanh(c).
  CHECK(t.value(h)[0] == doctest::Approx(0.18336393893956474).epsilon(1e-14));
  CHECK(t.value(h)[1] == doctest::Approx(-0.014233930006886135).epsilon(1e-12));
}

TEST_CASE("lstm gradient matches finite differences") {
  Rng rng(5);
  for (bool bidi : {false, true}) {
    LstmParams p = make_lstm(3, 4, 2, 0.0, bidi, rng);
    Tensor x = random_tensor(rng, 3, 3);
    Tensor w = random_tensor(rng, 3, p.output_dim());
    auto f = [&](Tape& t) {
      return sum(t, mul(t, lstm_forward(t, t.constant(x), p, Mode::Eval), t.constant(w)));
    };
    auto params = p.parameters();
    CHECK(check_gradient(f, params) <= 1e-4);
    CHECK(check_gradient([&](Tape& t, Var v) { return sum(t, mul(t, lstm_forward(t, v, p, Mode::Eval), t.constant(w))); },
                         x) <= 1e-4);
  }
}

TEST_CASE("unidirectional lstm is causal") {
  Rng rng(8);
  LstmParams p = make_lstm(3, 5, 2, 0.0, false, rng);
  Tensor x = random_tensor(rng, 6, 3);
  Tape t;
  const Tensor full = t.value(lstm_forward(t, t.constant(x), p, Mode::Eval));
  for (std::size_t len = 1; len <= 6; ++len) {
    Tensor prefix({len, 3}, std::vector<double>(x.data().begin(), x.data().begin() + len * 3));
    Tape tp;
    const Tensor out = tp.value(lstm_forward(tp, tp.constant(prefix), p, Mode::Eval));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == full[i]);
  }
}

TEST_CASE("lstm rejects wrong input width") {
  Rng rng(1);
  LstmParams p = make_lstm(3, 2, 1, 0.0, false, rng);
  Tape t;
  CHECK_THROWS_AS(lstm_forward(t, t.constant(Tensor::zeros(2, 4)), p, Mode::Eval), ShapeMismatch);
}

TEST_CASE("dense is affine and differentiable") {
  Rng rng(4);
  DenseParams d = make_dense(3, 2, rng);
  d.weight.value = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  d.bias.value = Tensor::matrix({{0.5, -0.5}});
  Tape t;
  CHECK(t.value(dense(t, t.constant(Tensor::matrix({{1, 2, 3}})), d)) == Tensor::matrix({{4.5, 4.5}}));
  Tensor x = random_tensor(rng, 4, 3);
  Tensor w = random_tensor(rng, 4, 2);
  std::vector<Parameter*> params = {&d.weight, &d.bias};
  CHECK(check_gradient([&](Tape& tp) { return sum(tp, mul(tp, dense(tp, tp.constant(x), d), tp.constant(w))); },
                       params) <= 1e-6);
}

TEST_CASE("dropout modes") {
  Rng rng(12);
  Tensor x = random_tensor(rng, 3, 4);
  Tape t;
  Var v = t.constant(x);
  CHECK(t.value(dropout(t, v, 0.4, Mode::Eval, rng)) == x);
  CHECK(t.value(dropout(t, v, 0.0, Mode::Train, rng)) == x);
  CHECK_THROWS_AS(dropout(t, v, 1.0, Mode::Train, rng), InvalidRate);
  CHECK_THROWS_AS(dropout(t, v, -0.1, Mode::Train, rng), InvalidRate);

  Tensor masked = t.value(dropout(t, v, 0.5, Mode::Train, rng));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK((masked[i] == 0.0 || masked[i] == 2.0 * x[i]));
}

TEST_CASE("inverted dropout preserves the expectation") {
  Rng rng(99);
  Tensor x = Tensor::matrix({{1.0, -2.0, 0.5}});
  std::vector<double> total(3, 0.0);
  const int trials = 100000;
  for (int k = 0; k < trials; ++k) {
    Tape t;
    const Tensor y = t.value(dropout(t, t.constant(x), 0.5, Mode::Train, rng));
    for (std::size_t i = 0; i < 3; ++i) total[i] += y[i];
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(total[i] / trials - x[i]) <= 0.02 * std::abs(x[i]));
}

TEST_CASE("layer_norm") {
  LayerNormParams p = make_layer_norm(3);
  Tape t;
  const Tensor y = t.value(layer_norm(t, t.constant(Tensor::matrix({{1, 2, 3}})), p));
  const double mean = (y[0] + y[1] + y[2]) / 3;
  const double var = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / 3 - mean * mean;
  CHECK(std::abs(mean) <= 1e-12);
  // The epsilon inside the square root makes the variance σ²/(σ²+eps), with σ² = 2/3.
  CHECK(std::abs(var - (2.0 / 3.0) / (2.0 / 3.0 + kLayerNormEps)) <= 1e-9);
  CHECK(std::abs(var - 1.0) <= 2e-5);

  Rng rng(6);
  p.gain.value = random_tensor(rng, 1, 5);
  p.bias.value = random_tensor(rng, 1, 5);
  Tensor x = random_tensor(rng, 4, 5);
  Tensor w = random_tensor(rng, 4, 5);
  std::vector<Parameter*> params = {&p.gain, &p.bias};
  auto f = [&](Tape& tp, Var v) { return sum(tp, mul(tp, layer_norm(tp, v, p), tp.constant(w))); };
  CHECK(check_gradient(f, x) <= 1e-6);
  CHECK(check_gradient([&](Tape& tp) { return f(tp, tp.constant(x)); }, params) <= 1e-6);
}
