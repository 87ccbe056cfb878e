#include <algorithm>
#include <set>
#include <sstream>

#include "nestner/cli.hpp"
#include "nestner/errors.hpp"
#include "nestner/layers.hpp"
#include "nestner/spancodec.hpp"
#include "nestner/training.hpp"

namespace nestner {

namespace {

constexpr double kGradTolerance = 1e-4;

Tensor uniform_tensor(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::zeros(r, c);
  for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
  return t;
}

SelftestResult codec_roundtrip() {
  const LabelSet labels({"A", "B"});
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const std::size_t max_length = 1 + rng.below(5);
    SpanSet spans;
    std::set<std::pair<std::size_t, std::size_t>> used;
    const std::size_t count = rng.below(8);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t start = rng.below(n);
      const std::size_t length = 1 + rng.below(std::min(max_length, n - start));
      if (!used.emplace(start, length).second) continue;
      spans.insert({start, length, labels.label_of(1 + rng.below(2))});
    }
    const auto rows = encode_bo(spans, n, max_length, labels);
    for (const auto& row : rows) {
      if (!well_formed(row, n, labels)) return {"codec-roundtrip", false, "malformed row in trial " + std::to_string(trial)};
    }
    if (decode_spans(rows, labels) != spans) {
      return {"codec-roundtrip", false, "decode differs in trial " + std::to_string(trial)};
    }
  }
  return {"codec-roundtrip", true, "500 sentences"};
}

SelftestResult nesting_example() {
  const SpanSet spans = {{0, 1, "Concept"}, {1, 1, "Concept"}, {2, 1, "Concept"},
                         {0, 2, "Concept"}, {1, 2, "Concept"}, {0, 3, "Concept"}};
  for (const auto& ns : assign_nested_levels(spans)) {
    // In this example every span of m words sits on level m.
    if (ns.level != ns.span.length) return {"nesting-levels", false, "wrong level"};
  }
  return {"nesting-levels", true, "levels 1,1,1,2,2,3"};
}

SelftestResult gradient(const std::string& name, double err) {
  std::ostringstream detail;
  detail << "max relative error " << err;
  return {name, err <= kGradTolerance, detail.str()};
}

}  // namespace

std::vector<SelftestResult> run_selftest() {
  std::vector<SelftestResult> results;
  auto guarded = [&](const std::string& name, auto&& check) {
    try {
      results.push_back(check());
    } catch (const std::exception& e) {
      results.push_back({name, false, e.what()});
    }
  };

  guarded("codec-roundtrip", codec_roundtrip);
  guarded("nesting-levels", nesting_example);

  Rng rng(11);
  guarded("grad-dense", [&] {
    DenseParams d = make_dense(4, 3, rng);
    Tensor x = uniform_tensor(rng, 5, 4), w = uniform_tensor(rng, 5, 3);
    std::vector<Parameter*> params = {&d.weight, &d.bias};
    return gradient("grad-dense", check_gradient([&](Tape& t) { return sum(t, mul(t, dense(t, t.constant(x), d), t.constant(w))); },
                                                 params));
  });
  guarded("grad-lstm", [&] {
    LstmParams p = make_lstm(3, 4, 2, 0.0, false, rng);
    Tensor x = uniform_tensor(rng, 4, 3), w = uniform_tensor(rng, 4, 4);
    auto params = p.parameters();
    return gradient("grad-lstm", check_gradient([&](Tape& t) {
                      return sum(t, mul(t, lstm_forward(t, t.constant(x), p, Mode::Eval), t.constant(w)));
                    },
                                                params));
  });
  guarded("grad-layer-norm", [&] {
    LayerNormParams p = make_layer_norm(5);
    p.gain.value = uniform_tensor(rng, 1, 5);
    Tensor x = uniform_tensor(rng, 3, 5), w = uniform_tensor(rng, 3, 5);
    std::vector<Parameter*> params = {&p.gain, &p.bias};
    return gradient("grad-layer-norm",
                    check_gradient([&](Tape& t) { return sum(t, mul(t, layer_norm(t, t.constant(x), p), t.constant(w))); },
                                   params));
  });
  guarded("grad-weighted-ce", [&] {
    Tensor z = uniform_tensor(rng, 4, 3);
    const std::vector<std::size_t> targets = {0, 2, 1, 0};
    const std::vector<double> weights = {0.2, 0.5, 0.3};
    return gradient("grad-weighted-ce",
                    check_gradient([&](Tape& t, Var v) { return weighted_cross_entropy(t, v, targets, weights); }, z));
  });
  return results;
}

}  // namespace nestner
