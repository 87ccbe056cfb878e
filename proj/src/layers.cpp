#include "nestner/layers.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nestner/errors.hpp"

namespace nestner {

Vocabulary::Vocabulary() {
  add(kUnkToken);
  add(kPadToken);
}

std::size_t Vocabulary::add(std::string_view token) {
  auto [it, inserted] = index_.try_emplace(std::string(token), tokens_.size());
  if (inserted) tokens_.emplace_back(token);
  return it->second;
}

std::size_t Vocabulary::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

EmbeddingTable random_embeddings(Vocabulary vocab, std::size_t dim, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(dim));
  Tensor vectors = Tensor::zeros(vocab.size(), dim);
  for (double& v : vectors.data()) v = rng.uniform(-bound, bound);
  return EmbeddingTable{std::move(vocab), Parameter{"embedding", std::move(vectors)}, true};
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

VectorFile read_vector_text(std::istream& in, const std::string& source) {
  VectorFile file;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_ws(line);
    if (fields.empty()) continue;
    auto warn = [&](const std::string& why) {
      file.warnings.push_back(source + ":" + std::to_string(lineno) + ": " + why);
    };
    if (fields.size() < 2) {
      warn("expected a key followed by values");
      continue;
    }
    const std::size_t dim = fields.size() - 1;
    if (file.dim == 0) {
      file.dim = dim;
    } else if (dim != file.dim) {
      warn("expected " + std::to_string(file.dim) + " values, found " + std::to_string(dim));
      continue;
    }
    std::vector<double> values(dim);
    bool ok = true;
    for (std::size_t k = 0; k < dim && ok; ++k) ok = parse_double(fields[k + 1], values[k]);
    if (!ok) {
      warn("non-numeric or non-finite value");
      continue;
    }
    file.entries.emplace_back(std::string(fields[0]), std::move(values));
  }
  return file;
}

EmbeddingTable load_embedding_text(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  VectorFile file = read_vector_text(in, path);
  if (file.entries.empty()) throw DataError("embedding file " + path + " has no usable vectors");

  Vocabulary vocab;
  std::vector<const std::vector<double>*> rows(2, nullptr);
  for (const auto& [token, values] : file.entries) {
    if (vocab.contains(token) && token != Vocabulary::kUnkToken && token != Vocabulary::kPadToken) {
      file.warnings.push_back(path + ": duplicate token '" + token + "' ignored");
      continue;
    }
    const std::size_t idx = vocab.add(token);
    if (idx >= rows.size()) rows.resize(idx + 1, nullptr);
    rows[idx] = &values;
  }
  Tensor vectors = Tensor::zeros(vocab.size(), file.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i]) continue;
    for (std::size_t j = 0; j < file.dim; ++j) vectors.at(i, j) = (*rows[i])[j];
  }
  if (warnings) warnings->insert(warnings->end(), file.warnings.begin(), file.warnings.end());
  return EmbeddingTable{std::move(vocab), Parameter{"embedding", std::move(vectors)}, false};
}

std::vector<std::size_t> lookup(const Vocabulary& vocab, std::span<const std::string> tokens) {
  std::vector<std::size_t> idx;
  idx.reserve(tokens.size());
  for (const auto& tok : tokens) idx.push_back(vocab.index(tok));
  return idx;
}

Var embed(Tape& t, std::span<const std::string> tokens, const EmbeddingTable& table, const Tensor* context) {
  if (tokens.empty()) throw ShapeMismatch("embed: empty sentence");
  if (context && context->rows() != tokens.size()) {
    throw DimMismatch("context vectors have " + std::to_string(context->rows()) + " rows for " +
                      std::to_string(tokens.size()) + " tokens");
  }
  Var source = table.trainable ? t.leaf(table.vectors) : t.constant_ref(table.vectors.value);
  auto idx = lookup(table.vocab, tokens);
  Var rows = gather_rows(t, source, idx);
  if (!context) return rows;
  return concat_cols(t, rows, t.constant_ref(*context));
}

std::vector<Parameter*> LstmParams::parameters() {
  std::vector<Parameter*> out;
  for (auto* dir : {&forward, &backward}) {
    for (auto& layer : *dir) {
      out.push_back(&layer.input_weights);
      out.push_back(&layer.recurrent_weights);
      out.push_back(&layer.bias);
    }
  }
  return out;
}

std::vector<const Parameter*> LstmParams::parameters() const {
  auto ptrs = const_cast<LstmParams*>(this)->parameters();
  return {ptrs.begin(), ptrs.end()};
}

namespace {

Tensor uniform_tensor(std::size_t r, std::size_t c, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

LstmLayerParams make_lstm_layer(std::size_t in, std::size_t h, Rng& rng, const std::string& prefix) {
  LstmLayerParams p;
  p.input_weights = {prefix + ".input_weights", uniform_tensor(in, 4 * h, 1.0 / std::sqrt(double(in)), rng)};
  p.recurrent_weights = {prefix + ".recurrent_weights", uniform_tensor(h, 4 * h, 1.0 / std::sqrt(double(h)), rng)};
  Tensor bias = Tensor::zeros(1, 4 * h);
  for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;
  p.bias = {prefix + ".bias", std::move(bias)};
  return p;
}

// One direction of one layer. Gate pre-activations for all steps share a
// single input projection; the recurrence then runs step by step.
Var run_direction(Tape& t, Var x, const LstmLayerParams& p, std::size_t h, bool reverse) {
  const std::size_t n = t.value(x).rows();
  Var projected = add_row(t, matmul(t, x, t.leaf(p.input_weights)), t.leaf(p.bias));
  Var recurrent = t.leaf(p.recurrent_weights);
  Var hidden = t.constant(Tensor::zeros(1, h));
  Var cell = t.constant(Tensor::zeros(1, h));
  std::vector<Var> outputs(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t step = reverse ? n - 1 - k : k;
    Var gates = add(t, row(t, projected, step), matmul(t, hidden, recurrent));
    Var in_gate = sigmoid(t, slice_cols(t, gates, 0, h));
    Var forget_gate = sigmoid(t, slice_cols(t, gates, h, h));
    Var candidate = tanh(t, slice_cols(t, gates, 2 * h, h));
    Var out_gate = sigmoid(t, slice_cols(t, gates, 3 * h, h));
    cell = add(t, mul(t, forget_gate, cell), mul(t, in_gate, candidate));
    hidden = mul(t, out_gate, tanh(t, cell));
    outputs[step] = hidden;
  }
  return concat_rows(t, outputs);
}

}  // namespace

LstmParams make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_layers, double dropout,
                     bool bidirectional, Rng& rng, const std::string& name) {
  if (input_dim == 0 || hidden_dim == 0 || num_layers == 0) throw ShapeMismatch("LSTM dimensions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidRate("LSTM dropout must be in [0, 1)");
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.dropout = dropout;
  p.bidirectional = bidirectional;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < num_layers; ++l) {
    p.forward.push_back(make_lstm_layer(in, hidden_dim, rng, name + ".layer" + std::to_string(l) + ".fwd"));
    if (bidirectional) {
      p.backward.push_back(make_lstm_layer(in, hidden_dim, rng, name + ".layer" + std::to_string(l) + ".bwd"));
    }
    in = p.output_dim();
  }
  return p;
}

Var lstm_forward(Tape& t, Var x, const LstmParams& p, Mode mode, Rng* rng) {
  const Tensor& X = t.value(x);
  if (X.rank() != 2 || X.cols() != p.input_dim) {
    throw ShapeMismatch("lstm_forward: input " + shape_string(X.shape()) + " does not match input dim " +
                        std::to_string(p.input_dim));
  }
  Var layer_in = x;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    if (l > 0 && mode == Mode::Train && p.dropout > 0.0) {
      if (!rng) throw Error("lstm_forward: train-mode dropout needs an Rng");
      layer_in = dropout(t, layer_in, p.dropout, mode, *rng);
    }
    Var out = run_direction(t, layer_in, p.forward[l], p.hidden_dim, false);
    if (p.bidirectional) out = concat_cols(t, out, run_direction(t, layer_in, p.backward[l], p.hidden_dim, true));
    layer_in = out;
  }
  return layer_in;
}

DenseParams make_dense(std::size_t in, std::size_t out, Rng& rng, const std::string& name) {
  return DenseParams{{name + ".weight", uniform_tensor(in, out, 1.0 / std::sqrt(double(in)), rng)},
                     {name + ".bias", Tensor::zeros(1, out)}};
}

Var dense(Tape& t, Var x, const DenseParams& p) {
  return add_row(t, matmul(t, x, t.leaf(p.weight)), t.leaf(p.bias));
}

Var dropout(Tape& t, Var x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidRate("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(t.value(x).shape());
  for (double& m : mask.data()) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return dropout_mask_apply(t, x, mask);
}

LayerNormParams make_layer_norm(std::size_t dim, const std::string& name) {
  return LayerNormParams{{name + ".gain", Tensor::filled(1, dim, 1.0)}, {name + ".bias", Tensor::zeros(1, dim)}};
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor& X = t.value(x);
  const Tensor& G = t.value(gain);
  const Tensor& B = t.value(bias);
  if (X.rank() != 2 || G.rows() != 1 || B.rows() != 1 || G.cols() != X.cols() || B.cols() != X.cols()) {
    throw ShapeMismatch("layer_norm: gain/bias must be 1x" + std::to_string(X.cols()));
  }
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  Tensor normalized = Tensor::zeros(n, d);
  Tensor inv_std = Tensor::zeros(n, 1);
  Tensor out = Tensor::zeros(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += X.at(i, j);
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (X.at(i, j) - mean) * (X.at(i, j) - mean);
    var /= double(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      normalized.at(i, j) = (X.at(i, j) - mean) * inv_std[i];
      out.at(i, j) = normalized.at(i, j) * G[j] + B[j];
    }
  }
  Var parents[] = {x, gain, bias};
  return t.push(std::move(out), parents,
                [x, gain, bias, normalized, inv_std, n, d](Tape& tp, const Tensor& g) {
                  const Tensor& G = tp.value(gain);
                  auto gg = tp.grad_buffer(gain);
                  auto gb = tp.grad_buffer(bias);
                  auto gx = tp.grad_buffer(x);
                  for (std::size_t i = 0; i < n; ++i) {
                    double mean_dn = 0.0;
                    double mean_dn_n = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dn = g.at(i, j) * G[j];
                      mean_dn += dn;
                      mean_dn_n += dn * normalized.at(i, j);
                      if (!gg.empty()) gg[j] += g.at(i, j) * normalized.at(i, j);
                      if (!gb.empty()) gb[j] += g.at(i, j);
                    }
                    if (gx.empty()) continue;
                    mean_dn /= double(d);
                    mean_dn_n /= double(d);
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dn = g.at(i, j) * G[j];
                      gx[i * d + j] += inv_std[i] * (dn - mean_dn - normalized.at(i, j) * mean_dn_n);
                    }
                  }
                });
}

Var layer_norm(Tape& t, Var x, const LayerNormParams& p) { return layer_norm(t, x, t.leaf(p.gain), t.leaf(p.bias)); }

}  // namespace nestner
