#include "nestner/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <map>
#include <sstream>

#include "nestner/errors.hpp"
#include "nestner/fileio.hpp"

namespace nestner {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Base: return "Base";
    case Variant::InputDrop: return "InputDrop";
    case Variant::Norm: return "Norm";
    case Variant::NormFlair: return "NormFlair";
    case Variant::Multi: return "Multi";
  }
  return "Base";
}

std::optional<Variant> parse_variant(std::string_view s) {
  std::string key;
  for (char c : s) {
    if (c != '-' && c != '_') key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (key == "base") return Variant::Base;
  if (key == "inputdrop") return Variant::InputDrop;
  if (key == "norm") return Variant::Norm;
  if (key == "normflair") return Variant::NormFlair;
  if (key == "multi") return Variant::Multi;
  return std::nullopt;
}

void ModelSpec::validate() const {
  auto rate_ok = [](double r) { return r >= 0.0 && r < 1.0; };
  if (max_length == 0) throw ConfigError("max_length must be at least 1");
  if (labels.size() == 0) throw ConfigError("label set must not be empty");
  for (const auto& l : labels.labels()) {
    if (l.find_first_of(", \t\r\n") != std::string::npos) {
      throw ConfigError("label '" + l + "' must not contain commas or whitespace");
    }
  }
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (lstm_layers == 0 || lstm_hidden == 0) throw ConfigError("LSTM layers and hidden size must be positive");
  if (!rate_ok(lstm_dropout) || !rate_ok(tagging_dropout) || !rate_ok(input_dropout)) {
    throw ConfigError("dropout rates must be in [0, 1)");
  }
  if (variant == Variant::NormFlair) {
    if (context_dim == 0) throw ConfigError("NormFlair needs context vectors (context_dim > 0)");
    if (resolved_flair_inner_dim() == 0) throw ConfigError("NormFlair inner dense width must be positive");
  }
}

std::size_t ModelSpec::resolved_flair_inner_dim() const {
  return flair_inner_dim ? flair_inner_dim : std::max<std::size_t>(1, lstm_hidden / 2);
}

PartlyLayeredNet::PartlyLayeredNet(ModelSpec spec, EmbeddingTable embedding, Rng& rng)
    : spec_(std::move(spec)), embedding_(std::move(embedding)) {
  spec_.validate();
  if (embedding_.dim() != spec_.embedding_dim) {
    throw SpecMismatch("embedding table has width " + std::to_string(embedding_.dim()) + ", spec says " +
                       std::to_string(spec_.embedding_dim));
  }
  embedding_.trainable = spec_.embedding_trainable;
  embedding_.vectors.name = "embedding";

  const std::size_t input_dim = spec_.embedding_dim + spec_.context_dim;
  const bool normed = spec_.variant == Variant::Norm || spec_.variant == Variant::NormFlair;
  for (std::size_t k = 0; k < spec_.sequence_layer_count(); ++k) {
    const std::string prefix = "seq" + std::to_string(k);
    sequence_.push_back(make_lstm(input_dim, spec_.lstm_hidden, spec_.lstm_layers, spec_.lstm_dropout,
                                  spec_.bidirectional, rng, prefix + ".lstm"));
    if (normed) norms_.push_back(make_layer_norm(sequence_.back().output_dim(), prefix + ".norm"));
  }
  const std::size_t hidden = sequence_.front().output_dim();
  for (std::size_t m = 1; m <= spec_.max_length; ++m) {
    const std::string prefix = "head" + std::to_string(m);
    TaggingHead head;
    if (spec_.variant == Variant::NormFlair) {
      const std::size_t inner = spec_.resolved_flair_inner_dim();
      head.first = make_dense(hidden, inner, rng, prefix + ".dense1");
      head.second = make_dense(inner, spec_.labels.tag_count(), rng, prefix + ".dense2");
    } else {
      head.first = make_dense(hidden, spec_.labels.tag_count(), rng, prefix + ".dense1");
    }
    heads_.push_back(std::move(head));
  }
}

std::vector<Parameter*> PartlyLayeredNet::sequence_parameters(std::size_t k) {
  auto out = sequence_.at(k).parameters();
  if (!norms_.empty()) {
    out.push_back(&norms_[k].gain);
    out.push_back(&norms_[k].bias);
  }
  return out;
}

std::vector<Parameter*> PartlyLayeredNet::head_parameters(std::size_t task) {
  TaggingHead& h = heads_.at(task);
  std::vector<Parameter*> out = {&h.first.weight, &h.first.bias};
  if (h.second) {
    out.push_back(&h.second->weight);
    out.push_back(&h.second->bias);
  }
  return out;
}

std::vector<Parameter*> PartlyLayeredNet::task_parameters(std::size_t task) {
  std::vector<Parameter*> out;
  if (embedding_.trainable) out.push_back(&embedding_.vectors);
  for (Parameter* p : sequence_parameters(sequence_index(task))) out.push_back(p);
  for (Parameter* p : head_parameters(task)) out.push_back(p);
  return out;
}

std::vector<Parameter*> PartlyLayeredNet::parameters() {
  std::vector<Parameter*> out = {&embedding_.vectors};
  for (std::size_t k = 0; k < sequence_.size(); ++k) {
    for (Parameter* p : sequence_parameters(k)) out.push_back(p);
  }
  for (std::size_t m = 0; m < heads_.size(); ++m) {
    for (Parameter* p : head_parameters(m)) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> PartlyLayeredNet::parameters() const {
  auto ptrs = const_cast<PartlyLayeredNet*>(this)->parameters();
  return {ptrs.begin(), ptrs.end()};
}

namespace {

void check_sentence(const PartlyLayeredNet& net, const Sentence& s) {
  if (s.tokens.empty()) throw ShapeMismatch("sentence '" + s.id + "' is empty");
  const std::size_t want = net.spec().context_dim;
  if (want == 0) return;
  if (!s.context) throw DimMismatch("sentence '" + s.id + "' has no context vectors");
  if (s.context->cols() != want) {
    throw DimMismatch("sentence '" + s.id + "' context width " + std::to_string(s.context->cols()) + " != " +
                      std::to_string(want));
  }
}

Var encode_with(Tape& t, const PartlyLayeredNet& net, const Sentence& s, std::size_t k, Mode mode, Rng* rng) {
  const ModelSpec& spec = net.spec();
  const Tensor* ctx = spec.context_dim ? &*s.context : nullptr;
  Var x = embed(t, s.tokens, net.embedding(), ctx);
  if (spec.variant == Variant::InputDrop && mode == Mode::Train && spec.input_dropout > 0.0) {
    x = dropout(t, x, spec.input_dropout, mode, *rng);
  }
  Var h = lstm_forward(t, x, net.sequence_layers()[k], mode, rng);
  if (!net.norms().empty()) h = layer_norm(t, h, net.norms()[k]);
  return h;
}

Var run_head(Tape& t, const TaggingHead& head, Var h, double rate, Mode mode, Rng* rng) {
  if (mode == Mode::Train && rate > 0.0) h = dropout(t, h, rate, mode, *rng);
  Var z = dense(t, h, head.first);
  if (head.second) z = dense(t, relu(t, z), *head.second);
  return z;
}

void require_rng(Mode mode, Rng* rng) {
  if (mode == Mode::Train && !rng) throw Error("train-mode forward needs an Rng");
}

}  // namespace

Var encode(Tape& t, const PartlyLayeredNet& net, const Sentence& s, std::size_t task, Mode mode, Rng* rng) {
  require_rng(mode, rng);
  check_sentence(net, s);
  return encode_with(t, net, s, net.sequence_index(task), mode, rng);
}

Var forward_task(Tape& t, const PartlyLayeredNet& net, const Sentence& s, std::size_t task, Mode mode, Rng* rng) {
  if (task >= net.heads().size()) throw IndexOutOfRange("task index out of range");
  Var h = encode(t, net, s, task, mode, rng);
  return run_head(t, net.heads()[task], h, net.spec().tagging_dropout, mode, rng);
}

std::vector<Var> forward(Tape& t, const PartlyLayeredNet& net, const Sentence& s, Mode mode, Rng* rng) {
  require_rng(mode, rng);
  check_sentence(net, s);
  std::vector<Var> out;
  std::optional<Var> shared;
  for (std::size_t m = 0; m < net.heads().size(); ++m) {
    Var h;
    if (net.sequence_layers().size() == 1) {
      if (!shared) shared = encode_with(t, net, s, 0, mode, rng);
      h = *shared;
    } else {
      h = encode_with(t, net, s, m, mode, rng);
    }
    out.push_back(run_head(t, net.heads()[m], h, net.spec().tagging_dropout, mode, rng));
  }
  return out;
}

std::vector<Tensor> infer(const PartlyLayeredNet& net, const Sentence& s) {
  Tape t;
  std::vector<Tensor> out;
  for (Var v : forward(t, net, s, Mode::Eval)) out.push_back(t.value(v));
  return out;
}

std::vector<TagSequence> predict_tags(std::span<const Tensor> logits) {
  std::vector<TagSequence> rows;
  for (std::size_t m = 0; m < logits.size(); ++m) {
    const Tensor& l = logits[m];
    const std::size_t n = l.rows();
    TagSequence row{m + 1, std::vector<std::size_t>(n, 0)};
    for (std::size_t i = 0; i + m + 1 <= n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < l.cols(); ++c) {
        if (l.at(i, c) > l.at(i, best)) best = c;
      }
      row.tags[i] = best;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

SpanSet predict_spans(const PartlyLayeredNet& net, const Sentence& s) {
  auto logits = infer(net, s);
  return decode_spans(predict_tags(logits), net.spec().labels);
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "nestner-checkpoint";
constexpr std::string_view kTrailer = "NESTNER-END\n";

template <typename T>
void put(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(std::string_view data, std::string path) : data_(data), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) {
      auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    }
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view rest() const { return data_.substr(pos_); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw CorruptFile(path_ + ": truncated checkpoint");
  }

  std::string_view data_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string join_labels(const LabelSet& labels) {
  std::string s;
  for (const auto& l : labels.labels()) {
    if (!s.empty()) s += ',';
    s += l;
  }
  return s;
}

std::size_t to_size(const std::string& v, const std::string& key) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw CorruptFile("bad header value for " + key);
  return out;
}

double to_double(const std::string& v, const std::string& key) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw CorruptFile("bad header value for " + key);
  return out;
}

}  // namespace

std::string spec_header(const ModelSpec& spec) {
  std::ostringstream h;
  h << "variant=" << variant_name(spec.variant) << '\n'
    << "max_length=" << spec.max_length << '\n'
    << "labels=" << join_labels(spec.labels) << '\n'
    << "embedding_dim=" << spec.embedding_dim << '\n'
    << "embedding_trainable=" << (spec.embedding_trainable ? 1 : 0) << '\n'
    << "context_dim=" << spec.context_dim << '\n'
    << "lstm_layers=" << spec.lstm_layers << '\n'
    << "lstm_hidden=" << spec.lstm_hidden << '\n'
    << "lstm_dropout=" << format_double(spec.lstm_dropout) << '\n'
    << "bidirectional=" << (spec.bidirectional ? 1 : 0) << '\n'
    << "tagging_dropout=" << format_double(spec.tagging_dropout) << '\n'
    << "input_dropout=" << format_double(spec.input_dropout) << '\n'
    << "flair_inner_dim=" << spec.flair_inner_dim << '\n';
  return h.str();
}

void save_weights(const PartlyLayeredNet& net, const std::string& path) {
  const auto params = net.parameters();
  std::string out;
  out += kMagic;
  out += "\nversion=" + std::to_string(kCheckpointVersion) + "\n";
  out += spec_header(net.spec());
  out += "vocab_size=" + std::to_string(net.embedding().vocab.size()) + "\n";
  out += "parameters=" + std::to_string(params.size()) + "\n";
  out += "end\n";
  for (std::size_t i = 0; i < net.embedding().vocab.size(); ++i) put_string(out, net.embedding().vocab.token(i));
  for (const Parameter* p : params) {
    put_string(out, p->name);
    const Shape& shape = p->value.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(out, d);
    for (double v : p->value.data()) put<double>(out, v);
  }
  out += kTrailer;
  write_file_atomic(path, out);
}

PartlyLayeredNet load_weights(const std::string& path, const ModelSpec* expected) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = data.find('\n', pos);
    if (nl == std::string::npos) throw CorruptFile(path + ": truncated header");
    std::string line = data.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (data.compare(0, kMagic.size(), kMagic) != 0 || next_line() != kMagic) {
    throw CorruptFile(path + ": not a nestner checkpoint");
  }
  std::map<std::string, std::string> kv;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptFile(path + ": malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CorruptFile(path + ": header lacks '" + key + "'");
    return it->second;
  };
  if (field("version") != std::to_string(kCheckpointVersion)) {
    throw VersionMismatch(path + ": checkpoint version " + field("version") + ", expected " +
                          std::to_string(kCheckpointVersion));
  }

  ModelSpec spec;
  auto variant = parse_variant(field("variant"));
  if (!variant) throw CorruptFile(path + ": unknown variant");
  spec.variant = *variant;
  spec.max_length = to_size(field("max_length"), "max_length");
  {
    std::vector<std::string> labels;
    std::stringstream ss(field("labels"));
    for (std::string l; std::getline(ss, l, ',');) labels.push_back(l);
    try {
      spec.labels = LabelSet(labels);
    } catch (const ConfigError& e) {
      throw CorruptFile(path + ": " + e.what());
    }
  }
  spec.embedding_dim = to_size(field("embedding_dim"), "embedding_dim");
  spec.embedding_trainable = field("embedding_trainable") == "1";
  spec.context_dim = to_size(field("context_dim"), "context_dim");
  spec.lstm_layers = to_size(field("lstm_layers"), "lstm_layers");
  spec.lstm_hidden = to_size(field("lstm_hidden"), "lstm_hidden");
  spec.lstm_dropout = to_double(field("lstm_dropout"), "lstm_dropout");
  spec.bidirectional = field("bidirectional") == "1";
  spec.tagging_dropout = to_double(field("tagging_dropout"), "tagging_dropout");
  spec.input_dropout = to_double(field("input_dropout"), "input_dropout");
  spec.flair_inner_dim = to_size(field("flair_inner_dim"), "flair_inner_dim");

  if (expected && !(*expected == spec)) {
    std::string why = spec.max_length != expected->max_length
                          ? "max_length " + std::to_string(spec.max_length) + " != " +
                                std::to_string(expected->max_length)
                          : "architecture differs";
    throw SpecMismatch(path + ": checkpoint spec does not match (" + why + ")");
  }

  Reader r(std::string_view(data).substr(pos), path);
  const std::size_t vocab_size = to_size(field("vocab_size"), "vocab_size");
  Vocabulary vocab;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    std::string tok = r.get_string();
    if (vocab.add(tok) != i) throw CorruptFile(path + ": vocabulary order is inconsistent");
  }

  Rng scratch(0);
  EmbeddingTable table{std::move(vocab), Parameter{"embedding", Tensor::zeros(vocab_size, spec.embedding_dim)},
                       spec.embedding_trainable};
  PartlyLayeredNet net = [&] {
    try {
      return PartlyLayeredNet(spec, std::move(table), scratch);
    } catch (const ConfigError& e) {
      throw CorruptFile(path + ": " + e.what());
    }
  }();

  auto params = net.parameters();
  if (to_size(field("parameters"), "parameters") != params.size()) {
    throw CorruptFile(path + ": parameter count does not match the architecture");
  }
  for (Parameter* p : params) {
    const std::string name = r.get_string();
    if (name != p->name) throw CorruptFile(path + ": expected parameter '" + p->name + "', found '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != p->value.shape()) throw CorruptFile(path + ": shape mismatch for '" + name + "'");
    for (double& v : p->value.data()) v = r.get<double>();
  }
  if (r.rest() != kTrailer) throw CorruptFile(path + ": missing or damaged trailer");
  return net;
}

}  // namespace nestner
