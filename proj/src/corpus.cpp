#include "nestner/corpus.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "nestner/errors.hpp"

namespace nestner {

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool blank(std::string_view line) { return line.find_first_not_of(" \t") == std::string_view::npos; }

bool parse_size(std::string_view s, std::size_t& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Reads lines with CR stripped, counting them from 1.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++number_;
    return true;
  }
  std::size_t number() const noexcept { return number_; }

 private:
  std::istream& in_;
  std::size_t number_ = 0;
};

std::optional<std::string> id_of(std::string_view line) {
  if (line.substr(0, 3) != "#id" || line.size() < 4 || (line[3] != ' ' && line[3] != '\t')) return std::nullopt;
  auto fields = split_ws(line.substr(4));
  if (fields.size() != 1) return std::string();
  return fields[0];
}

/// Adds a span after label mapping; returns false if the map drops it.
bool add_span(SpanSet& spans, Span span, const LabelMap* map) {
  if (map) {
    auto mapped = map->apply(span.label);
    if (!mapped) return false;
    span.label = *mapped;
  }
  spans.insert(std::move(span));
  return true;
}

class IdRegistry {
 public:
  IdRegistry(const std::string& source) : source_(source) {}
  void add(const std::string& id, std::size_t line) {
    auto [it, fresh] = first_.emplace(id, line);
    if (!fresh) {
      throw ParseError(source_, line, "duplicate sentence id '" + id + "' (first at line " +
                                          std::to_string(it->second) + ")");
    }
  }

 private:
  const std::string& source_;
  std::unordered_map<std::string, std::size_t> first_;
};

}  // namespace

std::optional<CorpusFormat> parse_corpus_format(std::string_view s) {
  if (s == "standoff") return CorpusFormat::Standoff;
  if (s == "iob-nested") return CorpusFormat::IobNested;
  return std::nullopt;
}

std::optional<std::string> LabelMap::apply(const std::string& label) const {
  auto it = targets.find(label);
  if (it == targets.end()) throw UnknownLabel("label '" + label + "' is not in the label map");
  if (it->second == "-") return std::nullopt;
  return it->second;
}

LabelMap read_label_map(std::istream& in, const std::string& source) {
  LabelMap map;
  LineReader lines(in);
  std::string line;
  while (lines.next(line)) {
    auto hash = line.find('#');
    auto fields = split_ws(std::string_view(line).substr(0, hash));
    if (fields.empty()) continue;
    if (fields.size() != 2) throw ParseError(source, lines.number(), "expected 'source target'");
    if (!map.targets.emplace(fields[0], fields[1]).second) {
      throw ParseError(source, lines.number(), "label '" + fields[0] + "' mapped twice");
    }
  }
  return map;
}

LabelMap load_label_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path);
  return read_label_map(in, path);
}

Corpus read_standoff(std::istream& in, const std::string& source, const LabelMap* map) {
  Corpus corpus;
  IdRegistry ids(source);
  LineReader lines(in);
  std::string line;
  bool more = lines.next(line);
  while (more) {
    if (blank(line)) {
      more = lines.next(line);
      continue;
    }
    AnnotatedSentence item;
    auto id = id_of(line);
    if (!id) throw ParseError(source, lines.number(), "expected '#id <sentence-id>'");
    if (id->empty()) throw ParseError(source, lines.number(), "sentence id must be one non-empty word");
    ids.add(*id, lines.number());
    item.sentence.id = *id;

    if (!lines.next(line) || blank(line)) throw ParseError(source, lines.number(), "missing token line");
    item.sentence.tokens = split_tabs(line);
    for (const auto& tok : item.sentence.tokens) {
      if (tok.empty()) throw ParseError(source, lines.number(), "empty token");
    }
    const std::size_t n = item.sentence.size();

    more = lines.next(line);
    if (more && line.starts_with("#pos")) {
      auto fields = split_tabs(line);
      if (fields.front() != "#pos") throw ParseError(source, lines.number(), "expected '#pos<TAB>tag...'");
      fields.erase(fields.begin());
      if (fields.size() != n) {
        throw ParseError(source, lines.number(),
                         std::to_string(fields.size()) + " POS tags for " + std::to_string(n) + " tokens");
      }
      item.sentence.pos = std::move(fields);
      more = lines.next(line);
    }

    while (more && !blank(line)) {
      auto fields = split_tabs(line);
      Span span;
      if (fields.size() != 4 || fields[0] != "S" || !parse_size(fields[1], span.start) ||
          !parse_size(fields[2], span.length) || fields[3].empty()) {
        throw ParseError(source, lines.number(), "expected 'S<TAB>start<TAB>length<TAB>label'");
      }
      if (span.length == 0 || span.start >= n || span.length > n - span.start) {
        throw SpanOutOfRange(source + ":" + std::to_string(lines.number()) + ": span (" + fields[1] + "," +
                             fields[2] + ") outside a sentence of " + std::to_string(n) + " tokens");
      }
      span.label = fields[3];
      const std::size_t before = item.spans.size();
      if (add_span(item.spans, std::move(span), map) && item.spans.size() == before) {
        corpus.warnings.push_back(source + ":" + std::to_string(lines.number()) + ": duplicate span ignored");
      }
      more = lines.next(line);
    }
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

Corpus read_iob_nested(std::istream& in, const std::string& source, const LabelMap* map) {
  Corpus corpus;
  IdRegistry ids(source);
  LineReader lines(in);
  std::string line;

  AnnotatedSentence item;
  std::size_t id_line = 0;
  // Open span per column: start and label.
  std::vector<std::optional<std::pair<std::size_t, std::string>>> open;

  auto close = [&](std::size_t col, std::size_t end) {
    if (!open[col]) return;
    auto& [start, label] = *open[col];
    add_span(item.spans, Span{start, end - start, label}, map);
    open[col].reset();
  };
  auto finish = [&]() {
    if (item.sentence.tokens.empty()) {
      if (!item.sentence.id.empty()) throw ParseError(source, id_line, "sentence without tokens");
      return;
    }
    for (std::size_t c = 0; c < open.size(); ++c) close(c, item.sentence.size());
    if (item.sentence.id.empty()) {
      item.sentence.id = "s" + std::to_string(corpus.items.size() + 1);
      id_line = lines.number();
    }
    ids.add(item.sentence.id, id_line);
    corpus.items.push_back(std::move(item));
    item = AnnotatedSentence{};
    open.clear();
  };

  while (lines.next(line)) {
    if (blank(line)) {
      finish();
      continue;
    }
    if (auto id = id_of(line)) {
      if (!item.sentence.tokens.empty()) throw ParseError(source, lines.number(), "'#id' inside a sentence");
      if (id->empty()) throw ParseError(source, lines.number(), "sentence id must be one non-empty word");
      item.sentence.id = *id;
      id_line = lines.number();
      continue;
    }
    auto fields = split_tabs(line);
    if (fields[0].empty()) throw ParseError(source, lines.number(), "empty token");
    const std::size_t i = item.sentence.size();
    item.sentence.tokens.push_back(fields[0]);
    if (fields.size() - 1 > open.size()) open.resize(fields.size() - 1);
    for (std::size_t c = 0; c < open.size(); ++c) {
      const std::string tag = c + 1 < fields.size() ? fields[c + 1] : "O";
      if (tag == "O") {
        close(c, i);
        continue;
      }
      if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-') {
        throw ParseError(source, lines.number(), "bad tag '" + tag + "' in column " + std::to_string(c + 2));
      }
      std::string label = tag.substr(2);
      if (tag[0] == 'I' && open[c] && open[c]->second == label) continue;
      if (tag[0] == 'I') {
        corpus.warnings.push_back(source + ":" + std::to_string(lines.number()) + ": '" + tag +
                                  "' without a preceding span starts a new one");
      }
      close(c, i);
      open[c].emplace(i, std::move(label));
    }
  }
  finish();
  return corpus;
}

Corpus read_corpus(const std::string& path, CorpusFormat format, const LabelMap* map) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path);
  return format == CorpusFormat::Standoff ? read_standoff(in, path, map) : read_iob_nested(in, path, map);
}

std::string write_standoff(std::span<const AnnotatedSentence> items) {
  std::ostringstream out;
  bool first = true;
  for (const auto& item : items) {
    if (!first) out << '\n';
    first = false;
    out << "#id " << item.sentence.id << '\n';
    for (std::size_t i = 0; i < item.sentence.size(); ++i) out << (i ? "\t" : "") << item.sentence.tokens[i];
    out << '\n';
    if (!item.sentence.pos.empty()) {
      out << "#pos";
      for (const auto& p : item.sentence.pos) out << '\t' << p;
      out << '\n';
    }
    // SpanSet is already ordered by (start, length, label).
    for (const Span& s : item.spans) out << "S\t" << s.start << '\t' << s.length << '\t' << s.label << '\n';
  }
  return out.str();
}

void drop_overlong_spans(Corpus& corpus, std::size_t max_length, const std::string& source) {
  for (auto& item : corpus.items) {
    item.spans = drop_overlong(item.spans, max_length, source + ": sentence " + item.sentence.id, &corpus.warnings);
  }
}

void check_labels(const Corpus& corpus, const LabelSet& labels) {
  for (const auto& item : corpus.items) {
    for (const Span& s : item.spans) {
      if (!labels.tag_of(s.label)) {
        throw UnknownLabel("sentence " + item.sentence.id + ": label '" + s.label + "' is not a model label");
      }
    }
  }
}

void attach_context(std::span<AnnotatedSentence> items, const VectorFile& vectors, std::size_t dim) {
  if (vectors.dim != dim) {
    throw DimMismatch("context vectors have width " + std::to_string(vectors.dim) + ", the model expects " +
                      std::to_string(dim));
  }
  std::unordered_map<std::string_view, const std::vector<double>*> by_key;
  for (const auto& [key, values] : vectors.entries) by_key.emplace(key, &values);
  for (auto& item : items) {
    Tensor ctx = Tensor::zeros(item.sentence.size(), dim);
    for (std::size_t i = 0; i < item.sentence.size(); ++i) {
      const std::string key = item.sentence.id + ":" + std::to_string(i);
      auto it = by_key.find(key);
      if (it == by_key.end()) throw DataError("no context vector for " + key);
      for (std::size_t j = 0; j < dim; ++j) ctx.at(i, j) = (*it->second)[j];
    }
    item.sentence.context = std::move(ctx);
  }
}

std::vector<Sentence> read_raw_sentences(std::istream& in) {
  std::vector<Sentence> out;
  LineReader lines(in);
  std::string line;
  while (lines.next(line)) {
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    Sentence s;
    s.id = std::to_string(lines.number());
    s.tokens = std::move(tokens);
    out.push_back(std::move(s));
  }
  return out;
}

CorpusStats corpus_stats(std::span<const AnnotatedSentence> items) {
  CorpusStats stats;
  for (const auto& item : items) {
    ++stats.sentences;
    stats.tokens += item.sentence.size();
    stats.spans += item.spans.size();
    for (const auto& ns : assign_nested_levels(item.spans)) {
      ++stats.by_length[ns.span.length];
      ++stats.by_level[ns.level];
      ++stats.by_label[ns.span.label];
    }
  }
  return stats;
}

std::string format_stats(const CorpusStats& stats) {
  std::ostringstream out;
  out << "sentences=" << stats.sentences << '\n';
  out << "tokens=" << stats.tokens << '\n';
  out << "spans=" << stats.spans << '\n';
  for (const auto& [m, c] : stats.by_length) out << "length" << m << '=' << c << '\n';
  for (const auto& [l, c] : stats.by_level) out << "level" << l << '=' << c << '\n';
  for (const auto& [label, c] : stats.by_label) out << "label." << label << '=' << c << '\n';
  return out.str();
}

}  // namespace nestner
