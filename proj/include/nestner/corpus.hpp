#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nestner/model.hpp"

namespace nestner {

enum class CorpusFormat { Standoff, IobNested };

/// Accepts "standoff" and "iob-nested".
std::optional<CorpusFormat> parse_corpus_format(std::string_view s);

/// Fine-to-coarse label renaming. A target of "-" drops the span.
struct LabelMap {
  std::map<std::string, std::string> targets;

  /// Mapped label, nullopt for a dropped label. Throws UnknownLabel for a
  /// label the map does not mention.
  std::optional<std::string> apply(const std::string& label) const;
};

/// Lines `source target` (tab or space separated), `#` comments.
LabelMap read_label_map(std::istream& in, const std::string& source);
LabelMap load_label_map(const std::string& path);

struct Corpus {
  std::vector<AnnotatedSentence> items;
  /// Recoverable oddities found while reading, as "source:line: message".
  std::vector<std::string> warnings;
};

/// Standoff blocks separated by blank lines:
///   #id <sentence-id>
///   tok<TAB>tok<TAB>...
///   #pos<TAB>TAG<TAB>...        (optional)
///   S<TAB>start<TAB>length<TAB>label
/// Throws ParseError naming the line, SpanOutOfRange for spans outside the
/// sentence and DataError for duplicate sentence ids.
Corpus read_standoff(std::istream& in, const std::string& source, const LabelMap* map = nullptr);

/// One token per line, `token<TAB>tag...` with one BIO column per nesting
/// level, sentences separated by blank lines and optionally introduced by
/// `#id <sentence-id>`. Each column is decoded into spans independently.
Corpus read_iob_nested(std::istream& in, const std::string& source, const LabelMap* map = nullptr);

Corpus read_corpus(const std::string& path, CorpusFormat format, const LabelMap* map = nullptr);

/// Canonical standoff: spans sorted by (start, length, label).
std::string write_standoff(std::span<const AnnotatedSentence> items);

/// Drops spans longer than max_length from every sentence, adding warnings.
void drop_overlong_spans(Corpus& corpus, std::size_t max_length, const std::string& source);

/// Throws UnknownLabel if a span label is outside `labels`.
void check_labels(const Corpus& corpus, const LabelSet& labels);

/// Attaches per-token context vectors from a vector text file keyed by
/// `sentenceid:tokenindex`. Throws DataError naming the first missing key
/// and DimMismatch on a width other than `dim`.
void attach_context(std::span<AnnotatedSentence> items, const VectorFile& vectors, std::size_t dim);

/// Raw text: one sentence per line, tokens split on whitespace. Sentence
/// ids are the 1-based line numbers; blank lines are skipped.
std::vector<Sentence> read_raw_sentences(std::istream& in);

/// Gold span counts by word-length and by nested level.
struct CorpusStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t spans = 0;
  std::map<std::size_t, std::size_t> by_length;
  std::map<std::size_t, std::size_t> by_level;
  std::map<std::string, std::size_t> by_label;
};

CorpusStats corpus_stats(std::span<const AnnotatedSentence> items);
std::string format_stats(const CorpusStats& stats);

}  // namespace nestner
