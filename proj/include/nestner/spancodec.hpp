#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nestner {

/// A labeled entity candidate covering tokens [start, start + length).
struct Span {
  std::size_t start = 0;
  std::size_t length = 1;
  std::string label;

  std::size_t end() const noexcept { return start + length; }
  friend auto operator<=>(const Span&, const Span&) = default;
};

using SpanSet = std::set<Span>;

/// Ordered entity labels. Tag index 0 is O; index k ≥ 1 is B-labels[k-1].
class LabelSet {
 public:
  LabelSet() = default;
  /// Throws ConfigError on an empty or duplicated label list.
  explicit LabelSet(std::vector<std::string> labels);

  std::optional<std::size_t> tag_of(std::string_view label) const;
  /// Label of a B tag; tag must be in [1, size()].
  const std::string& label_of(std::size_t tag) const { return labels_.at(tag - 1); }
  std::size_t size() const noexcept { return labels_.size(); }
  /// Number of classes per head: O plus one B tag per label.
  std::size_t tag_count() const noexcept { return labels_.size() + 1; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<std::string> labels_;
};

/// BO tags for one word-length m over an n-token sentence.
struct TagSequence {
  std::size_t word_length = 1;
  std::vector<std::size_t> tags;

  std::size_t size() const noexcept { return tags.size(); }
  friend bool operator==(const TagSequence&, const TagSequence&) = default;
};

struct NestedSpan {
  Span span;
  std::size_t level = 1;

  friend auto operator<=>(const NestedSpan&, const NestedSpan&) = default;
};

/// Encodes spans as one TagSequence per word-length 1..max_length. Row m has
/// the span's B tag at the start of every length-m span and O elsewhere.
/// Throws SpanOutOfRange for spans outside the sentence or longer than
/// max_length, AmbiguousGold for two labels on the same (start, length), and
/// UnknownLabel for labels outside the set.
std::vector<TagSequence> encode_bo(const SpanSet& spans, std::size_t n, std::size_t max_length,
                                   const LabelSet& labels);

/// Inverse of encode_bo: a B tag at i in the row for length m yields the span
/// (i, m, label).
SpanSet decode_spans(std::span<const TagSequence> rows, const LabelSet& labels);

/// True iff the row satisfies the TagSequence invariants for n tokens.
bool well_formed(const TagSequence& row, std::size_t n, const LabelSet& labels);

/// Nesting depth by longest chain of strictly contained spans, ignoring
/// labels: level = 1 + max level of the spans strictly inside. Identical
/// intervals share a level. The result is sorted by span.
std::vector<NestedSpan> assign_nested_levels(const SpanSet& spans);

/// Removes spans longer than max_length, appending one warning per dropped
/// span when `warnings` is given.
SpanSet drop_overlong(const SpanSet& spans, std::size_t max_length, const std::string& where,
                      std::vector<std::string>* warnings);

enum class PosTag { Noun, Verb, Conj, Art, Pron, Other };

/// Parses one of NOUN, VERB, CONJ, ART, PRON, OTHER.
std::optional<PosTag> parse_pos(std::string_view s);
std::string_view pos_name(PosTag tag);

struct FilterResult {
  bool accepted = false;
  /// "accepted", "no-noun", "starts-with-<pos>" or "ends-with-<pos>".
  std::string reason;
};

/// Concept-candidate heuristic: reject candidates without a noun, or that
/// start or end with a verb, conjunction, article or pronoun. Throws
/// EmptyCandidate for an empty tag list.
FilterResult filter_concept_candidate(std::span<const PosTag> pos);

}  // namespace nestner
