#include "nestner/spancodec.hpp"

#include <algorithm>
#include <map>

#include "nestner/errors.hpp"

namespace nestner {

LabelSet::LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ConfigError("label set must not be empty");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].empty()) throw ConfigError("labels must be non-empty");
    for (std::size_t j = 0; j < i; ++j) {
      if (labels_[i] == labels_[j]) throw ConfigError("duplicate label '" + labels_[i] + "'");
    }
  }
}

std::optional<std::size_t> LabelSet::tag_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return i + 1;
  }
  return std::nullopt;
}

std::vector<TagSequence> encode_bo(const SpanSet& spans, std::size_t n, std::size_t max_length,
                                   const LabelSet& labels) {
  std::vector<TagSequence> rows(max_length);
  for (std::size_t m = 0; m < max_length; ++m) rows[m] = TagSequence{m + 1, std::vector<std::size_t>(n, 0)};
  for (const Span& s : spans) {
    if (s.length == 0 || s.end() > n) {
      throw SpanOutOfRange("span (" + std::to_string(s.start) + "," + std::to_string(s.length) +
                           ") does not fit a sentence of " + std::to_string(n) + " tokens");
    }
    if (s.length > max_length) {
      throw SpanOutOfRange("span (" + std::to_string(s.start) + "," + std::to_string(s.length) +
                           ") is longer than the maximum word-length " + std::to_string(max_length));
    }
    auto tag = labels.tag_of(s.label);
    if (!tag) throw UnknownLabel("unknown label '" + s.label + "'");
    std::size_t& slot = rows[s.length - 1].tags[s.start];
    if (slot != 0 && slot != *tag) {
      throw AmbiguousGold("span (" + std::to_string(s.start) + "," + std::to_string(s.length) +
                          ") carries both '" + labels.label_of(slot) + "' and '" + s.label + "'");
    }
    slot = *tag;
  }
  return rows;
}

SpanSet decode_spans(std::span<const TagSequence> rows, const LabelSet& labels) {
  SpanSet out;
  for (const TagSequence& row : rows) {
    for (std::size_t i = 0; i < row.tags.size(); ++i) {
      if (row.tags[i] != 0) out.insert(Span{i, row.word_length, labels.label_of(row.tags[i])});
    }
  }
  return out;
}

bool well_formed(const TagSequence& row, std::size_t n, const LabelSet& labels) {
  if (row.word_length == 0 || row.tags.size() != n) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (row.tags[i] > labels.size()) return false;
    if (row.tags[i] != 0 && i + row.word_length > n) return false;
  }
  return true;
}

std::vector<NestedSpan> assign_nested_levels(const SpanSet& spans) {
  // Intervals only; labels do not affect nesting.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> level;  // (start, end) → level
  for (const Span& s : spans) level.emplace(std::make_pair(s.start, s.end()), 0);

  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (const auto& [iv, _] : level) order.push_back(iv);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second - a.first < b.second - b.first; });

  for (const auto& iv : order) {
    std::size_t best = 0;
    for (const auto& inner : order) {
      const std::size_t inner_len = inner.second - inner.first;
      if (inner_len >= iv.second - iv.first) break;
      if (inner.first >= iv.first && inner.second <= iv.second) best = std::max(best, level[inner]);
    }
    level[iv] = best + 1;
  }

  std::vector<NestedSpan> out;
  out.reserve(spans.size());
  for (const Span& s : spans) out.push_back(NestedSpan{s, level[{s.start, s.end()}]});
  return out;
}

SpanSet drop_overlong(const SpanSet& spans, std::size_t max_length, const std::string& where,
                      std::vector<std::string>* warnings) {
  SpanSet kept;
  for (const Span& s : spans) {
    if (s.length <= max_length) {
      kept.insert(s);
    } else if (warnings) {
      warnings->push_back(where + ": dropped span (" + std::to_string(s.start) + "," + std::to_string(s.length) +
                          "," + s.label + ") longer than " + std::to_string(max_length) + " words");
    }
  }
  return kept;
}

std::optional<PosTag> parse_pos(std::string_view s) {
  if (s == "NOUN") return PosTag::Noun;
  if (s == "VERB") return PosTag::Verb;
  if (s == "CONJ") return PosTag::Conj;
  if (s == "ART") return PosTag::Art;
  if (s == "PRON") return PosTag::Pron;
  if (s == "OTHER") return PosTag::Other;
  return std::nullopt;
}

std::string_view pos_name(PosTag tag) {
  switch (tag) {
    case PosTag::Noun: return "NOUN";
    case PosTag::Verb: return "VERB";
    case PosTag::Conj: return "CONJ";
    case PosTag::Art: return "ART";
    case PosTag::Pron: return "PRON";
    case PosTag::Other: return "OTHER";
  }
  return "OTHER";
}

namespace {

const char* boundary_word(PosTag tag) {
  switch (tag) {
    case PosTag::Verb: return "verb";
    case PosTag::Conj: return "conjunction";
    case PosTag::Art: return "article";
    case PosTag::Pron: return "pronoun";
    default: return nullptr;
  }
}

}  // namespace

FilterResult filter_concept_candidate(std::span<const PosTag> pos) {
  if (pos.empty()) throw EmptyCandidate("concept candidate has no tokens");
  if (std::find(pos.begin(), pos.end(), PosTag::Noun) == pos.end()) return {false, "no-noun"};
  if (const char* w = boundary_word(pos.front())) return {false, std::string("starts-with-") + w};
  if (const char* w = boundary_word(pos.back())) return {false, std::string("ends-with-") + w};
  return {true, "accepted"};
}

}  // namespace nestner
