#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nestner/spancodec.hpp"

namespace nestner {

/// A span tagged with the sentence it belongs to.
struct DocSpan {
  std::string sentence;
  Span span;

  friend auto operator<=>(const DocSpan&, const DocSpan&) = default;
};

using DocSpanSet = std::set<DocSpan>;

/// Precision, recall and F1 plus the counts they came from. For a macro
/// average the ratios are means over groups and the counts are pooled.
struct PRF {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  /// Ratios from counts; 0/0 is 0.
  static PRF from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  friend bool operator==(const PRF&, const PRF&) = default;
};

enum class Grouping { Overall, Length, Class, NestedLevel };

/// Group key: a number for length and level groups, a name for class groups,
/// both empty for the overall group.
struct GroupKey {
  std::size_t number = 0;
  std::string name;

  std::string str() const { return name.empty() ? std::to_string(number) : name; }
  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

using GroupScores = std::map<GroupKey, PRF>;

/// Exact-match scoring. A prediction is a true positive iff the gold set
/// holds the same (sentence, start, length, label). Nested-level groups use
/// gold levels for tp and fn and levels within the predicted set for fp.
GroupScores score_spans(const DocSpanSet& gold, const DocSpanSet& predicted, Grouping grouping);

/// (macro, micro). Micro pools counts. Macro is the unweighted mean of the
/// ratios over groups with at least one gold or predicted span. Throws
/// EmptyMap on an empty map.
std::pair<PRF, PRF> macro_micro(const GroupScores& groups);

/// Counts per (gold label, predicted label) over {none} ∪ labels, index 0
/// being none. Each interval pairs equal labels first, then the remaining
/// gold and predicted labels in label order; leftovers pair with none.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> cells;  // [gold][predicted]

  std::size_t at(std::string_view gold, std::string_view predicted) const;
  /// Off-diagonal total.
  std::size_t errors() const;
};

/// Throws UnknownLabel for labels outside the set.
ConfusionMatrix confusion_matrix(const DocSpanSet& gold, const DocSpanSet& predicted, const LabelSet& labels);

/// Mean span length; 0 for no spans.
double average_length(const DocSpanSet& predicted);

/// Nesting levels computed per sentence.
std::map<DocSpan, std::size_t> doc_levels(const DocSpanSet& spans);

struct EvalReport {
  LabelSet labels;
  PRF micro;
  PRF macro;        // over word-lengths
  PRF class_macro;  // over classes
  GroupScores by_length;
  GroupScores by_class;
  GroupScores by_level;
  /// Per class within each word-length.
  std::map<std::size_t, GroupScores> by_length_class;
  double average_length = 0.0;
  ConfusionMatrix confusion;
  std::size_t gold_count = 0;
  std::size_t predicted_count = 0;
};

EvalReport evaluate_spans(const DocSpanSet& gold, const DocSpanSet& predicted, const LabelSet& labels);

// Report emitters. Ratios are printed with six decimals.
std::string overall_csv(const EvalReport& r);
std::string per_class_csv(const EvalReport& r);
std::string per_length_csv(const EvalReport& r);
std::string per_level_csv(const EvalReport& r);
std::string per_length_class_csv(const EvalReport& r);
std::string confusion_csv(const EvalReport& r);
std::string report_json(const EvalReport& r);

/// Writes every emitter's output into `dir` (created if needed) as
/// overall.csv, per_class.csv, per_length.csv, per_level.csv,
/// per_length_class.csv, confusion.csv and report.json.
void write_report(const EvalReport& r, const std::string& dir);

}  // namespace nestner
