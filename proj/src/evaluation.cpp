#include "nestner/evaluation.hpp"

#include <algorithm>
#include <array>
#include <iterator>
#include <tuple>
#include <filesystem>

#include "json.hpp"
#include "nestner/errors.hpp"
#include "nestner/fileio.hpp"

namespace nestner {

PRF PRF::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF r{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

std::map<DocSpan, std::size_t> doc_levels(const DocSpanSet& spans) {
  std::map<DocSpan, std::size_t> out;
  auto it = spans.begin();
  while (it != spans.end()) {
    const std::string& sid = it->sentence;
    SpanSet local;
    for (; it != spans.end() && it->sentence == sid; ++it) local.insert(it->span);
    for (const NestedSpan& ns : assign_nested_levels(local)) out.emplace(DocSpan{sid, ns.span}, ns.level);
  }
  return out;
}

GroupScores score_spans(const DocSpanSet& gold, const DocSpanSet& predicted, Grouping grouping) {
  std::map<DocSpan, std::size_t> gold_level;
  std::map<DocSpan, std::size_t> pred_level;
  if (grouping == Grouping::NestedLevel) {
    gold_level = doc_levels(gold);
    pred_level = doc_levels(predicted);
  }
  auto key = [&](const DocSpan& s, const std::map<DocSpan, std::size_t>& levels) -> GroupKey {
    switch (grouping) {
      case Grouping::Overall: return {};
      case Grouping::Length: return {s.span.length, {}};
      case Grouping::Class: return {0, s.span.label};
      case Grouping::NestedLevel: return {levels.at(s), {}};
    }
    return {};
  };

  std::map<GroupKey, std::array<std::size_t, 3>> counts;
  for (const DocSpan& g : gold) {
    auto& c = counts[key(g, gold_level)];
    if (predicted.count(g)) {
      ++c[0];
    } else {
      ++c[2];
    }
  }
  for (const DocSpan& p : predicted) {
    if (!gold.count(p)) ++counts[key(p, pred_level)][1];
  }
  GroupScores out;
  for (const auto& [k, c] : counts) out.emplace(k, PRF::from_counts(c[0], c[1], c[2]));
  return out;
}

std::pair<PRF, PRF> macro_micro(const GroupScores& groups) {
  if (groups.empty()) throw EmptyMap("cannot average an empty group map");
  std::size_t tp = 0, fp = 0, fn = 0, used = 0;
  double p = 0.0, r = 0.0, f = 0.0;
  for (const auto& [_, g] : groups) {
    tp += g.tp;
    fp += g.fp;
    fn += g.fn;
    if (g.tp + g.fp + g.fn == 0) continue;
    ++used;
    p += g.precision;
    r += g.recall;
    f += g.f1;
  }
  PRF macro{tp, fp, fn, 0.0, 0.0, 0.0};
  if (used) {
    const double n = static_cast<double>(used);
    macro.precision = p / n;
    macro.recall = r / n;
    macro.f1 = f / n;
  }
  return {macro, PRF::from_counts(tp, fp, fn)};
}

std::size_t ConfusionMatrix::at(std::string_view gold, std::string_view predicted) const {
  auto index = [&](std::string_view c) {
    auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) throw UnknownLabel("no confusion class '" + std::string(c) + "'");
    return static_cast<std::size_t>(it - classes.begin());
  };
  return cells[index(gold)][index(predicted)];
}

std::size_t ConfusionMatrix::errors() const {
  std::size_t total = 0;
  for (std::size_t g = 0; g < cells.size(); ++g) {
    for (std::size_t p = 0; p < cells[g].size(); ++p) {
      if (g != p) total += cells[g][p];
    }
  }
  return total;
}

ConfusionMatrix confusion_matrix(const DocSpanSet& gold, const DocSpanSet& predicted, const LabelSet& labels) {
  ConfusionMatrix cm;
  cm.classes.push_back("none");
  for (const auto& l : labels.labels()) cm.classes.push_back(l);
  cm.cells.assign(cm.classes.size(), std::vector<std::size_t>(cm.classes.size(), 0));

  using Interval = std::tuple<std::string, std::size_t, std::size_t>;
  std::map<Interval, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_interval;
  auto tag = [&](const Span& s) {
    auto t = labels.tag_of(s.label);
    if (!t) throw UnknownLabel("unknown label '" + s.label + "'");
    return *t;
  };
  for (const DocSpan& g : gold) by_interval[{g.sentence, g.span.start, g.span.length}].first.push_back(tag(g.span));
  for (const DocSpan& p : predicted) {
    by_interval[{p.sentence, p.span.start, p.span.length}].second.push_back(tag(p.span));
  }

  for (auto& [_, lists] : by_interval) {
    auto& [g, p] = lists;
    std::sort(g.begin(), g.end());
    std::sort(p.begin(), p.end());
    std::vector<std::size_t> g_rest, p_rest;
    std::set_difference(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(g_rest));
    std::set_difference(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(p_rest));
    for (std::size_t t : g) {
      if (std::binary_search(p.begin(), p.end(), t)) ++cm.cells[t][t];
    }
    const std::size_t paired = std::min(g_rest.size(), p_rest.size());
    for (std::size_t i = 0; i < paired; ++i) ++cm.cells[g_rest[i]][p_rest[i]];
    for (std::size_t i = paired; i < g_rest.size(); ++i) ++cm.cells[g_rest[i]][0];
    for (std::size_t i = paired; i < p_rest.size(); ++i) ++cm.cells[0][p_rest[i]];
  }
  return cm;
}

double average_length(const DocSpanSet& predicted) {
  if (predicted.empty()) return 0.0;
  double total = 0.0;
  for (const DocSpan& s : predicted) total += static_cast<double>(s.span.length);
  return total / static_cast<double>(predicted.size());
}

EvalReport evaluate_spans(const DocSpanSet& gold, const DocSpanSet& predicted, const LabelSet& labels) {
  EvalReport r;
  r.labels = labels;
  r.gold_count = gold.size();
  r.predicted_count = predicted.size();
  r.confusion = confusion_matrix(gold, predicted, labels);
  r.by_length = score_spans(gold, predicted, Grouping::Length);
  r.by_class = score_spans(gold, predicted, Grouping::Class);
  r.by_level = score_spans(gold, predicted, Grouping::NestedLevel);
  if (!r.by_length.empty()) {
    std::tie(r.macro, r.micro) = macro_micro(r.by_length);
    r.class_macro = macro_micro(r.by_class).first;
  }
  std::map<std::size_t, std::pair<DocSpanSet, DocSpanSet>> split;
  for (const DocSpan& s : gold) split[s.span.length].first.insert(s);
  for (const DocSpan& s : predicted) split[s.span.length].second.insert(s);
  for (const auto& [len, sets] : split) r.by_length_class[len] = score_spans(sets.first, sets.second, Grouping::Class);
  r.average_length = average_length(predicted);
  return r;
}

namespace {

std::string fx(double v) { return format_fixed(v, 6); }

std::string prf_cells(const PRF& p) {
  return fx(p.precision) + "," + fx(p.recall) + "," + fx(p.f1) + "," + std::to_string(p.tp) + "," +
         std::to_string(p.fp) + "," + std::to_string(p.fn);
}

// Class rows follow label order; labels without spans get zero rows.
PRF class_row(const GroupScores& groups, const std::string& label) {
  auto it = groups.find(GroupKey{0, label});
  return it == groups.end() ? PRF{} : it->second;
}

nlohmann::ordered_json prf_json(const PRF& p) {
  nlohmann::ordered_json j;
  j["p"] = p.precision;
  j["r"] = p.recall;
  j["f1"] = p.f1;
  j["tp"] = p.tp;
  j["fp"] = p.fp;
  j["fn"] = p.fn;
  return j;
}

nlohmann::ordered_json groups_json(const GroupScores& groups, const char* key) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& [k, p] : groups) {
    nlohmann::ordered_json j;
    if (k.name.empty()) {
      j[key] = k.number;
    } else {
      j[key] = k.name;
    }
    j.update(prf_json(p));
    arr.push_back(j);
  }
  return arr;
}

}  // namespace

std::string overall_csv(const EvalReport& r) {
  return "ma_p,ma_r,ma_f1,mi_p,mi_r,mi_f1,avg_len,gold,predicted\n" + fx(r.macro.precision) + "," +
         fx(r.macro.recall) + "," + fx(r.macro.f1) + "," + fx(r.micro.precision) + "," + fx(r.micro.recall) + "," +
         fx(r.micro.f1) + "," + fx(r.average_length) + "," + std::to_string(r.gold_count) + "," +
         std::to_string(r.predicted_count) + "\n";
}

std::string per_class_csv(const EvalReport& r) {
  std::string out = "class,p,r,f1,tp,fp,fn\n";
  for (const auto& l : r.labels.labels()) out += l + "," + prf_cells(class_row(r.by_class, l)) + "\n";
  out += "micro," + prf_cells(r.micro) + "\n";
  out += "macro," + prf_cells(r.class_macro) + "\n";
  return out;
}

std::string per_length_csv(const EvalReport& r) {
  std::string out = "length,p,r,f1,tp,fp,fn\n";
  for (const auto& [k, p] : r.by_length) out += std::to_string(k.number) + "," + prf_cells(p) + "\n";
  out += "micro," + prf_cells(r.micro) + "\n";
  out += "macro," + prf_cells(r.macro) + "\n";
  return out;
}

std::string per_level_csv(const EvalReport& r) {
  std::string out = "level,p,r,f1,tp,fp,fn\n";
  for (const auto& [k, p] : r.by_level) out += std::to_string(k.number) + "," + prf_cells(p) + "\n";
  return out;
}

std::string per_length_class_csv(const EvalReport& r) {
  std::string out = "length,class,p,r,f1,tp,fp,fn\n";
  for (const auto& [len, groups] : r.by_length_class) {
    for (const auto& l : r.labels.labels()) {
      out += std::to_string(len) + "," + l + "," + prf_cells(class_row(groups, l)) + "\n";
    }
  }
  return out;
}

std::string confusion_csv(const EvalReport& r) {
  std::string out = "gold\\predicted";
  for (const auto& c : r.confusion.classes) out += "," + c;
  out += "\n";
  for (std::size_t g = 0; g < r.confusion.classes.size(); ++g) {
    out += r.confusion.classes[g];
    for (std::size_t v : r.confusion.cells[g]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["labels"] = r.labels.labels();
  j["gold"] = r.gold_count;
  j["predicted"] = r.predicted_count;
  j["average_length"] = r.average_length;
  j["micro"] = prf_json(r.micro);
  j["macro"] = prf_json(r.macro);
  j["class_macro"] = prf_json(r.class_macro);
  j["per_length"] = groups_json(r.by_length, "length");
  j["per_class"] = groups_json(r.by_class, "class");
  j["per_level"] = groups_json(r.by_level, "level");
  auto lc = nlohmann::ordered_json::array();
  for (const auto& [len, groups] : r.by_length_class) {
    for (auto entry : groups_json(groups, "class")) {
      nlohmann::ordered_json row;
      row["length"] = len;
      row.update(entry);
      lc.push_back(row);
    }
  }
  j["per_length_class"] = lc;
  j["confusion"] = {{"classes", r.confusion.classes}, {"cells", r.confusion.cells}};
  return j.dump(2) + "\n";
}

void write_report(const EvalReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_file_atomic((d / "overall.csv").string(), overall_csv(r));
  write_file_atomic((d / "per_class.csv").string(), per_class_csv(r));
  write_file_atomic((d / "per_length.csv").string(), per_length_csv(r));
  write_file_atomic((d / "per_level.csv").string(), per_level_csv(r));
  write_file_atomic((d / "per_length_class.csv").string(), per_length_class_csv(r));
  write_file_atomic((d / "confusion.csv").string(), confusion_csv(r));
  write_file_atomic((d / "report.json").string(), report_json(r));
}

}  // namespace nestner
