#include "nestner/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nestner/config.hpp"
#include "nestner/errors.hpp"
#include "nestner/fileio.hpp"

namespace nestner {

namespace {

namespace fs = std::filesystem;

void report_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

VectorFile load_vectors(const std::string& path, std::ostream& err) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open context vectors " + path);
  VectorFile file = read_vector_text(in, path);
  report_warnings(file.warnings, err);
  return file;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory " + dir + ": " + ec.message());
}

Corpus load_corpus(const std::string& path, CorpusFormat format, const LabelMap* map, std::ostream& err) {
  Corpus c = read_corpus(path, format, map);
  report_warnings(c.warnings, err);
  c.warnings.clear();
  return c;
}

// train -------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out,
              std::ostream& err) {
  RunConfig cfg = load_run_config(config_path);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (cfg.train_corpus.empty()) throw ConfigError("config sets no 'train' corpus");
  if (!cfg.embedding_trainable_given) cfg.model.embedding_trainable = cfg.embeddings.empty();
  cfg.model.validate();
  ClassWeightTable weights = resolve_class_weights(cfg);

  std::optional<LabelMap> map;
  if (!cfg.label_map.empty()) map = load_label_map(cfg.label_map);
  const LabelMap* mapp = map ? &*map : nullptr;

  Corpus train_set = load_corpus(cfg.train_corpus, cfg.corpus_format, mapp, err);
  drop_overlong_spans(train_set, cfg.model.max_length, cfg.train_corpus);
  report_warnings(train_set.warnings, err);
  check_labels(train_set, cfg.model.labels);
  Corpus dev_set;
  if (!cfg.dev_corpus.empty()) {
    dev_set = load_corpus(cfg.dev_corpus, cfg.corpus_format, mapp, err);
    check_labels(dev_set, cfg.model.labels);
  }
  Corpus test_set;
  if (!cfg.test_corpus.empty()) {
    test_set = load_corpus(cfg.test_corpus, cfg.corpus_format, mapp, err);
    check_labels(test_set, cfg.model.labels);
  }
  if (cfg.model.context_dim > 0) {
    if (cfg.context_vectors.empty()) throw ConfigError("context_dim > 0 needs a 'context_vectors' file");
    const VectorFile vectors = load_vectors(cfg.context_vectors, err);
    attach_context(train_set.items, vectors, cfg.model.context_dim);
    attach_context(dev_set.items, vectors, cfg.model.context_dim);
    attach_context(test_set.items, vectors, cfg.model.context_dim);
  }

  Rng init(cfg.train.seed);
  EmbeddingTable table;
  if (!cfg.embeddings.empty()) {
    std::vector<std::string> warnings;
    table = load_embedding_text(cfg.embeddings, &warnings);
    report_warnings(warnings, err);
    if (table.dim() != cfg.model.embedding_dim) {
      throw ConfigError("embedding_dim=" + std::to_string(cfg.model.embedding_dim) + " but " + cfg.embeddings +
                        " has width " + std::to_string(table.dim()));
    }
  } else {
    Vocabulary vocab;
    for (const auto& item : train_set.items) {
      for (const auto& tok : item.sentence.tokens) vocab.add(tok);
    }
    table = random_embeddings(std::move(vocab), cfg.model.embedding_dim, init);
  }
  PartlyLayeredNet net(cfg.model, std::move(table), init);

  ensure_dir(cfg.output_dir);
  TrainConfig tc = cfg.train;
  tc.class_weights = weights;
  tc.checkpoint_path = (fs::path(cfg.output_dir) / "model.ckpt").string();
  tc.log_path = (fs::path(cfg.output_dir) / "epochs.csv").string();
  // Decorrelates the training stream from initialization under one seed.
  tc.seed = init.next();

  const TrainResult result = train(net, train_set.items, dev_set.items, tc, [&](const EpochRecord& r) {
    double loss = 0.0;
    for (double l : r.task_loss) loss += l;
    out << "epoch " << r.epoch << " loss " << format_fixed(loss, 6);
    if (r.validated) out << " val_ma_f1 " << format_fixed(r.val_macro.f1, 6) << " val_mi_f1 " << format_fixed(r.val_micro.f1, 6);
    if (r.improved) out << " *";
    out << '\n';
    return true;
  });
  out << "best epoch " << result.best_epoch << " macro_f1 " << format_fixed(result.best_macro_f1, 6) << '\n';

  if (!test_set.items.empty()) {
    const auto dir = (fs::path(cfg.output_dir) / "test").string();
    ensure_dir(dir);
    const EvalReport report = evaluate_net(net, test_set.items);
    write_report(report, dir);
    out << overall_csv(report);
  }
  return kExitOk;
}

// eval / predict ------------------------------------------------------------

struct ModelInputs {
  std::string checkpoint;
  std::string context;
};

void attach_if_needed(const PartlyLayeredNet& net, std::span<AnnotatedSentence> items, const std::string& context,
                      std::ostream& err) {
  const std::size_t dim = net.spec().context_dim;
  if (dim == 0) return;
  if (context.empty()) throw ConfigError("this model reads context vectors; pass --context");
  attach_context(items, load_vectors(context, err), dim);
}

int cmd_eval(const ModelInputs& in, const std::string& corpus_path, CorpusFormat format, const std::string& label_map,
             const std::string& out_dir, std::ostream& out, std::ostream& err) {
  PartlyLayeredNet net = load_weights(in.checkpoint);
  std::optional<LabelMap> map;
  if (!label_map.empty()) map = load_label_map(label_map);
  Corpus corpus = load_corpus(corpus_path, format, map ? &*map : nullptr, err);
  check_labels(corpus, net.spec().labels);
  attach_if_needed(net, corpus.items, in.context, err);
  const EvalReport report = evaluate_net(net, corpus.items);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_report(report, out_dir);
  }
  out << overall_csv(report);
  return kExitOk;
}

int cmd_predict(const ModelInputs& in, const std::string& input, const std::string& output, std::ostream& out,
                std::ostream& err) {
  PartlyLayeredNet net = load_weights(in.checkpoint);
  std::vector<Sentence> sentences;
  if (input == "-") {
    sentences = read_raw_sentences(std::cin);
  } else {
    std::ifstream f(input);
    if (!f) throw DataError("cannot open " + input);
    sentences = read_raw_sentences(f);
  }
  std::vector<AnnotatedSentence> items;
  for (auto& s : sentences) items.push_back({std::move(s), {}});
  attach_if_needed(net, items, in.context, err);
  for (auto& item : items) item.spans = predict_spans(net, item.sentence);
  const std::string text = write_standoff(items);
  if (output.empty() || output == "-") {
    out << text;
  } else {
    write_file_atomic(output, text);
  }
  return kExitOk;
}

// analyze / filter-candidates ----------------------------------------------

int cmd_analyze(const std::string& corpus_path, CorpusFormat format, const std::string& label_map, std::ostream& out,
                std::ostream& err) {
  std::optional<LabelMap> map;
  if (!label_map.empty()) map = load_label_map(label_map);
  const Corpus corpus = load_corpus(corpus_path, format, map ? &*map : nullptr, err);
  out << format_stats(corpus_stats(corpus.items));
  return kExitOk;
}

/// Each line is one candidate: whitespace-separated `token/POS` items.
int cmd_filter(const std::string& input, std::ostream& out) {
  std::ifstream f(input);
  if (!f) throw DataError("cannot open " + input);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream words(line);
    std::vector<PosTag> tags;
    std::string word, tokens;
    while (words >> word) {
      auto slash = word.rfind('/');
      if (slash == std::string::npos || slash == 0) throw ParseError(input, lineno, "expected token/POS, got '" + word + "'");
      auto tag = parse_pos(word.substr(slash + 1));
      if (!tag) throw ParseError(input, lineno, "unknown POS '" + word.substr(slash + 1) + "'");
      tags.push_back(*tag);
      tokens += (tokens.empty() ? "" : " ") + word.substr(0, slash);
    }
    if (tags.empty()) continue;
    const FilterResult r = filter_concept_candidate(tags);
    out << (r.accepted ? "accepted" : "rejected") << '\t' << r.reason << '\t' << tokens << '\n';
  }
  return kExitOk;
}

int cmd_selftest(std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_selftest()) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitCheck;
}

CorpusFormat format_option(const std::string& s) {
  auto f = parse_corpus_format(s);
  if (!f) throw ConfigError("--format expects standoff or iob-nested, got '" + s + "'");
  return *f;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nested named-entity tagger with one head per entity word-length", "nestner"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("config", config_path, "Run config (key=value)")->required();
  train->add_option("--set", overrides, "Override a config key, key=value");

  ModelInputs model;
  std::string corpus_path, format = "standoff", label_map, out_dir;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on an annotated corpus");
  eval->add_option("--checkpoint", model.checkpoint)->required();
  eval->add_option("--corpus", corpus_path)->required();
  eval->add_option("--format", format, "standoff or iob-nested");
  eval->add_option("--label-map", label_map);
  eval->add_option("--context", model.context, "Context vectors keyed sentenceid:tokenindex");
  eval->add_option("--out", out_dir, "Directory for the CSV/JSON report");

  std::string input, output;
  auto* predict = app.add_subcommand("predict", "Tag raw sentences, one per line");
  predict->add_option("--checkpoint", model.checkpoint)->required();
  predict->add_option("--input", input, "Raw text, '-' for stdin")->required();
  predict->add_option("--context", model.context);
  predict->add_option("--output", output, "Standoff output, stdout by default");

  auto* analyze = app.add_subcommand("analyze", "Gold span counts by word-length and nested level");
  analyze->add_option("--corpus", corpus_path)->required();
  analyze->add_option("--format", format);
  analyze->add_option("--label-map", label_map);

  auto* filter = app.add_subcommand("filter-candidates", "Apply the POS filter to token/POS candidates");
  filter->add_option("--input", input)->required();

  auto* selftest = app.add_subcommand("selftest", "Codec roundtrips and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, overrides, out, err);
    if (*eval) return cmd_eval(model, corpus_path, format_option(format), label_map, out_dir, out, err);
    if (*predict) return cmd_predict(model, input, output, out, err);
    if (*analyze) return cmd_analyze(corpus_path, format_option(format), label_map, out, err);
    if (*filter) return cmd_filter(input, out);
    if (*selftest) return cmd_selftest(out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitCheck;
  }
  return kExitUsage;
}

}  // namespace nestner
