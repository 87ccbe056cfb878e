#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nestner/cli.hpp"
#include "nestner/config.hpp"
#include "nestner/errors.hpp"
#include "nestner/fileio.hpp"
#include "support/generators.hpp"

using namespace nestner;
namespace fs = std::filesystem;

namespace {

Corpus parse_standoff(const std::string& text, const LabelMap* map = nullptr) {
  std::istringstream in(text);
  return read_standoff(in, "mem", map);
}

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nestner");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("nestner-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("standoff block with one span") {
  auto c = parse_standoff("#id a\nx\ty\tz\nS\t0\t3\tConcept\n");
  REQUIRE(c.items.size() == 1);
  CHECK(c.items[0].sentence.id == "a");
  CHECK(c.items[0].sentence.tokens == std::vector<std::string>{"x", "y", "z"});
  CHECK(c.items[0].spans == SpanSet{{0, 3, "Concept"}});
}

TEST_CASE("nested example fixture reads as six spans") {
  Corpus c = read_corpus("fixtures/corpus/nested_example.standoff", CorpusFormat::Standoff);
  REQUIRE(c.items.size() == 1);
  const SpanSet expected = {{0, 1, "Concept"}, {1, 1, "Concept"}, {2, 1, "Concept"},
                            {0, 2, "Concept"}, {1, 2, "Concept"}, {0, 3, "Concept"}};
  CHECK(c.items[0].spans == expected);
}

TEST_CASE("standoff errors name the line") {
  try {
    parse_standoff("#id a\nx\ty\nS\t0\t3\n");
    FAIL("no error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("mem:3:") == 0);
  }
  CHECK_THROWS_AS(parse_standoff("#id a\nx\ty\nS\t1\t2\tC\n"), SpanOutOfRange);
  CHECK_THROWS_AS(parse_standoff("#id a\nx\ty\nS\t0\t0\tC\n"), SpanOutOfRange);
  CHECK_THROWS_AS(parse_standoff("#id a\nx\ty\nS\t-1\t1\tC\n"), ParseError);
  CHECK_THROWS_AS(parse_standoff("x\ty\n"), ParseError);
  CHECK_THROWS_AS(parse_standoff("#id a\n\n"), ParseError);
  CHECK_THROWS_AS(parse_standoff("#id a\nx\t\ty\n"), ParseError);
  CHECK_THROWS_AS(parse_standoff("#id a\nx\ty\n#pos\tNOUN\n"), ParseError);
  try {
    parse_standoff("#id a\nx\n\n#id a\ny\n");
    FAIL("no error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("standoff tolerates CRLF and keeps POS tags") {
  auto c = parse_standoff("#id a\r\nx y\tz\r\n#pos\tNOUN\tVERB\r\nS\t0\t1\tC\r\n");
  REQUIRE(c.items.size() == 1);
  CHECK(c.items[0].sentence.tokens == std::vector<std::string>{"x y", "z"});
  CHECK(c.items[0].sentence.pos == std::vector<std::string>{"NOUN", "VERB"});
  CHECK(c.items[0].spans.size() == 1);
}

TEST_CASE("duplicate span lines collapse with a warning") {
  auto c = parse_standoff("#id a\nx\nS\t0\t1\tC\nS\t0\t1\tC\n");
  CHECK(c.items[0].spans.size() == 1);
  CHECK(c.warnings.size() == 1);
}

TEST_CASE("read, write, read is idempotent") {
  Rng rng(21);
  const std::vector<std::string> labels = {"Protein", "DNA", "RNA"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AnnotatedSentence> items;
    const std::size_t count = 1 + rng.below(6);
    for (std::size_t k = 0; k < count; ++k) {
      AnnotatedSentence item;
      item.sentence.id = "s" + std::to_string(trial) + "_" + std::to_string(k);
      const std::size_t n = 1 + rng.below(12);
      for (std::size_t i = 0; i < n; ++i) item.sentence.tokens.push_back("w" + std::to_string(rng.below(30)));
      if (rng.bernoulli(0.5)) item.sentence.pos.assign(n, "NOUN");
      item.spans = testing::random_span_set(rng, n, 4, labels, 8, true);
      items.push_back(std::move(item));
    }
    const std::string first = write_standoff(items);
    const Corpus back = parse_standoff(first);
    REQUIRE(back.items.size() == items.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      CHECK(back.items[k].sentence.tokens == items[k].sentence.tokens);
      CHECK(back.items[k].sentence.pos == items[k].sentence.pos);
      CHECK(back.items[k].spans == items[k].spans);
    }
    CHECK(write_standoff(back.items) == first);
  }
}

TEST_CASE("iob-nested columns become spans through the label map") {
  const LabelMap map = load_label_map("../data/genia_labels.map");
  Corpus c = read_corpus("fixtures/corpus/nested.iob", CorpusFormat::IobNested, &map);
  REQUIRE(c.items.size() == 2);
  CHECK(c.items[0].sentence.id == "g1");
  CHECK(c.items[0].spans == SpanSet{{0, 1, "Protein"}, {0, 2, "DNA"}});
  CHECK(c.items[1].sentence.id == "s2");
  CHECK(c.items[1].sentence.size() == 5);
  // tissue maps to "-" and is dropped.
  CHECK(c.items[1].spans == SpanSet{{0, 3, "CellType"}});

  std::istringstream orphan("a\tI-X\nb\tI-X\nc\tB-X\n");
  Corpus o = read_iob_nested(orphan, "mem");
  CHECK(o.items[0].spans == SpanSet{{0, 2, "X"}, {2, 1, "X"}});
  CHECK(o.warnings.size() == 1);

  std::istringstream bad("a\tB-X\nb\tQ\n");
  CHECK_THROWS_AS(read_iob_nested(bad, "mem"), ParseError);
}

TEST_CASE("label map rejects unmapped labels") {
  std::istringstream in("# comment\nfine_a A\nfine_b\t-\n");
  const LabelMap map = read_label_map(in, "mem");
  CHECK(map.apply("fine_a") == "A");
  CHECK(!map.apply("fine_b"));
  CHECK_THROWS_AS(map.apply("other"), UnknownLabel);
  CHECK_THROWS_AS(parse_standoff("#id a\nx\nS\t0\t1\tother\n", &map), UnknownLabel);
  std::istringstream twice("a A\na B\n");
  CHECK_THROWS_AS(read_label_map(twice, "mem"), ParseError);
}

TEST_CASE("genia label map covers the 36 categories") {
  const LabelMap map = load_label_map("../data/genia_labels.map");
  CHECK(map.targets.size() == 36);
  std::set<std::string> kept;
  for (const auto& [fine, coarse] : map.targets) {
    if (coarse != "-") kept.insert(coarse);
  }
  const auto ner = ner_labels().labels();
  CHECK(kept == std::set<std::string>(ner.begin(), ner.end()));
}

TEST_CASE("corpus helpers") {
  Corpus c = parse_standoff("#id a\nx\ty\tz\nS\t0\t3\tC\nS\t0\t1\tD\n");
  drop_overlong_spans(c, 2, "mem");
  CHECK(c.items[0].spans == SpanSet{{0, 1, "D"}});
  CHECK(c.warnings.size() == 1);
  CHECK_THROWS_AS(check_labels(c, LabelSet({"C"})), UnknownLabel);
  CHECK_NOTHROW(check_labels(c, LabelSet({"C", "D"})));

  std::istringstream raw("first sentence here\n\n  second\tone \n");
  auto sentences = read_raw_sentences(raw);
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0].tokens.size() == 3);
  CHECK(sentences[1].id == "3");
  CHECK(sentences[1].tokens == std::vector<std::string>{"second", "one"});
}

TEST_CASE("context vectors attach by sentence id and token index") {
  Corpus c = read_corpus("fixtures/corpus/nested_example.standoff", CorpusFormat::Standoff);
  std::istringstream in(read_file("fixtures/corpus/nested_example.ctx"));
  const VectorFile vectors = read_vector_text(in, "ctx");
  attach_context(c.items, vectors, 2);
  REQUIRE(c.items[0].sentence.context);
  CHECK(c.items[0].sentence.context->at(2, 0) == 0.5);
  CHECK(c.items[0].sentence.context->at(1, 1) == 1.0);
  CHECK_THROWS_AS(attach_context(c.items, vectors, 3), DimMismatch);
  c.items[0].sentence.tokens.push_back("extra");
  CHECK_THROWS_AS(attach_context(c.items, vectors, 2), DataError);
}

TEST_CASE("run config") {
  RunConfig cfg = load_run_config("fixtures/corpus/toy.conf");
  // The preset sits on the last line but applies first.
  CHECK(cfg.model.max_length == 3);
  CHECK(cfg.model.lstm_hidden == 8);
  CHECK(cfg.model.labels == LabelSet({"Concept"}));
  CHECK(cfg.class_weights == "concept");
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.seed == 3);
  CHECK(fs::path(cfg.train_corpus) == fs::path("fixtures/corpus/toy_train.standoff"));

  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in, "mem");
  };
  CHECK_THROWS_WITH_AS(parse("epochs = 3\nlearning_rat = 0.1\n"), doctest::Contains("mem:2:"), ConfigError);
  CHECK_THROWS_AS(parse("epochs = 3\nepochs = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse("epochs = three\n"), ConfigError);
  CHECK_THROWS_AS(parse("epochs\n"), ConfigError);
  CHECK_THROWS_AS(parse("variant = Deep\n"), ConfigError);
  CHECK_THROWS_AS(parse("preset = huge\n"), ConfigError);
  CHECK_THROWS_AS(parse("batch_unit = pages\n"), ConfigError);

  RunConfig ner = parse("preset = ner-flair\ncontext_dim = 16\n");
  CHECK(ner.model.variant == Variant::NormFlair);
  CHECK(ner.model.lstm_layers == 2);
  CHECK(ner.train.epochs == 140);
  CHECK(ner.train.batch_size == 10000);
  CHECK(resolve_class_weights(ner) == ClassWeightTable::ner_flair_defaults());
  RunConfig mismatch = parse("labels = A,B\nclass_weights = ner\n");
  CHECK_THROWS_AS(resolve_class_weights(mismatch), ConfigError);

  RunConfig plain = parse("labels = A, B\nbatch_unit = sentences\ntask_order = shuffled\nclip_norm = 0\n");
  CHECK(plain.model.labels == LabelSet({"A", "B"}));
  CHECK(plain.train.batch_unit == BatchUnit::Sentences);
  CHECK(plain.train.task_order == TaskOrder::Shuffled);
  CHECK(plain.train.clip_norm == 0.0);
  CHECK(run_config_keys().front() == "preset");
}

TEST_CASE("cli analyze on the nested example") {
  auto r = cli({"analyze", "--corpus", "fixtures/corpus/nested_example.standoff"});
  CHECK(r.code == 0);
  for (const char* line : {"length1=3\n", "length2=2\n", "length3=1\n", "level1=3\n", "level2=2\n", "level3=1\n"}) {
    CHECK(r.out.find(line) != std::string::npos);
  }
}

TEST_CASE("cli exit codes") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"nonsense"}).code == kExitUsage);
  CHECK(cli({"analyze"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"analyze", "--corpus", "fixtures/corpus/missing.standoff"}).code == kExitData);
  CHECK(cli({"analyze", "--corpus", "fixtures/corpus/toy.conf"}).code == kExitData);
  CHECK(cli({"analyze", "--corpus", "fixtures/corpus/toy_train.standoff", "--format", "xml"}).code == kExitConfig);
  CHECK(cli({"train", "fixtures/corpus/missing.conf"}).code == kExitConfig);
  CHECK(cli({"train", "fixtures/corpus/toy.conf", "--set", "dropout=0.1"}).code == kExitConfig);
  CHECK(cli({"selftest"}).code == kExitOk);
}

TEST_CASE("cli filter-candidates") {
  auto r = cli({"filter-candidates", "--input", "fixtures/corpus/candidates.txt"});
  CHECK(r.code == 0);
  CHECK(r.out ==
        "rejected\tstarts-with-article\tthe cell\n"
        "accepted\taccepted\tcell line\n"
        "rejected\tno-noun\tred\n"
        "rejected\tstarts-with-verb\tgrows cell\n");
}

TEST_CASE("cli train, eval and predict are deterministic") {
  const fs::path a = scratch("a"), b = scratch("b");
  const auto train_a = cli({"train", "fixtures/corpus/toy.conf", "--set", "output_dir=" + a.string()});
  const auto train_b = cli({"train", "fixtures/corpus/toy.conf", "--set", "output_dir=" + b.string()});
  REQUIRE(train_a.code == 0);
  REQUIRE(train_b.code == 0);
  CHECK(train_a.out == train_b.out);
  CHECK(train_a.out.find("epoch 3 loss") != std::string::npos);
  CHECK(read_file((a / "epochs.csv").string()) == read_file((b / "epochs.csv").string()));
  CHECK(read_file((a / "model.ckpt").string()) == read_file((b / "model.ckpt").string()));

  const auto ckpt = (a / "model.ckpt").string();
  const auto eval_a = cli({"eval", "--checkpoint", ckpt, "--corpus", "fixtures/corpus/toy_train.standoff", "--out",
                           (a / "report").string()});
  const auto eval_b = cli({"eval", "--checkpoint", ckpt, "--corpus", "fixtures/corpus/toy_train.standoff", "--out",
                           (b / "report").string()});
  REQUIRE(eval_a.code == 0);
  CHECK(eval_a.out.starts_with("ma_p,ma_r,ma_f1,"));
  for (const char* f : {"overall.csv", "per_class.csv", "per_length.csv", "per_level.csv", "per_length_class.csv",
                        "confusion.csv", "report.json"}) {
    CHECK(read_file((a / "report" / f).string()) == read_file((b / "report" / f).string()));
  }

  write_file_atomic((a / "raw.txt").string(), "the red cell line grows\n\na cell divides\n");
  const auto pred = cli({"predict", "--checkpoint", ckpt, "--input", (a / "raw.txt").string()});
  REQUIRE(pred.code == 0);
  const Corpus back = parse_standoff(pred.out);
  REQUIRE(back.items.size() == 2);
  CHECK(back.items[0].sentence.id == "1");
  CHECK(back.items[1].sentence.id == "3");
  CHECK(back.items[1].sentence.tokens == std::vector<std::string>{"a", "cell", "divides"});
  for (const auto& item : back.items) {
    for (const Span& s : item.spans) CHECK(s.length <= 3);
  }

  // A checkpoint of another shape is rejected as data.
  CHECK(cli({"eval", "--checkpoint", (a / "epochs.csv").string(), "--corpus",
             "fixtures/corpus/toy_train.standoff"})
            .code == kExitData);
}
