#include "nestner/config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>

#include "nestner/errors.hpp"

namespace nestner {

namespace {

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string> to_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto comma = v.find(',', start);
    auto item = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string resolve(std::string_view v, const std::string& base_dir) {
  std::filesystem::path p{std::string(v)};
  if (v.empty() || p.is_absolute() || base_dir.empty()) return std::string(v);
  return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value, const std::string& base)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto size_field = [](auto member) {
      return [member](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
        member(c) = to_size(k, v);
      };
    };
    auto double_field = [](auto member) {
      return [member](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
        member(c) = to_double(k, v);
      };
    };
    auto path_field = [](auto member) {
      return [member](RunConfig& c, std::string_view, std::string_view v, const std::string& base) {
        member(c) = resolve(v, base);
      };
    };

    // Model.
    t.emplace_back("variant", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      auto variant = parse_variant(v);
      if (!variant) throw ConfigError(std::string(k) + ": unknown variant '" + std::string(v) + "'");
      c.model.variant = *variant;
    });
    t.emplace_back("max_length", size_field([](RunConfig& c) -> std::size_t& { return c.model.max_length; }));
    t.emplace_back("labels", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      try {
        c.model.labels = LabelSet(to_list(v));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(k) + ": " + e.what());
      }
    });
    t.emplace_back("embedding_dim", size_field([](RunConfig& c) -> std::size_t& { return c.model.embedding_dim; }));
    t.emplace_back("embedding_trainable",
                   [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
                     c.model.embedding_trainable = to_bool(k, v);
                     c.embedding_trainable_given = true;
                   });
    t.emplace_back("context_dim", size_field([](RunConfig& c) -> std::size_t& { return c.model.context_dim; }));
    t.emplace_back("lstm_layers", size_field([](RunConfig& c) -> std::size_t& { return c.model.lstm_layers; }));
    t.emplace_back("lstm_hidden", size_field([](RunConfig& c) -> std::size_t& { return c.model.lstm_hidden; }));
    t.emplace_back("lstm_dropout", double_field([](RunConfig& c) -> double& { return c.model.lstm_dropout; }));
    t.emplace_back("bidirectional", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      c.model.bidirectional = to_bool(k, v);
    });
    t.emplace_back("tagging_dropout", double_field([](RunConfig& c) -> double& { return c.model.tagging_dropout; }));
    t.emplace_back("input_dropout", double_field([](RunConfig& c) -> double& { return c.model.input_dropout; }));
    t.emplace_back("flair_inner_dim",
                   size_field([](RunConfig& c) -> std::size_t& { return c.model.flair_inner_dim; }));

    // Training.
    t.emplace_back("epochs", size_field([](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
    t.emplace_back("batch_size", size_field([](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    t.emplace_back("batch_unit", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      if (v == "tokens") {
        c.train.batch_unit = BatchUnit::Tokens;
      } else if (v == "sentences") {
        c.train.batch_unit = BatchUnit::Sentences;
      } else {
        throw ConfigError(std::string(k) + ": expected tokens or sentences");
      }
    });
    t.emplace_back("task_order", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      if (v == "ascending") {
        c.train.task_order = TaskOrder::Ascending;
      } else if (v == "shuffled") {
        c.train.task_order = TaskOrder::Shuffled;
      } else {
        throw ConfigError(std::string(k) + ": expected ascending or shuffled");
      }
    });
    t.emplace_back("learning_rate", double_field([](RunConfig& c) -> double& { return c.train.optimizer.lr; }));
    t.emplace_back("beta1", double_field([](RunConfig& c) -> double& { return c.train.optimizer.beta1; }));
    t.emplace_back("beta2", double_field([](RunConfig& c) -> double& { return c.train.optimizer.beta2; }));
    t.emplace_back("adam_eps", double_field([](RunConfig& c) -> double& { return c.train.optimizer.eps; }));
    t.emplace_back("weight_decay",
                   double_field([](RunConfig& c) -> double& { return c.train.optimizer.weight_decay; }));
    t.emplace_back("clip_norm", double_field([](RunConfig& c) -> double& { return c.train.clip_norm; }));
    t.emplace_back("seed", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      c.train.seed = to_size(k, v);
    });
    t.emplace_back("validate_every", size_field([](RunConfig& c) -> std::size_t& { return c.train.validate_every; }));
    t.emplace_back("class_weights", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      static const std::set<std::string_view> known{"uniform", "concept", "ner", "ner-flair"};
      if (!known.contains(v)) {
        throw ConfigError(std::string(k) + ": expected uniform, concept, ner or ner-flair");
      }
      c.class_weights = std::string(v);
    });

    // Data and outputs.
    t.emplace_back("train", path_field([](RunConfig& c) -> std::string& { return c.train_corpus; }));
    t.emplace_back("dev", path_field([](RunConfig& c) -> std::string& { return c.dev_corpus; }));
    t.emplace_back("test", path_field([](RunConfig& c) -> std::string& { return c.test_corpus; }));
    t.emplace_back("format", [](RunConfig& c, std::string_view k, std::string_view v, const std::string&) {
      auto f = parse_corpus_format(v);
      if (!f) throw ConfigError(std::string(k) + ": expected standoff or iob-nested");
      c.corpus_format = *f;
    });
    t.emplace_back("label_map", path_field([](RunConfig& c) -> std::string& { return c.label_map; }));
    t.emplace_back("embeddings", path_field([](RunConfig& c) -> std::string& { return c.embeddings; }));
    t.emplace_back("context_vectors", path_field([](RunConfig& c) -> std::string& { return c.context_vectors; }));
    t.emplace_back("output_dir", path_field([](RunConfig& c) -> std::string& { return c.output_dir; }));
    return t;
  }();
  return table;
}

}  // namespace

void apply_preset(RunConfig& c, std::string_view preset) {
  if (preset == "cr-lstm") {
    c.model.max_length = 7;
    c.model.labels = LabelSet({"Concept"});
    c.model.embedding_dim = 300;
    c.model.lstm_layers = 1;
    c.model.lstm_hidden = 500;
    c.train.epochs = 30;
    c.class_weights = "concept";
  } else if (preset == "ner-lstm" || preset == "ner-flair") {
    c.model.max_length = 6;
    c.model.labels = ner_labels();
    c.model.embedding_dim = 300;
    c.model.lstm_layers = 2;
    c.model.lstm_hidden = 500;
    c.train.epochs = 140;
    c.class_weights = "ner";
    if (preset == "ner-flair") {
      c.model.variant = Variant::NormFlair;
      c.model.embedding_dim = 200;
      c.train.batch_size = 10000;
      c.class_weights = "ner-flair";
    }
  } else {
    throw ConfigError("preset: expected cr-lstm, ner-lstm or ner-flair, got '" + std::string(preset) + "'");
  }
  c.model.lstm_dropout = 0.4;
  c.model.tagging_dropout = 0.4;
  c.model.input_dropout = 0.2;
  c.train.optimizer.lr = 0.001;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value, const std::string& base_dir) {
  for (const auto& [name, setter] : setters()) {
    if (name == key) {
      setter(config, key, value, base_dir);
      return;
    }
  }
  if (key == "preset") {
    apply_preset(config, value);
    return;
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{"preset"};
    for (const auto& [name, setter] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig parse_run_config(std::istream& in, const std::string& source, const std::string& base_dir) {
  struct Entry {
    std::size_t line;
    std::string key;
    std::string value;
  };
  std::vector<Entry> entries;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    auto eq = body.find('=');
    auto where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    std::string key(trim(body.substr(0, eq)));
    std::string value(trim(body.substr(eq + 1)));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError(where + "key '" + key + "' already set at line " + std::to_string(it->second));
    }
    entries.push_back({lineno, std::move(key), std::move(value)});
  }

  RunConfig config;
  auto apply = [&](const Entry& e) {
    try {
      set_config_value(config, e.key, e.value, base_dir);
    } catch (const ConfigError& err) {
      throw ConfigError(source + ":" + std::to_string(e.line) + ": " + err.what());
    }
  };
  for (const auto& e : entries) {
    if (e.key == "preset") apply(e);
  }
  for (const auto& e : entries) {
    if (e.key != "preset") apply(e);
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  auto base = std::filesystem::path(path).parent_path().string();
  return parse_run_config(in, path, base);
}

ClassWeightTable resolve_class_weights(const RunConfig& config) {
  const auto& name = config.class_weights;
  if (name == "uniform") return ClassWeightTable::uniform(config.model.labels, config.model.max_length);
  ClassWeightTable table = name == "concept" ? ClassWeightTable::concept_defaults()
                           : name == "ner"   ? ClassWeightTable::ner_defaults()
                                             : ClassWeightTable::ner_flair_defaults();
  if (table.labels() != config.model.labels || table.max_length() < config.model.max_length) {
    throw ConfigError("class_weights=" + name + " does not cover labels and max_length of the model");
  }
  return table;
}

}  // namespace nestner
