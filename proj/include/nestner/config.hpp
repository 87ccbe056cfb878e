#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "nestner/corpus.hpp"
#include "nestner/training.hpp"

namespace nestner {

/// Everything a training run needs. Paths are resolved against the
/// directory of the config file they came from.
struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  /// uniform, concept, ner or ner-flair.
  std::string class_weights = "uniform";
  /// Set once `embedding_trainable` appears; otherwise pretrained vectors
  /// stay frozen and random ones train.
  bool embedding_trainable_given = false;

  std::string train_corpus;
  std::string dev_corpus;
  std::string test_corpus;
  CorpusFormat corpus_format = CorpusFormat::Standoff;
  std::string label_map;
  /// Pretrained word vectors; random trainable embeddings when empty.
  std::string embeddings;
  /// Per-token context vectors keyed by `sentenceid:tokenindex`.
  std::string context_vectors;
  /// Receives model.ckpt and epochs.csv.
  std::string output_dir = ".";
};

/// Applies cr-lstm, ner-lstm or ner-flair. Throws ConfigError otherwise.
void apply_preset(RunConfig& config, std::string_view preset);

/// key=value lines with `#` comments. A `preset` key is applied before every
/// other key regardless of position. Unknown keys, repeated keys and bad
/// values throw ConfigError naming the line.
RunConfig parse_run_config(std::istream& in, const std::string& source, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

/// Applies one `key=value` override, e.g. from the command line.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value,
                      const std::string& base_dir = "");

/// Keys accepted by parse_run_config, in documentation order.
const std::vector<std::string>& run_config_keys();

/// Resolves the named class-weight table for the config's labels and lengths.
ClassWeightTable resolve_class_weights(const RunConfig& config);

}  // namespace nestner
