#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nestner/autodiff.hpp"
#include "nestner/layers.hpp"
#include "nestner/spancodec.hpp"

namespace nestner {

/// A tokenized sentence, optionally with POS tags and precomputed per-token
/// context vectors (n×d2).
struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::optional<Tensor> context;

  std::size_t size() const noexcept { return tokens.size(); }
};

/// A sentence with its gold spans.
struct AnnotatedSentence {
  Sentence sentence;
  SpanSet spans;
};

/// Architecture variants:
///   Base       LSTM                  → Dropout, Dense
///   InputDrop  Dropout, LSTM         → Dropout, Dense
///   Norm       LSTM, LayerNorm       → Dropout, Dense
///   NormFlair  LSTM, LayerNorm       → Dropout, Dense, ReLU, Dense (needs context vectors)
///   Multi      one LSTM per length   → Dropout, Dense
enum class Variant { Base, InputDrop, Norm, NormFlair, Multi };

std::string_view variant_name(Variant v);
/// Accepts Base, InputDrop, Norm, NormFlair, Multi (case-insensitive, '-' ignored).
std::optional<Variant> parse_variant(std::string_view s);

struct ModelSpec {
  Variant variant = Variant::Base;
  std::size_t max_length = 7;
  LabelSet labels{std::vector<std::string>{"Concept"}};
  std::size_t embedding_dim = 300;
  bool embedding_trainable = true;
  std::size_t context_dim = 0;
  std::size_t lstm_layers = 1;
  std::size_t lstm_hidden = 500;
  double lstm_dropout = 0.4;
  bool bidirectional = false;
  double tagging_dropout = 0.4;
  double input_dropout = 0.2;
  /// Width of the inner dense layer of NormFlair heads; 0 means hidden/2.
  std::size_t flair_inner_dim = 0;

  /// Throws ConfigError when a field is out of range or a variant's
  /// requirements are not met.
  void validate() const;
  std::size_t resolved_flair_inner_dim() const;
  std::size_t sequence_layer_count() const { return variant == Variant::Multi ? max_length : 1; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct TaggingHead {
  DenseParams first;
  std::optional<DenseParams> second;  // NormFlair only
};

/// Shared sequence layer (one LSTM per length for Multi) feeding one tagging
/// head per word-length. Head m-1 handles spans of m words.
class PartlyLayeredNet {
 public:
  /// The embedding table's width must equal spec.embedding_dim; its
  /// trainable flag is overwritten by spec.embedding_trainable.
  PartlyLayeredNet(ModelSpec spec, EmbeddingTable embedding, Rng& rng);

  const ModelSpec& spec() const noexcept { return spec_; }
  const EmbeddingTable& embedding() const noexcept { return embedding_; }
  EmbeddingTable& embedding() noexcept { return embedding_; }
  const std::vector<LstmParams>& sequence_layers() const noexcept { return sequence_; }
  std::vector<LstmParams>& sequence_layers() noexcept { return sequence_; }
  const std::vector<LayerNormParams>& norms() const noexcept { return norms_; }
  const std::vector<TaggingHead>& heads() const noexcept { return heads_; }
  std::vector<TaggingHead>& heads() noexcept { return heads_; }

  /// Index of the sequence layer feeding head `task` (0-based).
  std::size_t sequence_index(std::size_t task) const { return sequence_.size() == 1 ? 0 : task; }

  /// Every parameter in a fixed order; trainable embeddings come first.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  /// Parameters of sequence layer k, including its normalization.
  std::vector<Parameter*> sequence_parameters(std::size_t k);
  std::vector<Parameter*> head_parameters(std::size_t task);
  /// What a task updates: trainable embeddings, its sequence layer and its head.
  std::vector<Parameter*> task_parameters(std::size_t task);

 private:
  ModelSpec spec_;
  EmbeddingTable embedding_;
  std::vector<LstmParams> sequence_;
  std::vector<LayerNormParams> norms_;
  std::vector<TaggingHead> heads_;
};

/// Sequence-layer output for head `task`.
Var encode(Tape& t, const PartlyLayeredNet& net, const Sentence& s, std::size_t task, Mode mode, Rng* rng);

/// Logits (n×(1+|labels|)) of one head. `rng` is required in train mode.
Var forward_task(Tape& t, const PartlyLayeredNet& net, const Sentence& s, std::size_t task, Mode mode, Rng* rng);

/// Logits of every head, index m-1 for word-length m. The shared sequence
/// layer runs once for non-Multi variants.
std::vector<Var> forward(Tape& t, const PartlyLayeredNet& net, const Sentence& s, Mode mode, Rng* rng = nullptr);

/// Eval-mode logits as plain tensors.
std::vector<Tensor> infer(const PartlyLayeredNet& net, const Sentence& s);

/// Per-token argmax for each head. Ties go to O, then to the earlier label.
/// Positions where a span of the head's length would run past the sentence
/// end are O.
std::vector<TagSequence> predict_tags(std::span<const Tensor> logits);

/// Decoded spans for a sentence.
SpanSet predict_spans(const PartlyLayeredNet& net, const Sentence& s);

inline constexpr int kCheckpointVersion = 1;

/// Writes spec, vocabulary and parameters. The file starts with a text
/// header (magic, version, key=value spec) followed by little-endian
/// length-prefixed binary records. Written atomically via rename.
void save_weights(const PartlyLayeredNet& net, const std::string& path);

/// Throws VersionMismatch, CorruptFile, or (when `expected` is given and
/// differs) SpecMismatch.
PartlyLayeredNet load_weights(const std::string& path, const ModelSpec* expected = nullptr);

/// Key=value lines of the checkpoint header describing the spec.
std::string spec_header(const ModelSpec& spec);

}  // namespace nestner
