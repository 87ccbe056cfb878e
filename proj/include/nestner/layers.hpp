#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nestner/autodiff.hpp"
#include "nestner/random.hpp"

namespace nestner {

enum class Mode { Train, Eval };

/// Token → row index map. Index 0 is always the unknown-token row and index 1
/// the padding row.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPad = 1;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kPadToken = "<pad>";

  Vocabulary();

  /// Adds a token if missing and returns its index.
  std::size_t add(std::string_view token);
  /// Index of a token, or kUnk when the token is unknown.
  std::size_t index(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  std::size_t size() const noexcept { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EmbeddingTable {
  Vocabulary vocab;
  Parameter vectors;  // V×d
  bool trainable = true;

  std::size_t dim() const { return vectors.value.cols(); }
};

/// Random table with rows drawn uniformly from ±sqrt(3/d); trainable.
EmbeddingTable random_embeddings(Vocabulary vocab, std::size_t dim, Rng& rng);

/// Entries of a whitespace-separated `key v1 ... vd` vector file.
struct VectorFile {
  std::size_t dim = 0;
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  /// One message per skipped line, prefixed with its line number.
  std::vector<std::string> warnings;
};

/// Parses the common pretrained-vector text format. The dimension is taken
/// from the first well-formed line; malformed lines are skipped and reported.
VectorFile read_vector_text(std::istream& in, const std::string& source);

/// Loads a pretrained table (frozen by default). Tokens missing from the
/// file, including the reserved UNK/PAD rows, get zero vectors.
EmbeddingTable load_embedding_text(const std::string& path, std::vector<std::string>* warnings = nullptr);

std::vector<std::size_t> lookup(const Vocabulary& vocab, std::span<const std::string> tokens);

/// Looks up token rows and optionally appends per-token context vectors
/// (n×d2) along the feature axis. Throws DimMismatch if the context row
/// count differs from the token count.
Var embed(Tape& t, std::span<const std::string> tokens, const EmbeddingTable& table,
          const Tensor* context = nullptr);

struct LstmLayerParams {
  Parameter input_weights;      // in×4h, gate blocks ordered i, f, g, o
  Parameter recurrent_weights;  // h×4h
  Parameter bias;               // 1×4h
};

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  double dropout = 0.0;  // between stacked layers, train mode only
  bool bidirectional = false;
  std::vector<LstmLayerParams> forward;
  std::vector<LstmLayerParams> backward;  // empty unless bidirectional

  std::size_t num_layers() const noexcept { return forward.size(); }
  std::size_t output_dim() const noexcept { return bidirectional ? 2 * hidden_dim : hidden_dim; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

/// Weights uniform in ±1/sqrt(fan_in), zero biases except the forget gate
/// block, which starts at 1.
LstmParams make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_layers, double dropout,
                     bool bidirectional, Rng& rng, const std::string& name = "lstm");

/// Runs the stacked LSTM over the rows of x (n×d) starting from zero state.
/// Returns n×h (n×2h when bidirectional). `rng` is required in train mode
/// when the inter-layer dropout rate is positive.
Var lstm_forward(Tape& t, Var x, const LstmParams& p, Mode mode, Rng* rng = nullptr);

struct DenseParams {
  Parameter weight;  // in×out
  Parameter bias;    // 1×out
};

DenseParams make_dense(std::size_t in, std::size_t out, Rng& rng, const std::string& name = "dense");
Var dense(Tape& t, Var x, const DenseParams& p);

/// Inverted dropout: zeroes entries with probability `rate` and scales the
/// survivors by 1/(1-rate) in train mode; identity in eval mode.
/// Throws InvalidRate unless rate ∈ [0, 1).
Var dropout(Tape& t, Var x, double rate, Mode mode, Rng& rng);

struct LayerNormParams {
  Parameter gain;  // 1×d, starts at 1
  Parameter bias;  // 1×d, starts at 0
};

LayerNormParams make_layer_norm(std::size_t dim, const std::string& name = "norm");

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row to zero mean and unit variance, (x-μ)/sqrt(σ²+eps),
/// then applies gain and bias.
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = kLayerNormEps);
Var layer_norm(Tape& t, Var x, const LayerNormParams& p);

}  // namespace nestner
