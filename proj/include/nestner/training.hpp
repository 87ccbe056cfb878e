#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nestner/autodiff.hpp"
#include "nestner/evaluation.hpp"
#include "nestner/model.hpp"

namespace nestner {

/// Loss weight per word-length and class; class 0 is the non-entity (O)
/// class, class k ≥ 1 is labels[k-1].
class ClassWeightTable {
 public:
  ClassWeightTable() = default;
  /// weights[m-1] has one entry per tag. Throws ConfigError on a row of the
  /// wrong width or a non-positive weight.
  ClassWeightTable(LabelSet labels, std::vector<std::vector<double>> weights);

  /// Every weight 1.
  static ClassWeightTable uniform(const LabelSet& labels, std::size_t max_length);
  /// Concept recognition, lengths 1..7: concept 1-2^-(m+1), non-concept
  /// 2^-(m+1); length 7 uses 1-2^-8 and 2^-9.
  static ClassWeightTable concept_defaults();
  /// GENIA entities with GloVe inputs, lengths 1..6.
  static ClassWeightTable ner_defaults();
  /// GENIA entities with contextual inputs, lengths 1..6.
  static ClassWeightTable ner_flair_defaults();

  const LabelSet& labels() const noexcept { return labels_; }
  std::size_t max_length() const noexcept { return weights_.size(); }
  /// Weights of length m (1-based), indexed by tag.
  std::span<const double> row(std::size_t m) const { return weights_.at(m - 1); }
  double weight(std::size_t m, std::size_t tag) const { return weights_.at(m - 1).at(tag); }

  friend bool operator==(const ClassWeightTable&, const ClassWeightTable&) = default;

 private:
  LabelSet labels_;
  std::vector<std::vector<double>> weights_;
};

/// The GENIA entity grouping used by the NER weight defaults.
LabelSet ner_labels();

/// Σ_t w[y_t]·(−log softmax(z_t)[y_t]) / Σ_t w[y_t] as a 1×1 tape node.
/// Throws IndexOutOfRange for a target ≥ C and ShapeMismatch when the
/// target count or weight count does not fit the logits.
Var weighted_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets,
                           std::span<const double> weights);

struct AdamWConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with moments kept per parameter name. The decay is decoupled and
/// applied first, θ ← θ(1 − lr·λ), followed by θ ← θ − lr·m̂/(√v̂ + ε).
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Updates params[i] with grads[i]. Throws NonFiniteGradient before
  /// touching anything if a gradient holds NaN or Inf, and ShapeMismatch on
  /// a shape disagreement.
  void step(std::span<Parameter* const> params, std::span<const Tensor> grads);

  const AdamWConfig& config() const noexcept { return config_; }
  /// Steps taken for a parameter; 0 if never updated.
  std::size_t steps(const std::string& name) const;

 private:
  struct Moments {
    Tensor m;
    Tensor v;
    std::size_t step = 0;
  };
  AdamWConfig config_;
  std::map<std::string, Moments> state_;
};

/// Scales grads in place so their joint L2 norm is at most max_norm;
/// returns the norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

enum class BatchUnit { Tokens, Sentences };
enum class TaskOrder { Ascending, Shuffled };

/// Shuffles sentence indices and packs them greedily: a batch is closed when
/// the next sentence would push it past `budget` tokens (or sentences).
/// Throws SentenceExceedsBudget if a single sentence is over budget.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, std::size_t budget,
                                                   BatchUnit unit, Rng& rng);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 20000;
  BatchUnit batch_unit = BatchUnit::Tokens;
  TaskOrder task_order = TaskOrder::Ascending;
  AdamWConfig optimizer;
  /// Global-norm clip per update; 0 disables.
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  /// Uniform weights when unset.
  std::optional<ClassWeightTable> class_weights;
  /// Best checkpoint path; nothing is written when empty.
  std::string checkpoint_path;
  /// Epoch CSV log path; nothing is written when empty.
  std::string log_path;
  /// Validate every k epochs; the last epoch is always validated.
  std::size_t validate_every = 1;
};

/// Gold BO rows of every sentence, computed once per corpus.
std::vector<std::vector<TagSequence>> encode_corpus(std::span<const AnnotatedSentence> corpus, const ModelSpec& spec);

/// Task loss over a batch: all logits of head `task` stacked and scored
/// against the gold rows with that length's class weights.
Var task_loss(Tape& t, const PartlyLayeredNet& net, std::span<const Sentence* const> sentences,
              std::span<const TagSequence* const> gold_rows, std::size_t task, std::span<const double> weights,
              Mode mode, Rng* rng);

/// Owns one optimizer per task and the stochastic state of training.
class Trainer {
 public:
  /// Throws ConfigError if the class weights do not cover the model's
  /// labels and lengths.
  Trainer(PartlyLayeredNet& net, TrainConfig config);

  /// One update of task `task` (0-based) on a batch of indices into
  /// `corpus`/`gold`: forward in train mode, backward, clip, then AdamW on
  /// the task's parameters only. Returns the loss.
  double train_step(std::span<const AnnotatedSentence> corpus, std::span<const std::vector<TagSequence>> gold,
                    std::span<const std::size_t> batch, std::size_t task);

  const TrainConfig& config() const noexcept { return config_; }
  const ClassWeightTable& weights() const noexcept { return weights_; }
  Rng& rng() noexcept { return rng_; }

 private:
  PartlyLayeredNet& net_;
  TrainConfig config_;
  ClassWeightTable weights_;
  std::vector<AdamW> optimizers_;
  Rng rng_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::vector<double> task_loss;
  bool validated = false;
  PRF val_macro;
  PRF val_micro;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_macro_f1 = 0.0;
  bool checkpoint_written = false;
};

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Runs `config.epochs` epochs. Each batch trains tasks 1..M in the
/// configured order. After validation the best weights by macro F1 over
/// word-lengths are kept and checkpointed; the net ends holding them.
/// Validation falls back to the training set when `validation` is empty.
/// Throws EmptyCorpus for an empty training set.
TrainResult train(PartlyLayeredNet& net, std::span<const AnnotatedSentence> train_set,
                  std::span<const AnnotatedSentence> validation, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Predicted spans keyed by corpus position.
DocSpanSet predict_corpus(const PartlyLayeredNet& net, std::span<const AnnotatedSentence> corpus);
DocSpanSet gold_corpus(std::span<const AnnotatedSentence> corpus);
EvalReport evaluate_net(const PartlyLayeredNet& net, std::span<const AnnotatedSentence> corpus);

/// CSV epoch log: `epoch,task,loss,val_ma_p,...` with one row per task.
std::string epoch_log_csv(std::span<const EpochRecord> records);

}  // namespace nestner
