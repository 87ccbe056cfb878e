#include "nestner/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "nestner/errors.hpp"
#include "nestner/fileio.hpp"

namespace nestner {

ClassWeightTable::ClassWeightTable(LabelSet labels, std::vector<std::vector<double>> weights)
    : labels_(std::move(labels)), weights_(std::move(weights)) {
  if (weights_.empty()) throw ConfigError("class weight table needs at least one length");
  for (std::size_t m = 0; m < weights_.size(); ++m) {
    if (weights_[m].size() != labels_.tag_count()) {
      throw ConfigError("class weights for length " + std::to_string(m + 1) + " have " +
                        std::to_string(weights_[m].size()) + " entries, expected " +
                        std::to_string(labels_.tag_count()));
    }
    for (double w : weights_[m]) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("class weights must be positive and finite");
    }
  }
}

ClassWeightTable ClassWeightTable::uniform(const LabelSet& labels, std::size_t max_length) {
  return ClassWeightTable(labels, std::vector<std::vector<double>>(max_length,
                                                                   std::vector<double>(labels.tag_count(), 1.0)));
}

ClassWeightTable ClassWeightTable::concept_defaults() {
  std::vector<std::vector<double>> rows;
  for (int m = 1; m <= 6; ++m) {
    const double non = std::ldexp(1.0, -(m + 1));
    rows.push_back({non, 1.0 - non});
  }
  // The longest length is printed as 1-2^-8 against 2^-9; kept as printed.
  rows.push_back({std::ldexp(1.0, -9), 1.0 - std::ldexp(1.0, -8)});
  return ClassWeightTable(LabelSet({"Concept"}), rows);
}

LabelSet ner_labels() { return LabelSet({"Protein", "DNA", "RNA", "CellLine", "CellType"}); }

ClassWeightTable ClassWeightTable::ner_defaults() {
  return ClassWeightTable(ner_labels(), std::vector<std::vector<double>>(6, {0.005, 0.20, 0.20, 0.30, 0.24, 0.21}));
}

ClassWeightTable ClassWeightTable::ner_flair_defaults() {
  std::vector<std::vector<double>> rows;
  for (double non : {0.040, 0.030, 0.015, 0.010, 0.008, 0.006}) rows.push_back({non, 0.15, 0.18, 0.25, 0.22, 0.20});
  return ClassWeightTable(ner_labels(), rows);
}

Var weighted_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets,
                           std::span<const double> weights) {
  const Tensor& z = t.value(logits);
  const std::size_t n = z.rows();
  const std::size_t c = z.cols();
  if (targets.size() != n) {
    throw ShapeMismatch("cross-entropy got " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(n) + " rows");
  }
  if (weights.size() != c) throw ShapeMismatch("cross-entropy needs one weight per class");
  for (std::size_t y : targets) {
    if (y >= c) throw IndexOutOfRange("target " + std::to_string(y) + " outside " + std::to_string(c) + " classes");
  }

  Tensor probs = softmax_rows(z);
  double total = 0.0;
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[targets[i]];
    double mx = z.at(i, 0);
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z.at(i, k));
    double se = 0.0;
    for (std::size_t k = 0; k < c; ++k) se += std::exp(z.at(i, k) - mx);
    total += w * (mx + std::log(se) - z.at(i, targets[i]));
    weight_sum += w;
  }

  std::vector<std::size_t> y(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  const Var parents[] = {logits};
  return t.push(Tensor::scalar(total / weight_sum), parents,
                [logits, probs = std::move(probs), y = std::move(y), wt = std::move(wt), weight_sum](
                    Tape& tape, const Tensor& g) {
                  std::span<double> dz = tape.grad_buffer(logits);
                  if (dz.empty()) return;
                  const std::size_t cols = probs.cols();
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    const double scale = g[0] * wt[y[i]] / weight_sum;
                    for (std::size_t k = 0; k < cols; ++k) {
                      dz[i * cols + k] += scale * (probs.at(i, k) - (k == y[i] ? 1.0 : 0.0));
                    }
                  }
                });
}

void AdamW::step(std::span<Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ShapeMismatch("AdamW needs one gradient per parameter");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i]->value)) {
      throw ShapeMismatch("gradient shape " + shape_string(grads[i].shape()) + " does not match parameter '" +
                          params[i]->name + "' " + shape_string(params[i]->value.shape()));
    }
    if (!grads[i].all_finite()) throw NonFiniteGradient("non-finite gradient for '" + params[i]->name + "'");
  }
  const AdamWConfig& c = config_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Moments& s = state_[p.name];
    if (s.step == 0) {
      s.m = Tensor(p.value.shape());
      s.v = Tensor(p.value.shape());
    }
    ++s.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
    const double shrink = 1.0 - c.lr * c.weight_decay;
    std::span<double> theta = p.value.data();
    std::span<const double> g = grads[i].data();
    std::span<double> m = s.m.data();
    std::span<double> v = s.v.data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] *= shrink;
      theta[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

std::size_t AdamW::steps(const std::string& name) const {
  auto it = state_.find(name);
  return it == state_.end() ? 0 : it->second.step;
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, std::size_t budget,
                                                   BatchUnit unit, Rng& rng) {
  if (budget == 0) throw ConfigError("batch budget must be positive");
  auto cost = [&](std::size_t i) { return unit == BatchUnit::Tokens ? lengths[i] : std::size_t{1}; };
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (cost(i) > budget) {
      throw SentenceExceedsBudget("sentence " + std::to_string(i) + " has " + std::to_string(lengths[i]) +
                                  " tokens, more than the batch budget of " + std::to_string(budget));
    }
  }
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> batches;
  std::size_t used = 0;
  for (std::size_t i : order) {
    if (batches.empty() || used + cost(i) > budget) {
      batches.emplace_back();
      used = 0;
    }
    batches.back().push_back(i);
    used += cost(i);
  }
  return batches;
}

std::vector<std::vector<TagSequence>> encode_corpus(std::span<const AnnotatedSentence> corpus,
                                                    const ModelSpec& spec) {
  std::vector<std::vector<TagSequence>> out;
  out.reserve(corpus.size());
  for (const AnnotatedSentence& a : corpus) {
    out.push_back(encode_bo(a.spans, a.sentence.size(), spec.max_length, spec.labels));
  }
  return out;
}

Var task_loss(Tape& t, const PartlyLayeredNet& net, std::span<const Sentence* const> sentences,
              std::span<const TagSequence* const> gold_rows, std::size_t task, std::span<const double> weights,
              Mode mode, Rng* rng) {
  if (sentences.empty()) throw EmptyCorpus("a training batch must not be empty");
  if (sentences.size() != gold_rows.size()) throw ShapeMismatch("one gold row per sentence is required");
  std::vector<Var> parts;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (gold_rows[i]->word_length != task + 1) throw ShapeMismatch("gold row length does not match the task");
    if (gold_rows[i]->size() != sentences[i]->size()) throw ShapeMismatch("gold row does not fit the sentence");
    parts.push_back(forward_task(t, net, *sentences[i], task, mode, rng));
    targets.insert(targets.end(), gold_rows[i]->tags.begin(), gold_rows[i]->tags.end());
  }
  const Var logits = parts.size() == 1 ? parts.front() : concat_rows(t, parts);
  return weighted_cross_entropy(t, logits, targets, weights);
}

Trainer::Trainer(PartlyLayeredNet& net, TrainConfig config)
    : net_(net), config_(std::move(config)), rng_(config_.seed) {
  const ModelSpec& spec = net_.spec();
  weights_ = config_.class_weights ? *config_.class_weights : ClassWeightTable::uniform(spec.labels, spec.max_length);
  if (!(weights_.labels() == spec.labels)) throw ConfigError("class weight labels differ from the model labels");
  if (weights_.max_length() < spec.max_length) {
    throw ConfigError("class weights cover lengths up to " + std::to_string(weights_.max_length()) +
                      " but the model has " + std::to_string(spec.max_length) + " heads");
  }
  if (!(config_.optimizer.lr > 0.0) || config_.optimizer.weight_decay < 0.0) {
    throw ConfigError("learning rate must be positive and weight decay non-negative");
  }
  optimizers_.assign(spec.max_length, AdamW(config_.optimizer));
}

double Trainer::train_step(std::span<const AnnotatedSentence> corpus, std::span<const std::vector<TagSequence>> gold,
                           std::span<const std::size_t> batch, std::size_t task) {
  if (task >= net_.heads().size()) throw IndexOutOfRange("task index out of range");
  std::vector<const Sentence*> sentences;
  std::vector<const TagSequence*> rows;
  for (std::size_t i : batch) {
    sentences.push_back(&corpus[i].sentence);
    rows.push_back(&gold[i][task]);
  }
  Tape t;
  const Var loss = task_loss(t, net_, sentences, rows, task, weights_.row(task + 1), Mode::Train, &rng_);
  t.backward(loss);

  std::vector<Parameter*> params = net_.task_parameters(task);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) grads.push_back(t.gradient(*p));
  if (config_.clip_norm > 0.0) clip_global_norm(grads, config_.clip_norm);
  optimizers_[task].step(params, grads);
  return t.value(loss)[0];
}

DocSpanSet predict_corpus(const PartlyLayeredNet& net, std::span<const AnnotatedSentence> corpus) {
  DocSpanSet out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const Span& s : predict_spans(net, corpus[i].sentence)) out.insert(DocSpan{std::to_string(i), s});
  }
  return out;
}

DocSpanSet gold_corpus(std::span<const AnnotatedSentence> corpus) {
  DocSpanSet out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const Span& s : corpus[i].spans) out.insert(DocSpan{std::to_string(i), s});
  }
  return out;
}

EvalReport evaluate_net(const PartlyLayeredNet& net, std::span<const AnnotatedSentence> corpus) {
  return evaluate_spans(gold_corpus(corpus), predict_corpus(net, corpus), net.spec().labels);
}

std::string epoch_log_csv(std::span<const EpochRecord> records) {
  std::string out = "epoch,task,loss,val_ma_p,val_ma_r,val_ma_f1,val_mi_p,val_mi_r,val_mi_f1\n";
  for (const EpochRecord& r : records) {
    std::string val = ",,,,,";
    if (r.validated) {
      val = format_double(r.val_macro.precision) + "," + format_double(r.val_macro.recall) + "," +
            format_double(r.val_macro.f1) + "," + format_double(r.val_micro.precision) + "," +
            format_double(r.val_micro.recall) + "," + format_double(r.val_micro.f1);
    }
    for (std::size_t m = 0; m < r.task_loss.size(); ++m) {
      out += std::to_string(r.epoch) + "," + std::to_string(m + 1) + "," + format_double(r.task_loss[m]) + "," +
             val + "\n";
    }
  }
  return out;
}

TrainResult train(PartlyLayeredNet& net, std::span<const AnnotatedSentence> train_set,
                  std::span<const AnnotatedSentence> validation, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (train_set.empty()) throw EmptyCorpus("training set is empty");
  if (config.validate_every == 0) throw ConfigError("validate_every must be at least 1");
  const auto val_set = validation.empty() ? train_set : validation;
  const auto gold = encode_corpus(train_set, net.spec());
  std::vector<std::size_t> lengths;
  for (const AnnotatedSentence& a : train_set) lengths.push_back(a.sentence.size());

  Trainer trainer(net, config);
  const std::size_t tasks = net.heads().size();
  TrainResult result;
  std::vector<Tensor> best_values;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<double> loss_sum(tasks, 0.0);
    std::vector<std::size_t> loss_count(tasks, 0);
    for (const auto& batch : make_batches(lengths, config.batch_size, config.batch_unit, trainer.rng())) {
      std::vector<std::size_t> order(tasks);
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (config.task_order == TaskOrder::Shuffled) trainer.rng().shuffle(order);
      for (std::size_t task : order) {
        loss_sum[task] += trainer.train_step(train_set, gold, batch, task);
        ++loss_count[task];
      }
    }
    for (std::size_t m = 0; m < tasks; ++m) rec.task_loss.push_back(loss_sum[m] / static_cast<double>(loss_count[m]));

    if (epoch % config.validate_every == 0 || epoch == config.epochs) {
      const EvalReport report = evaluate_net(net, val_set);
      rec.validated = true;
      rec.val_macro = report.macro;
      rec.val_micro = report.micro;
      if (result.best_epoch == 0 || report.macro.f1 > result.best_macro_f1) {
        rec.improved = true;
        result.best_epoch = epoch;
        result.best_macro_f1 = report.macro.f1;
        best_values.clear();
        for (const Parameter* p : std::as_const(net).parameters()) best_values.push_back(p->value);
        if (!config.checkpoint_path.empty()) {
          save_weights(net, config.checkpoint_path);
          result.checkpoint_written = true;
        }
      }
    }
    result.epochs.push_back(rec);
    if (!config.log_path.empty()) write_file_atomic(config.log_path, epoch_log_csv(result.epochs));
    if (on_epoch && !on_epoch(rec)) break;
  }

  if (!best_values.empty()) {
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  return result;
}

}  // namespace nestner
