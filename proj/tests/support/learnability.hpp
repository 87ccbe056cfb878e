#pragma once

// Desk-scale learnability run: a rule-generated corpus where entities are
// maximal runs of entity words between filler words, with length-3 entities
// kept rare in training.

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

#include "nestner/training.hpp"

namespace nestner::testing {

inline std::string vocab_word(std::size_t k) { return "w" + std::to_string(k); }

// w0..w29 are entity words, w30..w99 fillers.
inline constexpr std::size_t kEntityWords = 30;
inline constexpr std::size_t kVocabSize = 100;

/// One sentence per slot; `lengths` lists the entity lengths to plant, in
/// order, spread evenly over `sentences` sentences.
inline std::vector<AnnotatedSentence> entity_run_corpus(Rng& rng, std::vector<std::size_t> lengths,
                                                        std::size_t sentences, const std::string& prefix) {
  rng.shuffle(lengths);
  auto filler = [&] { return vocab_word(kEntityWords + rng.below(kVocabSize - kEntityWords)); };
  std::vector<AnnotatedSentence> out;
  std::size_t next = 0;
  for (std::size_t s = 0; s < sentences; ++s) {
    AnnotatedSentence a;
    a.sentence.id = prefix + std::to_string(s);
    auto& toks = a.sentence.tokens;
    const std::size_t quota = (lengths.size() - next + (sentences - 1 - s)) / (sentences - s);
    for (std::size_t q = 0; q < quota; ++q, ++next) {
      for (std::size_t f = 0, gap = 1 + rng.below(3); f < gap; ++f) toks.push_back(filler());
      const std::size_t m = lengths[next];
      a.spans.insert(Span{toks.size(), m, "Entity"});
      for (std::size_t k = 0; k < m; ++k) toks.push_back(vocab_word(rng.below(kEntityWords)));
    }
    toks.push_back(filler());
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<std::size_t> repeat_lengths(std::size_t ones, std::size_t twos, std::size_t threes) {
  std::vector<std::size_t> out(ones, 1);
  out.insert(out.end(), twos, 2);
  out.insert(out.end(), threes, 3);
  return out;
}

struct VariantRun {
  double train_micro = 0.0;      // training set, final epoch
  std::size_t first_epoch = 0;   // first epoch with training micro >= 0.95, 0 if never
  double train_length1 = 0.0;
  double heldout_macro = 0.0;    // macro over lengths on held-out data
  std::vector<double> heldout_by_length;
  double seconds = 0.0;
};

struct LearnabilityResult {
  VariantRun base;
  VariantRun multi;
};

inline VariantRun run_variant(Variant variant, const std::vector<AnnotatedSentence>& train_set,
                              const std::vector<AnnotatedSentence>& heldout, std::uint64_t seed) {
  ModelSpec spec;
  spec.variant = variant;
  spec.max_length = 3;
  spec.labels = LabelSet({"Entity"});
  spec.embedding_dim = 16;
  spec.lstm_hidden = 32;
  spec.lstm_layers = 1;
  spec.bidirectional = true;
  spec.lstm_dropout = 0.0;
  spec.tagging_dropout = 0.4;
  spec.input_dropout = 0.0;

  Rng init(seed);
  Vocabulary vocab;
  for (std::size_t k = 0; k < kVocabSize; ++k) vocab.add(vocab_word(k));
  PartlyLayeredNet net(spec, random_embeddings(vocab, spec.embedding_dim, init), init);

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 120;
  cfg.optimizer.lr = 0.003;
  cfg.seed = init.next();

  VariantRun run;
  const auto t0 = std::chrono::steady_clock::now();
  train(net, train_set, {}, cfg, [&](const EpochRecord& r) {
    if (run.first_epoch == 0 && evaluate_net(net, train_set).micro.f1 >= 0.95) run.first_epoch = r.epoch;
    return true;
  });
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const EvalReport fit = evaluate_net(net, train_set);
  run.train_micro = fit.micro.f1;
  for (const auto& [key, prf] : fit.by_length) {
    if (key.number == 1) run.train_length1 = prf.f1;
  }
  const EvalReport held = evaluate_net(net, heldout);
  run.heldout_macro = held.macro.f1;
  for (const auto& [key, prf] : held.by_length) run.heldout_by_length.push_back(prf.f1);
  return run;
}

inline LearnabilityResult run_learnability() {
  Rng data(2024);
  const auto train_set = entity_run_corpus(data, repeat_lengths(90, 60, 10), 50, "t");
  const auto heldout = entity_run_corpus(data, repeat_lengths(100, 100, 100), 100, "h");
  return {run_variant(Variant::Base, train_set, heldout, 5), run_variant(Variant::Multi, train_set, heldout, 5)};
}

}  // namespace nestner::testing
