#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "slm/embedding_store.hpp"
#include "slm/model.hpp"
#include "slm/optimizer.hpp"
#include "slm/rng.hpp"

namespace slm {

enum class DistractorMode { static_set, dynamic };

std::string to_string(DistractorMode mode);
DistractorMode parse_distractor_mode(const std::string& name);

/// Training hyperparameters. The text form is one "key = value" per line
/// with keys equal to the field names; every key except `patience` is
/// required. '#' starts a comment.
struct TrainConfig {
  std::size_t num_distractors = 255;  // N - 1
  DistractorMode distractor_mode = DistractorMode::dynamic;
  double cs_loss_weight = 1.0;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_steps = 10000;
  std::uint64_t seed = 0;
  std::size_t eval_every = 500;
  std::size_t patience = 10;  // evaluations without improvement before stopping

  void validate() const;
  AdamSettings adam() const {
    return {learning_rate, adam_beta1, adam_beta2, adam_eps};
  }
};

/// Field names in file order.
std::vector<std::string> train_config_keys();
TrainConfig parse_train_config(std::istream& in, const std::string& source_name);
TrainConfig read_train_config(const std::string& path);
std::string format_train_config(const TrainConfig& config);

struct TrainExample {
  std::vector<SentenceId> context;
  SentenceId truth = 0;
  std::vector<SentenceId> distractors;
};

/// One example per story: the first context_len sentences predict the next.
std::vector<TrainExample> make_examples(const CorpusIndex& index);

/// n distinct ids drawn uniformly without replacement from pool \ exclude,
/// in draw order. Throws DomainError when fewer than n ids are available.
std::vector<SentenceId> sample_distractors(Rng& rng, std::span<const SentenceId> pool,
                                           std::size_t n, std::span<const SentenceId> exclude);

/// Supplies each example's distractors. Dynamic mode draws a fresh set per
/// example; static mode draws one set of n + 1 ids up front and hands every
/// example the first n of them that are not its own truth or context.
class DistractorSampler {
 public:
  DistractorSampler(std::vector<SentenceId> pool, std::size_t n, DistractorMode mode, Rng& rng);

  std::vector<SentenceId> draw(Rng& rng, const TrainExample& example) const;
  const std::vector<SentenceId>& static_set() const { return static_set_; }

 private:
  std::vector<SentenceId> pool_;
  std::size_t n_;
  DistractorMode mode_;
  std::vector<SentenceId> static_set_;
};

/// -log p(true) over {true} U distractors.
double nll_loss(std::span<const float> h, std::span<const float> true_emb,
                std::span<const std::span<const float>> distractor_embs);

/// -log p(true) over {true} U context sentences (t + 1 candidates).
double cs_loss(std::span<const float> h, std::span<const float> true_emb,
               std::span<const std::span<const float>> context_embs);

struct LossBreakdown {
  double total = 0.0;  // nll + weight * cs, batch mean
  double nll = 0.0;
  double cs = 0.0;
};

/// Batch-mean loss. Train mode needs either a dropout source or replayed
/// masks.
template <typename T>
LossBreakdown total_loss(std::span<const TrainExample> batch, const BasicParams<T>& params,
                         const ModelConfig& config, const EmbeddingMatrix& embeddings,
                         double cs_loss_weight, Mode mode = Mode::eval,
                         Rng* dropout_rng = nullptr,
                         const DropoutMasks<T>* replay_masks = nullptr);

template <typename T>
struct Gradients {
  LossBreakdown loss;
  BasicParams<T> grads;
  DropoutMasks<T> masks;  // the masks this call used
};

/// Exact gradients of total_loss for every parameter tensor. Candidate
/// embeddings are constants.
template <typename T>
Gradients<T> backward(std::span<const TrainExample> batch, const BasicParams<T>& params,
                      const ModelConfig& config, const EmbeddingMatrix& embeddings,
                      double cs_loss_weight, Mode mode, Rng* dropout_rng,
                      const DropoutMasks<T>* replay_masks = nullptr);

/// Held-out data used for periodic evaluation and early stopping. Pairwise
/// cloze accuracy is used when `cloze` has items, else P@10 of `queries`
/// against `pool`.
struct ValidationData {
  ClozeEvalSet cloze;
  std::vector<std::vector<SentenceId>> query_contexts;
  std::vector<SentenceId> query_truths;
  std::vector<SentenceId> pool;

  bool empty() const { return cloze.items.empty() && query_contexts.empty(); }
};

struct LogRecord {
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss since the previous record
  std::string metric_name;
  double metric_value = 0.0;
};

/// "step\tloss\tmetric_name\tmetric_value" per line.
std::string format_log(std::span<const LogRecord> log);

struct TrainResult {
  ModelParams params;
  OptimizerState optimizer;
  std::vector<LogRecord> log;
  std::vector<double> step_losses;
  std::size_t steps_run = 0;
  std::size_t best_step = 0;
  bool stopped_early = false;
};

/// Runs the batched training loop. Deterministic for a given seed.
/// Throws TrainingError on a non-finite loss.
TrainResult train(const EmbeddingMatrix& embeddings, const CorpusIndex& corpus,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const ValidationData* validation = nullptr);

}  // namespace slm
