#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slm/embedding_store.hpp"
#include "slm/model.hpp"
#include "slm/scoring.hpp"
#include "slm/training.hpp"

namespace slm {

struct ScoredId {
  SentenceId id = 0;
  double logit = 0.0;
};

/// Total order used by every ranking: higher logit first, ties to lower id.
inline bool ranks_before(const ScoredId& a, const ScoredId& b) {
  return a.logit > b.logit || (a.logit == b.logit && a.id < b.id);
}

/// 1 + #{strictly better candidates} under ranks_before.
std::size_t rank_of_true(const ScoreResult& scores, SentenceId true_id);

struct TopKOptions {
  std::size_t block_rows = 1024;  // rows scored per block before selection
  std::size_t num_shards = 1;     // worker threads; results are identical for any value
};

/// The k best candidates by ranks_before, best first.
std::vector<ScoredId> topk_scores(std::span<const float> h, const EmbeddingMatrix& pool,
                                  std::span<const SentenceId> ids, std::size_t k,
                                  const TopKOptions& options = {});
/// Same, over every row of the matrix.
std::vector<ScoredId> topk_scores(std::span<const float> h, const EmbeddingMatrix& pool,
                                  std::size_t k, const TopKOptions& options = {});

struct ClozeResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t ties = 0;  // equal logits; resolved toward ending_a
};

ClozeResult eval_cloze(const ModelParams& params, const ModelConfig& config,
                       const EmbeddingMatrix& embeddings, const ClozeEvalSet& set);

struct RankingQuery {
  std::vector<SentenceId> context;
  SentenceId truth = 0;
};

/// Context = first context_len sentences, truth = the next one.
std::vector<RankingQuery> make_queries(const CorpusIndex& index);

struct QueryRank {
  SentenceId true_id = 0;
  std::size_t rank = 0;  // 1-based
  SentenceId top1_id = 0;
  double top1_logit = 0.0;
};

struct RankReport {
  std::vector<QueryRank> queries;
  std::vector<std::size_t> ks;
  std::vector<double> precision_at_k;  // parallel to ks
  double mrr = 0.0;
  double median_rank = 0.0;
  double mean_rank = 0.0;
  std::size_t pool_size = 0;

  /// Throws DomainError if k was not requested.
  double precision_at(std::size_t k) const;
};

/// Aggregates per-query ranks into P@k, MRR, median and mean rank.
RankReport summarize_ranks(std::vector<QueryRank> queries, std::size_t pool_size,
                           std::vector<std::size_t> ks);

/// Scores the full pool for every query (eval mode) and reports the rank of
/// each true sentence. Queries are split across num_threads workers.
RankReport eval_ranking(const ModelParams& params, const ModelConfig& config,
                        const EmbeddingMatrix& embeddings, std::span<const RankingQuery> queries,
                        std::span<const SentenceId> pool, std::vector<std::size_t> ks = {1, 10},
                        std::size_t num_threads = 1);

/// Same, for precomputed h rows.
RankReport rank_predictions(const Matrix<float>& predictions, std::span<const SentenceId> truths,
                            const EmbeddingMatrix& embeddings, std::span<const SentenceId> pool,
                            std::vector<std::size_t> ks, std::size_t num_threads = 1);

/// Per-query lines "query_id\ttrue_id\trank\ttop1_id\ttop1_logit" followed by
/// a "#summary" footer line with the aggregates.
std::string format_rank_report(const RankReport& report);

struct SweepRow {
  std::size_t num_distractors = 0;
  bool ok = false;
  std::string error;
  double median_rank = 0.0;
  double mean_rank = 0.0;
  double p_at_10 = 0.0;
  double mrr = 0.0;
};

/// Trains one model per distractor count (N - 1) with identical seeds and
/// data, then ranks `queries` against `pool`. A failing cell is recorded
/// and the remaining cells still run.
std::vector<SweepRow> sweep_distractors(const EmbeddingMatrix& embeddings,
                                        const CorpusIndex& corpus,
                                        const ModelConfig& model_config,
                                        const TrainConfig& train_template,
                                        std::span<const std::size_t> grid,
                                        std::span<const RankingQuery> queries,
                                        std::span<const SentenceId> pool,
                                        std::size_t num_threads = 1);

/// Tab-separated "N\tmedian_rank\tmean_rank\tp_at_10\tmrr" with a header.
std::string format_sweep_table(std::span<const SweepRow> rows);
/// Whitespace-separated columns with a '#' header, for plotting tools.
std::string format_sweep_plot_data(std::span<const SweepRow> rows);

}  // namespace slm
