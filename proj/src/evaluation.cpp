#include "slm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "slm/errors.hpp"

namespace slm {

std::size_t rank_of_true(const ScoreResult& scores, SentenceId true_id) {
  const auto it = std::find(scores.ids.begin(), scores.ids.end(), true_id);
  if (it == scores.ids.end()) {
    throw DomainError("true id " + std::to_string(true_id) + " is not among the candidates");
  }
  const ScoredId truth{true_id, scores.logits[static_cast<std::size_t>(it - scores.ids.begin())]};
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.ids.size(); ++i) {
    if (ranks_before({scores.ids[i], scores.logits[i]}, truth)) ++rank;
  }
  return rank;
}

namespace {

// Runs fn(begin, end, worker) over [0, n) split into contiguous chunks.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(n, w * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    threads.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Bounded selection over ids[begin, end). The heap front is the worst kept
// candidate, so most rows are rejected with a single comparison.
template <typename IdAt>
std::vector<ScoredId> select_topk(std::span<const float> h, const EmbeddingMatrix& pool,
                                  IdAt id_at, std::size_t begin, std::size_t end, std::size_t k,
                                  std::size_t block_rows) {
  std::vector<ScoredId> heap;
  heap.reserve(k);
  std::vector<double> logits(block_rows);
  for (std::size_t b = begin; b < end; b += block_rows) {
    const std::size_t n = std::min(block_rows, end - b);
    for (std::size_t i = 0; i < n; ++i) logits[i] = dot(pool.row(id_at(b + i)), h);
    for (std::size_t i = 0; i < n; ++i) {
      const ScoredId cand{id_at(b + i), logits[i]};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), ranks_before);
      } else if (ranks_before(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), ranks_before);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), ranks_before);
      }
    }
  }
  std::sort_heap(heap.begin(), heap.end(), ranks_before);
  return heap;
}

template <typename IdAt>
std::vector<ScoredId> topk_impl(std::span<const float> h, const EmbeddingMatrix& pool, IdAt id_at,
                                std::size_t n, std::size_t k, const TopKOptions& options) {
  if (k == 0 || k > n) {
    throw DomainError("k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  if (h.size() != pool.dim()) throw DimensionError("h width does not match embedding dim");
  const std::size_t block = std::max<std::size_t>(1, options.block_rows);
  const std::size_t shards = std::max<std::size_t>(1, std::min(options.num_shards, n));
  std::vector<std::vector<ScoredId>> partial(shards);
  parallel_chunks(n, shards, [&](std::size_t begin, std::size_t end, std::size_t w) {
    partial[w] = select_topk(h, pool, id_at, begin, end, std::min(k, end - begin), block);
  });
  if (shards == 1) return std::move(partial[0]);
  std::vector<ScoredId> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  std::partial_sort(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(k), merged.end(),
                    ranks_before);
  merged.resize(k);
  return merged;
}

}  // namespace

std::vector<ScoredId> topk_scores(std::span<const float> h, const EmbeddingMatrix& pool,
                                  std::span<const SentenceId> ids, std::size_t k,
                                  const TopKOptions& options) {
  for (SentenceId id : ids) {
    if (id >= pool.count()) throw ValidationError("candidate id " + std::to_string(id) + " out of range");
  }
  return topk_impl(h, pool, [ids](std::size_t i) { return ids[i]; }, ids.size(), k, options);
}

std::vector<ScoredId> topk_scores(std::span<const float> h, const EmbeddingMatrix& pool,
                                  std::size_t k, const TopKOptions& options) {
  return topk_impl(h, pool, [](std::size_t i) { return static_cast<SentenceId>(i); }, pool.count(),
                   k, options);
}

ClozeResult eval_cloze(const ModelParams& params, const ModelConfig& config,
                       const EmbeddingMatrix& embeddings, const ClozeEvalSet& set) {
  set.validate(embeddings.count());
  ClozeResult r;
  r.total = set.items.size();
  if (set.items.empty()) return r;
  std::vector<std::vector<SentenceId>> contexts;
  contexts.reserve(set.items.size());
  for (const auto& item : set.items) contexts.push_back(item.context);
  const Matrix<float> h = predict(params, config, embeddings, contexts);
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    const auto& item = set.items[i];
    const std::span<const float> row(h.row(static_cast<Eigen::Index>(i)).data(), config.output_dim);
    const double la = dot(embeddings.row(item.ending_a), row);
    const double lb = dot(embeddings.row(item.ending_b), row);
    if (la == lb) ++r.ties;
    const ClozeLabel pick = la >= lb ? ClozeLabel::a : ClozeLabel::b;
    if (pick == item.label) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

std::vector<RankingQuery> make_queries(const CorpusIndex& index) {
  std::vector<RankingQuery> queries;
  queries.reserve(index.stories.size());
  for (const auto& story : index.stories) {
    RankingQuery q;
    q.context.assign(story.begin(), story.begin() + static_cast<std::ptrdiff_t>(index.context_len));
    q.truth = story[index.context_len];
    queries.push_back(std::move(q));
  }
  return queries;
}

double RankReport::precision_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return precision_at_k[i];
  }
  throw DomainError("precision at " + std::to_string(k) + " was not computed");
}

RankReport summarize_ranks(std::vector<QueryRank> queries, std::size_t pool_size,
                           std::vector<std::size_t> ks) {
  RankReport r;
  r.pool_size = pool_size;
  r.ks = std::move(ks);
  r.queries = std::move(queries);
  r.precision_at_k.assign(r.ks.size(), 0.0);
  if (r.queries.empty()) return r;
  const double n = static_cast<double>(r.queries.size());
  std::vector<std::size_t> ranks;
  ranks.reserve(r.queries.size());
  for (const auto& q : r.queries) {
    ranks.push_back(q.rank);
    r.mrr += 1.0 / static_cast<double>(q.rank);
    r.mean_rank += static_cast<double>(q.rank);
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      if (q.rank <= r.ks[i]) r.precision_at_k[i] += 1.0;
    }
  }
  r.mrr /= n;
  r.mean_rank /= n;
  for (auto& p : r.precision_at_k) p /= n;
  std::sort(ranks.begin(), ranks.end());
  const std::size_t mid = ranks.size() / 2;
  r.median_rank = ranks.size() % 2 == 1
                      ? static_cast<double>(ranks[mid])
                      : 0.5 * static_cast<double>(ranks[mid - 1] + ranks[mid]);
  return r;
}

RankReport rank_predictions(const Matrix<float>& predictions, std::span<const SentenceId> truths,
                            const EmbeddingMatrix& embeddings, std::span<const SentenceId> pool,
                            std::vector<std::size_t> ks, std::size_t num_threads) {
  if (static_cast<std::size_t>(predictions.rows()) != truths.size()) {
    throw DimensionError("one prediction row per query expected");
  }
  if (pool.empty()) throw DomainError("empty ranking pool");
  for (SentenceId id : pool) {
    if (id >= embeddings.count()) throw ValidationError("pool id " + std::to_string(id) + " out of range");
  }
  const std::size_t dim = embeddings.dim();
  std::vector<QueryRank> ranks(truths.size());
  parallel_chunks(truths.size(), num_threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t q = begin; q < end; ++q) {
      const std::span<const float> h(predictions.row(static_cast<Eigen::Index>(q)).data(), dim);
      const ScoredId truth{truths[q], dot(embeddings.row(truths[q]), h)};
      bool found = false;
      std::size_t better = 0;
      ScoredId top{};
      bool have_top = false;
      for (SentenceId id : pool) {
        const ScoredId cand{id, dot(embeddings.row(id), h)};
        if (id == truth.id) found = true;
        if (ranks_before(cand, truth)) ++better;
        if (!have_top || ranks_before(cand, top)) {
          top = cand;
          have_top = true;
        }
      }
      if (!found) {
        throw DomainError("true id " + std::to_string(truth.id) + " of query " +
                          std::to_string(q) + " is not in the pool");
      }
      ranks[q] = {truth.id, better + 1, top.id, top.logit};
    }
  });
  return summarize_ranks(std::move(ranks), pool.size(), std::move(ks));
}

RankReport eval_ranking(const ModelParams& params, const ModelConfig& config,
                        const EmbeddingMatrix& embeddings, std::span<const RankingQuery> queries,
                        std::span<const SentenceId> pool, std::vector<std::size_t> ks,
                        std::size_t num_threads) {
  std::vector<std::vector<SentenceId>> contexts;
  std::vector<SentenceId> truths;
  contexts.reserve(queries.size());
  truths.reserve(queries.size());
  for (const auto& q : queries) {
    contexts.push_back(q.context);
    truths.push_back(q.truth);
  }
  const Matrix<float> h = predict(params, config, embeddings, contexts);
  return rank_predictions(h, truths, embeddings, pool, std::move(ks), num_threads);
}

std::string format_rank_report(const RankReport& report) {
  std::string out;
  char buf[160];
  for (std::size_t q = 0; q < report.queries.size(); ++q) {
    const auto& r = report.queries[q];
    std::snprintf(buf, sizeof buf, "%zu\t%llu\t%zu\t%llu\t%.17g\n", q,
                  static_cast<unsigned long long>(r.true_id), r.rank,
                  static_cast<unsigned long long>(r.top1_id), r.top1_logit);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "#summary\tqueries=%zu\tpool_size=%zu", report.queries.size(),
                report.pool_size);
  out += buf;
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "\tp_at_%zu=%.9g", report.ks[i], report.precision_at_k[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "\tmrr=%.9g\tmedian_rank=%.9g\tmean_rank=%.9g\n", report.mrr,
                report.median_rank, report.mean_rank);
  out += buf;
  return out;
}

std::vector<SweepRow> sweep_distractors(const EmbeddingMatrix& embeddings,
                                        const CorpusIndex& corpus,
                                        const ModelConfig& model_config,
                                        const TrainConfig& train_template,
                                        std::span<const std::size_t> grid,
                                        std::span<const RankingQuery> queries,
                                        std::span<const SentenceId> pool,
                                        std::size_t num_threads) {
  if (grid.empty()) throw DomainError("sweep grid is empty");
  std::vector<SweepRow> rows;
  for (std::size_t n : grid) {
    SweepRow row;
    row.num_distractors = n;
    try {
      TrainConfig config = train_template;
      config.num_distractors = n;
      const TrainResult trained = train(embeddings, corpus, model_config, config);
      const RankReport report =
          eval_ranking(trained.params, model_config, embeddings, queries, pool, {10}, num_threads);
      row.ok = true;
      row.median_rank = report.median_rank;
      row.mean_rank = report.mean_rank;
      row.p_at_10 = report.precision_at(10);
      row.mrr = report.mrr;
    } catch (const Error& e) {
      row.error = e.what();
      row.median_rank = row.mean_rank = row.p_at_10 = row.mrr = std::nan("");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_sweep_table(std::span<const SweepRow> rows) {
  std::string out = "N\tmedian_rank\tmean_rank\tp_at_10\tmrr\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\n", r.num_distractors,
                  r.median_rank, r.mean_rank, r.p_at_10, r.mrr);
    out += buf;
  }
  return out;
}

std::string format_sweep_plot_data(std::span<const SweepRow> rows) {
  std::string out = "# num_distractors median_rank mean_rank\n";
  char buf[128];
  for (const auto& r : rows) {
    if (!r.ok) continue;
    std::snprintf(buf, sizeof buf, "%zu %.9g %.9g\n", r.num_distractors, r.median_rank,
                  r.mean_rank);
    out += buf;
  }
  return out;
}

}  // namespace slm
