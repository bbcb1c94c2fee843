#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "slm/errors.hpp"
#include "slm/evaluation.hpp"
#include "slm/synthetic.hpp"

using namespace slm;

namespace {

std::vector<SentenceId> iota_ids(std::size_t n) {
  std::vector<SentenceId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<QueryRank> with_ranks(std::vector<std::size_t> ranks) {
  std::vector<QueryRank> q;
  for (auto r : ranks) q.push_back({0, r, 0, 0.0});
  return q;
}

}  // namespace

TEST_CASE("rank_of_true examples") {
  // Three candidates; h picks out the first coordinate.
  const EmbeddingMatrix m(3, 2, {3, 0, 1, 0, 2, 0});
  const std::vector<float> h = {1, 0};
  const std::vector<SentenceId> ids = {0, 1, 2};
  const auto s = score_candidates(h, m, ids);
  CHECK(rank_of_true(s, 0) == 1);
  CHECK(rank_of_true(s, 2) == 2);
  CHECK(rank_of_true(s, 1) == 3);
  CHECK_THROWS_AS(rank_of_true(s, 9), DomainError);

  // Ties resolve toward the lower id.
  const EmbeddingMatrix tied(3, 1, {1, 1, 1});
  const std::vector<float> one = {1};
  const auto t = score_candidates(one, tied, ids);
  CHECK(rank_of_true(t, 0) == 1);
  CHECK(rank_of_true(t, 2) == 3);
}

TEST_CASE("rank_of_true agrees with a full sort") {
  const auto m = slm::testing::random_matrix(500, 8, 3);
  const auto ids = iota_ids(500);
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto hm = slm::testing::random_matrix(1, 8, gen());
    const auto s = score_candidates(hm.row(0), m, ids);
    const auto sorted = slm::testing::naive_sorted(hm.row(0), m, ids);
    for (std::size_t pos = 0; pos < sorted.size(); pos += 37) {
      CHECK(rank_of_true(s, sorted[pos].id) == pos + 1);
    }
  }
}

TEST_CASE("topk matches the naive sort") {
  std::mt19937_64 gen(5);
  for (std::size_t n : {10, 1000, 10000}) {
    const auto m = slm::testing::random_matrix(n, 16, gen());
    const auto ids = iota_ids(n);
    const auto hm = slm::testing::random_matrix(1, 16, gen());
    const auto naive = slm::testing::naive_sorted(hm.row(0), m, ids);
    for (std::size_t k : {std::size_t{1}, std::size_t{10}, n}) {
      const auto top = topk_scores(hm.row(0), m, ids, k, {.block_rows = 64, .num_shards = 1});
      REQUIRE(top.size() == k);
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(top[i].id == naive[i].id);
        CHECK(top[i].logit == naive[i].logit);
      }
      const auto sharded = topk_scores(hm.row(0), m, k, {.block_rows = 100, .num_shards = 3});
      for (std::size_t i = 0; i < k; ++i) CHECK(sharded[i].id == top[i].id);
    }
    CHECK_THROWS_AS(topk_scores(hm.row(0), m, ids, n + 1), DomainError);
    CHECK_THROWS_AS(topk_scores(hm.row(0), m, ids, 0), DomainError);
  }
}

TEST_CASE("topk on fully tied rows returns the lowest ids") {
  const EmbeddingMatrix m(50, 2, std::vector<float>(100, 0.5f));
  const std::vector<float> h = {1, -1};
  const auto top = topk_scores(h, m, 5, {.block_rows = 7, .num_shards = 4});
  for (std::size_t i = 0; i < 5; ++i) CHECK(top[i].id == i);
}

TEST_CASE("summarize_ranks aggregates") {
  const auto r = summarize_ranks(with_ranks({1, 4}), 10, {1, 10});
  CHECK(r.mrr == doctest::Approx(0.625));
  CHECK(r.median_rank == 2.5);
  CHECK(r.mean_rank == 2.5);
  CHECK(r.precision_at(1) == 0.5);
  CHECK(r.precision_at(10) == 1.0);
  CHECK_THROWS_AS(r.precision_at(5), DomainError);

  const auto single = summarize_ranks(with_ranks({1, 1, 1}), 1, {1, 10});
  CHECK(single.precision_at(1) == 1.0);
  CHECK(single.mrr == 1.0);

  std::mt19937_64 gen(3);
  std::vector<std::size_t> ranks(200);
  for (auto& x : ranks) x = 1 + gen() % 1000;
  const auto big = summarize_ranks(with_ranks(ranks), 1000, {1, 5, 10, 50, 1000});
  for (std::size_t i = 1; i < big.ks.size(); ++i) CHECK(big.precision_at_k[i] >= big.precision_at_k[i - 1]);
  CHECK(big.precision_at(1000) == 1.0);
  CHECK(big.mrr >= 1.0 / 1000);
  CHECK(big.mrr <= 1.0);
}

TEST_CASE("uniformly random ranks match the analytic chance levels") {
  const std::size_t pool = 98000;
  std::mt19937_64 gen(17);
  std::vector<std::size_t> ranks(200000);
  for (auto& r : ranks) r = 1 + gen() % pool;
  const auto rep = summarize_ranks(with_ranks(ranks), pool, {10});
  const double p10 = 10.0 / pool;
  CHECK(std::abs(rep.precision_at(10) - p10) < 5 * std::sqrt(p10 / ranks.size()));
  double harmonic = 0.0;
  for (std::size_t i = 1; i <= pool; ++i) harmonic += 1.0 / static_cast<double>(i);
  CHECK(rep.mrr == doctest::Approx(harmonic / pool).epsilon(0.1));
  CHECK(rep.median_rank == doctest::Approx(pool / 2.0).epsilon(0.02));
}

TEST_CASE("a random model ranks like chance on an unrelated pool") {
  SyntheticConfig sc;
  sc.num_stories = 300;
  sc.dim = 16;
  const auto corpus = make_linear_map_corpus(sc);
  const auto params = init_params(ModelConfig::resmlp(4, 16), 3);
  const auto pool = slm::testing::random_matrix(20000, 16, 8);
  std::vector<std::vector<SentenceId>> contexts;
  for (const auto& story : corpus.index.stories) contexts.emplace_back(story.begin(), story.begin() + 4);
  const auto h = predict(params, ModelConfig::resmlp(4, 16), corpus.embeddings, contexts);
  // Give every query a pool row chosen independently of its context.
  std::vector<SentenceId> truths;
  for (std::size_t q = 0; q < contexts.size(); ++q) truths.push_back(q * 61 % 20000);
  const auto rep = rank_predictions(h, truths, pool, iota_ids(20000), {10}, 2);
  const double sd = 20000.0 / std::sqrt(12.0 * contexts.size());
  CHECK(std::abs(rep.mean_rank - 10000.0) < 5 * sd);
}

TEST_CASE("eval_ranking reports each query's true rank") {
  SyntheticConfig sc;
  sc.num_stories = 50;
  sc.dim = 8;
  const auto corpus = make_linear_map_corpus(sc);
  const ModelConfig c = ModelConfig::mlp(4, 8);
  const auto params = init_params(c, 1);
  const auto queries = make_queries(corpus.index);
  const auto pool = candidate_pool(corpus.index, 4);
  const auto rep = eval_ranking(params, c, corpus.embeddings, queries, pool, {1, 10}, 3);
  REQUIRE(rep.queries.size() == 50);
  for (std::size_t q = 0; q < queries.size(); q += 7) {
    const auto h = forward(params, c,
                           std::vector<std::span<const float>>{
                               corpus.embeddings.row(queries[q].context[0]), corpus.embeddings.row(queries[q].context[1]),
                               corpus.embeddings.row(queries[q].context[2]), corpus.embeddings.row(queries[q].context[3])},
                           Mode::eval, nullptr);
    const auto sorted = slm::testing::naive_sorted(h, corpus.embeddings, pool);
    std::size_t expected = 0;
    while (sorted[expected].id != queries[q].truth) ++expected;
    CHECK(rep.queries[q].rank == expected + 1);
    CHECK(rep.queries[q].top1_id == sorted[0].id);
  }
  const auto text = format_rank_report(rep);
  CHECK(text.find("#summary\tqueries=50") != std::string::npos);
}

TEST_CASE("cloze accuracy") {
  SyntheticConfig sc;
  sc.num_stories = 1000;
  sc.dim = 16;
  const auto corpus = make_linear_map_corpus(sc);
  Rng rng(2);
  const auto set = make_random_cloze(corpus.index, candidate_pool(corpus.index, 4), rng);
  const ModelConfig c = ModelConfig::resmlp(4, 16);
  const auto acc = eval_cloze(init_params(c, 9), c, corpus.embeddings, set);
  CHECK(acc.total == 1000);
  CHECK(std::abs(acc.accuracy - 0.5) < 5 * std::sqrt(0.25 / 1000));

  // The decision by raw dot product agrees with the two-way softmax.
  const auto h = predict(init_params(c, 9), c, corpus.embeddings,
                         std::vector<std::vector<SentenceId>>{set.items[0].context});
  const std::span<const float> hrow(h.data(), 16);
  const std::vector<SentenceId> pair = {set.items[0].ending_a, set.items[0].ending_b};
  const auto s = score_candidates(hrow, corpus.embeddings, pair);
  CHECK((s.log_probs[0] >= s.log_probs[1]) ==
        (dot(corpus.embeddings.row(pair[0]), hrow) >= dot(corpus.embeddings.row(pair[1]), hrow)));
}

TEST_CASE("cloze accuracy on a constructed separable case") {
  // Identity weights: h is an increasing function of the context's
  // coordinates, so the ending sorted the same way wins.
  ModelConfig c = ModelConfig::mlp(1, 4);
  c.num_layers = 1;
  c.hidden_dim = 4;
  ModelParams p = init_params(c, 0);
  for (auto& layer : p.layers) {
    layer.weight.setIdentity();
    layer.bias.setZero();
  }
  const EmbeddingMatrix m(3, 4, {1, 2, 3, 4, 1, 2, 3, 4, 4, 3, 2, 1});
  ClozeEvalSet set;
  set.items.push_back({{0}, 1, 2, ClozeLabel::a});
  set.items.push_back({{0}, 2, 1, ClozeLabel::b});
  const auto r = eval_cloze(p, c, m, set);
  CHECK(r.correct == 2);
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("sweep records failing cells and keeps going") {
  SyntheticConfig sc;
  sc.num_stories = 80;
  sc.dim = 8;
  const auto corpus = make_linear_map_corpus(sc);
  ModelConfig c = ModelConfig::mlp(4, 8);
  c.hidden_dim = 16;
  c.num_layers = 1;
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_steps = 20;
  tc.eval_every = 10;
  const auto queries = make_queries(corpus.index);
  const auto pool = candidate_pool(corpus.index, 4);
  // 80 stories, 5 sentences each: 1000 distractors cannot be drawn.
  const std::vector<std::size_t> grid = {3, 1000};
  const auto rows = sweep_distractors(corpus.embeddings, corpus.index, c, tc, grid, queries, pool);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].ok);
  CHECK(rows[0].median_rank >= 1.0);
  CHECK_FALSE(rows[1].ok);
  CHECK_FALSE(rows[1].error.empty());
  const auto table = format_sweep_table(rows);
  CHECK(table.rfind("N\tmedian_rank", 0) == 0);
  CHECK(table.find("nan") != std::string::npos);
}
