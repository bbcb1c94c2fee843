#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gradient_check.hpp"
#include "oracles.hpp"
#include "slm/errors.hpp"
#include "slm/evaluation.hpp"
#include "slm/synthetic.hpp"
#include "slm/training.hpp"

using namespace slm;

namespace {

std::vector<std::span<const float>> rows(const EmbeddingMatrix& m, std::vector<SentenceId> ids) {
  std::vector<std::span<const float>> out;
  for (auto id : ids) out.push_back(m.row(id));
  return out;
}

long double oracle_nll(std::span<const float> h, std::span<const float> truth,
                       const std::vector<std::span<const float>>& others) {
  std::vector<long double> logits = {slm::testing::dot_ld(truth, h)};
  for (auto e : others) logits.push_back(slm::testing::dot_ld(e, h));
  return -slm::testing::enumerate_log_softmax(logits)[0];
}

std::string valid_config_text() {
  return "num_distractors = 7\n"
         "distractor_mode = static\n"
         "cs_loss_weight = 0.5\n"
         "learning_rate = 0.001\n"
         "adam_beta1 = 0.9\n"
         "adam_beta2 = 0.999\n"
         "adam_eps = 1e-8\n"
         "batch_size = 16\n"
         "max_steps = 100\n"
         "seed = 3\n"
         "eval_every = 10\n";
}

}  // namespace

TEST_CASE("sample_distractors edge cases") {
  Rng rng(1);
  const std::vector<SentenceId> pool = {1, 2, 3, 4, 5};
  CHECK(sample_distractors(rng, pool, 0, {}).empty());
  const std::vector<SentenceId> exclude = {3};
  auto four = sample_distractors(rng, pool, 4, exclude);
  std::sort(four.begin(), four.end());
  CHECK(four == std::vector<SentenceId>{1, 2, 4, 5});
  CHECK_THROWS_AS(sample_distractors(rng, pool, 5, exclude), DomainError);
}

TEST_CASE("sample_distractors draws distinct ids and is deterministic") {
  std::vector<SentenceId> pool(1000);
  std::iota(pool.begin(), pool.end(), 0);
  const std::vector<SentenceId> exclude = {5, 6, 7};
  for (std::size_t n : {10, 400, 990, 997}) {
    Rng a(9), b(9);
    const auto x = sample_distractors(a, pool, n, exclude);
    const auto y = sample_distractors(b, pool, n, exclude);
    CHECK(x == y);
    const std::set<SentenceId> unique(x.begin(), x.end());
    CHECK(unique.size() == n);
    for (auto id : exclude) CHECK(unique.count(id) == 0);
  }
}

TEST_CASE("single draws are uniform over the pool") {
  std::vector<SentenceId> pool(10);
  std::iota(pool.begin(), pool.end(), 100);
  Rng rng(77);
  std::vector<int> freq(10, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++freq[sample_distractors(rng, pool, 1, {})[0] - 100];
  const double expected = draws / 10.0;
  const double sigma = std::sqrt(draws * 0.1 * 0.9);
  double chi2 = 0.0;
  for (int f : freq) {
    CHECK(std::abs(f - expected) < 5 * sigma);
    chi2 += (f - expected) * (f - expected) / expected;
  }
  // 9 degrees of freedom; 33.7 is the 0.9999 quantile.
  CHECK(chi2 < 33.7);
}

TEST_CASE("static sets repeat, dynamic sets vary") {
  std::vector<SentenceId> pool(10000);
  std::iota(pool.begin(), pool.end(), 0);
  TrainExample ex;
  ex.context = {20000, 20001};
  ex.truth = 20002;
  Rng rng(4);
  const DistractorSampler fixed(pool, 100, DistractorMode::static_set, rng);
  const DistractorSampler fresh(pool, 100, DistractorMode::dynamic, rng);
  const auto first_static = fixed.draw(rng, ex);
  const auto first_dynamic = fresh.draw(rng, ex);
  CHECK(first_static.size() == 100);
  std::set<std::vector<SentenceId>> dynamic_sets = {first_dynamic};
  for (int batch = 0; batch < 100; ++batch) {
    CHECK(fixed.draw(rng, ex) == first_static);
    dynamic_sets.insert(fresh.draw(rng, ex));
  }
  CHECK(dynamic_sets.size() == 101);

  // A static set containing an example's own truth hands out the spare id.
  TrainExample inside;
  inside.context = {20000};
  inside.truth = fixed.static_set()[0];
  const auto d = fixed.draw(rng, inside);
  CHECK(d.size() == 100);
  CHECK(std::find(d.begin(), d.end(), inside.truth) == d.end());
}

TEST_CASE("nll_loss examples") {
  const std::vector<float> h = {1, 0};
  const std::vector<float> truth = {1, 0};
  const std::vector<float> d1 = {0, 1}, d2 = {-1, 0};
  CHECK(nll_loss(h, truth, {}) == 0.0);
  const std::vector<std::span<const float>> ds = {d1, d2};
  CHECK(nll_loss(h, truth, ds) == doctest::Approx(0.4076059644443804).epsilon(1e-12));
  const std::vector<float> zero = {0, 0};
  const std::vector<std::span<const float>> four = {d1, d2, d1, truth};
  CHECK(nll_loss(zero, truth, four) == doctest::Approx(std::log(5.0)));
}

TEST_CASE("cs_loss examples") {
  const std::vector<float> h = {1, 0};
  const std::vector<float> truth = {1, 0};
  const std::vector<float> orth = {0, 1};
  const std::vector<std::span<const float>> ctx = {orth};
  CHECK(cs_loss(h, truth, ctx) < std::log(2.0));
  const std::vector<float> zero = {0, 0};
  const std::vector<std::span<const float>> ctx3 = {orth, truth, orth};
  CHECK(cs_loss(zero, truth, ctx3) == doctest::Approx(std::log(4.0)));

  const std::vector<float> h3 = {0.5f, -1.0f, 0.25f};
  const std::vector<float> t3 = {1.0f, -0.5f, 0.0f};
  const std::vector<float> c1 = {0.2f, 0.1f, -0.3f}, c2 = {-1.0f, 0.4f, 0.6f},
                           c3 = {0.0f, -0.8f, 0.9f}, c4 = {0.7f, 0.7f, 0.7f};
  const std::vector<std::span<const float>> four = {c1, c2, c3, c4};
  // Enumeration of the 5-way softmax, computed offline.
  CHECK(std::abs(cs_loss(h3, t3, four) - 1.0470402905264327) < 1e-6);
  CHECK(std::abs(cs_loss(h3, t3, four) - static_cast<double>(oracle_nll(h3, t3, four))) < 1e-9);
}

TEST_CASE("nll_loss matches enumeration and obeys candidate-set properties") {
  std::mt19937_64 gen(8);
  for (std::size_t n : {2, 5, 100}) {
    for (int trial = 0; trial < 30; ++trial) {
      const auto m = slm::testing::random_matrix(n + 1, 6, gen(), 2.0);
      const std::vector<float> h(m.row(n).begin(), m.row(n).end());
      std::vector<SentenceId> ids(n - 1);
      std::iota(ids.begin(), ids.end(), 1);
      auto ds = rows(m, ids);
      const double loss = nll_loss(h, m.row(0), ds);
      const long double oracle = oracle_nll(h, m.row(0), ds);
      CHECK(std::abs(loss - static_cast<double>(oracle)) <= 1e-6 * std::max(1.0L, std::abs(oracle)));

      std::shuffle(ds.begin(), ds.end(), gen);
      CHECK(std::abs(nll_loss(h, m.row(0), ds) - loss) < 1e-12);

      ds.push_back(m.row(n));
      CHECK(nll_loss(h, m.row(0), ds) >= loss);
    }
  }
}

TEST_CASE("total_loss combines the two terms") {
  const auto m = slm::testing::random_matrix(40, 3, 2);
  ModelConfig c;
  c.arch = Arch::resmlp;
  c.input_dim = 6;
  c.hidden_dim = 5;
  c.output_dim = 3;
  const auto p = init_params(c, 1);
  std::vector<TrainExample> batch;
  for (SentenceId b = 0; b < 4; ++b) {
    batch.push_back({{b * 10, b * 10 + 1}, b * 10 + 2, {b * 10 + 3, b * 10 + 4, b * 10 + 5}});
  }
  const auto none = total_loss<float>(batch, p, c, m, 0.0);
  const auto one = total_loss<float>(batch, p, c, m, 1.0);
  CHECK(none.total == none.nll);
  CHECK(one.total == one.nll + one.cs);
  CHECK(one.nll == none.nll);

  // The context-sentence term never looks at the sampled distractors.
  auto other = batch;
  for (auto& ex : other) ex.distractors = {ex.truth + 5, ex.truth + 6};
  CHECK(total_loss<float>(other, p, c, m, 1.0).cs == one.cs);
}

TEST_CASE("total_loss stays finite at large logits") {
  const auto m = slm::testing::random_matrix(30, 4, 12, 30.0);
  ModelConfig c;
  c.arch = Arch::mlp;
  c.input_dim = 8;
  c.hidden_dim = 6;
  c.output_dim = 4;
  c.num_layers = 1;
  auto p = init_params(c, 3);
  p.output_norm.gain.setConstant(3.0f);
  std::vector<TrainExample> batch = {{{0, 1}, 2, {3, 4, 5, 6, 7, 8}}};
  const auto l = total_loss<float>(batch, p, c, m, 1.0);
  CHECK(std::isfinite(l.total));

  const auto h = predict(p, c, m, std::vector<std::vector<SentenceId>>{{0, 1}});
  const std::span<const float> hrow(h.data(), 4);
  double max_logit = 0.0;
  for (SentenceId id = 2; id <= 8; ++id) max_logit = std::max(max_logit, std::abs(dot(m.row(id), hrow)));
  CHECK(max_logit > 100.0);
  const long double oracle =
      oracle_nll(hrow, m.row(2), rows(m, {3, 4, 5, 6, 7, 8})) + oracle_nll(hrow, m.row(2), rows(m, {0, 1}));
  CHECK(std::abs(l.total - static_cast<double>(oracle)) <= 1e-6 * std::max(1.0L, std::abs(oracle)));
}

TEST_CASE("identical candidates give zero gradient w.r.t. h") {
  std::vector<float> data(6 * 3);
  for (std::size_t i = 0; i < 6; ++i) {
    data[i * 3] = 0.3f;
    data[i * 3 + 1] = -1.1f;
    data[i * 3 + 2] = 2.0f;
  }
  const EmbeddingMatrix same(6, 3, data);
  const std::vector<std::span<const float>> candidates = {same.row(0), same.row(1), same.row(2), same.row(3)};
  const std::vector<float> h = {0.7f, 0.1f, -0.4f};
  std::vector<float> grad(3, 0.0f);
  candidate_nll<float>(h, candidates, grad);
  CHECK(grad == std::vector<float>{0.0f, 0.0f, 0.0f});
}

TEST_CASE("backward is deterministic for a fixed dropout mask") {
  const auto m = slm::testing::random_matrix(40, 3, 4);
  ModelConfig c;
  c.arch = Arch::resmlp;
  c.input_dim = 6;
  c.hidden_dim = 8;
  c.output_dim = 3;
  const auto p = init_params(c, 2);
  std::vector<TrainExample> batch = {{{0, 1}, 2, {3, 4, 5}}, {{10, 11}, 12, {13, 14, 15}}};
  Rng rng(3);
  const auto first = backward<float>(batch, p, c, m, 1.0, Mode::train, &rng);
  const auto again = backward<float>(batch, p, c, m, 1.0, Mode::train, nullptr, &first.masks);
  const auto a = tensor_views(first.grads);
  const auto b = tensor_views(again.grads);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::memcmp(a[k].data(), b[k].data(), a[k].size_bytes()) == 0);
  }
}

TEST_CASE("analytic gradients match central differences on tiny models") {
  for (const auto& gc : {slm::testing::GradCheckCase{Arch::mlp, 2, 1.0, 7},
                         slm::testing::GradCheckCase{Arch::resmlp, 1, 0.0, 8},
                         slm::testing::GradCheckCase{Arch::resmlp, 2, 1.0, 9}}) {
    const auto r = slm::testing::check_gradients(gc);
    CAPTURE(r.worst_tensor);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 50);
  }
}

TEST_CASE("adam_step examples") {
  ModelConfig c;
  c.arch = Arch::mlp;
  c.input_dim = 1;
  c.hidden_dim = 3;
  c.output_dim = 1;
  c.num_layers = 1;
  ModelParams p = init_params(c, 0);
  const ModelParams before = p;
  OptimizerState state = OptimizerState::zeros_like(p);
  const AdamSettings settings{0.1, 0.9, 0.999, 1e-8};

  adam_step(p, p.zeros_like(), state, settings);
  CHECK(state.step == 1);
  for (std::size_t k = 0; k < tensor_views(p).size(); ++k) {
    CHECK(std::memcmp(tensor_views(p)[k].data(), tensor_views(before)[k].data(),
                      tensor_views(p)[k].size_bytes()) == 0);
  }

  // One step from a zero state on the 3-entry hidden bias: g = (0.5, -2, 0)
  // gives m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps).
  ModelParams q = init_params(c, 0);
  q.layers[0].bias << 1, 1, 1;
  ModelParams g = q.zeros_like();
  g.layers[0].bias << 0.5f, -2.0f, 0.0f;
  OptimizerState s1 = OptimizerState::zeros_like(q);
  OptimizerState s2 = OptimizerState::zeros_like(q);
  ModelParams q2 = q;
  adam_step(q, g, s1, settings);
  CHECK(q.layers[0].bias(0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(q.layers[0].bias(1) == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(q.layers[0].bias(2) == 1.0f);

  adam_step(q2, g, s2, settings);
  const auto v1 = tensor_views(s1.second_moment);
  const auto v2 = tensor_views(s2.second_moment);
  for (std::size_t k = 0; k < v1.size(); ++k) CHECK(std::memcmp(v1[k].data(), v2[k].data(), v1[k].size_bytes()) == 0);
  CHECK(std::memcmp(q.layers[0].bias.data(), q2.layers[0].bias.data(), 3 * sizeof(float)) == 0);
}

TEST_CASE("train config parsing") {
  std::istringstream ok(valid_config_text());
  const TrainConfig c = parse_train_config(ok, "cfg");
  CHECK(c.num_distractors == 7);
  CHECK(c.distractor_mode == DistractorMode::static_set);
  CHECK(c.cs_loss_weight == 0.5);
  CHECK(c.patience == 10);

  std::istringstream round(format_train_config(c));
  const TrainConfig back = parse_train_config(round, "round");
  CHECK(format_train_config(back) == format_train_config(c));

  std::string missing = valid_config_text();
  missing.erase(missing.find("batch_size"), std::string("batch_size = 16\n").size());
  std::istringstream m(missing);
  try {
    parse_train_config(m, "cfg");
    FAIL("expected missing key error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("batch_size") != std::string::npos);
  }

  std::istringstream unknown(valid_config_text() + "momentum = 0.9\n");
  CHECK_THROWS_AS(parse_train_config(unknown, "cfg"), ValidationError);
  std::istringstream bad(valid_config_text() + "patience = ten\n");
  CHECK_THROWS_AS(parse_train_config(bad, "cfg"), ValidationError);
}

TEST_CASE("training on the synthetic corpus reduces loss and is reproducible") {
  SyntheticConfig sc;
  sc.num_stories = 600;
  sc.dim = 16;
  sc.seed = 5;
  const auto corpus = make_linear_map_corpus(sc);
  ModelConfig mc = ModelConfig::resmlp(4, 16);
  mc.hidden_dim = 64;
  mc.dropout_rate = 0.1f;
  TrainConfig tc;
  tc.num_distractors = 32;
  tc.batch_size = 16;
  tc.max_steps = 200;
  tc.learning_rate = 1e-3;
  tc.eval_every = 50;
  tc.seed = 11;

  const auto a = train(corpus.embeddings, corpus.index, mc, tc);
  REQUIRE(a.step_losses.size() == 200);
  const double first = std::accumulate(a.step_losses.begin(), a.step_losses.begin() + 10, 0.0) / 10;
  const double last = std::accumulate(a.step_losses.end() - 10, a.step_losses.end(), 0.0) / 10;
  CHECK(last < first);
  CHECK(a.log.size() == 4);
  CHECK(a.log.front().metric_name == "none");

  const auto b = train(corpus.embeddings, corpus.index, mc, tc);
  CHECK(std::memcmp(a.step_losses.data(), b.step_losses.data(), a.step_losses.size() * sizeof(double)) == 0);
  CHECK(format_log(a.log) == format_log(b.log));
}

TEST_CASE("a single distractor still learns pairwise discrimination") {
  SyntheticConfig sc;
  sc.num_stories = 800;
  sc.dim = 16;
  sc.seed = 6;
  const auto corpus = make_linear_map_corpus(sc);
  const auto [train_idx, held] = split_corpus(corpus.index, 200);
  ModelConfig mc = ModelConfig::resmlp(4, 16);
  mc.hidden_dim = 64;
  mc.dropout_rate = 0.1f;
  TrainConfig tc;
  tc.num_distractors = 1;
  tc.batch_size = 16;
  tc.max_steps = 300;
  tc.learning_rate = 1e-3;
  tc.eval_every = 100;
  tc.cs_loss_weight = 0.0;
  const auto result = train(corpus.embeddings, train_idx, mc, tc);
  Rng rng(1);
  const auto pool = candidate_pool(corpus.index, 4);
  const auto cloze = make_random_cloze(held, pool, rng);
  const auto acc = eval_cloze(result.params, mc, corpus.embeddings, cloze);
  CHECK(acc.accuracy > 0.5);
}

TEST_CASE("validation drives early stopping and best-checkpoint selection") {
  SyntheticConfig sc;
  sc.num_stories = 400;
  sc.dim = 8;
  sc.seed = 2;
  const auto corpus = make_linear_map_corpus(sc);
  const auto [train_idx, held] = split_corpus(corpus.index, 100);
  ModelConfig mc = ModelConfig::mlp(4, 8);
  mc.hidden_dim = 16;
  mc.num_layers = 1;
  TrainConfig tc;
  tc.num_distractors = 8;
  tc.batch_size = 8;
  tc.max_steps = 2000;
  tc.eval_every = 10;
  tc.patience = 2;
  tc.learning_rate = 0.05;  // large enough to plateau quickly
  Rng rng(3);
  ValidationData vd;
  vd.cloze = make_random_cloze(held, candidate_pool(corpus.index, 4), rng);
  const auto r = train(corpus.embeddings, train_idx, mc, tc, &vd);
  CHECK(r.log.front().metric_name == "cloze_accuracy");
  CHECK(r.best_step > 0);
  double best = 0.0;
  for (const auto& rec : r.log) best = std::max(best, rec.metric_value);
  CHECK(eval_cloze(r.params, mc, corpus.embeddings, vd.cloze).accuracy == best);
  if (r.stopped_early) CHECK(r.steps_run < tc.max_steps);
}

TEST_CASE("divergence aborts with the failing step") {
  SyntheticConfig sc;
  sc.num_stories = 50;
  sc.dim = 4;
  const auto corpus = make_linear_map_corpus(sc);
  ModelConfig mc = ModelConfig::mlp(4, 4);
  mc.hidden_dim = 8;
  mc.num_layers = 1;
  TrainConfig tc;
  tc.num_distractors = 4;
  tc.batch_size = 4;
  tc.max_steps = 50;
  tc.learning_rate = 1e38;
  try {
    train(corpus.embeddings, corpus.index, mc, tc);
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
