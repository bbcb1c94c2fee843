#include "slm/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "slm/errors.hpp"
#include "slm/evaluation.hpp"
#include "slm/scoring.hpp"

namespace slm {

std::string to_string(DistractorMode mode) {
  return mode == DistractorMode::static_set ? "static" : "dynamic";
}

DistractorMode parse_distractor_mode(const std::string& name) {
  if (name == "static") return DistractorMode::static_set;
  if (name == "dynamic") return DistractorMode::dynamic;
  throw ValidationError("unknown distractor_mode '" + name + "' (expected static or dynamic)");
}

void TrainConfig::validate() const {
  if (num_distractors == 0) throw ValidationError("num_distractors must be positive");
  if (!(cs_loss_weight >= 0.0) || !std::isfinite(cs_loss_weight)) {
    throw ValidationError("cs_loss_weight must be a non-negative real");
  }
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ValidationError("adam_beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ValidationError("adam_beta2 must be in (0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (max_steps == 0) throw ValidationError("max_steps must be positive");
  if (eval_every == 0) throw ValidationError("eval_every must be positive");
  if (patience == 0) throw ValidationError("patience must be positive");
}

std::vector<std::string> train_config_keys() {
  return {"num_distractors", "distractor_mode", "cs_loss_weight", "learning_rate",
          "adam_beta1",      "adam_beta2",      "adam_eps",       "batch_size",
          "max_steps",       "seed",            "eval_every",     "patience"};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value, const std::string& where) {
  N v{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end) {
    throw ValidationError(where + "invalid value '" + value + "' for key '" + key + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(std::istream& in, const std::string& source_name) {
  std::map<std::string, std::pair<std::string, std::size_t>> values;
  const auto keys = train_config_keys();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source_name + ":" + std::to_string(line_no) + ": ";
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ValidationError(where + "unknown config key '" + key + "'");
    }
    if (values.count(key)) throw ValidationError(where + "duplicate config key '" + key + "'");
    values[key] = {value, line_no};
  }
  TrainConfig c;
  for (const auto& key : keys) {
    if (!values.count(key) && key != "patience") {
      throw ValidationError(source_name + ": missing config key '" + key + "'");
    }
  }
  auto get = [&](const std::string& key) -> std::pair<std::string, std::string> {
    const auto& [value, line_no] = values.at(key);
    return {value, source_name + ":" + std::to_string(line_no) + ": "};
  };
  auto size = [&](const std::string& key) {
    const auto [v, w] = get(key);
    return parse_number<std::size_t>(key, v, w);
  };
  auto real = [&](const std::string& key) {
    const auto [v, w] = get(key);
    return parse_number<double>(key, v, w);
  };
  c.num_distractors = size("num_distractors");
  c.distractor_mode = parse_distractor_mode(get("distractor_mode").first);
  c.cs_loss_weight = real("cs_loss_weight");
  c.learning_rate = real("learning_rate");
  c.adam_beta1 = real("adam_beta1");
  c.adam_beta2 = real("adam_beta2");
  c.adam_eps = real("adam_eps");
  c.batch_size = size("batch_size");
  c.max_steps = size("max_steps");
  {
    const auto [v, w] = get("seed");
    c.seed = parse_number<std::uint64_t>("seed", v, w);
  }
  c.eval_every = size("eval_every");
  if (values.count("patience")) c.patience = size("patience");
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_train_config(in, path);
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "num_distractors = " << c.num_distractors << '\n'
      << "distractor_mode = " << to_string(c.distractor_mode) << '\n'
      << "cs_loss_weight = " << format_double(c.cs_loss_weight) << '\n'
      << "learning_rate = " << format_double(c.learning_rate) << '\n'
      << "adam_beta1 = " << format_double(c.adam_beta1) << '\n'
      << "adam_beta2 = " << format_double(c.adam_beta2) << '\n'
      << "adam_eps = " << format_double(c.adam_eps) << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "max_steps = " << c.max_steps << '\n'
      << "seed = " << c.seed << '\n'
      << "eval_every = " << c.eval_every << '\n'
      << "patience = " << c.patience << '\n';
  return out.str();
}

std::vector<TrainExample> make_examples(const CorpusIndex& index) {
  std::vector<TrainExample> examples;
  examples.reserve(index.stories.size());
  for (const auto& story : index.stories) {
    TrainExample ex;
    ex.context.assign(story.begin(), story.begin() + static_cast<std::ptrdiff_t>(index.context_len));
    ex.truth = story[index.context_len];
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<SentenceId> sample_distractors(Rng& rng, std::span<const SentenceId> pool,
                                           std::size_t n, std::span<const SentenceId> exclude) {
  if (n == 0) return {};
  std::vector<SentenceId> excluded(exclude.begin(), exclude.end());
  std::sort(excluded.begin(), excluded.end());
  auto is_excluded = [&](SentenceId id) {
    return std::binary_search(excluded.begin(), excluded.end(), id);
  };
  std::size_t available = 0;
  for (SentenceId id : pool) available += is_excluded(id) ? 0 : 1;
  if (available < n) {
    throw DomainError("cannot draw " + std::to_string(n) + " distractors from " +
                      std::to_string(available) + " available ids");
  }

  std::vector<SentenceId> out;
  out.reserve(n);
  if (2 * n > available) {
    // Dense draw: partial Fisher-Yates over the filtered pool.
    std::vector<SentenceId> candidates;
    candidates.reserve(available);
    for (SentenceId id : pool) {
      if (!is_excluded(id)) candidates.push_back(id);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.uniform_index(candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
      out.push_back(candidates[i]);
    }
    return out;
  }
  // Sparse draw: sequential rejection of excluded or repeated positions.
  std::unordered_set<std::size_t> taken;
  taken.reserve(2 * n);
  while (out.size() < n) {
    const std::size_t pos = rng.uniform_index(pool.size());
    if (is_excluded(pool[pos]) || !taken.insert(pos).second) continue;
    out.push_back(pool[pos]);
  }
  return out;
}

DistractorSampler::DistractorSampler(std::vector<SentenceId> pool, std::size_t n,
                                     DistractorMode mode, Rng& rng)
    : pool_(std::move(pool)), n_(n), mode_(mode) {
  if (pool_.size() < n_ + 1) {
    throw DomainError("distractor pool of " + std::to_string(pool_.size()) +
                      " ids is too small for " + std::to_string(n_) + " distractors");
  }
  if (mode_ == DistractorMode::static_set) {
    static_set_ = sample_distractors(rng, pool_, n_ + 1, {});
  }
}

std::vector<SentenceId> DistractorSampler::draw(Rng& rng, const TrainExample& example) const {
  std::vector<SentenceId> exclude = example.context;
  exclude.push_back(example.truth);
  if (mode_ == DistractorMode::dynamic) return sample_distractors(rng, pool_, n_, exclude);
  std::vector<SentenceId> out;
  out.reserve(n_);
  for (SentenceId id : static_set_) {
    if (out.size() == n_) break;
    if (std::find(exclude.begin(), exclude.end(), id) == exclude.end()) out.push_back(id);
  }
  if (out.size() < n_) {
    throw DomainError("static distractor set overlaps the example's context");
  }
  return out;
}

double nll_loss(std::span<const float> h, std::span<const float> true_emb,
                std::span<const std::span<const float>> distractor_embs) {
  std::vector<std::span<const float>> candidates;
  candidates.reserve(distractor_embs.size() + 1);
  candidates.push_back(true_emb);
  candidates.insert(candidates.end(), distractor_embs.begin(), distractor_embs.end());
  return candidate_nll<float>(h, candidates);
}

double cs_loss(std::span<const float> h, std::span<const float> true_emb,
               std::span<const std::span<const float>> context_embs) {
  if (context_embs.empty()) throw DomainError("cs_loss needs at least one context sentence");
  return nll_loss(h, true_emb, context_embs);
}

namespace {

void check_model_fits(const ModelConfig& config, const EmbeddingMatrix& embeddings,
                      std::size_t context_len) {
  if (config.input_dim != context_len * embeddings.dim() || config.output_dim != embeddings.dim()) {
    throw DimensionError("model expects input_dim " + std::to_string(config.input_dim) +
                         " / output_dim " + std::to_string(config.output_dim) + " but data has " +
                         std::to_string(context_len) + " x " + std::to_string(embeddings.dim()));
  }
}

// Forward pass plus per-example softmax losses; fills grad_h when asked.
template <typename T>
LossBreakdown batch_losses(std::span<const TrainExample> batch, const ForwardCache<T>& cache,
                           const EmbeddingMatrix& embeddings, double cs_weight,
                           Matrix<T>* grad_h) {
  LossBreakdown out;
  const double scale = 1.0 / static_cast<double>(batch.size());
  const std::size_t dim = embeddings.dim();
  std::vector<std::span<const float>> candidates;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    std::span<const T> h(cache.output.row(static_cast<Eigen::Index>(b)).data(), dim);
    std::span<T> g;
    if (grad_h != nullptr) g = std::span<T>(grad_h->row(static_cast<Eigen::Index>(b)).data(), dim);

    candidates.clear();
    candidates.push_back(embeddings.row(ex.truth));
    for (SentenceId id : ex.distractors) candidates.push_back(embeddings.row(id));
    out.nll += scale * candidate_nll<T>(h, candidates, g, scale);

    if (cs_weight > 0.0) {
      candidates.resize(1);
      for (SentenceId id : ex.context) candidates.push_back(embeddings.row(id));
      out.cs += scale * candidate_nll<T>(h, candidates, g, cs_weight * scale);
    }
  }
  out.total = out.nll + cs_weight * out.cs;
  return out;
}

std::vector<std::vector<SentenceId>> contexts_of(std::span<const TrainExample> batch) {
  std::vector<std::vector<SentenceId>> contexts;
  contexts.reserve(batch.size());
  for (const auto& ex : batch) contexts.push_back(ex.context);
  return contexts;
}

void check_batch(std::span<const TrainExample> batch, const EmbeddingMatrix& embeddings) {
  if (batch.empty()) throw DomainError("empty training batch");
  for (const auto& ex : batch) {
    auto check = [&](SentenceId id) {
      if (id >= embeddings.count()) {
        throw ValidationError("sentence id " + std::to_string(id) + " out of range");
      }
    };
    check(ex.truth);
    for (SentenceId id : ex.context) check(id);
    for (SentenceId id : ex.distractors) {
      check(id);
      if (id == ex.truth) throw ValidationError("true sentence listed among its distractors");
    }
  }
}

}  // namespace

template <typename T>
LossBreakdown total_loss(std::span<const TrainExample> batch, const BasicParams<T>& params,
                         const ModelConfig& config, const EmbeddingMatrix& embeddings,
                         double cs_loss_weight, Mode mode, Rng* dropout_rng,
                         const DropoutMasks<T>* replay_masks) {
  check_batch(batch, embeddings);
  const auto contexts = contexts_of(batch);
  const Matrix<T> x = gather_contexts<T>(embeddings, contexts);
  const auto cache = forward_batch(params, config, x, mode, dropout_rng, replay_masks);
  return batch_losses<T>(batch, cache, embeddings, cs_loss_weight, nullptr);
}

template <typename T>
Gradients<T> backward(std::span<const TrainExample> batch, const BasicParams<T>& params,
                      const ModelConfig& config, const EmbeddingMatrix& embeddings,
                      double cs_loss_weight, Mode mode, Rng* dropout_rng,
                      const DropoutMasks<T>* replay_masks) {
  check_batch(batch, embeddings);
  const auto contexts = contexts_of(batch);
  const Matrix<T> x = gather_contexts<T>(embeddings, contexts);
  auto cache = forward_batch(params, config, x, mode, dropout_rng, replay_masks);
  Matrix<T> grad_h = Matrix<T>::Zero(cache.output.rows(), cache.output.cols());
  Gradients<T> out;
  out.loss = batch_losses<T>(batch, cache, embeddings, cs_loss_weight, &grad_h);
  out.grads = backward_batch(params, config, cache, grad_h);
  out.masks = std::move(cache.masks);
  return out;
}

template LossBreakdown total_loss<float>(std::span<const TrainExample>, const BasicParams<float>&,
                                         const ModelConfig&, const EmbeddingMatrix&, double, Mode,
                                         Rng*, const DropoutMasks<float>*);
template LossBreakdown total_loss<double>(std::span<const TrainExample>,
                                          const BasicParams<double>&, const ModelConfig&,
                                          const EmbeddingMatrix&, double, Mode, Rng*,
                                          const DropoutMasks<double>*);
template Gradients<float> backward<float>(std::span<const TrainExample>, const BasicParams<float>&,
                                          const ModelConfig&, const EmbeddingMatrix&, double,
                                          Mode, Rng*, const DropoutMasks<float>*);
template Gradients<double> backward<double>(std::span<const TrainExample>,
                                            const BasicParams<double>&, const ModelConfig&,
                                            const EmbeddingMatrix&, double, Mode, Rng*,
                                            const DropoutMasks<double>*);

std::string format_log(std::span<const LogRecord> log) {
  std::string out;
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%s\t%.9g\n", r.step, r.loss, r.metric_name.c_str(),
                  r.metric_value);
    out += buf;
  }
  return out;
}

namespace {

struct Validator {
  const EmbeddingMatrix& embeddings;
  const ModelConfig& config;
  const ValidationData* data;

  std::string metric_name() const {
    if (data == nullptr || data->empty()) return "none";
    return data->cloze.items.empty() ? "p_at_10" : "cloze_accuracy";
  }

  double evaluate(const ModelParams& params) const {
    if (data == nullptr || data->empty()) return std::nan("");
    if (!data->cloze.items.empty()) return eval_cloze(params, config, embeddings, data->cloze).accuracy;
    const Matrix<float> h = predict(params, config, embeddings, data->query_contexts);
    return rank_predictions(h, data->query_truths, embeddings, data->pool, {10}).precision_at(10);
  }
};

}  // namespace

TrainResult train(const EmbeddingMatrix& embeddings, const CorpusIndex& corpus,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const ValidationData* validation) {
  model_config.validate();
  train_config.validate();
  corpus.validate(embeddings.count());
  check_model_fits(model_config, embeddings, corpus.context_len);
  if (corpus.stories.empty()) throw DomainError("training corpus has no stories");

  auto examples = make_examples(corpus);
  Rng shuffle_rng(train_config.seed, "shuffle");
  Rng distractor_rng(train_config.seed, "distractors");
  Rng dropout_rng(train_config.seed, "dropout");
  Rng static_rng(train_config.seed, "static_distractors");
  DistractorSampler sampler(candidate_pool(corpus, corpus.context_len),
                            train_config.num_distractors, train_config.distractor_mode,
                            static_rng);

  TrainResult result;
  result.params = init_params(model_config, derive_seed(train_config.seed, "init"));
  result.optimizer = OptimizerState::zeros_like(result.params);
  const AdamSettings adam = train_config.adam();
  const Validator validator{embeddings, model_config, validation};
  const std::string metric_name = validator.metric_name();

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
  };
  shuffle();
  std::size_t cursor = 0;

  ModelParams best_params;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t evals_without_improvement = 0;
  double window_loss = 0.0;
  std::size_t window_steps = 0;

  std::vector<TrainExample> batch;
  std::vector<std::size_t> batch_ids;
  for (std::size_t step = 1; step <= train_config.max_steps; ++step) {
    batch.clear();
    batch_ids.clear();
    while (batch.size() < train_config.batch_size) {
      if (cursor == order.size()) {
        shuffle();
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      TrainExample ex = examples[idx];
      ex.distractors = sampler.draw(distractor_rng, ex);
      batch.push_back(std::move(ex));
      batch_ids.push_back(idx);
    }

    auto g = backward<float>(batch, result.params, model_config, embeddings,
                             train_config.cs_loss_weight, Mode::train, &dropout_rng);
    if (!std::isfinite(g.loss.total)) {
      std::string ids;
      for (std::size_t i = 0; i < batch_ids.size() && i < 16; ++i) {
        ids += (i ? "," : "") + std::to_string(batch_ids[i]);
      }
      if (batch_ids.size() > 16) ids += ",...";
      throw TrainingError("non-finite loss at step " + std::to_string(step) +
                          " (batch story indices " + ids + ")");
    }
    adam_step(result.params, g.grads, result.optimizer, adam);
    result.step_losses.push_back(g.loss.total);
    result.steps_run = step;
    window_loss += g.loss.total;
    ++window_steps;

    if (step % train_config.eval_every == 0 || step == train_config.max_steps) {
      const double metric = validator.evaluate(result.params);
      result.log.push_back({step, window_loss / static_cast<double>(window_steps), metric_name, metric});
      window_loss = 0.0;
      window_steps = 0;
      if (metric_name != "none") {
        if (metric > best_metric) {
          best_metric = metric;
          best_params = result.params;
          result.best_step = step;
          evals_without_improvement = 0;
        } else if (++evals_without_improvement >= train_config.patience) {
          result.stopped_early = true;
          break;
        }
      }
    }
  }
  if (metric_name != "none" && result.best_step != 0) {
    result.params = std::move(best_params);
  } else {
    result.best_step = result.steps_run;
  }
  return result;
}

}  // namespace slm
