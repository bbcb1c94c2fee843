#include "slm/synthetic.hpp"

#include <cmath>

#include "slm/errors.hpp"

namespace slm {

SyntheticCorpus make_linear_map_corpus(const SyntheticConfig& config) {
  if (config.dim == 0 || config.num_stories == 0) throw DomainError("empty synthetic corpus");
  if (config.context_len == 0 || config.context_len >= config.sentences_per_story) {
    throw DomainError("context_len must be in [1, sentences_per_story)");
  }
  const std::size_t k = config.sentences_per_story;
  const std::size_t t = config.context_len;
  const std::size_t dim = config.dim;
  const std::size_t in = t * dim;

  Rng map_rng(config.seed, "synthetic_map");
  std::vector<double> map(dim * in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : map) w = map_rng.normal() * scale;

  Rng rng(config.seed, "synthetic_sentences");
  SyntheticCorpus out{EmbeddingMatrix(config.num_stories * k, dim), {}};
  out.index.sentences_per_story = k;
  out.index.context_len = t;
  std::vector<double> context(in);
  std::vector<double> signal(dim);
  for (std::size_t s = 0; s < config.num_stories; ++s) {
    std::vector<SentenceId> story(k);
    for (std::size_t p = 0; p < k; ++p) story[p] = s * k + p;
    for (std::size_t p = 0; p < k; ++p) {
      if (p == t) continue;
      auto row = out.embeddings.row(story[p]);
      for (auto& v : row) v = static_cast<float>(rng.normal());
    }
    for (std::size_t p = 0; p < t; ++p) {
      const auto row = out.embeddings.row(story[p]);
      for (std::size_t c = 0; c < dim; ++c) context[p * dim + c] = row[c];
    }
    double norm2 = 0.0;
    for (std::size_t r = 0; r < dim; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += map[r * in + c] * context[c];
      signal[r] = acc;
      norm2 += acc * acc;
    }
    const double sigma = config.noise_ratio * std::sqrt(norm2 / static_cast<double>(dim));
    auto truth = out.embeddings.row(story[t]);
    for (std::size_t r = 0; r < dim; ++r) {
      truth[r] = static_cast<float>(signal[r] + sigma * rng.normal());
    }
    out.index.stories.push_back(std::move(story));
  }
  return out;
}

std::pair<CorpusIndex, CorpusIndex> split_corpus(const CorpusIndex& index, std::size_t num_heldout) {
  if (num_heldout > index.stories.size()) throw DomainError("held-out split larger than corpus");
  CorpusIndex train = index;
  CorpusIndex heldout = index;
  const auto cut = static_cast<std::ptrdiff_t>(index.stories.size() - num_heldout);
  train.stories.assign(index.stories.begin(), index.stories.begin() + cut);
  heldout.stories.assign(index.stories.begin() + cut, index.stories.end());
  return {std::move(train), std::move(heldout)};
}

ClozeEvalSet make_random_cloze(const CorpusIndex& index, std::span<const SentenceId> wrong_pool,
                               Rng& rng) {
  if (wrong_pool.size() < 2) throw DomainError("cloze distractor pool needs at least two ids");
  ClozeEvalSet set;
  for (const auto& story : index.stories) {
    ClozeItem item;
    item.context.assign(story.begin(), story.begin() + static_cast<std::ptrdiff_t>(index.context_len));
    const SentenceId truth = story[index.context_len];
    SentenceId wrong = truth;
    while (wrong == truth) wrong = wrong_pool[rng.uniform_index(wrong_pool.size())];
    if (rng.uniform_index(2) == 0) {
      item.ending_a = truth;
      item.ending_b = wrong;
      item.label = ClozeLabel::a;
    } else {
      item.ending_a = wrong;
      item.ending_b = truth;
      item.label = ClozeLabel::b;
    }
    set.items.push_back(std::move(item));
  }
  return set;
}

}  // namespace slm
