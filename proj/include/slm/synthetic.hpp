#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "slm/embedding_store.hpp"
#include "slm/rng.hpp"

namespace slm {

/// Stories whose next-sentence embedding is a fixed random linear map of the
/// concatenated context plus Gaussian noise. Context (and any trailing)
/// sentences are standard normal; the map has N(0, 1 / (context_len * dim))
/// entries; the noise has norm ~ noise_ratio * |signal| per sentence.
struct SyntheticConfig {
  std::size_t num_stories = 5000;
  std::size_t dim = 64;
  std::size_t sentences_per_story = 5;
  std::size_t context_len = 4;
  double noise_ratio = 0.1;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  EmbeddingMatrix embeddings;
  CorpusIndex index;
};

/// Sentence at (story s, position p) gets id s * sentences_per_story + p.
SyntheticCorpus make_linear_map_corpus(const SyntheticConfig& config);

/// First stories for training, the last `num_heldout` held out.
std::pair<CorpusIndex, CorpusIndex> split_corpus(const CorpusIndex& index, std::size_t num_heldout);

/// One binary item per story: the true next sentence against a random other
/// id from `wrong_pool`, with the true ending's slot chosen at random.
ClozeEvalSet make_random_cloze(const CorpusIndex& index, std::span<const SentenceId> wrong_pool,
                               Rng& rng);

}  // namespace slm
