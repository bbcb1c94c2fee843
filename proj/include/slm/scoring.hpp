#pragma once

#include <span>
#include <vector>

#include "slm/embedding_store.hpp"

namespace slm {

/// Dot product with sequential double accumulation. Both operands are exact
/// in double, so logits are reproducible bit-for-bit for a given h.
template <typename T>
double dot(std::span<const float> e, std::span<const T> h) {
  double acc = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    acc += static_cast<double>(e[i]) * static_cast<double>(h[i]);
  }
  return acc;
}

/// Max-shifted log-sum-exp. Empty input is a DomainError.
double log_sum_exp(std::span<const double> values);

/// Softmax of h against a candidate set.
struct ScoreResult {
  std::vector<SentenceId> ids;
  std::vector<double> logits;     // e_i . h
  double log_partition = 0.0;     // log sum_j exp(e_j . h)
  std::vector<double> log_probs;  // logits - log_partition
};

ScoreResult score_candidates(std::span<const float> h, const EmbeddingMatrix& pool,
                             std::span<const SentenceId> ids);

/// -log softmax probability of candidates[0] among all candidates.
/// If grad_h is non-empty, adds grad_scale * dLoss/dh to it.
template <typename T>
double candidate_nll(std::span<const T> h, std::span<const std::span<const float>> candidates,
                     std::span<T> grad_h = {}, double grad_scale = 1.0);

}  // namespace slm
