#include "slm/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "slm/errors.hpp"

namespace slm {

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw DomainError("log-sum-exp over an empty set");
  const double m = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

ScoreResult score_candidates(std::span<const float> h, const EmbeddingMatrix& pool,
                             std::span<const SentenceId> ids) {
  if (ids.empty()) throw DomainError("score_candidates: empty candidate pool");
  if (h.size() != pool.dim()) throw DimensionError("h width does not match embedding dim");
  ScoreResult r;
  r.ids.assign(ids.begin(), ids.end());
  r.logits.reserve(ids.size());
  for (SentenceId id : ids) {
    if (id >= pool.count()) throw ValidationError("candidate id " + std::to_string(id) + " out of range");
    r.logits.push_back(dot(pool.row(id), h));
  }
  r.log_partition = log_sum_exp(r.logits);
  r.log_probs.reserve(ids.size());
  for (double l : r.logits) r.log_probs.push_back(l - r.log_partition);
  return r;
}

template <typename T>
double candidate_nll(std::span<const T> h, std::span<const std::span<const float>> candidates,
                     std::span<T> grad_h, double grad_scale) {
  if (candidates.empty()) throw DomainError("candidate_nll: empty candidate set");
  std::vector<double> logits;
  logits.reserve(candidates.size());
  for (auto e : candidates) {
    if (e.size() != h.size()) throw DimensionError("candidate width does not match h");
    logits.push_back(dot(e, h));
  }
  const double lse = log_sum_exp(logits);
  const double loss = lse - logits[0];
  if (!grad_h.empty()) {
    // dLoss/dh = sum_i p_i e_i - e_true = sum_{i>0} p_i (e_i - e_true), the
    // second form being exactly zero when every candidate equals the truth.
    std::vector<double> g(h.size(), 0.0);
    const auto truth = candidates[0];
    for (std::size_t i = 1; i < candidates.size(); ++i) {
      const double p = std::exp(logits[i] - lse);
      if (p == 0.0) continue;
      const auto e = candidates[i];
      for (std::size_t c = 0; c < g.size(); ++c) {
        g[c] += p * (static_cast<double>(e[c]) - static_cast<double>(truth[c]));
      }
    }
    for (std::size_t c = 0; c < g.size(); ++c) grad_h[c] += static_cast<T>(grad_scale * g[c]);
  }
  return loss;
}

template double candidate_nll<float>(std::span<const float>, std::span<const std::span<const float>>,
                                     std::span<float>, double);
template double candidate_nll<double>(std::span<const double>,
                                      std::span<const std::span<const float>>, std::span<double>,
                                      double);

}  // namespace slm
