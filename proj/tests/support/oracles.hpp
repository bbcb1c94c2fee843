#pragma once

// Independent reference computations for the unit and acceptance tests.
// Everything here is written with plain loops and long double so it shares
// no code path with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "slm/embedding_store.hpp"

namespace slm::testing {

/// log softmax by direct enumeration: log(exp(l_i) / sum_j exp(l_j)).
inline std::vector<long double> enumerate_log_softmax(const std::vector<long double>& logits) {
  long double z = 0.0L;
  for (long double l : logits) z += std::exp(l);
  std::vector<long double> out;
  for (long double l : logits) out.push_back(std::log(std::exp(l) / z));
  return out;
}

inline long double dot_ld(std::span<const float> a, std::span<const float> b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return acc;
}

struct Ranked {
  SentenceId id;
  double logit;
};

/// Full stable sort of every candidate: higher logit first, ties by id.
inline std::vector<Ranked> naive_sorted(std::span<const float> h, const EmbeddingMatrix& m,
                                        const std::vector<SentenceId>& ids) {
  std::vector<Ranked> all;
  for (SentenceId id : ids) {
    double acc = 0.0;
    const auto row = m.row(id);
    for (std::size_t c = 0; c < h.size(); ++c) acc += static_cast<double>(row[c]) * h[c];
    all.push_back({id, acc});
  }
  std::vector<Ranked> by_id = all;
  std::sort(by_id.begin(), by_id.end(), [](auto& a, auto& b) { return a.id < b.id; });
  std::stable_sort(by_id.begin(), by_id.end(), [](auto& a, auto& b) { return a.logit > b.logit; });
  return by_id;
}

inline EmbeddingMatrix random_matrix(std::size_t count, std::size_t dim, std::uint64_t seed,
                                     double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<float> data(count * dim);
  for (auto& v : data) v = static_cast<float>(nd(gen));
  return EmbeddingMatrix(count, dim, std::move(data));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("slm_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace slm::testing
