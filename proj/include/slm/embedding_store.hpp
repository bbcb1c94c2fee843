#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace slm {

/// Global sentence id: a row index into the embedding matrix.
using SentenceId = std::uint64_t;

/// Dense row-major matrix of sentence embeddings, one row per sentence.
///
/// On disk ("SLMB", version 1, all little-endian):
///   magic "SLMB" | version u32 | count u64 | dim u32 | count*dim f32
class EmbeddingMatrix {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 20;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t count, std::size_t dim);
  EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> data);

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }

  std::span<const float> row(SentenceId id) const {
    return {data_.data() + id * dim_, dim_};
  }
  std::span<float> row(SentenceId id) { return {data_.data() + id * dim_, dim_}; }
  std::span<const float> data() const { return data_; }

  /// Throws ValidationError on dim == 0 or any non-finite entry (naming the row).
  void validate() const;

  /// Bitwise comparison of shape and payload.
  bool bitwise_equal(const EmbeddingMatrix& other) const;

 private:
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

void write_embeddings(const EmbeddingMatrix& matrix, const std::string& path);
EmbeddingMatrix read_embeddings(const std::string& path);
EmbeddingMatrix read_embeddings(std::istream& in, const std::string& source_name);

/// True when the file starts with the "SLMB" magic.
bool has_embedding_magic(const std::string& path);

/// Story structure over global sentence ids.
///
/// Text form: header line "sentences_per_story=<k>\tcontext_len=<t>" then one
/// story per line as tab-separated ids.
struct CorpusIndex {
  std::size_t sentences_per_story = 5;
  std::size_t context_len = 4;
  std::vector<std::vector<SentenceId>> stories;

  std::size_t size() const { return stories.size(); }

  /// Checks story lengths, id range and uniqueness. embedding_count of 0
  /// skips the range check.
  void validate(std::size_t embedding_count) const;
};

CorpusIndex parse_corpus_index(std::istream& in, const std::string& source_name);
CorpusIndex read_corpus_index(const std::string& path);
void write_corpus_index(const CorpusIndex& index, const std::string& path);

/// Range and uniqueness checks for an index read from `source_name`, with
/// errors naming the offending line.
void validate_index_ids(const CorpusIndex& index, std::size_t embedding_count,
                        const std::string& source_name);

struct Corpus {
  EmbeddingMatrix embeddings;
  CorpusIndex index;
};

/// Loads both files and cross-validates the index against the matrix.
Corpus load_corpus(const std::string& embeddings_path, const std::string& index_path);

/// Ids of every sentence at `position` in its story, in story order.
std::vector<SentenceId> candidate_pool(const CorpusIndex& index, std::size_t position);

/// Concatenated pools of several indices (e.g. train fifth sentences plus
/// held-out true endings). Throws ValidationError if an id repeats.
std::vector<SentenceId> candidate_pool(std::span<const CorpusIndex> indices,
                                       std::size_t position);

enum class ClozeLabel { a, b };

struct ClozeItem {
  std::vector<SentenceId> context;
  SentenceId ending_a = 0;
  SentenceId ending_b = 0;
  ClozeLabel label = ClozeLabel::a;

  SentenceId correct() const { return label == ClozeLabel::a ? ending_a : ending_b; }
};

/// Binary-choice evaluation set. Text form: one item per line, the context
/// ids, ending_a, ending_b and a label "a"|"b", tab-separated.
struct ClozeEvalSet {
  std::vector<ClozeItem> items;

  std::size_t context_len() const { return items.empty() ? 0 : items.front().context.size(); }
  void validate(std::size_t embedding_count) const;
};

ClozeEvalSet parse_cloze_set(std::istream& in, const std::string& source_name);
ClozeEvalSet read_cloze_set(const std::string& path);
void write_cloze_set(const ClozeEvalSet& set, const std::string& path);

/// Optional sidecar with one sentence of text per embedding row.
std::vector<std::string> read_sentence_text(const std::string& path);

}  // namespace slm
