#include "slm/embedding_store.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "byte_io.hpp"
#include "slm/errors.hpp"

namespace slm {

namespace detail {

void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

namespace {

constexpr char kMagic[4] = {'S', 'L', 'M', 'B'};

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string where(const std::string& source, std::size_t line_no) {
  return source + ":" + std::to_string(line_no) + ": ";
}

SentenceId parse_id(std::string_view field, const std::string& source, std::size_t line_no) {
  SentenceId v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw ValidationError(where(source, line_no) + "invalid sentence id '" +
                          std::string(field) + "'");
  }
  return v;
}

std::size_t parse_header_value(std::string_view field, std::string_view key,
                               const std::string& source) {
  const std::string prefix = std::string(key) + "=";
  if (field.substr(0, prefix.size()) != prefix) {
    throw ValidationError(where(source, 1) + "expected header field '" + prefix + "<n>'");
  }
  const std::string_view value = field.substr(prefix.size());
  std::size_t v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end || v == 0) {
    throw ValidationError(where(source, 1) + "invalid value for '" + std::string(key) + "'");
  }
  return v;
}

std::string_view chomp(const std::string& line) {
  std::string_view v = line;
  if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
  return v;
}

std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t count, std::size_t dim)
    : count_(count), dim_(dim), data_(count * dim, 0.0f) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> data)
    : count_(count), dim_(dim), data_(std::move(data)) {
  if (data_.size() != count * dim) {
    throw DimensionError("embedding data has " + std::to_string(data_.size()) +
                         " values, expected " + std::to_string(count * dim));
  }
}

void EmbeddingMatrix::validate() const {
  if (dim_ == 0) throw ValidationError("embedding dim must be positive");
  if (dim_ > UINT32_MAX) throw ValidationError("embedding dim does not fit in 32 bits");
  for (std::size_t r = 0; r < count_; ++r) {
    for (float v : row(r)) {
      if (!std::isfinite(v)) {
        throw ValidationError("embedding row " + std::to_string(r) + " has a non-finite value");
      }
    }
  }
}

bool EmbeddingMatrix::bitwise_equal(const EmbeddingMatrix& other) const {
  return count_ == other.count_ && dim_ == other.dim_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

void write_embeddings(const EmbeddingMatrix& matrix, const std::string& path) {
  matrix.validate();
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(EmbeddingMatrix::kVersion);
  w.u64(matrix.count());
  w.u32(static_cast<std::uint32_t>(matrix.dim()));
  w.f32s(matrix.data());
  detail::write_file_bytes(path, w.buffer());
}

EmbeddingMatrix read_embeddings(std::istream& in, const std::string& source_name) {
  detail::ByteReader r(in, source_name);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(source_name + ": bad magic (not an SLMB embedding file)");
  }
  const std::uint32_t version = r.u32();
  if (version != EmbeddingMatrix::kVersion) {
    throw FormatError(source_name + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = r.u64();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw FormatError(source_name + ": dim must be positive");
  // Check the payload length before allocating so a corrupt header cannot
  // trigger a huge allocation.
  constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 40;
  if (count > kMaxValues / dim) {
    throw FormatError(source_name + ": header count " + std::to_string(count) +
                      " is implausibly large");
  }
  const std::uint64_t payload = count * dim * 4;
  const auto here = in.tellg();
  if (here != std::streampos(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    const auto remaining = static_cast<std::uint64_t>(end - here);
    if (remaining < payload) {
      throw LengthError(source_name + ": truncated file (payload needs " +
                        std::to_string(payload) + " bytes, " + std::to_string(remaining) +
                        " present)");
    }
  }
  std::vector<float> data(count * dim);
  constexpr std::size_t kChunk = 1 << 20;
  for (std::size_t off = 0; off < data.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - off);
    r.f32s(std::span<float>(data.data() + off, n));
  }
  if (!r.at_end()) throw FormatError(source_name + ": trailing bytes after payload");
  EmbeddingMatrix m(count, dim, std::move(data));
  m.validate();
  return m;
}

EmbeddingMatrix read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_embeddings(in, path);
}

bool has_embedding_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0;
}

void CorpusIndex::validate(std::size_t embedding_count) const {
  if (sentences_per_story == 0) throw ValidationError("sentences_per_story must be positive");
  if (context_len == 0 || context_len >= sentences_per_story) {
    throw ValidationError("context_len must be in [1, sentences_per_story)");
  }
  std::unordered_set<SentenceId> seen;
  for (std::size_t s = 0; s < stories.size(); ++s) {
    const auto& story = stories[s];
    if (story.size() != sentences_per_story) {
      throw ValidationError("story " + std::to_string(s) + " has " +
                            std::to_string(story.size()) + " sentences, expected " +
                            std::to_string(sentences_per_story));
    }
    for (SentenceId id : story) {
      if (embedding_count != 0 && id >= embedding_count) {
        throw ValidationError("story " + std::to_string(s) + ": sentence id " +
                              std::to_string(id) + " out of range (count " +
                              std::to_string(embedding_count) + ")");
      }
      if (!seen.insert(id).second) {
        throw ValidationError("story " + std::to_string(s) + ": duplicate sentence id " +
                              std::to_string(id));
      }
    }
  }
}

CorpusIndex parse_corpus_index(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(source_name + ": empty index file");
  const auto header = split_tabs(chomp(line));
  if (header.size() != 2) {
    throw ValidationError(where(source_name, 1) +
                          "header must be 'sentences_per_story=<k>\\tcontext_len=<t>'");
  }
  CorpusIndex index;
  index.sentences_per_story = parse_header_value(header[0], "sentences_per_story", source_name);
  index.context_len = parse_header_value(header[1], "context_len", source_name);
  if (index.context_len >= index.sentences_per_story) {
    throw ValidationError(where(source_name, 1) + "context_len must be < sentences_per_story");
  }

  std::size_t line_no = 1;
  std::size_t blank_at = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view v = chomp(line);
    if (v.empty()) {
      if (blank_at == 0) blank_at = line_no;
      continue;
    }
    if (blank_at != 0) throw ValidationError(where(source_name, blank_at) + "blank line");
    const auto fields = split_tabs(v);
    if (fields.size() != index.sentences_per_story) {
      throw ValidationError(where(source_name, line_no) + "story has " +
                            std::to_string(fields.size()) + " sentences, expected " +
                            std::to_string(index.sentences_per_story));
    }
    std::vector<SentenceId> story;
    story.reserve(fields.size());
    for (auto f : fields) story.push_back(parse_id(f, source_name, line_no));
    index.stories.push_back(std::move(story));
  }
  return index;
}

CorpusIndex read_corpus_index(const std::string& path) {
  auto in = open_text(path);
  return parse_corpus_index(in, path);
}

void write_corpus_index(const CorpusIndex& index, const std::string& path) {
  index.validate(0);
  std::ostringstream out;
  out << "sentences_per_story=" << index.sentences_per_story
      << "\tcontext_len=" << index.context_len << '\n';
  for (const auto& story : index.stories) {
    for (std::size_t i = 0; i < story.size(); ++i) out << (i ? "\t" : "") << story[i];
    out << '\n';
  }
  const std::string s = out.str();
  detail::write_file_bytes(path, std::vector<char>(s.begin(), s.end()));
}

void validate_index_ids(const CorpusIndex& index, std::size_t embedding_count,
                        const std::string& source_name) {
  // Story s sits on line s + 2.
  std::unordered_set<SentenceId> seen;
  for (std::size_t s = 0; s < index.stories.size(); ++s) {
    for (SentenceId id : index.stories[s]) {
      if (id >= embedding_count) {
        throw ValidationError(where(source_name, s + 2) + "sentence id " + std::to_string(id) +
                              " out of range (embedding count " + std::to_string(embedding_count) +
                              ")");
      }
      if (!seen.insert(id).second) {
        throw ValidationError(where(source_name, s + 2) + "duplicate sentence id " +
                              std::to_string(id));
      }
    }
  }
}

Corpus load_corpus(const std::string& embeddings_path, const std::string& index_path) {
  Corpus corpus{read_embeddings(embeddings_path), {}};
  auto in = open_text(index_path);
  corpus.index = parse_corpus_index(in, index_path);
  validate_index_ids(corpus.index, corpus.embeddings.count(), index_path);
  return corpus;
}

std::vector<SentenceId> candidate_pool(const CorpusIndex& index, std::size_t position) {
  if (position >= index.sentences_per_story) {
    throw DomainError("position " + std::to_string(position) + " >= sentences_per_story");
  }
  std::vector<SentenceId> pool;
  pool.reserve(index.stories.size());
  for (const auto& story : index.stories) pool.push_back(story[position]);
  return pool;
}

std::vector<SentenceId> candidate_pool(std::span<const CorpusIndex> indices,
                                       std::size_t position) {
  std::vector<SentenceId> pool;
  std::unordered_set<SentenceId> seen;
  for (const auto& index : indices) {
    for (SentenceId id : candidate_pool(index, position)) {
      if (!seen.insert(id).second) {
        throw ValidationError("sentence id " + std::to_string(id) +
                              " appears in more than one pool");
      }
      pool.push_back(id);
    }
  }
  return pool;
}

void ClozeEvalSet::validate(std::size_t embedding_count) const {
  const std::size_t t = context_len();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    if (item.context.empty() || item.context.size() != t) {
      throw ValidationError("cloze item " + std::to_string(i) + " has inconsistent context length");
    }
    auto check = [&](SentenceId id) {
      if (embedding_count != 0 && id >= embedding_count) {
        throw ValidationError("cloze item " + std::to_string(i) + ": sentence id " +
                              std::to_string(id) + " out of range");
      }
    };
    for (SentenceId id : item.context) check(id);
    check(item.ending_a);
    check(item.ending_b);
  }
}

ClozeEvalSet parse_cloze_set(std::istream& in, const std::string& source_name) {
  ClozeEvalSet set;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view v = chomp(line);
    if (v.empty()) continue;
    const auto fields = split_tabs(v);
    if (fields.size() < 4) {
      throw ValidationError(where(source_name, line_no) +
                            "expected context ids, ending_a, ending_b and label");
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw ValidationError(where(source_name, line_no) + "inconsistent number of fields");
    }
    ClozeItem item;
    const std::size_t t = fields.size() - 3;
    for (std::size_t i = 0; i < t; ++i) item.context.push_back(parse_id(fields[i], source_name, line_no));
    item.ending_a = parse_id(fields[t], source_name, line_no);
    item.ending_b = parse_id(fields[t + 1], source_name, line_no);
    const auto label = fields[t + 2];
    if (label == "a") {
      item.label = ClozeLabel::a;
    } else if (label == "b") {
      item.label = ClozeLabel::b;
    } else {
      throw ValidationError(where(source_name, line_no) + "label must be 'a' or 'b', got '" +
                            std::string(label) + "'");
    }
    set.items.push_back(std::move(item));
  }
  return set;
}

ClozeEvalSet read_cloze_set(const std::string& path) {
  auto in = open_text(path);
  return parse_cloze_set(in, path);
}

void write_cloze_set(const ClozeEvalSet& set, const std::string& path) {
  set.validate(0);
  std::ostringstream out;
  for (const auto& item : set.items) {
    for (SentenceId id : item.context) out << id << '\t';
    out << item.ending_a << '\t' << item.ending_b << '\t'
        << (item.label == ClozeLabel::a ? "a" : "b") << '\n';
  }
  const std::string s = out.str();
  detail::write_file_bytes(path, std::vector<char>(s.begin(), s.end()));
}

std::vector<std::string> read_sentence_text(const std::string& path) {
  auto in = open_text(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.emplace_back(chomp(line));
  return lines;
}

}  // namespace slm
