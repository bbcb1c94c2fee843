#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "slm/embedding_store.hpp"
#include "slm/errors.hpp"

using namespace slm;
using slm::testing::TempDir;

namespace {

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("empty matrix writes a header-only file") {
  TempDir dir;
  write_embeddings(EmbeddingMatrix(0, 768), dir.file("e.slmb"));
  const auto bytes = slurp(dir.file("e.slmb"));
  REQUIRE(bytes.size() == 20);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SLMB");
  const auto m = read_embeddings(dir.file("e.slmb"));
  CHECK(m.count() == 0);
  CHECK(m.dim() == 768);
}

TEST_CASE("header and payload are little-endian") {
  TempDir dir;
  write_embeddings(EmbeddingMatrix(1, 2, {1.0f, -1.0f}), dir.file("e.slmb"));
  const auto bytes = slurp(dir.file("e.slmb"));
  const std::vector<unsigned char> expected = {
      'S', 'L', 'M', 'B', 1, 0, 0, 0,           // version
      1,   0,   0,   0,   0, 0, 0, 0,           // count
      2,   0,   0,   0,                         // dim
      0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x80, 0xBF};
  CHECK(bytes == expected);
}

TEST_CASE("write/read round-trip is bitwise identity on random matrices") {
  TempDir dir;
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t count = gen() % 40;
    const std::size_t dim = 1 + gen() % 17;
    std::vector<float> data(count * dim);
    std::uniform_int_distribution<std::uint32_t> bits;
    for (auto& v : data) {
      // Arbitrary finite bit patterns, including subnormals and -0.
      float f;
      do {
        f = std::bit_cast<float>(bits(gen));
      } while (!std::isfinite(f));
      v = f;
    }
    const EmbeddingMatrix m(count, dim, data);
    write_embeddings(m, dir.file("r.slmb"));
    CHECK(read_embeddings(dir.file("r.slmb")).bitwise_equal(m));
  }
}

TEST_CASE("reader rejects bad magic, NaN rows and truncation") {
  TempDir dir;
  const auto path = dir.file("e.slmb");
  write_embeddings(EmbeddingMatrix(3, 2, {1, 2, 3, 4, 5, 6}), path);
  const auto good = slurp(path);

  auto bad_magic = good;
  std::copy_n("XXXX", 4, bad_magic.begin());
  spit(path, bad_magic);
  CHECK_THROWS_AS(read_embeddings(path), FormatError);

  auto with_nan = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(with_nan.data() + 20 + 4 * 3, &nan, 4);  // row 1
  spit(path, with_nan);
  try {
    read_embeddings(path);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  spit(path, truncated);
  CHECK_THROWS_AS(read_embeddings(path), LengthError);

  auto trailing = good;
  trailing.push_back(0);
  spit(path, trailing);
  CHECK_THROWS_AS(read_embeddings(path), FormatError);
}

TEST_CASE("every single-byte corruption of the header is rejected") {
  TempDir dir;
  const auto path = dir.file("e.slmb");
  write_embeddings(EmbeddingMatrix(3, 2, {1, 2, 3, 4, 5, 6}), path);
  const auto good = slurp(path);
  for (std::size_t pos = 0; pos < 20; ++pos) {
    for (unsigned char flip : {0x01, 0x10, 0x80, 0xFF}) {
      auto bad = good;
      bad[pos] ^= flip;
      spit(path, bad);
      CAPTURE(pos);
      CAPTURE(int(flip));
      CHECK_THROWS_AS(read_embeddings(path), ValidationError);
    }
  }
}

TEST_CASE("writer refuses non-finite values") {
  TempDir dir;
  EmbeddingMatrix m(1, 2, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(write_embeddings(m, dir.file("e.slmb")), ValidationError);
}

TEST_CASE("load_corpus accepts a minimal corpus and reports bad lines") {
  TempDir dir;
  write_embeddings(slm::testing::random_matrix(10, 4, 1), dir.file("e.slmb"));
  write_text(dir.file("ok.tsv"),
             "sentences_per_story=5\tcontext_len=4\n0\t1\t2\t3\t4\n5\t6\t7\t8\t9\n");
  const Corpus c = load_corpus(dir.file("e.slmb"), dir.file("ok.tsv"));
  CHECK(c.index.size() == 2);
  CHECK(c.index.stories[1][4] == 9);

  write_text(dir.file("short.tsv"), "sentences_per_story=5\tcontext_len=4\n0\t1\t2\t3\t4\n5\t6\t7\t8\n");
  try {
    load_corpus(dir.file("e.slmb"), dir.file("short.tsv"));
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }

  write_text(dir.file("range.tsv"), "sentences_per_story=5\tcontext_len=4\n0\t1\t2\t3\t10\n");
  try {
    load_corpus(dir.file("e.slmb"), dir.file("range.tsv"));
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("out of range") != std::string::npos);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write_text(dir.file("dup.tsv"), "sentences_per_story=5\tcontext_len=4\n0\t1\t2\t3\t4\n5\t6\t7\t8\t0\n");
  CHECK_THROWS_AS(load_corpus(dir.file("e.slmb"), dir.file("dup.tsv")), ValidationError);

  write_text(dir.file("hdr.tsv"), "sentences_per_story=5\tcontext_len=5\n");
  CHECK_THROWS_AS(load_corpus(dir.file("e.slmb"), dir.file("hdr.tsv")), ValidationError);
}

TEST_CASE("candidate_pool extracts one id per story at a position") {
  CorpusIndex index;
  index.stories = {{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}, {10, 11, 12, 13, 14}};
  CHECK(candidate_pool(index, 4) == std::vector<SentenceId>{4, 9, 14});
  CHECK(candidate_pool(index, 0) == std::vector<SentenceId>{0, 5, 10});
  CHECK_THROWS_AS(candidate_pool(index, 5), DomainError);
}

TEST_CASE("pools partition the sentence ids") {
  CorpusIndex index;
  std::mt19937_64 gen(3);
  std::vector<SentenceId> ids(7 * 5);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), gen);
  for (std::size_t s = 0; s < 7; ++s) index.stories.emplace_back(ids.begin() + 5 * s, ids.begin() + 5 * s + 5);
  std::vector<SentenceId> all;
  for (std::size_t p = 0; p < 5; ++p) {
    const auto pool = candidate_pool(index, p);
    CHECK(pool.size() == index.size());
    all.insert(all.end(), pool.begin(), pool.end());
  }
  std::sort(all.begin(), all.end());
  std::vector<SentenceId> expected(35);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(all == expected);
}

TEST_CASE("merged pool counts train truths plus held-out truths") {
  CorpusIndex train;
  CorpusIndex valid;
  SentenceId next = 0;
  auto story = [&] {
    std::vector<SentenceId> s(5);
    for (auto& id : s) id = next++;
    return s;
  };
  for (int i = 0; i < 98161; ++i) train.stories.push_back(story());
  for (int i = 0; i < 1571; ++i) valid.stories.push_back(story());
  const std::vector<CorpusIndex> both = {train, valid};
  CHECK(candidate_pool(both, 4).size() == 99732);
}

TEST_CASE("cloze file round trip and label validation") {
  TempDir dir;
  ClozeEvalSet set;
  set.items.push_back({{0, 1, 2, 3}, 4, 5, ClozeLabel::b});
  set.items.push_back({{6, 7, 8, 9}, 10, 11, ClozeLabel::a});
  write_cloze_set(set, dir.file("c.tsv"));
  const auto back = read_cloze_set(dir.file("c.tsv"));
  REQUIRE(back.items.size() == 2);
  CHECK(back.items[0].label == ClozeLabel::b);
  CHECK(back.items[0].correct() == 5);
  CHECK(back.items[1].context == std::vector<SentenceId>{6, 7, 8, 9});

  write_text(dir.file("bad.tsv"), "0\t1\t2\t3\t4\t5\tc\n");
  CHECK_THROWS_AS(read_cloze_set(dir.file("bad.tsv")), ValidationError);
}
