#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "captioner/corpus.hpp"
#include "helpers.hpp"

using namespace cap;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tokenize lowercases and strips punctuation") {
  CHECK(tokenize("A man riding a horse.") ==
        std::vector<std::string>{"a", "man", "riding", "a", "horse"});
  CHECK(tokenize("Dog!") == std::vector<std::string>{"dog"});
}

TEST_CASE("tokenize rejects empty results and names the input") {
  try {
    tokenize("!!! ...");
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("!!! ...") != std::string::npos);
  }
}

TEST_CASE("tokenize is idempotent under re-joining") {
  std::mt19937 rng(5);
  const auto sentences = test_helpers::synthetic_captions();
  for (int trial = 0; trial < 100; ++trial) {
    const auto& s = sentences[static_cast<std::size_t>(trial) % sentences.size()];
    const auto tokens = tokenize(s);
    std::string joined;
    for (const auto& t : tokens) {
      if (!joined.empty()) joined.push_back(' ');
      joined += t;
    }
    CHECK(tokenize(joined) == tokens);
  }
}

TEST_CASE("vocabulary keeps all tokens when below the cap") {
  const std::vector<std::vector<std::string>> caps = {
      {"a", "dog"}, {"a", "cat"}};
  const Vocabulary vocab = Vocabulary::build(caps, 100);
  CHECK(vocab.size() == 3 + 4);  // a, dog, cat + specials
  CHECK(vocab.id("<start>") == kStartId);
  CHECK(vocab.id("<end>") == kEndId);
  CHECK(vocab.id("<unk>") == kUnkId);
  CHECK(vocab.id("<pad>") == kPadId);
}

TEST_CASE("unseen tokens map to <unk>") {
  const Vocabulary vocab =
      Vocabulary::build({{"a", "dog"}}, 100);
  CHECK(vocab.id("zebra") == kUnkId);
}

TEST_CASE("vocabulary rejects bad inputs") {
  CHECK_THROWS_AS(Vocabulary::build({}, 100), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary::build({{"a"}}, 4), std::invalid_argument);
}

TEST_CASE("frequency cutoff matches a brute-force counter") {
  // 10 synthetic sentences; cap the vocabulary at 5 non-special tokens
  const std::vector<std::vector<std::string>> caps = {
      {"a", "dog", "runs"},    {"a", "cat", "sits"},
      {"a", "dog", "barks"},   {"the", "dog", "eats"},
      {"the", "cat", "naps"},  {"a", "bird", "sings"},
      {"a", "bird", "flies"},  {"the", "horse", "runs"},
      {"a", "horse", "jumps"}, {"the", "dog", "sleeps"}};
  // brute-force term frequency
  std::map<std::string, int> freq;
  for (const auto& c : caps)
    for (const auto& t : c) ++freq[t];
  std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const Vocabulary vocab = Vocabulary::build(caps, 5);
  CHECK(vocab.size() == 5 + 4);
  for (int i = 0; i < 5; ++i) {
    CHECK(vocab.contains(ranked[static_cast<std::size_t>(i)].first));
  }
  CHECK_FALSE(vocab.contains(ranked[5].first));
}

TEST_CASE("encode then decode is the identity for in-vocabulary tokens") {
  const auto sentences = test_helpers::synthetic_captions();
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& s : sentences) tokenized.push_back(tokenize(s));
  const Vocabulary vocab = Vocabulary::build(tokenized, 200);
  for (const auto& tokens : tokenized) {
    CHECK(vocab.decode(vocab.encode(tokens)) == tokens);
  }
}

TEST_CASE("vocabulary save and load round-trip") {
  const auto sentences = test_helpers::synthetic_captions();
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& s : sentences) tokenized.push_back(tokenize(s));
  const Vocabulary vocab = Vocabulary::build(tokenized, 200);
  const std::string path = temp_path("vocab_roundtrip.txt");
  vocab.save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.n_docs() == vocab.n_docs());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const int id = static_cast<int>(i);
    CHECK(loaded.token(id) == vocab.token(id));
    CHECK(loaded.doc_freq(vocab.token(id)) == vocab.doc_freq(vocab.token(id)));
  }
  std::remove(path.c_str());
}

TEST_CASE("tfidf single-token sentence") {
  const Vocabulary vocab = Vocabulary::build({{"dog"}, {"cat"}}, 100);
  CaptionRecord rec;
  rec.tokens = {vocab.id("dog")};
  const auto delta = tfidf_weights(rec, vocab);
  REQUIRE(delta.size() == 1);
  CHECK(delta[0] == doctest::Approx(vocab.idf("dog")).epsilon(1e-15));
}

TEST_CASE("tfidf is uniform for a repeated token") {
  const Vocabulary vocab = Vocabulary::build({{"dog", "dog", "dog"}}, 100);
  CaptionRecord rec;
  rec.tokens = {vocab.id("dog"), vocab.id("dog"), vocab.id("dog")};
  const auto delta = tfidf_weights(rec, vocab);
  CHECK(delta[0] == delta[1]);
  CHECK(delta[1] == delta[2]);
}

TEST_CASE("tfidf matches a hand-computed oracle") {
  // corpus of 5 documents; "a" in 4 of them, "man" in 2, "and" in 1
  const std::vector<std::vector<std::string>> docs = {
      {"a", "man", "and", "a", "man"},
      {"a", "man", "walks"},
      {"a", "dog", "runs"},
      {"a", "cat"},
      {"the", "end"}};
  const Vocabulary vocab = Vocabulary::build(docs, 100);
  CaptionRecord rec;
  rec.raw = "a man and a man";
  rec.tokens = vocab.encode({"a", "man", "and", "a", "man"});
  const auto delta = tfidf_weights(rec, vocab);

  const double idf_a = std::log(6.0 / 5.0) + 1.0;
  const double idf_man = std::log(6.0 / 3.0) + 1.0;
  const double idf_and = std::log(6.0 / 2.0) + 1.0;
  const std::vector<double> expected = {
      (2.0 / 5.0) * idf_a, (2.0 / 5.0) * idf_man, (1.0 / 5.0) * idf_and,
      (2.0 / 5.0) * idf_a, (2.0 / 5.0) * idf_man};
  REQUIRE(delta.size() == expected.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    CHECK(std::abs(delta[i] - expected[i]) < 1e-12);
  }
}

TEST_CASE("tfidf entries are strictly positive") {
  const auto sentences = test_helpers::synthetic_captions();
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& s : sentences) tokenized.push_back(tokenize(s));
  const Vocabulary vocab = Vocabulary::build(tokenized, 200);
  for (const auto& tokens : tokenized) {
    CaptionRecord rec;
    rec.tokens = vocab.encode(tokens);
    for (double d : tfidf_weights(rec, vocab)) CHECK(d > 0.0);
  }
}

TEST_CASE("feature round-trip is bit-exact") {
  std::mt19937 rng(9);
  FeatureSet fs = test_helpers::random_features(6, 32, rng);
  // storage is f32, so quantize the expectation first
  for (auto& v : fs.matrix) v = static_cast<double>(static_cast<float>(v));
  const std::string path = temp_path("features_roundtrip.fvec");
  store_features(fs, path);
  const FeatureSet loaded = load_features(path);
  CHECK(loaded.regions == fs.regions);
  CHECK(loaded.dim == fs.dim);
  for (std::size_t i = 0; i < fs.matrix.size(); ++i) {
    CHECK(loaded.matrix[i] == fs.matrix[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("fvec fixture with a known header parses exactly") {
  // L=2, D=3, payload 1..6, written by an independent byte-level writer
  const std::string path = temp_path("features_fixture.fvec");
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char header[] = {'F', 'V', 'E', 'C', 1, 0, 0, 0,
                                    2,   0,   0,   0,   3, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const float payload[] = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
    for (float f : payload) {
      // little-endian by byte
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  const FeatureSet fs = load_features(path);
  CHECK(fs.regions == 2);
  CHECK(fs.dim == 3);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(fs.matrix[i] == doctest::Approx(static_cast<double>(i + 1)));
  }
  std::remove(path.c_str());
}

TEST_CASE("fvec error kinds are distinct") {
  const std::string bad_magic = temp_path("bad_magic.fvec");
  {
    std::ofstream out(bad_magic, std::ios::binary);
    out << "NOPE, not a feature file";
  }
  CHECK_THROWS_WITH_AS(load_features(bad_magic),
                       doctest::Contains("bad magic"), std::runtime_error);
  std::remove(bad_magic.c_str());

  const std::string truncated = temp_path("truncated.fvec");
  {
    std::mt19937 rng(1);
    FeatureSet fs = test_helpers::random_features(4, 4, rng);
    store_features(fs, truncated);
    std::filesystem::resize_file(truncated, 30);
  }
  CHECK_THROWS_WITH_AS(load_features(truncated),
                       doctest::Contains("truncated payload"),
                       std::runtime_error);
  std::remove(truncated.c_str());

  const std::string nonfinite = temp_path("nonfinite.fvec");
  {
    std::ofstream out(nonfinite, std::ios::binary);
    const unsigned char header[] = {'F', 'V', 'E', 'C', 1, 0, 0, 0,
                                    1,   0,   0,   0,   1, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    const float inf = std::numeric_limits<float>::infinity();
    unsigned char b[4];
    std::memcpy(b, &inf, 4);
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  CHECK_THROWS_WITH_AS(load_features(nonfinite),
                       doctest::Contains("non-finite"), std::runtime_error);
  std::remove(nonfinite.c_str());
}

TEST_CASE("mean_pool") {
  SUBCASE("single region returns that region") {
    FeatureSet fs{1, 3, {1.0, 2.0, 3.0}};
    CHECK(mean_pool(fs) == std::vector<double>{1.0, 2.0, 3.0});
  }
  SUBCASE("opposite vectors cancel") {
    FeatureSet fs{2, 2, {1.0, -2.0, -1.0, 2.0}};
    const auto pooled = mean_pool(fs);
    CHECK(pooled[0] == 0.0);
    CHECK(pooled[1] == 0.0);
  }
  SUBCASE("random matrix matches a scalar loop") {
    std::mt19937 rng(13);
    const FeatureSet fs = test_helpers::random_features(4, 8, rng);
    const auto pooled = mean_pool(fs);
    for (std::size_t j = 0; j < 8; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) s += fs.at(i, j);
      CHECK(pooled[j] == doctest::Approx(s / 4.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("dataset manifest loads and encodes") {
  const auto dir = std::filesystem::temp_directory_path() / "captioner_ds";
  std::filesystem::create_directories(dir);
  std::mt19937 rng(21);
  FeatureSet fs = test_helpers::random_features(2, 3, rng);
  store_features(fs, (dir / "img0.fvec").string());
  {
    std::ofstream out(dir / "dataset.jsonl");
    out << R"({"id":"img0","captions":["A dog runs.","The dog sits."],)"
        << R"("objects":[{"label":"dog","score":0.5},{"label":"ball","score":0.9}],)"
        << R"("features":"img0.fvec"})" << "\n";
  }
  const auto raw = load_dataset((dir / "dataset.jsonl").string());
  REQUIRE(raw.size() == 1);
  CHECK(raw[0].id == "img0");
  CHECK(raw[0].features.regions == 2);
  REQUIRE(raw[0].objects.size() == 2);
  CHECK(raw[0].objects[0].label == "ball");  // sorted by score descending
  CHECK(raw[0].caption_tokens[0] ==
        std::vector<std::string>{"a", "dog", "runs"});

  const Vocabulary vocab = Vocabulary::build(raw[0].caption_tokens, 100);
  const auto encoded = encode_dataset(raw, vocab);
  REQUIRE(encoded.size() == 1);
  CHECK(encoded[0].captions.size() == 2);
  CHECK(vocab.decode(encoded[0].captions[0].tokens) ==
        std::vector<std::string>{"a", "dog", "runs"});
  std::filesystem::remove_all(dir);
}
