#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "captioner/knowledge.hpp"
#include "helpers.hpp"

using namespace cap;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path =
      (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("empty triple file yields an empty index") {
  const std::string path = write_temp("triples_empty.jsonl", "");
  const TripleIndex idx = load_triples(path);
  CHECK(idx.empty());
  std::remove(path.c_str());
}

TEST_CASE("three-line fixture parses with sorted entries") {
  const std::string path = write_temp(
      "triples_three.jsonl",
      R"({"subject":"dog","rel":"capable_of","object":"bark","weight":0.9})"
      "\n"
      R"({"subject":"dog","rel":"related_to","object":"leash","weight":0.95})"
      "\n"
      R"({"subject":"cat","rel":"capable_of","object":"purr","weight":0.8})"
      "\n");
  const TripleIndex idx = load_triples(path);
  REQUIRE(idx.by_subject.count("dog") == 1);
  REQUIRE(idx.by_subject.count("cat") == 1);
  const auto& dog = idx.by_subject.at("dog");
  REQUIRE(dog.size() == 2);
  CHECK(dog[0].object == "leash");  // heavier first
  CHECK(dog[0].weight == doctest::Approx(0.95));
  CHECK(dog[1].object == "bark");
  std::remove(path.c_str());
}

TEST_CASE("out-of-range weight is rejected with its line number") {
  const std::string path = write_temp(
      "triples_bad.jsonl",
      R"({"subject":"a","rel":"r","object":"b","weight":0.5})" "\n"
      R"({"subject":"a","rel":"r","object":"c","weight":0.5})" "\n"
      R"({"subject":"a","rel":"r","object":"d","weight":0.5})" "\n"
      R"({"subject":"a","rel":"r","object":"e","weight":0.5})" "\n"
      R"({"subject":"a","rel":"r","object":"f","weight":0.5})" "\n"
      R"({"subject":"a","rel":"r","object":"g","weight":0.5})" "\n"
      R"({"subject":"a","rel":"r","object":"h","weight":1.5})" "\n");
  try {
    load_triples(path);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("malformed json is rejected with its line number") {
  const std::string path = write_temp(
      "triples_garbled.jsonl",
      R"({"subject":"a","rel":"r","object":"b","weight":0.5})" "\n"
      "not json at all\n");
  try {
    load_triples(path);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("insert_max keeps the larger probability") {
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.4);
  corpus.insert_max("dog", 0.7);
  corpus.insert_max("dog", 0.2);
  CHECK(corpus.entries.at("dog") == doctest::Approx(0.7));
}

TEST_CASE("retrieve with no objects or no triples is empty") {
  TripleIndex idx;
  CHECK(retrieve({}, idx, 3, 5).empty());
  const std::vector<ScoredObject> objs = {{"dog", 0.9}};
  CHECK(retrieve(objs, idx, 3, 5).entries.size() == 1);  // label only
}

TEST_CASE("retrieve takes top objects and their heaviest entities") {
  TripleIndex idx;
  idx.by_subject["dog"] = {{"leash", "r", 0.95}, {"bark", "r", 0.9},
                           {"bone", "r", 0.5}};
  idx.by_subject["cat"] = {{"purr", "r", 0.8}};
  idx.by_subject["tree"] = {{"leaf", "r", 0.99}};
  const std::vector<ScoredObject> objs = {
      {"dog", 0.9}, {"cat", 0.7}, {"tree", 0.1}};
  // top 2 objects, top 2 entities each: dog, cat selected; tree excluded
  const KnowledgeCorpus corpus = retrieve(objs, idx, 2, 2);
  CHECK(corpus.entries.count("dog") == 1);
  CHECK(corpus.entries.at("dog") == doctest::Approx(0.9));
  CHECK(corpus.entries.count("cat") == 1);
  CHECK(corpus.entries.count("leash") == 1);
  CHECK(corpus.entries.count("bark") == 1);
  CHECK(corpus.entries.count("bone") == 0);  // beyond per-object cap
  CHECK(corpus.entries.count("purr") == 1);
  CHECK(corpus.entries.count("tree") == 0);
  CHECK(corpus.entries.count("leaf") == 0);
}

TEST_CASE("retrieve matches a brute-force oracle on random inputs") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::uniform_int_distribution<int> count(0, 6);
  const std::vector<std::string> labels = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 50; ++trial) {
    TripleIndex idx;
    for (const auto& s : labels) {
      const int k = count(rng);
      for (int i = 0; i < k; ++i) {
        idx.by_subject[s].push_back(
            {"ent" + std::to_string(count(rng)), "r", unif(rng)});
      }
      if (idx.by_subject.count(s)) {
        auto& v = idx.by_subject[s];
        std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) {
          if (x.weight != y.weight) return x.weight > y.weight;
          return x.object < y.object;
        });
      }
    }
    std::vector<ScoredObject> objs;
    for (const auto& s : labels) objs.push_back({s, unif(rng)});
    std::shuffle(objs.begin(), objs.end(), rng);
    const std::size_t top_objects = 3, per_k = 2;

    // oracle: stable sort by score desc, take top 3, merge label + top-2
    // entities with max
    std::vector<ScoredObject> ranked = objs;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& x, const auto& y) {
                       return x.score > y.score;
                     });
    std::map<std::string, double> expected;
    const auto put = [&](const std::string& t, double p) {
      auto it = expected.find(t);
      if (it == expected.end() || it->second < p) expected[t] = p;
    };
    for (std::size_t i = 0; i < std::min(top_objects, ranked.size()); ++i) {
      put(ranked[i].label, ranked[i].score);
      const auto it = idx.by_subject.find(ranked[i].label);
      if (it == idx.by_subject.end()) continue;
      for (std::size_t j = 0; j < std::min(per_k, it->second.size()); ++j) {
        put(it->second[j].object, it->second[j].weight);
      }
    }
    const KnowledgeCorpus corpus = retrieve(objs, idx, top_objects, per_k);
    CHECK(corpus.entries == expected);
  }
}

TEST_CASE("augment with an empty corpus returns the logits unchanged") {
  const Vocabulary vocab = Vocabulary::build({{"dog", "cat"}}, 100);
  const std::vector<double> logits = {0.1, -0.2, 0.3, 0.0, 1.0, -1.0};
  const KnowledgeCorpus empty;
  CHECK(augment_logits(logits, empty, 0.2, vocab) == logits);
}

TEST_CASE("lambda zero is bit-identical to no augmentation") {
  const Vocabulary vocab = Vocabulary::build({{"dog", "cat"}}, 100);
  std::mt19937 rng(3);
  const std::vector<double> logits = test_helpers::random_vector(6, rng);
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.9);
  const auto out = augment_logits(logits, corpus, 0.0, vocab);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(out[i] == logits[i]);  // exact, not approximate
  }
}

TEST_CASE("augment adds lambda times p to exactly the corpus words") {
  const Vocabulary vocab = Vocabulary::build({{"dog", "cat"}}, 100);
  const std::vector<double> logits(vocab.size(), 0.5);
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.9);
  corpus.insert_max("zebra", 0.8);  // not in vocabulary: ignored
  const auto out = augment_logits(logits, corpus, 0.2, vocab);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double expected =
        static_cast<int>(i) == vocab.id("dog") ? 0.5 + 0.2 * 0.9 : 0.5;
    CHECK(out[i] == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("knowledge bonus and augment agree") {
  const Vocabulary vocab = Vocabulary::build({{"dog", "cat", "runs"}}, 100);
  std::mt19937 rng(5);
  const std::vector<double> logits =
      test_helpers::random_vector(vocab.size(), rng);
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.9);
  corpus.insert_max("runs", 0.3);
  const auto bonus = knowledge_bonus(corpus, 0.2, vocab);
  const auto out = augment_logits(logits, corpus, 0.2, vocab);
  REQUIRE(bonus.size() == logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(out[i] == doctest::Approx(logits[i] + bonus[i]).epsilon(1e-15));
  }
}

TEST_CASE("corpus-word probability is nondecreasing in lambda") {
  const Vocabulary vocab =
      Vocabulary::build({{"dog", "cat", "runs", "sits"}}, 100);
  std::mt19937 rng(9);
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> logits =
        test_helpers::random_vector(vocab.size(), rng, -2, 2);
    double prev = -1.0;
    for (double lambda : {0.0, 0.1, 0.2, 0.4}) {
      const auto out = augment_logits(logits, corpus, lambda, vocab);
      // softmax probability of "dog"
      double denom = 0.0;
      for (double v : out) denom += std::exp(v);
      const double p = std::exp(out[static_cast<std::size_t>(
                           vocab.id("dog"))]) / denom;
      CHECK(p >= prev);
      prev = p;
    }
  }
}

TEST_CASE("negative lambda is rejected") {
  const Vocabulary vocab = Vocabulary::build({{"dog"}}, 100);
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.9);
  CHECK_THROWS_AS(augment_logits({0, 0, 0, 0, 0}, corpus, -0.1, vocab),
                  std::invalid_argument);
}
