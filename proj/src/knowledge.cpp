#include "captioner/knowledge.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cap {

void KnowledgeCorpus::insert_max(const std::string& token, double p) {
  auto [it, inserted] = entries.emplace(token, p);
  if (!inserted && p > it->second) it->second = p;
}

TripleIndex load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_triples: cannot open " + path);
  }
  TripleIndex index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_triples: malformed line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("subject") || !j.contains("rel") || !j.contains("object") ||
        !j.contains("weight")) {
      throw std::runtime_error("load_triples: missing field on line " +
                               std::to_string(lineno));
    }
    KnowledgeTriple t;
    t.subject = j.at("subject").get<std::string>();
    t.rel = j.at("rel").get<std::string>();
    t.object = j.at("object").get<std::string>();
    t.weight = j.at("weight").get<double>();
    if (t.subject.empty() || t.object.empty()) {
      throw std::runtime_error("load_triples: empty entity on line " +
                               std::to_string(lineno));
    }
    if (!(t.weight > 0.0 && t.weight <= 1.0)) {
      throw std::runtime_error("load_triples: weight " +
                               std::to_string(t.weight) +
                               " outside (0,1] on line " +
                               std::to_string(lineno));
    }
    index.by_subject[t.subject].push_back({t.object, t.rel, t.weight});
  }
  for (auto& [subject, entries] : index.by_subject) {
    (void)subject;
    std::sort(entries.begin(), entries.end(),
              [](const TripleIndex::Entry& a, const TripleIndex::Entry& b) {
                if (a.weight != b.weight) return a.weight > b.weight;
                return a.object < b.object;
              });
  }
  return index;
}

KnowledgeCorpus retrieve(const std::vector<ScoredObject>& objects,
                         const TripleIndex& index, std::size_t top_objects,
                         std::size_t per_object_k) {
  if (top_objects < 1 || per_object_k < 1) {
    throw std::invalid_argument(
        "retrieve: top_objects and per_object_k must be >= 1");
  }
  std::vector<ScoredObject> ranked = objects;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredObject& a, const ScoredObject& b) {
                     return a.score > b.score;
                   });
  if (ranked.size() > top_objects) ranked.resize(top_objects);

  KnowledgeCorpus corpus;
  for (const auto& obj : ranked) {
    corpus.insert_max(obj.label, obj.score);
    auto it = index.by_subject.find(obj.label);
    if (it == index.by_subject.end()) continue;
    const auto& entries = it->second;
    const std::size_t take = std::min(per_object_k, entries.size());
    for (std::size_t i = 0; i < take; ++i) {
      corpus.insert_max(entries[i].object, entries[i].weight);
    }
  }
  return corpus;
}

std::vector<double> knowledge_bonus(const KnowledgeCorpus& corpus,
                                    double lambda, const Vocabulary& vocab) {
  std::vector<double> bonus(vocab.size(), 0.0);
  if (lambda == 0.0) return bonus;
  for (const auto& [token, p] : corpus.entries) {
    if (!vocab.contains(token)) continue;
    bonus[static_cast<std::size_t>(vocab.id(token))] = lambda * p;
  }
  return bonus;
}

std::vector<double> augment_logits(const std::vector<double>& logits,
                                   const KnowledgeCorpus& corpus,
                                   double lambda, const Vocabulary& vocab) {
  if (lambda < 0.0) {
    throw std::invalid_argument("augment_logits: lambda must be >= 0");
  }
  if (logits.size() != vocab.size()) {
    throw std::invalid_argument("augment_logits: logits length " +
                                std::to_string(logits.size()) +
                                " does not match vocabulary size " +
                                std::to_string(vocab.size()));
  }
  std::vector<double> out = logits;
  const std::vector<double> bonus = knowledge_bonus(corpus, lambda, vocab);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (bonus[i] != 0.0) out[i] += bonus[i];
  }
  return out;
}

}  // namespace cap
