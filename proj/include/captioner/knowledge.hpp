#ifndef CAPTIONER_KNOWLEDGE_HPP_
#define CAPTIONER_KNOWLEDGE_HPP_

#include <map>
#include <string>
#include <vector>

#include "captioner/corpus.hpp"

namespace cap {

struct KnowledgeTriple {
  std::string subject;
  std::string rel;
  std::string object;
  double weight = 0.0;  // in (0,1]
};

// subject -> entries sorted by weight descending, ties by object token.
struct TripleIndex {
  struct Entry {
    std::string object;
    std::string rel;
    double weight;
  };
  std::map<std::string, std::vector<Entry>> by_subject;

  bool empty() const { return by_subject.empty(); }
};

// Per-image entity words with correlation probabilities.
struct KnowledgeCorpus {
  std::map<std::string, double> entries;  // token -> p_k in (0,1]

  bool empty() const { return entries.empty(); }
  // Keeps the maximum when the token is already present.
  void insert_max(const std::string& token, double p);
};

// triples.jsonl: {"subject","rel","object","weight"} per line.
// Malformed lines and weights outside (0,1] are rejected with line numbers.
TripleIndex load_triples(const std::string& path);

// Top `top_objects` detected labels by score; for each, its `per_object_k`
// heaviest entities. Detected labels join with p_k = detection score.
// Duplicate entities keep the maximum p_k.
KnowledgeCorpus retrieve(const std::vector<ScoredObject>& objects,
                         const TripleIndex& index, std::size_t top_objects,
                         std::size_t per_object_k);

// logit(w) += lambda * p_k(w) for corpus words present in the vocabulary.
// Softmax is applied downstream.
std::vector<double> augment_logits(const std::vector<double>& logits,
                                   const KnowledgeCorpus& corpus,
                                   double lambda, const Vocabulary& vocab);

// The additive bonus vector by itself (|V| entries), for injecting into a
// taped forward pass as a constant.
std::vector<double> knowledge_bonus(const KnowledgeCorpus& corpus,
                                    double lambda, const Vocabulary& vocab);

}  // namespace cap

#endif  // CAPTIONER_KNOWLEDGE_HPP_
