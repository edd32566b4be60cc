#ifndef CAPTIONER_DECODE_HPP_
#define CAPTIONER_DECODE_HPP_

#include <memory>
#include <random>
#include <vector>

#include "captioner/corpus.hpp"
#include "captioner/knowledge.hpp"
#include "captioner/model.hpp"

namespace cap {

struct DecodedSequence {
  std::vector<int> tokens;  // ends with <end> or is cut at max_len
  double score = 0.0;       // sum of chosen-step log-probabilities
  std::vector<std::vector<double>> per_step_alphas;
};

// Next-token distribution conditioned on the generated prefix. Lets the
// search routines run against hand-built probability tables in tests as
// well as the trained decoder.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<double> next_log_probs(
      const std::vector<int>& prefix,
      std::vector<double>* alpha_out) const = 0;
  virtual int end_token() const { return kEndId; }
};

// Adapter over the LSTM decoder: replays the prefix from the initial state,
// recomputing the word context per step from the partial hypothesis.
class LstmSequenceModel : public SequenceModel {
 public:
  LstmSequenceModel(const ModelParameters& params, const FeatureSet& features,
                    const KnowledgeCorpus& corpus, const Vocabulary& vocab,
                    double lambda, bool ban_unk = true);

  std::size_t vocab_size() const override;
  std::vector<double> next_log_probs(
      const std::vector<int>& prefix,
      std::vector<double>* alpha_out) const override;

 private:
  BoundModel model_;
  Tensor features_;
  const Vocabulary& vocab_;
  std::vector<double> bonus_;
  bool ban_unk_;
  bool use_bonus_;
};

DecodedSequence greedy_decode(const SequenceModel& model, int max_len);
DecodedSequence sample_decode(const SequenceModel& model, int max_len,
                              std::mt19937& rng);
DecodedSequence beam_search(const SequenceModel& model, int beam, int max_len);

// Convenience wrappers over the LSTM adapter.
DecodedSequence greedy_decode(const ModelParameters& params,
                              const FeatureSet& features,
                              const KnowledgeCorpus& corpus,
                              const Vocabulary& vocab, double lambda,
                              int max_len);
DecodedSequence sample_decode(const ModelParameters& params,
                              const FeatureSet& features,
                              const KnowledgeCorpus& corpus,
                              const Vocabulary& vocab, double lambda,
                              int max_len, std::mt19937& rng);
DecodedSequence beam_search(const ModelParameters& params,
                            const FeatureSet& features,
                            const KnowledgeCorpus& corpus,
                            const Vocabulary& vocab, double lambda, int beam,
                            int max_len);

// Log-probability of a fixed token sequence under the inference rule;
// used to cross-check reported scores.
double score_sequence(const SequenceModel& model,
                      const std::vector<int>& tokens);

}  // namespace cap

#endif  // CAPTIONER_DECODE_HPP_
