#ifndef CAPTIONER_TRAINER_HPP_
#define CAPTIONER_TRAINER_HPP_

#include <map>
#include <random>
#include <string>
#include <vector>

#include "captioner/decode.hpp"
#include "captioner/metrics.hpp"
#include "captioner/model.hpp"

namespace cap {

enum class TrainMode { kCrossEntropy, kScst };

struct TrainConfig {
  int batch_size = 64;
  double lr = 5e-4;
  double anneal_factor = 0.7;
  int anneal_every = 5;
  double dropout_keep = 0.5;
  int max_epochs = 30;
  int early_stop_patience = 5;  // <= 0 disables early stopping
  double lambda = 0.2;
  TrainMode mode = TrainMode::kCrossEntropy;
  int max_len = 16;
  unsigned seed = 1;
  double clip_norm = 5.0;

  void validate() const;
};

using GradMap = std::map<std::string, std::vector<double>>;

struct OptimizerState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  long step = 0;
};

// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
void adam_step(ModelParameters& params, const GradMap& grads,
               OptimizerState& state, double lr);

// Negative log-likelihood of the targets under the per-step
// log-distributions. Targets are w_1..w_N, <end>.
Tensor xe_loss(const std::vector<Tensor>& log_dists,
               const std::vector<int>& targets);

struct EpochLog {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double bleu4 = 0.0;
  double cider = 0.0;
  double lr = 0.0;
  long wall_ms = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

// One (image, caption) training pair plus its knowledge corpus.
struct TrainExample {
  const ImageRecord* image;
  const CaptionRecord* caption;
  const KnowledgeCorpus* corpus;
};

std::vector<TrainExample> make_examples(
    const std::vector<ImageRecord>& dataset,
    const std::vector<KnowledgeCorpus>& corpora);

// Mean XE loss and averaged gradients over a batch of examples.
double xe_batch_gradients(const std::vector<TrainExample>& batch,
                          const ModelParameters& params,
                          const Vocabulary& vocab, double lambda,
                          double dropout_keep, std::mt19937& rng,
                          GradMap* grads);

TrainResult train_xe(const std::vector<ImageRecord>& dataset,
                     const std::vector<KnowledgeCorpus>& corpora,
                     const Vocabulary& vocab, const TrainConfig& config,
                     ModelParameters& params);

struct ScstStats {
  double mean_sampled_reward = 0.0;
  double mean_greedy_reward = 0.0;
};

// Single-sample self-critical estimate averaged over the batch: one
// multinomial rollout per image against the greedy baseline, rewarded with
// frozen-idf CIDEr-D.
ScstStats scst_step(const std::vector<const ImageRecord*>& batch,
                    const std::vector<const KnowledgeCorpus*>& corpora,
                    const ModelParameters& params, const Vocabulary& vocab,
                    const CiderScorer& reward, double lambda, int max_len,
                    std::mt19937& rng, GradMap* grads);

TrainResult train_scst(const std::vector<ImageRecord>& dataset,
                       const std::vector<KnowledgeCorpus>& corpora,
                       const Vocabulary& vocab, const TrainConfig& config,
                       ModelParameters& params);

// Mean greedy CIDEr-D over a dataset with a frozen scorer.
double mean_greedy_cider(const std::vector<ImageRecord>& dataset,
                         const std::vector<KnowledgeCorpus>& corpora,
                         const ModelParameters& params,
                         const Vocabulary& vocab, const CiderScorer& scorer,
                         double lambda, int max_len);

}  // namespace cap

#endif  // CAPTIONER_TRAINER_HPP_
