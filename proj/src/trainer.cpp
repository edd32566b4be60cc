#include "captioner/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace cap {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::vector<std::string> strip_end(const std::vector<int>& tokens,
                                   const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int tok : tokens) {
    if (tok == kEndId) break;
    words.push_back(vocab.token(tok));
  }
  return words;
}

std::vector<std::vector<Tokens>> reference_sets(
    const std::vector<ImageRecord>& dataset, const Vocabulary& vocab) {
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(dataset.size());
  for (const auto& img : dataset) {
    std::vector<Tokens> image_refs;
    for (const auto& cap : img.captions) {
      image_refs.push_back(vocab.decode(cap.tokens));
    }
    refs.push_back(std::move(image_refs));
  }
  return refs;
}

void accumulate_grads(GradMap* grads, const BoundModel& bound,
                      const GradientMap& node_grads, double scale_factor) {
  for (const auto& [name, node] : bound.variable_nodes) {
    auto it = node_grads.find(node);
    if (it == node_grads.end()) continue;
    const auto& g = it->second.values();
    auto& slot = (*grads)[name];
    if (slot.empty()) slot.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * scale_factor;
  }
}

void clip_gradients(GradMap& grads, double clip_norm) {
  if (clip_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    (void)name;
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const double factor = clip_norm / norm;
  for (auto& [name, g] : grads) {
    (void)name;
    for (double& v : g) v *= factor;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (!(anneal_factor > 0.0 && anneal_factor <= 1.0)) {
    throw std::invalid_argument("TrainConfig: anneal_factor must be in (0,1]");
  }
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw std::invalid_argument("TrainConfig: dropout_keep must be in (0,1]");
  }
  if (lambda < 0.0) {
    throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  }
  if (batch_size < 1 || max_len < 1 || anneal_every < 1) {
    throw std::invalid_argument("TrainConfig: sizes must be >= 1");
  }
}

void adam_step(ModelParameters& params, const GradMap& grads,
               OptimizerState& state, double lr) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  for (auto& array : params.arrays) {
    auto git = grads.find(array.name);
    static const std::vector<double> kEmpty;
    const std::vector<double>* g = git == grads.end() ? nullptr : &git->second;
    if (g != nullptr && g->size() != array.data.size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                  array.name);
    }
    auto& m = state.first_moment[array.name];
    auto& v = state.second_moment[array.name];
    if (m.empty()) m.assign(array.data.size(), 0.0);
    if (v.empty()) v.assign(array.data.size(), 0.0);
    for (std::size_t i = 0; i < array.data.size(); ++i) {
      const double gi = g == nullptr ? 0.0 : (*g)[i];
      if (!std::isfinite(gi)) {
        throw std::runtime_error("adam_step: non-finite gradient for " +
                                 array.name);
      }
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      array.data[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

Tensor xe_loss(const std::vector<Tensor>& log_dists,
               const std::vector<int>& targets) {
  if (log_dists.size() != targets.size() || log_dists.empty()) {
    throw std::invalid_argument("xe_loss: " + std::to_string(log_dists.size()) +
                                " distributions vs " +
                                std::to_string(targets.size()) + " targets");
  }
  Tensor total;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Tensor term = pick(log_dists[t], static_cast<std::size_t>(targets[t]));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, -1.0);
}

std::vector<TrainExample> make_examples(
    const std::vector<ImageRecord>& dataset,
    const std::vector<KnowledgeCorpus>& corpora) {
  if (dataset.size() != corpora.size()) {
    throw std::invalid_argument("make_examples: corpora must align with dataset");
  }
  std::vector<TrainExample> examples;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].captions.empty()) {
      throw std::invalid_argument("make_examples: image " + dataset[i].id +
                                  " has no captions");
    }
    for (const auto& cap : dataset[i].captions) {
      examples.push_back({&dataset[i], &cap, &corpora[i]});
    }
  }
  return examples;
}

double xe_batch_gradients(const std::vector<TrainExample>& batch,
                          const ModelParameters& params,
                          const Vocabulary& vocab, double lambda,
                          double dropout_keep, std::mt19937& rng,
                          GradMap* grads) {
  if (batch.empty()) {
    throw std::invalid_argument("xe_batch_gradients: empty batch");
  }
  double total_loss = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const TrainExample& ex : batch) {
    Tape tape;
    BoundModel bound = bind(params, &tape);
    ForwardOptions opts;
    opts.lambda = lambda;
    opts.dropout_keep = dropout_keep;
    opts.rng = &rng;
    const std::vector<Tensor> log_dists = forward_teacher_forced(
        bound, ex.image->features, *ex.caption, *ex.corpus, vocab, opts);
    std::vector<int> targets = ex.caption->tokens;
    targets.push_back(kEndId);
    const Tensor loss = xe_loss(log_dists, targets);
    total_loss += loss.item();
    if (grads != nullptr) {
      accumulate_grads(grads, bound, tape.backward(loss), inv);
    }
  }
  return total_loss * inv;
}

TrainResult train_xe(const std::vector<ImageRecord>& dataset,
                     const std::vector<KnowledgeCorpus>& corpora,
                     const Vocabulary& vocab, const TrainConfig& config,
                     ModelParameters& params) {
  config.validate();
  if (dataset.empty()) {
    throw std::invalid_argument("train_xe: empty dataset");
  }
  std::vector<TrainExample> examples = make_examples(dataset, corpora);
  const std::vector<std::vector<Tokens>> refs = reference_sets(dataset, vocab);
  const CiderScorer scorer(refs);
  std::mt19937 rng(config.seed);
  OptimizerState opt;
  TrainResult result;

  double best_bleu4 = -1.0;
  int stale_epochs = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr =
        config.lr * std::pow(config.anneal_factor, epoch / config.anneal_every);

    std::shuffle(examples.begin(), examples.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t pos = 0; pos < examples.size();
         pos += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          pos + static_cast<std::size_t>(config.batch_size), examples.size());
      const std::vector<TrainExample> batch(examples.begin() + pos,
                                            examples.begin() + end);
      GradMap grads;
      const double loss = xe_batch_gradients(batch, params, vocab,
                                             config.lambda,
                                             config.dropout_keep, rng, &grads);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_xe: diverged at epoch " +
                                 std::to_string(epoch) + " batch " +
                                 std::to_string(batches));
      }
      clip_gradients(grads, config.clip_norm);
      adam_step(params, grads, opt, lr);
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);

    // validation pass: greedy decode against the references
    double bleu4_sum = 0.0, cider_sum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const DecodedSequence seq =
          greedy_decode(params, dataset[i].features, corpora[i], vocab,
                        config.lambda, config.max_len);
      const Tokens hyp = strip_end(seq.tokens, vocab);
      if (!hyp.empty()) {
        bleu4_sum += bleu(hyp, refs[i], 4);
      }
      cider_sum += scorer.score(hyp, refs[i]);
    }
    const double bleu4 = bleu4_sum / static_cast<double>(dataset.size());
    const double cider = cider_sum / static_cast<double>(dataset.size());

    EpochLog log;
    log.epoch = epoch;
    log.split = "train";
    log.loss = epoch_loss;
    log.bleu4 = bleu4;
    log.cider = cider;
    log.lr = lr;
    log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.log.push_back(log);

    if (config.early_stop_patience > 0) {
      if (bleu4 > best_bleu4) {
        best_bleu4 = bleu4;
        stale_epochs = 0;
      } else if (++stale_epochs >= config.early_stop_patience) {
        break;
      }
    }
  }
  return result;
}

ScstStats scst_step(const std::vector<const ImageRecord*>& batch,
                    const std::vector<const KnowledgeCorpus*>& corpora,
                    const ModelParameters& params, const Vocabulary& vocab,
                    const CiderScorer& reward, double lambda, int max_len,
                    std::mt19937& rng, GradMap* grads) {
  if (batch.empty() || batch.size() != corpora.size()) {
    throw std::invalid_argument("scst_step: bad batch");
  }
  ScstStats stats;
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ImageRecord& img = *batch[b];
    const KnowledgeCorpus& corpus = *corpora[b];
    if (img.captions.empty()) {
      throw std::invalid_argument("scst_step: image " + img.id +
                                  " has no references");
    }
    std::vector<Tokens> refs;
    for (const auto& cap : img.captions) refs.push_back(vocab.decode(cap.tokens));

    const DecodedSequence greedy = greedy_decode(
        params, img.features, corpus, vocab, lambda, max_len);
    const double baseline = reward.score(strip_end(greedy.tokens, vocab), refs);

    // sampled rollout with the graph recorded
    Tape tape;
    BoundModel bound = bind(params, &tape);
    const Tensor feats = features_tensor(img.features);
    DecoderState state = init_state(bound, mean_rows(feats));
    const std::vector<double> bonus = knowledge_bonus(corpus, lambda, vocab);
    StepOptions opts;
    opts.knowledge_bonus = lambda > 0.0 ? &bonus : nullptr;
    opts.ban_unk = true;

    std::vector<int> sampled;
    Tensor log_prob_sum;
    for (int t = 0; t < max_len; ++t) {
      const Tensor context = inference_word_context(bound, sampled, vocab);
      const int input = t == 0 ? kStartId : sampled.back();
      StepResult step = model_step(bound, feats, context, input, state, opts);
      const std::vector<double>& lp = step.log_probs.values();
      const double u = unif(rng);
      double cdf = 0.0;
      std::size_t tok = lp.size() - 1;
      for (std::size_t i = 0; i < lp.size(); ++i) {
        cdf += std::exp(lp[i]);
        if (u < cdf) {
          tok = i;
          break;
        }
      }
      const Tensor term = pick(step.log_probs, tok);
      log_prob_sum = log_prob_sum.defined() ? add(log_prob_sum, term) : term;
      sampled.push_back(static_cast<int>(tok));
      state = step.next;
      if (static_cast<int>(tok) == kEndId) break;
    }

    const double sampled_reward = reward.score(strip_end(sampled, vocab), refs);
    stats.mean_sampled_reward += sampled_reward * inv;
    stats.mean_greedy_reward += baseline * inv;

    const double advantage = sampled_reward - baseline;
    if (grads != nullptr && advantage != 0.0) {
      const Tensor loss = scale(log_prob_sum, -advantage);
      accumulate_grads(grads, bound, tape.backward(loss), inv);
    }
  }
  return stats;
}

TrainResult train_scst(const std::vector<ImageRecord>& dataset,
                       const std::vector<KnowledgeCorpus>& corpora,
                       const Vocabulary& vocab, const TrainConfig& config,
                       ModelParameters& params) {
  config.validate();
  if (dataset.empty()) {
    throw std::invalid_argument("train_scst: empty dataset");
  }
  if (dataset.size() != corpora.size()) {
    throw std::invalid_argument("train_scst: corpora must align with dataset");
  }
  const std::vector<std::vector<Tokens>> refs = reference_sets(dataset, vocab);
  const CiderScorer reward(refs);  // idf frozen from the training references
  std::mt19937 rng(config.seed);
  OptimizerState opt;
  TrainResult result;

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double mean_sampled = 0.0;
    std::size_t batches = 0;
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          pos + static_cast<std::size_t>(config.batch_size), order.size());
      std::vector<const ImageRecord*> batch;
      std::vector<const KnowledgeCorpus*> batch_corpora;
      for (std::size_t i = pos; i < end; ++i) {
        batch.push_back(&dataset[order[i]]);
        batch_corpora.push_back(&corpora[order[i]]);
      }
      GradMap grads;
      const ScstStats stats =
          scst_step(batch, batch_corpora, params, vocab, reward, config.lambda,
                    config.max_len, rng, &grads);
      clip_gradients(grads, config.clip_norm);
      adam_step(params, grads, opt, config.lr);
      mean_sampled += stats.mean_sampled_reward;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.split = "train";
    log.loss = -mean_sampled / static_cast<double>(batches);
    log.cider = mean_greedy_cider(dataset, corpora, params, vocab, reward,
                                  config.lambda, config.max_len);
    log.lr = config.lr;
    log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.log.push_back(log);
  }
  return result;
}

double mean_greedy_cider(const std::vector<ImageRecord>& dataset,
                         const std::vector<KnowledgeCorpus>& corpora,
                         const ModelParameters& params,
                         const Vocabulary& vocab, const CiderScorer& scorer,
                         double lambda, int max_len) {
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::vector<Tokens> refs;
    for (const auto& cap : dataset[i].captions) {
      refs.push_back(vocab.decode(cap.tokens));
    }
    const DecodedSequence seq = greedy_decode(
        params, dataset[i].features, corpora[i], vocab, lambda, max_len);
    total += scorer.score(strip_end(seq.tokens, vocab), refs);
  }
  return total / static_cast<double>(dataset.size());
}

}  // namespace cap
