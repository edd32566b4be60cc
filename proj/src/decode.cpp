#include "captioner/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cap {

namespace {
// Logits pushed this far down (the <unk> ban) never re-enter the search.
constexpr double kBannedLogProb = -1e20;
}

LstmSequenceModel::LstmSequenceModel(const ModelParameters& params,
                                     const FeatureSet& features,
                                     const KnowledgeCorpus& corpus,
                                     const Vocabulary& vocab, double lambda,
                                     bool ban_unk)
    : model_(bind(params, nullptr)),
      features_(features_tensor(features)),
      vocab_(vocab),
      bonus_(knowledge_bonus(corpus, lambda, vocab)),
      ban_unk_(ban_unk),
      use_bonus_(lambda > 0.0) {
  if (vocab.size() != params.config.vocab_size) {
    throw std::invalid_argument(
        "LstmSequenceModel: vocabulary size does not match the checkpoint");
  }
}

std::size_t LstmSequenceModel::vocab_size() const {
  return model_.config.vocab_size;
}

std::vector<double> LstmSequenceModel::next_log_probs(
    const std::vector<int>& prefix, std::vector<double>* alpha_out) const {
  const Tensor vbar = mean_rows(features_);
  DecoderState state = init_state(model_, vbar);

  StepOptions opts;
  opts.knowledge_bonus = use_bonus_ ? &bonus_ : nullptr;
  opts.ban_unk = ban_unk_;

  for (std::size_t t = 0; t <= prefix.size(); ++t) {
    const std::vector<int> generated(prefix.begin(),
                                     prefix.begin() + static_cast<long>(t));
    const Tensor context = inference_word_context(model_, generated, vocab_);
    const int input = t == 0 ? kStartId : prefix[t - 1];
    StepResult step = model_step(model_, features_, context, input, state, opts);
    if (t == prefix.size()) {
      if (alpha_out != nullptr) *alpha_out = step.alpha;
      return step.log_probs.values();
    }
    state = step.next;
  }
  throw std::logic_error("unreachable");
}

namespace {

std::size_t argmax_token(const std::vector<double>& log_probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < log_probs.size(); ++i) {
    if (log_probs[i] > log_probs[best]) best = i;
  }
  return best;
}

}  // namespace

DecodedSequence greedy_decode(const SequenceModel& model, int max_len) {
  if (max_len < 1) {
    throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  }
  DecodedSequence seq;
  for (int t = 0; t < max_len; ++t) {
    std::vector<double> alpha;
    const std::vector<double> lp = model.next_log_probs(seq.tokens, &alpha);
    const std::size_t tok = argmax_token(lp);
    seq.tokens.push_back(static_cast<int>(tok));
    seq.score += lp[tok];
    if (!alpha.empty()) seq.per_step_alphas.push_back(std::move(alpha));
    if (static_cast<int>(tok) == model.end_token()) break;
  }
  return seq;
}

DecodedSequence sample_decode(const SequenceModel& model, int max_len,
                              std::mt19937& rng) {
  if (max_len < 1) {
    throw std::invalid_argument("sample_decode: max_len must be >= 1");
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  DecodedSequence seq;
  for (int t = 0; t < max_len; ++t) {
    std::vector<double> alpha;
    const std::vector<double> lp = model.next_log_probs(seq.tokens, &alpha);
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
    seq.tokens.push_back(static_cast<int>(tok));
    seq.score += lp[tok];
    if (!alpha.empty()) seq.per_step_alphas.push_back(std::move(alpha));
    if (static_cast<int>(tok) == model.end_token()) break;
  }
  return seq;
}

DecodedSequence beam_search(const SequenceModel& model, int beam, int max_len) {
  if (beam < 1 || max_len < 1) {
    throw std::invalid_argument("beam_search: beam and max_len must be >= 1");
  }

  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
    std::vector<std::vector<double>> alphas;
    int finish_step = -1;
  };

  std::vector<Hyp> live(1);
  std::vector<Hyp> finished;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    struct Candidate {
      double score;
      std::size_t hyp;
      int token;
    };
    std::vector<Candidate> candidates;
    std::vector<std::vector<double>> alphas(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      const std::vector<double> lp =
          model.next_log_probs(live[h].tokens, &alphas[h]);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (lp[tok] < kBannedLogProb) continue;
        candidates.push_back(
            {live[h].score + lp[tok], h, static_cast<int>(tok)});
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.hyp != b.hyp) return a.hyp < b.hyp;
                return a.token < b.token;
              });
    if (candidates.size() > static_cast<std::size_t>(beam)) {
      candidates.resize(static_cast<std::size_t>(beam));
    }
    std::vector<Hyp> next_live;
    for (const Candidate& c : candidates) {
      Hyp hyp = live[c.hyp];
      hyp.tokens.push_back(c.token);
      hyp.score = c.score;
      if (!alphas[c.hyp].empty()) hyp.alphas.push_back(alphas[c.hyp]);
      if (c.token == model.end_token()) {
        hyp.finish_step = step;
        finished.push_back(std::move(hyp));
      } else {
        next_live.push_back(std::move(hyp));
      }
    }
    live = std::move(next_live);
  }

  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.finish_step != b.finish_step) return a.finish_step < b.finish_step;
    return a.tokens < b.tokens;
  };

  const std::vector<Hyp>& pool = finished.empty() ? live : finished;
  if (pool.empty()) {
    throw std::runtime_error("beam_search: no hypotheses produced");
  }
  const Hyp* best = &pool[0];
  for (const Hyp& h : pool) {
    if (better(h, *best)) best = &h;
  }

  DecodedSequence seq;
  seq.tokens = best->tokens;
  seq.score = best->score;
  seq.per_step_alphas = best->alphas;
  return seq;
}

DecodedSequence greedy_decode(const ModelParameters& params,
                              const FeatureSet& features,
                              const KnowledgeCorpus& corpus,
                              const Vocabulary& vocab, double lambda,
                              int max_len) {
  LstmSequenceModel model(params, features, corpus, vocab, lambda);
  return greedy_decode(model, max_len);
}

DecodedSequence sample_decode(const ModelParameters& params,
                              const FeatureSet& features,
                              const KnowledgeCorpus& corpus,
                              const Vocabulary& vocab, double lambda,
                              int max_len, std::mt19937& rng) {
  LstmSequenceModel model(params, features, corpus, vocab, lambda);
  return sample_decode(model, max_len, rng);
}

DecodedSequence beam_search(const ModelParameters& params,
                            const FeatureSet& features,
                            const KnowledgeCorpus& corpus,
                            const Vocabulary& vocab, double lambda, int beam,
                            int max_len) {
  LstmSequenceModel model(params, features, corpus, vocab, lambda);
  return beam_search(model, beam, max_len);
}

double score_sequence(const SequenceModel& model,
                      const std::vector<int>& tokens) {
  double score = 0.0;
  std::vector<int> prefix;
  for (int tok : tokens) {
    const std::vector<double> lp = model.next_log_probs(prefix, nullptr);
    score += lp[static_cast<std::size_t>(tok)];
    prefix.push_back(tok);
  }
  return score;
}

}  // namespace cap
