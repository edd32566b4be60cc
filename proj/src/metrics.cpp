#include "captioner/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace cap {

namespace {

constexpr int kCiderN = 4;
constexpr double kCiderSigma = 6.0;
constexpr double kRougeBeta = 1.2;

std::string join_ngram(const Tokens& tokens, std::size_t start, int n) {
  std::string key = tokens[start];
  for (int i = 1; i < n; ++i) {
    key.push_back(' ');
    key += tokens[start + static_cast<std::size_t>(i)];
  }
  return key;
}

std::unordered_map<std::string, std::size_t> ngram_counts(const Tokens& tokens,
                                                          int n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
    ++counts[join_ngram(tokens, i, n)];
  return counts;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void require_refs(const std::vector<Tokens>& references, const char* op) {
  if (references.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty reference set");
  }
}

}  // namespace

double bleu(const Tokens& hypothesis, const std::vector<Tokens>& references,
            int max_n) {
  require_refs(references, "bleu");
  if (hypothesis.empty()) {
    throw std::invalid_argument("bleu: empty hypothesis");
  }
  if (max_n < 1 || max_n > 4) {
    throw std::invalid_argument("bleu: order must be in 1..4");
  }

  double log_precision_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto hyp_counts = ngram_counts(hypothesis, n);
    std::size_t total = 0, clipped = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      std::size_t best_ref = 0;
      for (const auto& ref : references) {
        const auto ref_counts = ngram_counts(ref, n);
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) best_ref = std::max(best_ref, it->second);
      }
      clipped += std::min(count, best_ref);
    }
    if (total == 0 || clipped == 0) return 0.0;
    log_precision_sum += std::log(static_cast<double>(clipped) /
                                  static_cast<double>(total));
  }

  // Brevity penalty against the closest reference length (shorter wins ties).
  const std::size_t c = hypothesis.size();
  std::size_t r = references[0].size();
  for (const auto& ref : references) {
    const auto diff = [&](std::size_t len) {
      return len > c ? len - c : c - len;
    };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) &&
                                       ref.size() < r)) {
      r = ref.size();
    }
  }
  double bp = 1.0;
  if (c < r) {
    bp = std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  }
  return bp * std::exp(log_precision_sum / max_n);
}

double rouge_l(const Tokens& hypothesis,
               const std::vector<Tokens>& references) {
  require_refs(references, "rouge_l");
  if (hypothesis.empty()) {
    throw std::invalid_argument("rouge_l: empty hypothesis");
  }
  const double beta2 = kRougeBeta * kRougeBeta;
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(hypothesis, ref));
    if (lcs == 0.0) continue;
    const double precision = lcs / static_cast<double>(hypothesis.size());
    const double recall = lcs / static_cast<double>(ref.size());
    const double f = (1.0 + beta2) * recall * precision /
                     (recall + beta2 * precision);
    best = std::max(best, f);
  }
  return best;
}

CiderScorer::CiderScorer(
    const std::vector<std::vector<Tokens>>& reference_sets) {
  if (reference_sets.empty()) {
    throw std::invalid_argument("CiderScorer: empty reference corpus");
  }
  for (const auto& refs : reference_sets) {
    require_refs(refs, "CiderScorer");
    // df counts images whose reference set contains the n-gram
    std::unordered_map<std::string, bool> seen;
    for (const auto& ref : refs) {
      for (int n = 1; n <= kCiderN; ++n) {
        for (const auto& [gram, count] : ngram_counts(ref, n)) {
          (void)count;
          if (!seen[gram]) {
            seen[gram] = true;
            ++doc_freq_[gram];
          }
        }
      }
    }
  }
  log_num_images_ = std::log(static_cast<double>(reference_sets.size()));
}

CiderScorer::SentVec CiderScorer::vectorize(const Tokens& tokens) const {
  SentVec sv;
  sv.vec.resize(kCiderN);
  sv.norm.assign(kCiderN, 0.0);
  sv.length = tokens.size();
  for (int n = 1; n <= kCiderN; ++n) {
    auto& vec = sv.vec[static_cast<std::size_t>(n - 1)];
    for (const auto& [gram, count] : ngram_counts(tokens, n)) {
      auto it = doc_freq_.find(gram);
      const double df =
          std::log(std::max(1.0, it == doc_freq_.end()
                                     ? 0.0
                                     : static_cast<double>(it->second)));
      const double w = static_cast<double>(count) * (log_num_images_ - df);
      vec[gram] = w;
      sv.norm[static_cast<std::size_t>(n - 1)] += w * w;
    }
    sv.norm[static_cast<std::size_t>(n - 1)] =
        std::sqrt(sv.norm[static_cast<std::size_t>(n - 1)]);
  }
  return sv;
}

double CiderScorer::score(const Tokens& hypothesis,
                          const std::vector<Tokens>& references) const {
  require_refs(references, "CiderScorer::score");
  const SentVec hyp = vectorize(hypothesis);
  double total = 0.0;
  for (const auto& ref_tokens : references) {
    const SentVec ref = vectorize(ref_tokens);
    const double delta =
        static_cast<double>(hyp.length) - static_cast<double>(ref.length);
    const double len_penalty =
        std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
    for (int n = 0; n < kCiderN; ++n) {
      double dot = 0.0;
      const auto& hv = hyp.vec[static_cast<std::size_t>(n)];
      const auto& rv = ref.vec[static_cast<std::size_t>(n)];
      for (const auto& [gram, hw] : hv) {
        auto it = rv.find(gram);
        if (it == rv.end()) continue;
        // count clipping: hypothesis weight clipped to the reference's
        dot += std::min(hw, it->second) * it->second;
      }
      const double denom = hyp.norm[static_cast<std::size_t>(n)] *
                           ref.norm[static_cast<std::size_t>(n)];
      if (denom > 0.0) total += len_penalty * dot / denom;
    }
  }
  return 10.0 * total /
         (static_cast<double>(references.size()) * kCiderN);
}

CiderResult cider_d(const std::vector<Tokens>& hypotheses,
                    const std::vector<std::vector<Tokens>>& references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("cider_d: hypothesis/reference count mismatch");
  }
  CiderScorer scorer(references);
  CiderResult result;
  result.per_image.reserve(hypotheses.size());
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    result.per_image.push_back(scorer.score(hypotheses[i], references[i]));
    result.mean += result.per_image.back();
  }
  if (!hypotheses.empty()) {
    result.mean /= static_cast<double>(hypotheses.size());
  }
  return result;
}

MetricReport evaluate_corpus(
    const std::vector<Tokens>& hypotheses,
    const std::vector<std::vector<Tokens>>& references) {
  if (hypotheses.size() != references.size() || hypotheses.empty()) {
    throw std::invalid_argument("evaluate_corpus: corpus size mismatch");
  }
  MetricReport report;
  report.n_images = hypotheses.size();
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    report.bleu1 += bleu(hypotheses[i], references[i], 1);
    report.bleu2 += bleu(hypotheses[i], references[i], 2);
    report.bleu3 += bleu(hypotheses[i], references[i], 3);
    report.bleu4 += bleu(hypotheses[i], references[i], 4);
    report.rouge_l += rouge_l(hypotheses[i], references[i]);
  }
  const double n = static_cast<double>(hypotheses.size());
  report.bleu1 /= n;
  report.bleu2 /= n;
  report.bleu3 /= n;
  report.bleu4 /= n;
  report.rouge_l /= n;
  report.cider_d = cider_d(hypotheses, references).mean;
  return report;
}

}  // namespace cap
