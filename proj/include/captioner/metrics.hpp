#ifndef CAPTIONER_METRICS_HPP_
#define CAPTIONER_METRICS_HPP_

#include <string>
#include <unordered_map>
#include <vector>

namespace cap {

using Tokens = std::vector<std::string>;

// Modified n-gram precision BLEU with brevity penalty against the
// closest-length reference. Geometric mean over orders 1..max_n.
double bleu(const Tokens& hypothesis, const std::vector<Tokens>& references,
            int max_n);

// LCS F-measure, beta = 1.2, maximum over references.
double rouge_l(const Tokens& hypothesis, const std::vector<Tokens>& references);

struct CiderResult {
  std::vector<double> per_image;
  double mean = 0.0;
};

// CIDEr-D with sigma = 6, n-gram orders 1..4, scale 10. The document
// frequency table is built once from the supplied reference corpus so the
// same instance can serve as a frozen SCST reward.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<std::vector<Tokens>>& reference_sets);

  // Score one hypothesis against one image's references (which must come
  // from the corpus this scorer was built on for meaningful idf values).
  double score(const Tokens& hypothesis,
               const std::vector<Tokens>& references) const;

 private:
  struct SentVec {
    // one map per n-gram order, key = space-joined n-gram
    std::vector<std::unordered_map<std::string, double>> vec;
    std::vector<double> norm;
    std::size_t length = 0;
  };
  SentVec vectorize(const Tokens& tokens) const;

  std::unordered_map<std::string, std::size_t> doc_freq_;
  double log_num_images_ = 0.0;
};

// Convenience wrapper: IDF from the supplied reference corpus.
CiderResult cider_d(const std::vector<Tokens>& hypotheses,
                    const std::vector<std::vector<Tokens>>& references);

struct MetricReport {
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::size_t n_images = 0;
};

// Mean sentence-level BLEU/ROUGE-L plus corpus CIDEr-D.
MetricReport evaluate_corpus(const std::vector<Tokens>& hypotheses,
                             const std::vector<std::vector<Tokens>>& references);

}  // namespace cap

#endif  // CAPTIONER_METRICS_HPP_
