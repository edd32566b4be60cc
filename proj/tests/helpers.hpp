#ifndef CAPTIONER_TESTS_HELPERS_HPP_
#define CAPTIONER_TESTS_HELPERS_HPP_

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "captioner/corpus.hpp"
#include "captioner/knowledge.hpp"
#include "captioner/model.hpp"
#include "captioner/trainer.hpp"

namespace test_helpers {

inline std::vector<double> random_vector(std::size_t n, std::mt19937& rng,
                                         double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> unif(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = unif(rng);
  return out;
}

inline cap::FeatureSet random_features(std::size_t regions, std::size_t dim,
                                       std::mt19937& rng) {
  cap::FeatureSet fs;
  fs.regions = regions;
  fs.dim = dim;
  fs.matrix = random_vector(regions * dim, rng);
  return fs;
}

// Ten fixed short sentences with enough 4-gram structure for BLEU-4.
inline std::vector<std::string> synthetic_captions() {
  return {
      "a red bird sits on the fence",
      "a small dog runs in the park",
      "two cats sleep on the warm mat",
      "a man rides a blue bike downtown",
      "the girl eats a green apple slowly",
      "a yellow boat floats on the lake",
      "an old train crosses the iron bridge",
      "the boy kicks a white ball outside",
      "a brown horse jumps over the gate",
      "the woman reads a long book quietly",
  };
}

struct SyntheticSet {
  std::vector<cap::ImageRecord> dataset;
  std::vector<cap::KnowledgeCorpus> corpora;
  cap::Vocabulary vocab;
};

// One caption per image, distinct random features, knowledge corpora seeded
// with each caption's content words.
inline SyntheticSet make_synthetic_set(std::mt19937& rng,
                                       std::size_t regions = 6,
                                       std::size_t feat_dim = 32) {
  SyntheticSet set;
  const auto sentences = synthetic_captions();
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& s : sentences) tokenized.push_back(cap::tokenize(s));
  set.vocab = cap::Vocabulary::build(tokenized, 200);

  for (std::size_t i = 0; i < sentences.size(); ++i) {
    cap::ImageRecord img;
    img.id = "img" + std::to_string(i);
    img.features = random_features(regions, feat_dim, rng);
    cap::CaptionRecord cr;
    cr.raw = sentences[i];
    cr.tokens = set.vocab.encode(tokenized[i]);
    img.captions.push_back(cr);
    set.dataset.push_back(std::move(img));

    cap::KnowledgeCorpus corpus;
    for (const auto& tok : tokenized[i]) {
      if (tok.size() > 3) corpus.insert_max(tok, 0.8);
    }
    set.corpora.push_back(std::move(corpus));
  }
  return set;
}

// Writes the synthetic corpus to disk in the on-disk formats: one .fvec per
// image, dataset.jsonl, and triples.jsonl whose retrieval reproduces the
// in-memory knowledge corpora (object label plus the caption's other content
// words).
inline void write_synthetic_files(const std::filesystem::path& dir,
                                  std::mt19937& rng, std::size_t regions = 6,
                                  std::size_t feat_dim = 32) {
  std::filesystem::create_directories(dir);
  const auto sentences = synthetic_captions();
  std::ofstream manifest(dir / "dataset.jsonl");
  std::ofstream triples(dir / "triples.jsonl");
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto tokens = cap::tokenize(sentences[i]);
    std::vector<std::string> content;
    for (const auto& t : tokens) {
      if (t.size() > 3) content.push_back(t);
    }
    const std::string feature_file = "img" + std::to_string(i) + ".fvec";
    cap::store_features(random_features(regions, feat_dim, rng),
                        (dir / feature_file).string());
    manifest << R"({"id":"img)" << i << R"(","captions":[")" << sentences[i]
             << R"("],"objects":[{"label":")" << content.front()
             << R"(","score":0.9}],"features":")" << feature_file << "\"}\n";
    for (std::size_t j = 1; j < content.size(); ++j) {
      triples << R"({"subject":")" << content.front()
              << R"(","rel":"related_to","object":")" << content[j]
              << R"(","weight":0.8})" << "\n";
    }
  }
}

inline cap::ModelConfig desk_config(std::size_t vocab_size,
                                    std::size_t embed_dim = 64,
                                    std::size_t attn_dim = 32,
                                    std::size_t feat_dim = 32) {
  cap::ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embed_dim = embed_dim;
  cfg.attn_dim = attn_dim;
  cfg.feat_dim = feat_dim;
  return cfg;
}

// Central finite differences of the teacher-forced XE loss w.r.t. one named
// parameter tensor. Independent of the tape: only forward passes.
inline std::vector<double> fd_parameter_gradient(
    const cap::ModelParameters& params, const std::string& name,
    const cap::ImageRecord& image, const cap::CaptionRecord& caption,
    const cap::KnowledgeCorpus& corpus, const cap::Vocabulary& vocab,
    double lambda, double step) {
  const auto loss_at = [&](const cap::ModelParameters& p) {
    cap::BoundModel bound = cap::bind(p, nullptr);
    cap::ForwardOptions opts;
    opts.lambda = lambda;
    const auto dists =
        cap::forward_teacher_forced(bound, image.features, caption, corpus,
                                    vocab, opts);
    std::vector<int> targets = caption.tokens;
    targets.push_back(cap::kEndId);
    double loss = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      loss -= dists[t].at(static_cast<std::size_t>(targets[t]));
    }
    return loss;
  };

  cap::ModelParameters work = params;
  auto& data = work.find(name).data;
  std::vector<double> grad(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    const auto eval = [&](double offset) {
      data[i] = saved + offset;
      return loss_at(work);
    };
    // five-point stencil: truncation O(step^4)
    grad[i] = (eval(-2 * step) - 8 * eval(-step) + 8 * eval(step) -
               eval(2 * step)) /
              (12.0 * step);
    data[i] = saved;
  }
  return grad;
}

inline double max_rel_error(const std::vector<double>& a,
                            const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(1e-8, std::abs(a[i]) + std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace test_helpers

#endif  // CAPTIONER_TESTS_HELPERS_HPP_
