#ifndef CAPTIONER_CORPUS_HPP_
#define CAPTIONER_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace cap {

// Token ids 0..3 are reserved.
enum SpecialToken : int {
  kStartId = 0,
  kEndId = 1,
  kUnkId = 2,
  kPadId = 3,
};

// Lowercase, strip punctuation, split on whitespace.
// Throws std::invalid_argument if nothing survives cleaning.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  Vocabulary();

  // Most frequent max_size tokens plus the four specials. Document
  // frequencies count how many captions contain each kept token.
  static Vocabulary build(const std::vector<std::vector<std::string>>& captions,
                          std::size_t max_size);

  int id(const std::string& token) const;  // <unk> for unseen tokens
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  std::size_t size() const { return id_to_token_.size(); }

  std::size_t n_docs() const { return n_docs_; }
  std::size_t doc_freq(const std::string& token) const;
  // Smoothed idf: ln((1 + n_docs) / (1 + doc_freq)) + 1, always >= 1.
  double idf(const std::string& token) const;
  double idf(int id) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::size_t> doc_freq_;
  std::size_t n_docs_ = 0;
};

struct CaptionRecord {
  std::vector<int> tokens;  // no specials, length >= 1
  std::string raw;
};

struct FeatureSet {
  std::size_t regions = 0;  // L
  std::size_t dim = 0;      // D
  std::vector<double> matrix;  // L x D row-major

  double at(std::size_t i, std::size_t j) const { return matrix[i * dim + j]; }
};

struct ScoredObject {
  std::string label;
  double score = 0.0;  // in [0,1]
};

struct ImageRecord {
  std::string id;
  FeatureSet features;
  std::vector<ScoredObject> objects;  // sorted by score descending
  std::vector<CaptionRecord> captions;
};

// delta_i = tf(w_i) * idf(w_i), tf = count(w_i in sentence) / N.
// Constant across decoding time steps.
std::vector<double> tfidf_weights(const CaptionRecord& sentence,
                                  const Vocabulary& vocab);

// .fvec binary: "FVEC", u32 version=1, u32 L, u32 D, L*D little-endian f32.
FeatureSet load_features(const std::string& path);
void store_features(const FeatureSet& features, const std::string& path);

// Arithmetic mean of region vectors.
std::vector<double> mean_pool(const FeatureSet& features);

// dataset.jsonl ingestion. Captions are tokenized on load; encode_dataset
// resolves them to ids once a vocabulary exists.
struct RawImageRecord {
  std::string id;
  FeatureSet features;
  std::vector<ScoredObject> objects;
  std::vector<std::string> raw_captions;
  std::vector<std::vector<std::string>> caption_tokens;
};

std::vector<RawImageRecord> load_dataset(const std::string& manifest_path);
std::vector<ImageRecord> encode_dataset(const std::vector<RawImageRecord>& raw,
                                        const Vocabulary& vocab);

}  // namespace cap

#endif  // CAPTIONER_CORPUS_HPP_
