#include "captioner/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cap {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (tokens.empty()) {
    throw std::invalid_argument("tokenize: nothing left after cleaning \"" +
                                text + "\"");
  }
  return tokens;
}

namespace {
const std::vector<std::string> kSpecials = {"<start>", "<end>", "<unk>",
                                            "<pad>"};
}

Vocabulary::Vocabulary() {
  for (const auto& s : kSpecials) {
    token_to_id_.emplace(s, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(s);
  }
}

Vocabulary Vocabulary::build(
    const std::vector<std::vector<std::string>>& captions,
    std::size_t max_size) {
  if (max_size <= 4) {
    throw std::invalid_argument("Vocabulary::build: max_size must exceed 4");
  }
  if (captions.empty()) {
    throw std::invalid_argument("Vocabulary::build: empty corpus");
  }
  std::map<std::string, std::size_t> term_freq;
  std::map<std::string, std::size_t> doc_freq;
  for (const auto& caption : captions) {
    std::map<std::string, bool> seen;
    for (const auto& tok : caption) {
      ++term_freq[tok];
      if (!seen[tok]) {
        seen[tok] = true;
        ++doc_freq[tok];
      }
    }
  }
  // Most frequent first; lexicographic tie-break keeps the cut deterministic.
  std::vector<std::pair<std::string, std::size_t>> ranked(term_freq.begin(),
                                                          term_freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > max_size) ranked.resize(max_size);

  Vocabulary vocab;
  vocab.n_docs_ = captions.size();
  for (const auto& [tok, freq] : ranked) {
    (void)freq;
    vocab.token_to_id_.emplace(tok, static_cast<int>(vocab.id_to_token_.size()));
    vocab.id_to_token_.push_back(tok);
    vocab.doc_freq_[tok] = doc_freq[tok];
  }
  return vocab;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::invalid_argument("Vocabulary::token: id " + std::to_string(id) +
                                " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

std::size_t Vocabulary::doc_freq(const std::string& token) const {
  auto it = doc_freq_.find(token);
  return it == doc_freq_.end() ? 0 : it->second;
}

double Vocabulary::idf(const std::string& token) const {
  return std::log((1.0 + static_cast<double>(n_docs_)) /
                  (1.0 + static_cast<double>(doc_freq(token)))) +
         1.0;
}

double Vocabulary::idf(int token_id) const { return idf(token(token_id)); }

std::vector<int> Vocabulary::encode(
    const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(id(tok));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int i : ids) tokens.push_back(token(i));
  return tokens;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("Vocabulary::save: cannot open " + path);
  }
  out << "n_docs=" << n_docs_ << "\n";
  for (const auto& tok : id_to_token_) {
    out << tok << "\t" << doc_freq(tok) << "\n";
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("Vocabulary::load: cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line.rfind("n_docs=", 0) != 0) {
    throw std::runtime_error("Vocabulary::load: missing n_docs header in " +
                             path);
  }
  Vocabulary vocab;
  vocab.token_to_id_.clear();
  vocab.id_to_token_.clear();
  vocab.n_docs_ = std::stoull(line.substr(7));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("Vocabulary::load: malformed line \"" + line +
                               "\"");
    }
    std::string tok = line.substr(0, tab);
    std::size_t freq = std::stoull(line.substr(tab + 1));
    vocab.token_to_id_.emplace(tok,
                               static_cast<int>(vocab.id_to_token_.size()));
    vocab.id_to_token_.push_back(tok);
    vocab.doc_freq_[tok] = freq;
  }
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (vocab.id_to_token_.size() <= i || vocab.id_to_token_[i] != kSpecials[i]) {
      throw std::runtime_error("Vocabulary::load: specials missing in " + path);
    }
  }
  return vocab;
}

std::vector<double> tfidf_weights(const CaptionRecord& sentence,
                                  const Vocabulary& vocab) {
  if (vocab.n_docs() == 0) {
    throw std::invalid_argument("tfidf_weights: vocabulary has no documents");
  }
  const std::size_t n = sentence.tokens.size();
  std::unordered_map<int, std::size_t> counts;
  for (int id : sentence.tokens) ++counts[id];
  std::vector<double> delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int id = sentence.tokens[i];
    const double tf =
        static_cast<double>(counts[id]) / static_cast<double>(n);
    delta[i] = tf * vocab.idf(id);
  }
  return delta;
}

namespace {

constexpr char kFvecMagic[4] = {'F', 'V', 'E', 'C'};

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw std::runtime_error("load_features: truncated payload in " + path);
  }
  for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

float read_f32(std::istream& in, const std::string& path) {
  std::uint32_t bits = read_u32(in, path);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void write_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(out, bits);
}

}  // namespace

FeatureSet load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_features: cannot open " + path);
  }
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFvecMagic, 4) != 0) {
    throw std::runtime_error("load_features: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != 1) {
    throw std::runtime_error("load_features: unsupported version " +
                             std::to_string(version) + " in " + path);
  }
  FeatureSet fs;
  fs.regions = read_u32(in, path);
  fs.dim = read_u32(in, path);
  if (fs.regions == 0 || fs.dim == 0) {
    throw std::runtime_error("load_features: empty dimensions in " + path);
  }
  fs.matrix.resize(fs.regions * fs.dim);
  for (auto& v : fs.matrix) {
    v = static_cast<double>(read_f32(in, path));
    if (!std::isfinite(v)) {
      throw std::runtime_error("load_features: non-finite value in " + path);
    }
  }
  return fs;
}

void store_features(const FeatureSet& features, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("store_features: cannot open " + path);
  }
  out.write(kFvecMagic, 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(features.regions));
  write_u32(out, static_cast<std::uint32_t>(features.dim));
  for (double v : features.matrix) write_f32(out, static_cast<float>(v));
}

std::vector<double> mean_pool(const FeatureSet& features) {
  if (features.regions == 0) {
    throw std::invalid_argument("mean_pool: feature set has no regions");
  }
  std::vector<double> pooled(features.dim, 0.0);
  for (std::size_t i = 0; i < features.regions; ++i)
    for (std::size_t j = 0; j < features.dim; ++j)
      pooled[j] += features.at(i, j);
  for (auto& v : pooled) v /= static_cast<double>(features.regions);
  return pooled;
}

std::vector<RawImageRecord> load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw std::runtime_error("load_dataset: cannot open " + manifest_path);
  }
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<RawImageRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: " + manifest_path + " line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    RawImageRecord rec;
    rec.id = j.at("id").get<std::string>();
    for (const auto& c : j.at("captions")) {
      rec.raw_captions.push_back(c.get<std::string>());
      rec.caption_tokens.push_back(tokenize(rec.raw_captions.back()));
    }
    if (j.contains("objects")) {
      for (const auto& o : j.at("objects")) {
        ScoredObject obj;
        obj.label = o.at("label").get<std::string>();
        obj.score = o.at("score").get<double>();
        if (obj.score < 0.0 || obj.score > 1.0) {
          throw std::runtime_error("load_dataset: object score out of [0,1] at " +
                                   manifest_path + " line " +
                                   std::to_string(lineno));
        }
        rec.objects.push_back(std::move(obj));
      }
    }
    std::stable_sort(rec.objects.begin(), rec.objects.end(),
                     [](const ScoredObject& a, const ScoredObject& b) {
                       return a.score > b.score;
                     });
    const std::string feat_rel = j.at("features").get<std::string>();
    rec.features = load_features((base / feat_rel).string());
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ImageRecord> encode_dataset(const std::vector<RawImageRecord>& raw,
                                        const Vocabulary& vocab) {
  std::vector<ImageRecord> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    ImageRecord rec;
    rec.id = r.id;
    rec.features = r.features;
    rec.objects = r.objects;
    for (std::size_t i = 0; i < r.caption_tokens.size(); ++i) {
      CaptionRecord cr;
      cr.raw = r.raw_captions[i];
      cr.tokens = vocab.encode(r.caption_tokens[i]);
      rec.captions.push_back(std::move(cr));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace cap
