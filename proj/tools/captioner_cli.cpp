// Command-line front end: preprocessing, training, captioning, evaluation,
// and the ablation / lambda-sweep harnesses.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "captioner/corpus.hpp"
#include "captioner/decode.hpp"
#include "captioner/knowledge.hpp"
#include "captioner/metrics.hpp"
#include "captioner/model.hpp"
#include "captioner/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cap;

namespace {

// ---------------------------------------------------------------------------
// settings

struct Settings {
  // model
  std::size_t embed_dim = 64;
  std::size_t attn_dim = 32;
  std::size_t vocab_size = 200;
  bool tied_output = true;
  bool use_word_attention = true;
  // optimization
  int batch_size = 16;
  double lr = 1e-2;
  double anneal_factor = 1.0;
  int anneal_every = 5;
  double dropout_keep = 1.0;
  int epochs = 300;
  int patience = 0;
  double clip_norm = 5.0;
  // self-critical phase
  double scst_lr = 1e-4;
  int scst_epochs = 5;
  int scst_batch = 16;
  // knowledge + decoding
  double lambda = 0.2;
  int top_objects = 3;
  int per_object_k = 5;
  int beam = 3;
  int max_len = 16;
  unsigned seed = 1;
};

void apply_preset(Settings& s, const std::string& preset) {
  if (preset == "desk" || preset.empty()) return;  // desk is the default above
  if (preset == "paper") {
    s.embed_dim = 512;
    s.attn_dim = 512;
    s.vocab_size = 8000;
    s.batch_size = 64;
    s.lr = 5e-4;
    s.anneal_factor = 0.7;
    s.anneal_every = 5;
    s.dropout_keep = 0.5;
    s.epochs = 30;
    s.patience = 5;
    s.scst_lr = 1e-4;
    s.scst_epochs = 20;
    s.scst_batch = 32;
    s.lambda = 0.2;
    s.beam = 3;
    s.max_len = 16;
    return;
  }
  throw std::runtime_error("unknown preset: " + preset);
}

void apply_config_entry(Settings& s, const std::string& key,
                        const std::string& value) {
  const auto to_size = [&] { return static_cast<std::size_t>(std::stoul(value)); };
  const auto to_int = [&] { return std::stoi(value); };
  const auto to_double = [&] { return std::stod(value); };
  const auto to_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::runtime_error("config: boolean expected for " + key);
  };
  if (key == "embed_dim") s.embed_dim = to_size();
  else if (key == "attn_dim") s.attn_dim = to_size();
  else if (key == "vocab_size") s.vocab_size = to_size();
  else if (key == "tied_output") s.tied_output = to_bool();
  else if (key == "use_word_attention") s.use_word_attention = to_bool();
  else if (key == "batch_size") s.batch_size = to_int();
  else if (key == "lr") s.lr = to_double();
  else if (key == "anneal_factor") s.anneal_factor = to_double();
  else if (key == "anneal_every") s.anneal_every = to_int();
  else if (key == "dropout_keep") s.dropout_keep = to_double();
  else if (key == "epochs") s.epochs = to_int();
  else if (key == "patience") s.patience = to_int();
  else if (key == "clip_norm") s.clip_norm = to_double();
  else if (key == "scst_lr") s.scst_lr = to_double();
  else if (key == "scst_epochs") s.scst_epochs = to_int();
  else if (key == "scst_batch") s.scst_batch = to_int();
  else if (key == "lambda") s.lambda = to_double();
  else if (key == "top_objects") s.top_objects = to_int();
  else if (key == "per_object_k") s.per_object_k = to_int();
  else if (key == "beam") s.beam = to_int();
  else if (key == "max_len") s.max_len = to_int();
  else if (key == "seed") s.seed = static_cast<unsigned>(std::stoul(value));
  else throw std::runtime_error("config: unknown key " + key);
}

// Flat key=value file; '#' starts a comment.
void apply_config_file(Settings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: missing '=' at " + path + ":" +
                               std::to_string(line_no));
    }
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string()
                                    : v.substr(b, e - b + 1);
    };
    apply_config_entry(s, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

json settings_json(const Settings& s) {
  return json{{"embed_dim", s.embed_dim},
              {"attn_dim", s.attn_dim},
              {"vocab_size", s.vocab_size},
              {"tied_output", s.tied_output},
              {"use_word_attention", s.use_word_attention},
              {"batch_size", s.batch_size},
              {"lr", s.lr},
              {"anneal_factor", s.anneal_factor},
              {"anneal_every", s.anneal_every},
              {"dropout_keep", s.dropout_keep},
              {"epochs", s.epochs},
              {"patience", s.patience},
              {"clip_norm", s.clip_norm},
              {"scst_lr", s.scst_lr},
              {"scst_epochs", s.scst_epochs},
              {"scst_batch", s.scst_batch},
              {"lambda", s.lambda},
              {"top_objects", s.top_objects},
              {"per_object_k", s.per_object_k},
              {"beam", s.beam},
              {"max_len", s.max_len},
              {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// run manifest

std::string fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("manifest: cannot hash missing " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Written before any training step.
void write_manifest(const fs::path& out_dir, const std::string& command,
                    const Settings& s, const std::vector<std::string>& inputs) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["command"] = command;
  manifest["timestamp"] = iso_timestamp();
  manifest["seed"] = s.seed;
  manifest["config"] = settings_json(s);
  json hashes = json::object();
  for (const auto& path : inputs) hashes[path] = fnv1a64_file(path);
  manifest["inputs"] = hashes;
  std::ofstream out(out_dir / "run_manifest.json");
  out << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// data plumbing

struct LoadedData {
  std::vector<RawImageRecord> raw;
  std::vector<ImageRecord> dataset;
  std::vector<KnowledgeCorpus> corpora;
  Vocabulary vocab;
};

std::vector<KnowledgeCorpus> corpora_for(
    const std::vector<RawImageRecord>& raw, const std::string& triples_path,
    const Settings& s) {
  TripleIndex index;
  if (!triples_path.empty()) index = load_triples(triples_path);
  std::vector<KnowledgeCorpus> corpora;
  corpora.reserve(raw.size());
  for (const auto& img : raw) {
    if (triples_path.empty()) {
      corpora.emplace_back();
    } else {
      corpora.push_back(retrieve(img.objects, index,
                                 static_cast<std::size_t>(s.top_objects),
                                 static_cast<std::size_t>(s.per_object_k)));
    }
  }
  return corpora;
}

LoadedData load_data(const std::string& dataset_path,
                     const std::string& triples_path,
                     const std::string& vocab_path, const Settings& s) {
  LoadedData data;
  data.raw = load_dataset(dataset_path);
  if (vocab_path.empty()) {
    std::vector<std::vector<std::string>> all_captions;
    for (const auto& img : data.raw) {
      for (const auto& tokens : img.caption_tokens) all_captions.push_back(tokens);
    }
    data.vocab = Vocabulary::build(all_captions, s.vocab_size);
  } else {
    data.vocab = Vocabulary::load(vocab_path);
  }
  data.dataset = encode_dataset(data.raw, data.vocab);
  data.corpora = corpora_for(data.raw, triples_path, s);
  return data;
}

TrainConfig xe_config(const Settings& s) {
  TrainConfig c;
  c.batch_size = s.batch_size;
  c.lr = s.lr;
  c.anneal_factor = s.anneal_factor;
  c.anneal_every = s.anneal_every;
  c.dropout_keep = s.dropout_keep;
  c.max_epochs = s.epochs;
  c.early_stop_patience = s.patience;
  c.lambda = s.lambda;
  c.mode = TrainMode::kCrossEntropy;
  c.max_len = s.max_len;
  c.seed = s.seed;
  c.clip_norm = s.clip_norm;
  c.validate();
  return c;
}

TrainConfig scst_config(const Settings& s) {
  TrainConfig c = xe_config(s);
  c.mode = TrainMode::kScst;
  c.lr = s.scst_lr;
  c.batch_size = s.scst_batch;
  c.max_epochs = s.scst_epochs;
  c.dropout_keep = 1.0;
  c.early_stop_patience = 0;
  return c;
}

ModelConfig model_config(const Settings& s, std::size_t vocab_size,
                         std::size_t feat_dim) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embed_dim = s.embed_dim;
  cfg.attn_dim = s.attn_dim;
  cfg.feat_dim = feat_dim;
  cfg.tied_output = s.tied_output;
  cfg.use_word_attention = s.use_word_attention;
  return cfg;
}

void write_train_log(const fs::path& path, const TrainResult& result) {
  std::ofstream out(path);
  for (const auto& e : result.log) {
    out << json{{"epoch", e.epoch}, {"split", e.split},   {"loss", e.loss},
                {"bleu4", e.bleu4}, {"cider", e.cider},   {"lr", e.lr},
                {"wall_ms", e.wall_ms}}
               .dump()
        << "\n";
  }
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::vector<std::string> caption_words(const std::vector<int>& tokens,
                                       const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int tok : tokens) {
    if (tok == kEndId) break;
    words.push_back(vocab.token(tok));
  }
  return words;
}

// ---------------------------------------------------------------------------
// subcommand bodies

int run_preprocess(const std::string& dataset_path, const std::string& out_dir,
                   const Settings& s) {
  write_manifest(out_dir, "preprocess", s, {dataset_path});
  const LoadedData data = load_data(dataset_path, "", "", s);
  data.vocab.save((fs::path(out_dir) / "vocab.txt").string());
  json index = json::array();
  for (const auto& img : data.raw) {
    index.push_back(json{{"id", img.id},
                         {"regions", img.features.regions},
                         {"dim", img.features.dim}});
  }
  std::ofstream out(fs::path(out_dir) / "feature_index.json");
  out << index.dump(2) << "\n";
  std::cout << "vocabulary: " << data.vocab.size() << " tokens over "
            << data.raw.size() << " images\n";
  return 0;
}

int run_train_xe(const std::string& dataset_path,
                 const std::string& triples_path, const std::string& out_dir,
                 const Settings& s) {
  std::vector<std::string> inputs = {dataset_path};
  if (!triples_path.empty()) inputs.push_back(triples_path);
  write_manifest(out_dir, "train-xe", s, inputs);

  const LoadedData data = load_data(dataset_path, triples_path, "", s);
  std::mt19937 rng(s.seed);
  ModelParameters params = ModelParameters::init(
      model_config(s, data.vocab.size(), data.dataset[0].features.dim), rng);
  const TrainResult result =
      train_xe(data.dataset, data.corpora, data.vocab, xe_config(s), params);

  data.vocab.save((fs::path(out_dir) / "vocab.txt").string());
  params.save((fs::path(out_dir) / "checkpoint.capt").string());
  write_train_log(fs::path(out_dir) / "train_log.jsonl", result);
  if (!result.log.empty()) {
    std::cout << "final loss " << result.log.back().loss << " bleu4 "
              << result.log.back().bleu4 << "\n";
  }
  return 0;
}

int run_train_scst(const std::string& dataset_path,
                   const std::string& triples_path,
                   const std::string& checkpoint_path,
                   const std::string& vocab_path, const std::string& out_dir,
                   const Settings& s) {
  std::vector<std::string> inputs = {dataset_path, checkpoint_path, vocab_path};
  if (!triples_path.empty()) inputs.push_back(triples_path);
  write_manifest(out_dir, "train-scst", s, inputs);

  const LoadedData data = load_data(dataset_path, triples_path, vocab_path, s);
  ModelParameters params = ModelParameters::load(checkpoint_path);
  const TrainResult result = train_scst(data.dataset, data.corpora, data.vocab,
                                        scst_config(s), params);

  data.vocab.save((fs::path(out_dir) / "vocab.txt").string());
  params.save((fs::path(out_dir) / "checkpoint.capt").string());
  write_train_log(fs::path(out_dir) / "train_log.jsonl", result);
  if (!result.log.empty()) {
    std::cout << "final mean greedy cider " << result.log.back().cider << "\n";
  }
  return 0;
}

int run_caption(const std::string& dataset_path,
                const std::string& triples_path,
                const std::string& checkpoint_path,
                const std::string& vocab_path, const std::string& out_dir,
                bool dump_attention, const Settings& s) {
  std::vector<std::string> inputs = {dataset_path, checkpoint_path, vocab_path};
  if (!triples_path.empty()) inputs.push_back(triples_path);
  write_manifest(out_dir, "caption", s, inputs);

  const LoadedData data = load_data(dataset_path, triples_path, vocab_path, s);
  const ModelParameters params = ModelParameters::load(checkpoint_path);

  std::ofstream out(fs::path(out_dir) / "captions.jsonl");
  for (std::size_t i = 0; i < data.dataset.size(); ++i) {
    const DecodedSequence seq =
        s.beam <= 1
            ? greedy_decode(params, data.dataset[i].features, data.corpora[i],
                            data.vocab, s.lambda, s.max_len)
            : beam_search(params, data.dataset[i].features, data.corpora[i],
                          data.vocab, s.lambda, s.beam, s.max_len);
    json line{{"image_id", data.dataset[i].id},
              {"caption", join_tokens(caption_words(seq.tokens, data.vocab))},
              {"score", seq.score}};
    if (dump_attention) line["alphas"] = seq.per_step_alphas;
    out << line.dump() << "\n";
  }
  std::cout << "captioned " << data.dataset.size() << " images\n";
  return 0;
}

std::map<std::string, std::vector<Tokens>> read_caption_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("evaluate: cannot open " + path);
  std::map<std::string, std::vector<Tokens>> by_image;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("evaluate: bad json at " + path + ":" +
                               std::to_string(line_no) + ": " + e.what());
    }
    const std::string id = rec.at("image_id").get<std::string>();
    std::vector<std::string> captions;
    if (rec.contains("captions")) {
      captions = rec.at("captions").get<std::vector<std::string>>();
    } else {
      captions.push_back(rec.at("caption").get<std::string>());
    }
    for (const auto& c : captions) by_image[id].push_back(tokenize(c));
  }
  return by_image;
}

int run_evaluate(const std::string& hyp_path, const std::string& refs_path,
                 const std::string& out_dir) {
  const auto hyps = read_caption_file(hyp_path);
  const auto refs = read_caption_file(refs_path);
  std::vector<Tokens> hyp_list;
  std::vector<std::vector<Tokens>> ref_list;
  for (const auto& [id, captions] : hyps) {
    const auto it = refs.find(id);
    if (it == refs.end()) {
      throw std::runtime_error("evaluate: no references for image " + id);
    }
    hyp_list.push_back(captions.front());
    ref_list.push_back(it->second);
  }
  const MetricReport report = evaluate_corpus(hyp_list, ref_list);
  const json out{{"bleu1", report.bleu1},     {"bleu2", report.bleu2},
                 {"bleu3", report.bleu3},     {"bleu4", report.bleu4},
                 {"rouge_l", report.rouge_l}, {"cider_d", report.cider_d},
                 {"n_images", report.n_images}};
  std::cout << out.dump(2) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream file(fs::path(out_dir) / "metrics.json");
    file << out.dump(2) << "\n";
  }
  return 0;
}

// Trains one configuration end to end (cross-entropy, then the self-critical
// phase) and reports the mean greedy CIDEr-D on the training split.
json run_one_ablation(const std::string& name, bool word_attention,
                      double lambda, const LoadedData& data,
                      const Settings& base) {
  Settings s = base;
  s.use_word_attention = word_attention;
  s.lambda = lambda;
  std::mt19937 rng(s.seed);
  ModelParameters params = ModelParameters::init(
      model_config(s, data.vocab.size(), data.dataset[0].features.dim), rng);
  train_xe(data.dataset, data.corpora, data.vocab, xe_config(s), params);
  train_scst(data.dataset, data.corpora, data.vocab, scst_config(s), params);

  std::vector<std::vector<Tokens>> refs;
  for (const auto& img : data.dataset) {
    std::vector<Tokens> image_refs;
    for (const auto& cap : img.captions) {
      image_refs.push_back(data.vocab.decode(cap.tokens));
    }
    refs.push_back(std::move(image_refs));
  }
  const CiderScorer scorer(refs);
  double cider = 0.0, bleu4 = 0.0;
  for (std::size_t i = 0; i < data.dataset.size(); ++i) {
    const DecodedSequence seq =
        greedy_decode(params, data.dataset[i].features, data.corpora[i],
                      data.vocab, s.lambda, s.max_len);
    const Tokens hyp = caption_words(seq.tokens, data.vocab);
    cider += scorer.score(hyp, refs[i]);
    if (!hyp.empty()) bleu4 += bleu(hyp, refs[i], 4);
  }
  cider /= static_cast<double>(data.dataset.size());
  bleu4 /= static_cast<double>(data.dataset.size());
  return json{{"config", name},
              {"word_attention", word_attention},
              {"lambda", lambda},
              {"cider_d", cider},
              {"bleu4", bleu4}};
}

int run_ablate(const std::string& dataset_path, const std::string& triples_path,
               const std::string& out_dir, const Settings& s) {
  std::vector<std::string> inputs = {dataset_path};
  if (!triples_path.empty()) inputs.push_back(triples_path);
  write_manifest(out_dir, "ablate", s, inputs);

  const LoadedData data = load_data(dataset_path, triples_path, "", s);
  json table = json::array();
  table.push_back(run_one_ablation("RL", false, 0.0, data, s));
  table.push_back(run_one_ablation("RL+WA", true, 0.0, data, s));
  table.push_back(run_one_ablation("RL+KG", false, s.lambda, data, s));
  table.push_back(run_one_ablation("RL+WA+KG", true, s.lambda, data, s));
  std::ofstream out(fs::path(out_dir) / "ablation.json");
  out << table.dump(2) << "\n";
  std::cout << table.dump(2) << "\n";
  return 0;
}

int run_sweep_lambda(const std::string& dataset_path,
                     const std::string& triples_path,
                     const std::string& out_dir, const Settings& s) {
  std::vector<std::string> inputs = {dataset_path};
  if (!triples_path.empty()) inputs.push_back(triples_path);
  write_manifest(out_dir, "sweep-lambda", s, inputs);

  const LoadedData data = load_data(dataset_path, triples_path, "", s);
  std::mt19937 rng(s.seed);
  ModelParameters params = ModelParameters::init(
      model_config(s, data.vocab.size(), data.dataset[0].features.dim), rng);
  train_xe(data.dataset, data.corpora, data.vocab, xe_config(s), params);

  std::vector<std::vector<Tokens>> refs;
  for (const auto& img : data.dataset) {
    std::vector<Tokens> image_refs;
    for (const auto& cap : img.captions) {
      image_refs.push_back(data.vocab.decode(cap.tokens));
    }
    refs.push_back(std::move(image_refs));
  }
  const CiderScorer scorer(refs);

  json curve = json::array();
  for (int step = 0; step < 10; ++step) {
    const double lambda = 0.1 * step;
    double cider = 0.0;
    for (std::size_t i = 0; i < data.dataset.size(); ++i) {
      const DecodedSequence seq =
          greedy_decode(params, data.dataset[i].features, data.corpora[i],
                        data.vocab, lambda, s.max_len);
      cider += scorer.score(caption_words(seq.tokens, data.vocab), refs[i]);
    }
    curve.push_back(json{{"lambda", lambda},
                         {"cider_d", cider / double(data.dataset.size())}});
  }
  std::ofstream out(fs::path(out_dir) / "lambda_sweep.json");
  out << curve.dump(2) << "\n";
  std::cout << curve.dump(2) << "\n";
  return 0;
}

int run_gradcheck(const Settings& s) {
  // tiny instance: d = 4, |V| = 10, L = 2, D = 3
  const Vocabulary vocab = Vocabulary::build(
      {{"a", "dog", "runs"}, {"a", "cat", "sits"}}, 6);
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.embed_dim = 4;
  cfg.attn_dim = 3;
  cfg.feat_dim = 3;
  std::mt19937 rng(s.seed);
  ModelParameters params = ModelParameters::init(cfg, rng);

  FeatureSet features;
  features.regions = 2;
  features.dim = 3;
  features.matrix.resize(6);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (auto& v : features.matrix) v = unif(rng);

  CaptionRecord caption;
  caption.tokens = vocab.encode({"a", "dog"});
  KnowledgeCorpus corpus;
  corpus.insert_max("dog", 0.9);
  const double lambda = 0.2;

  const auto loss_at = [&](const ModelParameters& p) {
    const BoundModel bound = bind(p, nullptr);
    ForwardOptions opts;
    opts.lambda = lambda;
    const auto dists = forward_teacher_forced(bound, features, caption, corpus,
                                              vocab, opts);
    std::vector<int> targets = caption.tokens;
    targets.push_back(kEndId);
    double loss = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      loss -= dists[t].at(static_cast<std::size_t>(targets[t]));
    }
    return loss;
  };

  Tape tape;
  const BoundModel bound = bind(params, &tape);
  ForwardOptions opts;
  opts.lambda = lambda;
  const auto dists = forward_teacher_forced(bound, features, caption, corpus,
                                            vocab, opts);
  std::vector<int> targets = caption.tokens;
  targets.push_back(kEndId);
  Tensor loss = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    loss = sub(loss, pick(dists[t], static_cast<std::size_t>(targets[t])));
  }
  const GradientMap grads = tape.backward(loss);

  bool ok = true;
  ModelParameters work = params;
  for (const auto& [name, node] : bound.variable_nodes) {
    auto& values = work.find(name).data;
    const auto& analytic = grads.at(node).values();
    double worst = 0.0;
    const double step = 1e-2;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      const auto eval = [&](double offset) {
        values[i] = saved + offset;
        return loss_at(work);
      };
      const double fd = (eval(-2 * step) - 8 * eval(-step) + 8 * eval(step) -
                         eval(2 * step)) /
                        (12.0 * step);
      values[i] = saved;
      const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(fd));
      worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
    }
    std::cout << name << " max_rel_error " << worst << "\n";
    if (!(worst < 1e-5)) ok = false;
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image captioner with word attention and knowledge reasoning"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  Settings settings;
  std::string preset, config_path;
  std::string dataset_path, triples_path, checkpoint_path, vocab_path;
  std::string hyp_path, refs_path, out_dir;
  bool dump_attention = false;

  // flag storage for override detection
  unsigned seed_flag = settings.seed;
  double lambda_flag = settings.lambda;
  int beam_flag = settings.beam;
  int max_len_flag = settings.max_len;

  app.add_option("--preset", preset, "configuration preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--config", config_path,
                 "flat key=value config file; flags override file values");
  auto* seed_opt = app.add_option("--seed", seed_flag, "master random seed");
  auto* lambda_opt =
      app.add_option("--lambda", lambda_flag, "knowledge augmentation weight");
  auto* beam_opt = app.add_option("--beam", beam_flag, "beam width");
  auto* max_len_opt =
      app.add_option("--max-len", max_len_flag, "maximum caption length");
  app.add_flag("--dump-attention", dump_attention,
               "include per-step attention weights in caption output");
  app.add_option("--out", out_dir, "output directory");

  CLI::App* preprocess = app.add_subcommand(
      "preprocess", "build the vocabulary and feature index");
  preprocess->add_option("--dataset", dataset_path, "dataset manifest jsonl")
      ->required();

  CLI::App* train_xe_cmd =
      app.add_subcommand("train-xe", "cross-entropy training");
  train_xe_cmd->add_option("--dataset", dataset_path, "dataset manifest jsonl")
      ->required();
  train_xe_cmd->add_option("--triples", triples_path, "knowledge triples jsonl");

  CLI::App* train_scst_cmd =
      app.add_subcommand("train-scst", "self-critical fine-tuning");
  train_scst_cmd->add_option("--dataset", dataset_path, "dataset manifest jsonl")
      ->required();
  train_scst_cmd->add_option("--triples", triples_path,
                             "knowledge triples jsonl");
  train_scst_cmd->add_option("--checkpoint", checkpoint_path,
                             "checkpoint to fine-tune")
      ->required();
  train_scst_cmd->add_option("--vocab", vocab_path, "vocabulary file")
      ->required();

  CLI::App* caption_cmd =
      app.add_subcommand("caption", "generate captions for a dataset");
  caption_cmd->add_option("--dataset", dataset_path, "dataset manifest jsonl")
      ->required();
  caption_cmd->add_option("--triples", triples_path, "knowledge triples jsonl");
  caption_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  caption_cmd->add_option("--vocab", vocab_path, "vocabulary file")->required();

  CLI::App* evaluate_cmd =
      app.add_subcommand("evaluate", "score hypotheses against references");
  evaluate_cmd->add_option("--hyp", hyp_path, "hypotheses jsonl")->required();
  evaluate_cmd->add_option("--refs", refs_path, "references jsonl")->required();

  CLI::App* ablate_cmd = app.add_subcommand(
      "ablate", "train and score the four component configurations");
  ablate_cmd->add_option("--dataset", dataset_path, "dataset manifest jsonl")
      ->required();
  ablate_cmd->add_option("--triples", triples_path, "knowledge triples jsonl");

  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep-lambda", "evaluate the knowledge weight from 0.0 to 0.9");
  sweep_cmd->add_option("--dataset", dataset_path, "dataset manifest jsonl")
      ->required();
  sweep_cmd->add_option("--triples", triples_path, "knowledge triples jsonl");

  CLI::App* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "finite-difference check of the full model gradient");
  (void)gradcheck_cmd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  try {
    apply_preset(settings, preset);
    if (!config_path.empty()) apply_config_file(settings, config_path);
    if (seed_opt->count() > 0) settings.seed = seed_flag;
    if (lambda_opt->count() > 0) settings.lambda = lambda_flag;
    if (beam_opt->count() > 0) settings.beam = beam_flag;
    if (max_len_opt->count() > 0) settings.max_len = max_len_flag;
    if (settings.lambda < 0.0) {
      throw std::runtime_error("lambda must be >= 0");
    }

    const auto need_out = [&]() -> const std::string& {
      if (out_dir.empty()) {
        throw std::runtime_error("--out is required for this subcommand");
      }
      return out_dir;
    };

    if (preprocess->parsed()) {
      return run_preprocess(dataset_path, need_out(), settings);
    }
    if (train_xe_cmd->parsed()) {
      return run_train_xe(dataset_path, triples_path, need_out(), settings);
    }
    if (train_scst_cmd->parsed()) {
      return run_train_scst(dataset_path, triples_path, checkpoint_path,
                            vocab_path, need_out(), settings);
    }
    if (caption_cmd->parsed()) {
      return run_caption(dataset_path, triples_path, checkpoint_path,
                         vocab_path, need_out(), dump_attention, settings);
    }
    if (evaluate_cmd->parsed()) {
      return run_evaluate(hyp_path, refs_path, out_dir);
    }
    if (ablate_cmd->parsed()) {
      return run_ablate(dataset_path, triples_path, need_out(), settings);
    }
    if (sweep_cmd->parsed()) {
      return run_sweep_lambda(dataset_path, triples_path, need_out(), settings);
    }
    return run_gradcheck(settings);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
