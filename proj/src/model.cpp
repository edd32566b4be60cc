#include "captioner/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cap {

namespace {

const char* kGateNames[4] = {"i", "f", "o", "g"};

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

void push_uniform(ModelParameters& p, const std::string& name, Shape shape,
                  std::mt19937& rng) {
  std::uniform_real_distribution<double> unif(-0.08, 0.08);
  NamedArray a;
  a.name = name;
  a.shape = std::move(shape);
  a.data.resize(numel(a.shape));
  for (auto& v : a.data) v = unif(rng);
  p.arrays.push_back(std::move(a));
}

}  // namespace

ModelParameters ModelParameters::init(const ModelConfig& config,
                                      std::mt19937& rng) {
  if (config.vocab_size == 0 || config.embed_dim == 0 ||
      config.attn_dim == 0 || config.feat_dim == 0) {
    throw std::invalid_argument("ModelParameters::init: zero dimension");
  }
  ModelParameters p;
  p.config = config;
  const std::size_t V = config.vocab_size, d = config.embed_dim,
                    A = config.attn_dim, D = config.feat_dim;
  push_uniform(p, "embedding", {V, d}, rng);
  push_uniform(p, "attn_score", {A}, rng);
  push_uniform(p, "attn_proj_feat", {A, D}, rng);
  push_uniform(p, "attn_proj_hidden", {A, d}, rng);
  for (int g = 0; g < 4; ++g) {
    push_uniform(p, std::string("lstm_w_") + kGateNames[g], {d, d}, rng);
    push_uniform(p, std::string("lstm_u_") + kGateNames[g], {d, D}, rng);
    push_uniform(p, std::string("lstm_z_") + kGateNames[g], {d, d}, rng);
    push_uniform(p, std::string("lstm_b_") + kGateNames[g], {d}, rng);
  }
  for (auto& v : p.find("lstm_b_f").data) v = 1.0;
  push_uniform(p, "init_hidden", {d, D}, rng);
  push_uniform(p, "init_memory", {d, D}, rng);
  if (config.tied_output) {
    push_uniform(p, "out_transform", {d, d}, rng);
  } else {
    push_uniform(p, "out_transform", {V, d}, rng);
  }
  return p;
}

NamedArray& ModelParameters::find(const std::string& name) {
  for (auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw std::invalid_argument("ModelParameters: no parameter named " + name);
}

const NamedArray& ModelParameters::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw std::invalid_argument("ModelParameters: no parameter named " + name);
}

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'A', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint: truncated payload in " + path);
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void ModelParameters::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("checkpoint: cannot open " + path);
  }
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  // config rides along as a pseudo-tensor
  std::vector<double> cfg = {static_cast<double>(config.vocab_size),
                             static_cast<double>(config.embed_dim),
                             static_cast<double>(config.attn_dim),
                             static_cast<double>(config.feat_dim),
                             config.tied_output ? 1.0 : 0.0,
                             config.use_word_attention ? 1.0 : 0.0};
  write_u32(out, static_cast<std::uint32_t>(arrays.size() + 1));
  auto write_tensor = [&](const std::string& name, const Shape& shape,
                          const std::vector<double>& data) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto dim : shape) write_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : data) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(out, bits);
    }
  };
  write_tensor("__config__", {cfg.size()}, cfg);
  for (const auto& a : arrays) write_tensor(a.name, a.shape, a.data);
}

ModelParameters ModelParameters::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("checkpoint: cannot open " + path);
  }
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version) + " in " + path);
  }
  const std::uint32_t count = read_u32(in, path);
  ModelParameters p;
  bool have_config = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw std::runtime_error("checkpoint: truncated payload in " + path);
    }
    const std::uint32_t rank = read_u32(in, path);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& dim : shape) {
      dim = read_u32(in, path);
      n *= dim;
    }
    std::vector<double> data(n);
    for (auto& v : data) {
      const std::uint32_t bits = read_u32(in, path);
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<double>(f);
      if (!std::isfinite(v)) {
        throw std::runtime_error("checkpoint: non-finite value in " + path);
      }
    }
    if (name == "__config__") {
      if (data.size() != 6) {
        throw std::runtime_error("checkpoint: bad config block in " + path);
      }
      p.config.vocab_size = static_cast<std::size_t>(data[0]);
      p.config.embed_dim = static_cast<std::size_t>(data[1]);
      p.config.attn_dim = static_cast<std::size_t>(data[2]);
      p.config.feat_dim = static_cast<std::size_t>(data[3]);
      p.config.tied_output = data[4] != 0.0;
      p.config.use_word_attention = data[5] != 0.0;
      have_config = true;
    } else {
      p.arrays.push_back({std::move(name), std::move(shape), std::move(data)});
    }
  }
  if (!have_config) {
    throw std::runtime_error("checkpoint: missing config block in " + path);
  }
  return p;
}

BoundModel bind(const ModelParameters& params, Tape* tape) {
  BoundModel m;
  m.config = params.config;
  auto get = [&](const std::string& name) -> Tensor {
    const NamedArray& a = params.find(name);
    if (tape == nullptr) return Tensor(a.shape, a.data);
    Tensor t = tape->variable(a.shape, a.data);
    m.variable_nodes.emplace_back(name, t.node());
    return t;
  };
  m.embedding = get("embedding");
  m.attn_score = get("attn_score");
  m.attn_proj_feat = get("attn_proj_feat");
  m.attn_proj_hidden = get("attn_proj_hidden");
  for (int g = 0; g < 4; ++g) {
    m.lstm_w[g] = get(std::string("lstm_w_") + kGateNames[g]);
    m.lstm_u[g] = get(std::string("lstm_u_") + kGateNames[g]);
    m.lstm_z[g] = get(std::string("lstm_z_") + kGateNames[g]);
    m.lstm_b[g] = get(std::string("lstm_b_") + kGateNames[g]);
  }
  m.init_hidden = get("init_hidden");
  m.init_memory = get("init_memory");
  m.out_transform = get("out_transform");
  return m;
}

Tensor features_tensor(const FeatureSet& features) {
  return Tensor({features.regions, features.dim}, features.matrix);
}

namespace {

std::vector<double> softmax_plain(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace

WordAttentionResult word_attention(const BoundModel& model,
                                   const std::vector<int>& tokens,
                                   const std::vector<double>& delta) {
  if (tokens.empty()) {
    throw std::invalid_argument("word_attention: empty sentence");
  }
  if (tokens.size() != delta.size()) {
    throw std::invalid_argument(
        "word_attention: sentence length " + std::to_string(tokens.size()) +
        " does not match delta length " + std::to_string(delta.size()));
  }
  WordAttentionResult result;
  result.beta = softmax_plain(delta);
  const Tensor beta({tokens.size()}, result.beta);
  const Tensor embedded = embed_rows(model.embedding, tokens);  // N x d
  result.context = vecmat(beta, embedded);
  return result;
}

Tensor inference_word_context(const BoundModel& model,
                              const std::vector<int>& prefix,
                              const Vocabulary& vocab) {
  if (!model.config.use_word_attention || prefix.empty()) {
    return Tensor::ones({model.config.embed_dim});
  }
  CaptionRecord partial;
  partial.tokens = prefix;
  const std::vector<double> delta = tfidf_weights(partial, vocab);
  return word_attention(model, prefix, delta).context;
}

Tensor fuse(const Tensor& word_context, const Tensor& h_prev) {
  if (word_context.shape() != h_prev.shape()) {
    throw std::invalid_argument("fuse: shape mismatch " +
                                shape_str(word_context.shape()) + " vs " +
                                shape_str(h_prev.shape()));
  }
  return mul(word_context, h_prev);
}

VisualAttentionResult visual_attention(const BoundModel& model,
                                       const Tensor& features,
                                       const Tensor& fused) {
  // projected regions: L x A
  const Tensor proj = matmul_nt(features, model.attn_proj_feat);
  const Tensor hidden_part = matvec(model.attn_proj_hidden, fused);  // A
  const Tensor activated = tanh(add_rowvec(proj, hidden_part));      // L x A
  const Tensor scores = matvec(activated, model.attn_score);         // L
  VisualAttentionResult result;
  result.alpha = softmax(scores);
  result.context = vecmat(result.alpha, features);  // D
  return result;
}

DecoderState init_state(const BoundModel& model, const Tensor& mean_feature) {
  DecoderState state;
  state.h = tanh(matvec(model.init_hidden, mean_feature));
  state.m = tanh(matvec(model.init_memory, mean_feature));
  state.t = 0;
  return state;
}

DecoderState lstm_step(const BoundModel& model, const Tensor& x,
                       const Tensor& visual_context,
                       const DecoderState& state) {
  Tensor gates[4];
  for (int g = 0; g < 4; ++g) {
    Tensor pre = add(add(matvec(model.lstm_w[g], x),
                         matvec(model.lstm_u[g], visual_context)),
                     add(matvec(model.lstm_z[g], state.h), model.lstm_b[g]));
    gates[g] = g == kGateCell ? tanh(pre) : sigmoid(pre);
  }
  DecoderState next;
  next.m = add(mul(gates[kGateForget], state.m),
               mul(gates[kGateInput], gates[kGateCell]));
  next.h = mul(gates[kGateOutput], tanh(next.m));
  next.t = state.t + 1;
  return next;
}

Tensor output_logits(const BoundModel& model, const Tensor& h) {
  if (model.config.tied_output) {
    return matvec(model.embedding, matvec(model.out_transform, h));
  }
  return matvec(model.out_transform, h);
}

StepResult model_step(const BoundModel& model, const Tensor& features,
                      const Tensor& word_context, int input_token,
                      const DecoderState& state, const StepOptions& options) {
  const Tensor fused = fuse(word_context, state.h);
  const VisualAttentionResult att = visual_attention(model, features, fused);

  const Tensor x =
      vecmat(Tensor::ones({1}), embed_rows(model.embedding, {input_token}));

  StepResult result;
  result.next = lstm_step(model, x, att.context, state);
  result.alpha = att.alpha.values();

  Tensor h_out = result.next.h;
  if (options.dropout_keep < 1.0) {
    if (options.rng == nullptr) {
      throw std::invalid_argument("model_step: dropout requires an rng");
    }
    h_out = dropout(h_out, options.dropout_keep, *options.rng);
  }
  Tensor logits = output_logits(model, h_out);
  if (options.knowledge_bonus != nullptr) {
    const auto& bonus = *options.knowledge_bonus;
    if (bonus.size() != logits.size()) {
      throw std::invalid_argument("model_step: knowledge bonus length " +
                                  std::to_string(bonus.size()) +
                                  " does not match vocabulary size " +
                                  std::to_string(logits.size()));
    }
    bool any = false;
    for (double b : bonus) {
      if (b != 0.0) {
        any = true;
        break;
      }
    }
    if (any) logits = add(logits, Tensor({bonus.size()}, bonus));
  }
  if (options.ban_unk) {
    std::vector<double> mask(logits.size(), 0.0);
    mask[kUnkId] = -1e30;
    logits = add(logits, Tensor({mask.size()}, mask));
  }
  result.log_probs = log_softmax(logits);
  return result;
}

std::vector<Tensor> forward_teacher_forced(const BoundModel& model,
                                           const FeatureSet& features,
                                           const CaptionRecord& caption,
                                           const KnowledgeCorpus& corpus,
                                           const Vocabulary& vocab,
                                           const ForwardOptions& options) {
  if (caption.tokens.empty()) {
    throw std::invalid_argument("forward_teacher_forced: empty caption");
  }
  const Tensor feats = features_tensor(features);
  const Tensor vbar = mean_rows(feats);
  DecoderState state = init_state(model, vbar);

  Tensor word_context;
  if (model.config.use_word_attention) {
    const std::vector<double> delta = tfidf_weights(caption, vocab);
    word_context = word_attention(model, caption.tokens, delta).context;
  } else {
    word_context = Tensor::ones({model.config.embed_dim});
  }

  const std::vector<double> bonus =
      knowledge_bonus(corpus, options.lambda, vocab);

  StepOptions step_opts;
  step_opts.knowledge_bonus = options.lambda > 0.0 ? &bonus : nullptr;
  step_opts.ban_unk = options.ban_unk;
  step_opts.dropout_keep = options.dropout_keep;
  step_opts.rng = options.rng;

  std::vector<int> inputs;
  inputs.push_back(kStartId);
  inputs.insert(inputs.end(), caption.tokens.begin(), caption.tokens.end());

  std::vector<Tensor> log_dists;
  log_dists.reserve(inputs.size());
  for (int token : inputs) {
    StepResult step = model_step(model, feats, word_context, token, state,
                                 step_opts);
    log_dists.push_back(step.log_probs);
    state = step.next;
  }
  return log_dists;
}

}  // namespace cap
