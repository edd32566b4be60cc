#ifndef CAPTIONER_MODEL_HPP_
#define CAPTIONER_MODEL_HPP_

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "captioner/corpus.hpp"
#include "captioner/knowledge.hpp"
#include "captioner/tensor.hpp"

namespace cap {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;  // also the LSTM hidden size
  std::size_t attn_dim = 32;
  std::size_t feat_dim = 32;
  bool tied_output = true;
  // Off = word context forced to ones, i.e. plain visual attention.
  bool use_word_attention = true;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

class ModelParameters {
 public:
  ModelConfig config;
  std::vector<NamedArray> arrays;

  // Uniform [-0.08, 0.08]; forget-gate bias starts at 1.0.
  static ModelParameters init(const ModelConfig& config, std::mt19937& rng);

  NamedArray& find(const std::string& name);
  const NamedArray& find(const std::string& name) const;

  // Checkpoint: "CAPT", u32 version, u32 tensor count, then per tensor
  // u32 name length + name, u32 rank, u32 dims, f32 payload.
  void save(const std::string& path) const;
  static ModelParameters load(const std::string& path);
};

enum Gate { kGateInput = 0, kGateForget = 1, kGateOutput = 2, kGateCell = 3 };

// Parameter tensors attached to a tape (trainable) or free (evaluation).
struct BoundModel {
  ModelConfig config;
  Tensor embedding;
  Tensor attn_score;        // W_e, A
  Tensor attn_proj_feat;    // W_v, A x D
  Tensor attn_proj_hidden;  // W_h, A x d
  Tensor lstm_w[4];         // d x d
  Tensor lstm_u[4];         // d x D
  Tensor lstm_z[4];         // d x d
  Tensor lstm_b[4];         // d
  Tensor init_hidden;       // d x D
  Tensor init_memory;       // d x D
  Tensor out_transform;     // d x d tied, |V| x d untied

  // name -> tape node id for trainable bindings
  std::vector<std::pair<std::string, int>> variable_nodes;
};

BoundModel bind(const ModelParameters& params, Tape* tape);

struct DecoderState {
  Tensor h;
  Tensor m;
  int t = 0;
};

struct WordAttentionResult {
  Tensor context;            // s, d
  std::vector<double> beta;  // softmax(delta), N
};

// beta = softmax(delta); s = sum_i beta_i * embedding[w_i].
WordAttentionResult word_attention(const BoundModel& model,
                                   const std::vector<int>& tokens,
                                   const std::vector<double>& delta);

// Inference-time word context: TF-IDF attention over the tokens generated
// so far; ones (the fuse identity) while the hypothesis is empty.
Tensor inference_word_context(const BoundModel& model,
                              const std::vector<int>& prefix,
                              const Vocabulary& vocab);

// H_t = s ⊙ h_prev
Tensor fuse(const Tensor& word_context, const Tensor& h_prev);

struct VisualAttentionResult {
  Tensor alpha;    // L
  Tensor context;  // c_t, D
};

// e_i = W_e^T tanh(W_v v_i + W_h H_t); alpha = softmax(e); c = sum alpha_i v_i
VisualAttentionResult visual_attention(const BoundModel& model,
                                       const Tensor& features,
                                       const Tensor& fused);

// h0 = tanh(P_h vbar), m0 = tanh(P_m vbar)
DecoderState init_state(const BoundModel& model, const Tensor& mean_feature);

// Standard LSTM update driven by the word embedding x_t and the visual
// context c_t. Cell candidate uses tanh.
DecoderState lstm_step(const BoundModel& model, const Tensor& x,
                       const Tensor& visual_context, const DecoderState& state);

// Tied: logit(w) = E[w]^T M_g h. Untied: logits = M_g h with M_g |V| x d.
Tensor output_logits(const BoundModel& model, const Tensor& h);

struct StepOptions {
  const std::vector<double>* knowledge_bonus = nullptr;  // |V| or null
  bool ban_unk = false;
  double dropout_keep = 1.0;
  std::mt19937* rng = nullptr;
};

struct StepResult {
  Tensor log_probs;  // |V|
  DecoderState next;
  std::vector<double> alpha;  // L
};

// One full decoder step: fuse word context with h_{t-1}, attend over the
// regions, advance the LSTM on input_token's embedding, emit a
// knowledge-augmented log-distribution. Dropout touches only the output
// branch of h_t; the recurrent state stays intact.
StepResult model_step(const BoundModel& model, const Tensor& features,
                      const Tensor& word_context, int input_token,
                      const DecoderState& state, const StepOptions& options);

struct ForwardOptions {
  double lambda = 0.0;
  double dropout_keep = 1.0;
  std::mt19937* rng = nullptr;
  bool ban_unk = false;
};

// Teacher-forced pass: inputs <start>, w_1..w_N; returns N+1
// log-distributions predicting w_1..w_N, <end>. The word context comes from
// the full ground-truth caption and is constant across steps.
std::vector<Tensor> forward_teacher_forced(const BoundModel& model,
                                           const FeatureSet& features,
                                           const CaptionRecord& caption,
                                           const KnowledgeCorpus& corpus,
                                           const Vocabulary& vocab,
                                           const ForwardOptions& options);

Tensor features_tensor(const FeatureSet& features);

}  // namespace cap

#endif  // CAPTIONER_MODEL_HPP_
