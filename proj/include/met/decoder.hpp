#pragma once

// Causal transformer decoder. Each layer runs pre-norm causal self-attention
// and a feed-forward block, then hands its output to the multimodal injector;
// the injected state feeds the next layer. An LM head maps the final state to
// next-token logits and a small MLP head scores sentence-level incoherence.

#include "met/injector.hpp"
#include "met/params.hpp"

#include <functional>
#include <vector>

namespace met {

class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct DecoderConfig {
  int vocab_size = 0;
  Index d_model = 64;
  int n_heads = 4;
  int layers = 2;
  int max_positions = 32;  // capacity of the learned position table
  int n_sentences = 4;     // incoherence head outputs
  bool vector_gate = false;
  bool injector_projections = false;
};

struct DecoderLayer {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gain, ln2_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  InjectorParams injector;
};

struct DecoderStack {
  DecoderConfig config;
  Tensor token_embedding;     // V x d
  Tensor position_embedding;  // max_positions x d
  std::vector<DecoderLayer> layers;
  Tensor final_gain, final_bias;
  Tensor lm_weight, lm_bias;  // d x V, 1 x V
  Tensor clf_w1, clf_b1;      // d x d
  Tensor clf_w2, clf_b2;      // d x N_s

  static DecoderStack create(ModelParams& params, const std::string& prefix, const DecoderConfig& config, Rng& rng);
};

// Fused node features the injector reads from.
struct NodeMemory {
  Tensor visual;
  Tensor semantic;
};

struct DecoderOutput {
  Tensor hidden;                    // t x d final (normalized) states
  Tensor logits;                    // t x V
  std::vector<Injection> injections;  // per layer, when diagnostics were requested
};

// Scaled dot-product self-attention split over `heads` column groups; mask,
// when given, is added to the t x t scores.
Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv, const Tensor& wo,
                            int heads, const Tensor* mask = nullptr);

// Teacher-forced pass over the whole token sequence.
DecoderOutput run_decoder(const std::vector<int>& tokens, const NodeMemory& memory, const DecoderStack& stack,
                          bool diagnostics = false);

struct StepResult {
  Tensor hidden;                     // t x d
  Eigen::RowVectorXd distribution;  // next-token probabilities, sums to 1
};

StepResult decode_step(const std::vector<int>& prefix, const NodeMemory& memory, const DecoderStack& stack);

// Mean negative log-likelihood per gold token. sequence = <bos> c_1 .. c_N <eos>
// optionally followed by <pad>; positions whose target is pad_id are excluded.
Tensor generation_loss(const std::vector<int>& sequence, const NodeMemory& memory, const DecoderStack& stack,
                       int pad_id);

// Mean of per-story generation losses.
Tensor generation_loss(const std::vector<std::vector<int>>& sequences, const std::vector<NodeMemory>& memories,
                       const DecoderStack& stack, int pad_id);

// sigmoid(MLP(h_n)), 1 x N_s.
Tensor incoherence_probs(const Tensor& last_hidden, const DecoderStack& stack);

struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens, excluding <bos>
  double logprob = 0.0;
  bool finished = false;
};

// Returns log-probabilities of the next token given the full prefix (<bos> first).
using NextTokenLogProbs = std::function<Eigen::RowVectorXd(const std::vector<int>& prefix)>;

// Length-synchronous beam search without length normalization; ties go to
// the lexicographically smaller token sequence. A hypothesis finishes on
// eos or after max_len generated tokens.
BeamHypothesis beam_search(const NextTokenLogProbs& step, int bos, int eos, int beam_size, int max_len);
BeamHypothesis greedy_search(const NextTokenLogProbs& step, int bos, int eos, int max_len);

NextTokenLogProbs decoder_scorer(const NodeMemory& memory, const DecoderStack& stack);

BeamHypothesis beam_search(const NodeMemory& memory, const DecoderStack& stack, int bos, int eos, int beam_size,
                           int max_len);

}  // namespace met
