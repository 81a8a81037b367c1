#include "met/decoder.hpp"

#include "met/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace met {

DecoderStack DecoderStack::create(ModelParams& params, const std::string& prefix, const DecoderConfig& config,
                                  Rng& rng) {
  if (config.vocab_size < 1) throw ContractError("decoder: empty vocabulary");
  if (config.d_model % config.n_heads != 0) {
    throw ContractError("decoder: d_model " + std::to_string(config.d_model) + " not divisible by " +
                        std::to_string(config.n_heads) + " heads");
  }
  const Index d = config.d_model;
  DecoderStack s;
  s.config = config;
  s.token_embedding = params.add_embedding(prefix + ".token_embedding", config.vocab_size, d, rng);
  s.position_embedding = params.add_embedding(prefix + ".position_embedding", config.max_positions, d, rng);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    DecoderLayer L;
    L.ln1_gain = params.add_gain(p + ".ln1.gain", d);
    L.ln1_bias = params.add_bias(p + ".ln1.bias", d);
    L.wq = params.add_weight(p + ".attn.wq", d, d, rng);
    L.wk = params.add_weight(p + ".attn.wk", d, d, rng);
    L.wv = params.add_weight(p + ".attn.wv", d, d, rng);
    L.wo = params.add_weight(p + ".attn.wo", d, d, rng);
    L.ln2_gain = params.add_gain(p + ".ln2.gain", d);
    L.ln2_bias = params.add_bias(p + ".ln2.bias", d);
    L.ff1_w = params.add_weight(p + ".ff1.w", d, 4 * d, rng);
    L.ff1_b = params.add_bias(p + ".ff1.b", 4 * d);
    L.ff2_w = params.add_weight(p + ".ff2.w", 4 * d, d, rng);
    L.ff2_b = params.add_bias(p + ".ff2.b", d);
    L.injector = InjectorParams::create(params, p + ".injector", d, rng, config.vector_gate, config.injector_projections);
    s.layers.push_back(std::move(L));
  }
  s.final_gain = params.add_gain(prefix + ".final.gain", d);
  s.final_bias = params.add_bias(prefix + ".final.bias", d);
  s.lm_weight = params.add_weight(prefix + ".lm_head.w", d, config.vocab_size, rng);
  s.lm_bias = params.add_bias(prefix + ".lm_head.b", config.vocab_size);
  s.clf_w1 = params.add_weight(prefix + ".incoherence.w1", d, d, rng);
  s.clf_b1 = params.add_bias(prefix + ".incoherence.b1", d);
  s.clf_w2 = params.add_weight(prefix + ".incoherence.w2", d, config.n_sentences, rng);
  s.clf_b2 = params.add_bias(prefix + ".incoherence.b2", config.n_sentences);
  return s;
}

namespace {

Matrix causal_mask(Index t) {
  Matrix m = Matrix::Zero(t, t);
  for (Index i = 0; i < t; ++i) {
    for (Index j = i + 1; j < t; ++j) m(i, j) = -1e9;
  }
  return m;
}

}  // namespace

Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv, const Tensor& wo,
                            int heads, const Tensor* mask) {
  const Index d = x.cols();
  if (heads < 1 || d % heads != 0) {
    throw DimensionError("multi_head_attention: " + std::to_string(d) + " columns for " + std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;
  const Tensor q = matmul(x, wq);
  const Tensor k = matmul(x, wk);
  const Tensor v = matmul(x, wv);
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), s);
    if (mask) scores = add(scores, *mask);
    outs.push_back(matmul(softmax(scores, Axis::Cols), vh));
  }
  return matmul(heads == 1 ? outs.front() : hstack(outs), wo);
}

DecoderOutput run_decoder(const std::vector<int>& tokens, const NodeMemory& memory, const DecoderStack& stack,
                          bool diagnostics) {
  const auto t = static_cast<Index>(tokens.size());
  if (t == 0) throw ContractError("decoder: empty token sequence");
  if (t > stack.config.max_positions) {
    throw DimensionError("decoder: sequence length " + std::to_string(t) + " exceeds " +
                         std::to_string(stack.config.max_positions) + " positions");
  }
  std::vector<Index> ids, pos;
  for (Index i = 0; i < t; ++i) {
    const int tok = tokens[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= stack.config.vocab_size) {
      throw VocabularyError("decoder: token id " + std::to_string(tok) + " outside vocabulary of " +
                            std::to_string(stack.config.vocab_size));
    }
    ids.push_back(tok);
    pos.push_back(i);
  }
  const Tensor mask(causal_mask(t));
  Tensor x = add(gather_rows(stack.token_embedding, ids), gather_rows(stack.position_embedding, pos));
  DecoderOutput out;
  for (const auto& L : stack.layers) {
    x = add(x, multi_head_attention(layer_norm(x, L.ln1_gain, L.ln1_bias), L.wq, L.wk, L.wv, L.wo,
                                    stack.config.n_heads, &mask));
    const Tensor f = layer_norm(x, L.ln2_gain, L.ln2_bias);
    x = add(x, add(matmul(relu(add(matmul(f, L.ff1_w), L.ff1_b)), L.ff2_w), L.ff2_b));
    Injection inj = inject_detailed(x, memory.visual, memory.semantic, L.injector);
    x = inj.output;
    if (diagnostics) out.injections.push_back(std::move(inj));
  }
  out.hidden = layer_norm(x, stack.final_gain, stack.final_bias);
  out.logits = add(matmul(out.hidden, stack.lm_weight), stack.lm_bias);
  return out;
}

StepResult decode_step(const std::vector<int>& prefix, const NodeMemory& memory, const DecoderStack& stack) {
  if (prefix.empty()) throw ContractError("decode_step: empty prefix");
  DecoderOutput o = run_decoder(prefix, memory, stack);
  const Tensor last = slice_rows(o.logits, o.logits.rows() - 1, 1);
  StepResult r;
  r.hidden = o.hidden;
  r.distribution = softmax(last, Axis::Cols).value().row(0);
  return r;
}

Tensor generation_loss(const std::vector<int>& sequence, const NodeMemory& memory, const DecoderStack& stack,
                       int pad_id) {
  std::size_t n = sequence.size();
  while (n > 0 && sequence[n - 1] == pad_id) --n;
  if (n < 2) throw ContractError("generation_loss: gold ending is empty");
  // Trailing pads never reach the loss; inputs stop at the last real token.
  std::vector<int> inputs(sequence.begin(), sequence.begin() + static_cast<std::ptrdiff_t>(n - 1));
  std::vector<int> targets(sequence.begin() + 1, sequence.begin() + static_cast<std::ptrdiff_t>(n));
  const DecoderOutput o = run_decoder(inputs, memory, stack);
  return cross_entropy(o.logits, targets, pad_id);
}

Tensor generation_loss(const std::vector<std::vector<int>>& sequences, const std::vector<NodeMemory>& memories,
                       const DecoderStack& stack, int pad_id) {
  if (sequences.empty() || sequences.size() != memories.size()) {
    throw ContractError("generation_loss: need one memory per sequence and a non-empty batch");
  }
  std::vector<Tensor> losses;
  for (std::size_t i = 0; i < sequences.size(); ++i) losses.push_back(generation_loss(sequences[i], memories[i], stack, pad_id));
  return mean(vstack(losses));
}

Tensor incoherence_probs(const Tensor& last_hidden, const DecoderStack& stack) {
  const Tensor h = relu(add(matmul(last_hidden, stack.clf_w1), stack.clf_b1));
  return sigmoid(add(matmul(h, stack.clf_w2), stack.clf_b2));
}

namespace {

bool ranks_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;
}

}  // namespace

BeamHypothesis beam_search(const NextTokenLogProbs& step, int bos, int eos, int beam_size, int max_len) {
  if (beam_size < 1) throw ContractError("beam_search: beam_size must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
  std::vector<BeamHypothesis> active{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  for (int len = 1; len <= max_len && !active.empty(); ++len) {
    std::vector<BeamHypothesis> cands;
    for (const auto& h : active) {
      std::vector<int> prefix{bos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const Eigen::RowVectorXd lp = step(prefix);
      for (Index v = 0; v < lp.size(); ++v) {
        BeamHypothesis c{h.tokens, h.logprob + lp(v), false};
        c.tokens.push_back(static_cast<int>(v));
        cands.push_back(std::move(c));
      }
    }
    const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), ranks_before);
    active.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = cands[i];
      if (c.tokens.back() == eos || len == max_len) {
        c.finished = true;
        finished.push_back(std::move(c));
      } else {
        active.push_back(std::move(c));
      }
    }
    if (!finished.empty() && !active.empty()) {
      const auto best_done = std::min_element(finished.begin(), finished.end(), ranks_before);
      // Extensions can only lower a log-probability.
      if (best_done->logprob > active.front().logprob) break;
    }
  }
  return *std::min_element(finished.begin(), finished.end(), ranks_before);
}

BeamHypothesis greedy_search(const NextTokenLogProbs& step, int bos, int eos, int max_len) {
  BeamHypothesis h;
  std::vector<int> prefix{bos};
  for (int len = 1; len <= max_len; ++len) {
    const Eigen::RowVectorXd lp = step(prefix);
    Index best = 0;
    for (Index v = 1; v < lp.size(); ++v) {
      if (lp(v) > lp(best)) best = v;
    }
    h.tokens.push_back(static_cast<int>(best));
    h.logprob += lp(best);
    prefix.push_back(static_cast<int>(best));
    if (best == eos) break;
  }
  h.finished = true;
  return h;
}

NextTokenLogProbs decoder_scorer(const NodeMemory& memory, const DecoderStack& stack) {
  return [&memory, &stack](const std::vector<int>& prefix) -> Eigen::RowVectorXd {
    NoTapeScope no_tape;
    const DecoderOutput o = run_decoder(prefix, memory, stack);
    const Tensor last = slice_rows(o.logits, o.logits.rows() - 1, 1);
    return log_softmax(last).value().row(0);
  };
}

BeamHypothesis beam_search(const NodeMemory& memory, const DecoderStack& stack, int bos, int eos, int beam_size,
                           int max_len) {
  if (max_len > stack.config.max_positions) {
    throw DimensionError("beam_search: max_len " + std::to_string(max_len) + " exceeds the decoder's " +
                         std::to_string(stack.config.max_positions) + " positions");
  }
  return beam_search(decoder_scorer(memory, stack), bos, eos, beam_size, max_len);
}

}  // namespace met
