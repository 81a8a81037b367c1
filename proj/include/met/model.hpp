#pragma once

// The assembled model: sentence encoder, graph featurizers, the three RGCN
// stacks (semantic reasoning, visual reasoning, fusion), and the decoder.

#include "met/corpus.hpp"
#include "met/decoder.hpp"
#include "met/graph.hpp"
#include "met/rgcn.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace met {

struct ModelConfig {
  Index d_model = 64;
  int n_heads = 4;
  int dec_layers = 2;
  int reason_layers = 4;
  int fuse_layers = 2;
  int max_positions = 32;
  int encoder_positions = 64;
  int n_sentences = 4;
  int region_dim = 0;  // length of precomputed region / image vectors; 0 = none
  bool self_loop = false;
  bool vector_gate = false;
  bool injector_projections = false;
  bool cross_modal_bridges = true;
  bool use_image_feature = false;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Per-story activations up to (and including) per-modality reasoning.
struct StoryEncoding {
  FeaturedGraph semantic;  // input features
  FeaturedGraph visual;
  Tensor semantic_reasoned;
  Tensor visual_reasoned;
  std::vector<Index> root_rows;  // sentence-root rows of the semantic table
};

struct DiagnosticNode {
  int node = 0;
  std::string label;
  double weight = 0.0;
};

struct TokenDiagnostics {
  std::string token;
  double gate = 0.0;  // mean over components with a vector gate
  std::vector<DiagnosticNode> top_visual;
  std::vector<DiagnosticNode> top_semantic;
};

struct GeneratedEnding {
  std::vector<int> ids;
  std::vector<std::string> tokens;  // decoded, without specials
  double logprob = 0.0;
  std::vector<TokenDiagnostics> diagnostics;
};

class MetModel {
 public:
  MetModel(const ModelConfig& config, CorpusVocabularies vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const CorpusVocabularies& vocab() const { return vocab_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const DecoderStack& decoder() const { return decoder_; }
  const RgcnStack& semantic_stack() const { return semantic_stack_; }
  const RgcnStack& visual_stack() const { return visual_stack_; }
  const RgcnStack& fusion_stack() const { return fusion_stack_; }

  // Contextual token vectors, one (length x d) table per sentence.
  std::vector<Tensor> encode_sentences(const StoryRecord& r) const;

  Tensor embed_object(const SceneObject& o) const;
  Tensor embed_predicate(const std::string& predicate) const;

  StoryEncoding encode_story(const StoryRecord& r) const;

  // Merges the graphs (with the configured bridging) and runs fusion. The
  // semantic features passed in may differ from enc.semantic_reasoned.
  FusedNodes fuse_story(const StoryEncoding& enc, const Tensor& semantic_features) const;
  static NodeMemory memory_of(const FusedNodes& fused) { return {fused.visual, fused.semantic}; }

  // <bos> ending <eos>
  std::vector<int> gold_sequence(const StoryRecord& r) const;

  GeneratedEnding generate(const StoryRecord& r, int beam_size, int max_len, bool diagnostics = false) const;

  nlohmann::json meta() const;
  static MetModel from_checkpoint(const std::string& path);
  void save(const std::string& path) const;

 private:
  ModelConfig config_;
  CorpusVocabularies vocab_;
  ModelParams params_;

  Tensor enc_token_embedding_, enc_position_embedding_;
  Tensor enc_ln1_gain_, enc_ln1_bias_, enc_wq_, enc_wk_, enc_wv_, enc_wo_;
  Tensor enc_ln2_gain_, enc_ln2_bias_, enc_ff1_w_, enc_ff1_b_, enc_ff2_w_, enc_ff2_b_;
  Tensor category_embedding_, predicate_embedding_;
  std::optional<Tensor> region_w_, region_b_;

  RgcnStack semantic_stack_, visual_stack_, fusion_stack_;
  DecoderStack decoder_;
};

}  // namespace met
