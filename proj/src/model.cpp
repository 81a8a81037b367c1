#include "met/model.hpp"

#include "met/ops.hpp"
#include "met/params.hpp"

#include <algorithm>
#include <numeric>

namespace met {

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_heads", n_heads},
          {"dec_layers", dec_layers},
          {"reason_layers", reason_layers},
          {"fuse_layers", fuse_layers},
          {"max_positions", max_positions},
          {"encoder_positions", encoder_positions},
          {"n_sentences", n_sentences},
          {"region_dim", region_dim},
          {"self_loop", self_loop},
          {"vector_gate", vector_gate},
          {"injector_projections", injector_projections},
          {"cross_modal_bridges", cross_modal_bridges},
          {"use_image_feature", use_image_feature}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<Index>();
  c.n_heads = j.at("n_heads").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.reason_layers = j.at("reason_layers").get<int>();
  c.fuse_layers = j.at("fuse_layers").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.encoder_positions = j.at("encoder_positions").get<int>();
  c.n_sentences = j.at("n_sentences").get<int>();
  c.region_dim = j.at("region_dim").get<int>();
  c.self_loop = j.at("self_loop").get<bool>();
  c.vector_gate = j.at("vector_gate").get<bool>();
  c.injector_projections = j.at("injector_projections").get<bool>();
  c.cross_modal_bridges = j.at("cross_modal_bridges").get<bool>();
  c.use_image_feature = j.at("use_image_feature").get<bool>();
  return c;
}

MetModel::MetModel(const ModelConfig& config, CorpusVocabularies vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  Rng rng(seed);
  const Index d = config_.d_model;
  enc_token_embedding_ = params_.add_embedding("encoder.token_embedding", vocab_.tokens.size(), d, rng);
  enc_position_embedding_ = params_.add_embedding("encoder.position_embedding", config_.encoder_positions, d, rng);
  enc_ln1_gain_ = params_.add_gain("encoder.ln1.gain", d);
  enc_ln1_bias_ = params_.add_bias("encoder.ln1.bias", d);
  enc_wq_ = params_.add_weight("encoder.attn.wq", d, d, rng);
  enc_wk_ = params_.add_weight("encoder.attn.wk", d, d, rng);
  enc_wv_ = params_.add_weight("encoder.attn.wv", d, d, rng);
  enc_wo_ = params_.add_weight("encoder.attn.wo", d, d, rng);
  enc_ln2_gain_ = params_.add_gain("encoder.ln2.gain", d);
  enc_ln2_bias_ = params_.add_bias("encoder.ln2.bias", d);
  enc_ff1_w_ = params_.add_weight("encoder.ff1.w", d, 2 * d, rng);
  enc_ff1_b_ = params_.add_bias("encoder.ff1.b", 2 * d);
  enc_ff2_w_ = params_.add_weight("encoder.ff2.w", 2 * d, d, rng);
  enc_ff2_b_ = params_.add_bias("encoder.ff2.b", d);
  category_embedding_ = params_.add_embedding("visual.category_embedding", vocab_.categories.size(), d, rng);
  predicate_embedding_ = params_.add_embedding("visual.predicate_embedding", vocab_.predicates.size(), d, rng);
  if (config_.region_dim > 0) {
    region_w_ = params_.add_weight("visual.region_projection.w", config_.region_dim, d, rng);
    region_b_ = params_.add_bias("visual.region_projection.b", d);
  }
  semantic_stack_ = RgcnStack::create(params_, "reason.semantic", config_.reason_layers, d, rng, config_.self_loop);
  visual_stack_ = RgcnStack::create(params_, "reason.visual", config_.reason_layers, d, rng, config_.self_loop);
  fusion_stack_ = RgcnStack::create(params_, "fusion", config_.fuse_layers, d, rng, config_.self_loop);

  DecoderConfig dc;
  dc.vocab_size = vocab_.tokens.size();
  dc.d_model = d;
  dc.n_heads = config_.n_heads;
  dc.layers = config_.dec_layers;
  dc.max_positions = config_.max_positions;
  dc.n_sentences = config_.n_sentences;
  dc.vector_gate = config_.vector_gate;
  dc.injector_projections = config_.injector_projections;
  decoder_ = DecoderStack::create(params_, "decoder", dc, rng);
}

std::vector<Tensor> MetModel::encode_sentences(const StoryRecord& r) const {
  std::vector<Tensor> out;
  for (const auto& sentence : r.sentences) {
    const auto n = static_cast<Index>(sentence.size());
    if (n > config_.encoder_positions) {
      throw DimensionError("encoder: sentence of " + std::to_string(n) + " tokens exceeds " +
                           std::to_string(config_.encoder_positions) + " positions in story " + r.story_id);
    }
    std::vector<Index> ids, pos;
    for (Index i = 0; i < n; ++i) {
      ids.push_back(vocab_.tokens.id(sentence[static_cast<std::size_t>(i)]));
      pos.push_back(i);
    }
    Tensor x = add(gather_rows(enc_token_embedding_, ids), gather_rows(enc_position_embedding_, pos));
    x = add(x, multi_head_attention(layer_norm(x, enc_ln1_gain_, enc_ln1_bias_), enc_wq_, enc_wk_, enc_wv_, enc_wo_,
                                    config_.n_heads));
    const Tensor f = layer_norm(x, enc_ln2_gain_, enc_ln2_bias_);
    x = add(x, add(matmul(relu(add(matmul(f, enc_ff1_w_), enc_ff1_b_)), enc_ff2_w_), enc_ff2_b_));
    out.push_back(x);
  }
  return out;
}

Tensor MetModel::embed_object(const SceneObject& o) const {
  if (o.feature && region_w_) {
    if (static_cast<int>(o.feature->size()) != config_.region_dim) {
      throw DimensionError("object " + std::to_string(o.id) + " feature has " + std::to_string(o.feature->size()) +
                           " values, model expects " + std::to_string(config_.region_dim));
    }
    return add(matmul(Tensor::row(*o.feature), *region_w_), *region_b_);
  }
  return gather_rows(category_embedding_, {vocab_.categories.id(o.category)});
}

Tensor MetModel::embed_predicate(const std::string& predicate) const {
  return gather_rows(predicate_embedding_, {vocab_.predicates.id(predicate)});
}

StoryEncoding MetModel::encode_story(const StoryRecord& r) const {
  StoryEncoding enc;
  enc.semantic = build_semantic_graph(r.sentences, r.srl_events, encode_sentences(r), r.story_id);
  std::optional<Tensor> image;
  if (config_.use_image_feature && r.image_feature && region_w_) {
    if (static_cast<int>(r.image_feature->size()) != config_.region_dim) {
      throw DimensionError("story " + r.story_id + ": image feature has " + std::to_string(r.image_feature->size()) +
                           " values, model expects " + std::to_string(config_.region_dim));
    }
    image = add(matmul(Tensor::row(*r.image_feature), *region_w_), *region_b_);
  }
  enc.visual = build_visual_graph(
      r.scene_objects, r.scene_relations, [this](const SceneObject& o) { return embed_object(o); },
      [this](const std::string& p) { return embed_predicate(p); }, config_.d_model, image);
  enc.semantic_reasoned = reason(enc.semantic.graph, enc.semantic.features, semantic_stack_);
  enc.visual_reasoned = reason(enc.visual.graph, enc.visual.features, visual_stack_);
  for (const auto& n : enc.semantic.graph.nodes) {
    if (n.kind == NodeKind::SentenceRoot) enc.root_rows.push_back(n.feature_index);
  }
  return enc;
}

FusedNodes MetModel::fuse_story(const StoryEncoding& enc, const Tensor& semantic_features) const {
  const EventGraph merged = merge_graphs(enc.semantic.graph, enc.visual.graph, config_.cross_modal_bridges);
  return fuse(merged, vstack({semantic_features, enc.visual_reasoned}), fusion_stack_);
}

std::vector<int> MetModel::gold_sequence(const StoryRecord& r) const {
  std::vector<int> seq{Vocab::kBos};
  for (const auto& t : r.ending) seq.push_back(vocab_.tokens.id(t));
  seq.push_back(Vocab::kEos);
  return seq;
}

namespace {

std::string span_text(const std::vector<std::string>& sentence, int start, int end) {
  std::string s;
  for (int i = start; i < end; ++i) {
    if (i > start) s += ' ';
    s += sentence[static_cast<std::size_t>(i)];
  }
  return s;
}

std::vector<std::string> semantic_labels(const StoryRecord& r) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < r.sentences.size(); ++i) {
    labels.push_back("sentence " + std::to_string(i) + ": " + detokenize(r.sentences[i]));
    for (const auto& ev : r.srl_events[i]) {
      for (const auto& sp : ev) labels.push_back(sp.role + ": " + span_text(r.sentences[i], sp.start, sp.end));
    }
  }
  return labels;
}

std::vector<std::string> visual_labels(const StoryRecord& r) {
  std::vector<std::string> labels{"image"};
  for (const auto& o : r.scene_objects) labels.push_back("object: " + o.category);
  for (const auto& t : r.scene_relations) labels.push_back("relation: " + t.predicate);
  return labels;
}

std::vector<DiagnosticNode> top_nodes(const Eigen::RowVectorXd& w, const std::vector<std::string>& labels, int k) {
  std::vector<int> order(static_cast<std::size_t>(w.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&w](int a, int b) { return w(a) > w(b); });
  std::vector<DiagnosticNode> out;
  for (int i = 0; i < std::min<int>(k, static_cast<int>(order.size())); ++i) {
    const int n = order[static_cast<std::size_t>(i)];
    out.push_back({n, labels[static_cast<std::size_t>(n)], w(n)});
  }
  return out;
}

}  // namespace

GeneratedEnding MetModel::generate(const StoryRecord& r, int beam_size, int max_len, bool diagnostics) const {
  NoTapeScope no_tape;
  const StoryEncoding enc = encode_story(r);
  const FusedNodes fused = fuse_story(enc, enc.semantic_reasoned);
  const NodeMemory memory = memory_of(fused);
  const BeamHypothesis best = beam_search(memory, decoder_, Vocab::kBos, Vocab::kEos, beam_size, max_len);
  GeneratedEnding out;
  out.ids = best.tokens;
  out.logprob = best.logprob;
  out.tokens = vocab_.tokens.decode(best.tokens);
  if (diagnostics && !best.tokens.empty()) {
    std::vector<int> inputs{Vocab::kBos};
    inputs.insert(inputs.end(), best.tokens.begin(), best.tokens.end() - 1);
    const DecoderOutput o = run_decoder(inputs, memory, decoder_, true);
    const Injection& last = o.injections.back();
    const auto sem_labels = semantic_labels(r);
    const auto vis_labels = visual_labels(r);
    for (std::size_t i = 0; i < best.tokens.size(); ++i) {
      const auto row = static_cast<Index>(i);
      TokenDiagnostics td;
      td.token = vocab_.tokens.token(best.tokens[i]);
      td.gate = last.gate.value().row(row).mean();
      td.top_visual = top_nodes(last.visual_weights.row(row), vis_labels, 3);
      td.top_semantic = top_nodes(last.semantic_weights.row(row), sem_labels, 3);
      out.diagnostics.push_back(std::move(td));
    }
  }
  return out;
}

nlohmann::json MetModel::meta() const {
  return {{"model", config_.to_json()},
          {"vocab", vocab_.tokens.tokens()},
          {"categories", vocab_.categories.labels()},
          {"predicates", vocab_.predicates.labels()}};
}

void MetModel::save(const std::string& path) const { save_checkpoint(path, params_, meta()); }

MetModel MetModel::from_checkpoint(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (!ck.meta.contains("model") || !ck.meta.contains("vocab")) {
    throw CheckpointError("checkpoint " + path + " lacks model metadata");
  }
  CorpusVocabularies v;
  v.tokens = Vocab(ck.meta.at("vocab").get<std::vector<std::string>>());
  v.categories = LabelSet(ck.meta.at("categories").get<std::vector<std::string>>());
  v.predicates = LabelSet(ck.meta.at("predicates").get<std::vector<std::string>>());
  MetModel m(ModelConfig::from_json(ck.meta.at("model")), std::move(v), 0);
  load_into(m.params_, ck);
  return m;
}

}  // namespace met
