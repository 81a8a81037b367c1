#include "met/rgcn.hpp"

#include "met/ops.hpp"

namespace met {

RgcnStack RgcnStack::create(ModelParams& params, const std::string& prefix, int layers, Index dim, Rng& rng,
                            bool self_loop) {
  RgcnStack s;
  s.self_loop = self_loop;
  for (int l = 0; l < layers; ++l) {
    RgcnLayerWeights w;
    for (int r = 0; r < kRelationCount; ++r) {
      w.relation[static_cast<std::size_t>(r)] =
          params.add_weight(prefix + ".layer" + std::to_string(l) + "." + to_string(kAllRelations[static_cast<std::size_t>(r)]),
                            dim, dim, rng);
    }
    if (self_loop) w.self = params.add_weight(prefix + ".layer" + std::to_string(l) + ".self", dim, dim, rng);
    s.layers.push_back(std::move(w));
  }
  s.norm_gain = params.add_gain(prefix + ".norm.gain", dim);
  s.norm_bias = params.add_bias(prefix + ".norm.bias", dim);
  return s;
}

RelationAdjacency relation_adjacency(const EventGraph& graph) {
  const Index n = graph.node_count();
  RelationAdjacency adj;
  std::array<std::vector<int>, kRelationCount> in_degree;
  for (auto& d : in_degree) d.assign(static_cast<std::size_t>(n), 0);
  for (const auto& e : graph.edges) {
    const auto r = static_cast<std::size_t>(e.relation);
    if (!adj[r]) adj[r] = Matrix::Zero(n, n);
    (*adj[r])(e.dst, e.src) += 1.0;
    ++in_degree[r][static_cast<std::size_t>(e.dst)];
  }
  for (std::size_t r = 0; r < adj.size(); ++r) {
    if (!adj[r]) continue;
    for (Index i = 0; i < n; ++i) {
      const int deg = in_degree[r][static_cast<std::size_t>(i)];
      if (deg > 0) adj[r]->row(i) /= static_cast<double>(deg);
    }
  }
  return adj;
}

Tensor rgcn_layer(const RelationAdjacency& adjacency, const Tensor& features, const RgcnLayerWeights& weights) {
  std::optional<Tensor> acc;
  for (std::size_t r = 0; r < adjacency.size(); ++r) {
    if (!adjacency[r]) continue;
    if (adjacency[r]->cols() != features.rows()) {
      throw DimensionError("rgcn_layer: " + std::to_string(adjacency[r]->cols()) + " nodes but features " +
                           shape_string(features.value()));
    }
    Tensor msg = matmul(matmul(Tensor(*adjacency[r]), features), weights.relation[r]);
    acc = acc ? add(*acc, msg) : msg;
  }
  if (weights.self) {
    Tensor self = matmul(features, *weights.self);
    acc = acc ? add(*acc, self) : self;
  }
  if (!acc) return Tensor::zeros(features.rows(), weights.relation[0].cols());
  return relu(*acc);
}

Tensor rgcn_layer(const EventGraph& graph, const Tensor& features, const RgcnLayerWeights& weights) {
  if (features.rows() != graph.node_count()) {
    throw DimensionError("rgcn_layer: graph has " + std::to_string(graph.node_count()) + " nodes but features are " +
                         shape_string(features.value()));
  }
  return rgcn_layer(relation_adjacency(graph), features, weights);
}

Tensor reason(const EventGraph& graph, const Tensor& features, const RgcnStack& stack) {
  if (features.rows() != graph.node_count()) {
    throw DimensionError("reason: graph has " + std::to_string(graph.node_count()) + " nodes but features are " +
                         shape_string(features.value()));
  }
  const RelationAdjacency adj = relation_adjacency(graph);
  Tensor h = features;
  for (const auto& layer : stack.layers) h = rgcn_layer(adj, h, layer);
  return h;
}

FusedNodes fuse(const EventGraph& merged, const Tensor& features, const RgcnStack& stack) {
  if (merged.count(NodeKind::ImageRoot) != 1 || merged.count(NodeKind::SentenceRoot) == 0) {
    throw ContractError("fuse: merged graph needs one image root and at least one sentence root");
  }
  const Tensor normed = layer_norm(features, stack.norm_gain, stack.norm_bias, 1e-5);
  const Tensor out = reason(merged, normed, stack);
  FusedNodes fused;
  std::vector<Index> sem_rows, vis_rows;
  for (const auto& n : merged.nodes) {
    if (is_semantic(n.kind)) {
      fused.semantic_ids.push_back(n.id);
      sem_rows.push_back(n.feature_index);
    } else {
      fused.visual_ids.push_back(n.id);
      vis_rows.push_back(n.feature_index);
    }
  }
  fused.semantic = gather_rows(out, sem_rows);
  fused.visual = gather_rows(out, vis_rows);
  return fused;
}

}  // namespace met
