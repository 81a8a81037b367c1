#pragma once

// Relational graph convolution:
//
//   out_i = relu( sum_r sum_{j in N_r(i)} 1/|N_r(i)| * w_j W_r )
//
// where N_r(i) are the in-neighbours of i under relation r (edge j -> i).
// There is no self term unless self_loop is enabled, so a node without
// incoming edges maps to the zero vector.

#include "met/graph.hpp"
#include "met/params.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace met {

struct RgcnLayerWeights {
  std::array<Tensor, kRelationCount> relation;  // each d_in x d_out
  std::optional<Tensor> self;                   // only with self_loop
};

struct RgcnStack {
  std::vector<RgcnLayerWeights> layers;
  Tensor norm_gain;  // pre-fusion layer norm, 1 x d
  Tensor norm_bias;
  bool self_loop = false;

  static RgcnStack create(ModelParams& params, const std::string& prefix, int layers, Index dim, Rng& rng,
                          bool self_loop = false);
  int depth() const { return static_cast<int>(layers.size()); }
};

// Row-normalized in-adjacency per relation; nullopt for relations with no edges.
using RelationAdjacency = std::array<std::optional<Matrix>, kRelationCount>;
RelationAdjacency relation_adjacency(const EventGraph& graph);

Tensor rgcn_layer(const EventGraph& graph, const Tensor& features, const RgcnLayerWeights& weights);
Tensor rgcn_layer(const RelationAdjacency& adjacency, const Tensor& features, const RgcnLayerWeights& weights);

// Applies every layer of the stack in order (identity for an empty stack).
Tensor reason(const EventGraph& graph, const Tensor& features, const RgcnStack& stack);

struct FusedNodes {
  Tensor semantic;  // rows in merged-graph order of semantic-origin nodes
  Tensor visual;
  std::vector<int> semantic_ids;
  std::vector<int> visual_ids;
};

// Layer-normalizes node features, reasons over the merged graph, and splits
// the output by node modality.
FusedNodes fuse(const EventGraph& merged, const Tensor& features, const RgcnStack& stack);

}  // namespace met
