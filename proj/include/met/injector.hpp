#pragma once

// Multimodal injector: decoder states attend separately over fused visual and
// semantic nodes, a sigmoid gate mixes the two readouts, and the decoder
// state is added back as a residual:
//
//   hI = softmax(h VIs^T / sqrt(d)) VIs        hS likewise over semantic nodes
//   lambda = sigmoid(hI U^T + hS V^T)
//   out = lambda * hI + (1 - lambda) * hS + h

#include "met/params.hpp"

#include <optional>
#include <string>

namespace met {

struct InjectorParams {
  Tensor u;  // 1 x d, or d x d with vector_gate
  Tensor v;
  bool vector_gate = false;
  // Optional learned query/key/value maps (ablation only).
  std::optional<Tensor> wq, wk, wv;

  static InjectorParams create(ModelParams& params, const std::string& prefix, Index dim, Rng& rng,
                               bool vector_gate = false, bool projections = false);
};

// Q = h, K = V = nodes. Throws ContractError for an empty node set.
Tensor selective_attention(const Tensor& h, const Tensor& nodes);

struct Injection {
  Tensor output;            // t x d
  Tensor gate;              // t x 1 (t x d with vector_gate)
  Matrix visual_weights;    // t x n_visual attention weights
  Matrix semantic_weights;  // t x n_semantic
};

Injection inject_detailed(const Tensor& h, const Tensor& visual_nodes, const Tensor& semantic_nodes,
                          const InjectorParams& params);
Tensor inject(const Tensor& h, const Tensor& visual_nodes, const Tensor& semantic_nodes, const InjectorParams& params);

}  // namespace met
