#include "met/injector.hpp"

#include "met/ops.hpp"

#include <cmath>

namespace met {

InjectorParams InjectorParams::create(ModelParams& params, const std::string& prefix, Index dim, Rng& rng,
                                      bool vector_gate, bool projections) {
  InjectorParams p;
  p.vector_gate = vector_gate;
  const Index out = vector_gate ? dim : 1;
  // Stored as d x out so the gate is a plain matmul.
  p.u = params.add_weight(prefix + ".U", dim, out, rng);
  p.v = params.add_weight(prefix + ".V", dim, out, rng);
  if (projections) {
    p.wq = params.add_weight(prefix + ".Wq", dim, dim, rng);
    p.wk = params.add_weight(prefix + ".Wk", dim, dim, rng);
    p.wv = params.add_weight(prefix + ".Wv", dim, dim, rng);
  }
  return p;
}

namespace {

struct Attended {
  Tensor out;
  Tensor weights;
};

Attended attend(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (k.rows() == 0) throw ContractError("selective_attention: empty node memory");
  if (q.cols() != k.cols()) {
    throw DimensionError("selective_attention: query " + shape_string(q.value()) + " vs nodes " +
                         shape_string(k.value()));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor w = softmax(scale(matmul(q, transpose(k)), s), Axis::Cols);
  return {matmul(w, v), w};
}

Attended attend_with(const Tensor& h, const Tensor& nodes, const InjectorParams& p) {
  if (p.wq) return attend(matmul(h, *p.wq), matmul(nodes, *p.wk), matmul(nodes, *p.wv));
  return attend(h, nodes, nodes);
}

}  // namespace

Tensor selective_attention(const Tensor& h, const Tensor& nodes) { return attend(h, nodes, nodes).out; }

Injection inject_detailed(const Tensor& h, const Tensor& visual_nodes, const Tensor& semantic_nodes,
                          const InjectorParams& params) {
  const Attended vis = attend_with(h, visual_nodes, params);
  const Attended sem = attend_with(h, semantic_nodes, params);
  Tensor gate = sigmoid(add(matmul(vis.out, params.u), matmul(sem.out, params.v)));
  // lambda * hI + (1 - lambda) * hS == hS + lambda * (hI - hS)
  Tensor mixed = add(sem.out, mul(sub(vis.out, sem.out), gate));
  return {add(mixed, h), gate, vis.weights.value(), sem.weights.value()};
}

Tensor inject(const Tensor& h, const Tensor& visual_nodes, const Tensor& semantic_nodes, const InjectorParams& params) {
  return inject_detailed(h, visual_nodes, semantic_nodes, params).output;
}

}  // namespace met
