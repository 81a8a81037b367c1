#include "met/gradsuite.hpp"

#include "met/decoder.hpp"
#include "met/injector.hpp"
#include "met/ops.hpp"
#include "met/rgcn.hpp"
#include "met/training.hpp"

#include <functional>
#include <random>

namespace met {

namespace {

struct Check {
  std::string name;
  // Builds inputs and a loss closure from the generator.
  std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(Rng&)> make;
  double step = 1e-4;
  std::size_t max_elements = 0;
};

Tensor leaf(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return Tensor(m, true);
}

// Entries bounded away from zero so relu kinks stay outside the stencil.
Tensor leaf_off_zero(Index r, Index c, Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = sign(rng) ? u(rng) : -u(rng);
  return Tensor(m, true);
}

Matrix weights_like(Index r, Index c, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor probe(const Tensor& out, const Matrix& w) { return sum(mul(out, Tensor(w))); }

using Made = std::pair<std::function<Tensor()>, std::vector<Tensor>>;

Made unary(Rng& rng, Index r, Index c, std::function<Tensor(const Tensor&)> f, bool off_zero = false) {
  Tensor x = off_zero ? leaf_off_zero(r, c, rng) : leaf(r, c, rng);
  Matrix w;
  {
    NoTapeScope nt;
    const Tensor probe_shape = f(x);
    w = weights_like(probe_shape.rows(), probe_shape.cols(), rng);
  }
  return {[x, w, f] { return probe(f(x), w); }, {x}};
}

EventGraph random_graph(Rng& rng, int n) {
  EventGraph g;
  for (int i = 0; i < n; ++i) g.nodes.push_back({i, NodeKind::Event, i, -1});
  std::uniform_int_distribution<int> node(0, n - 1);
  std::uniform_int_distribution<int> rel(0, kRelationCount - 1);
  std::uniform_int_distribution<int> count(n, 3 * n);
  const int m = count(rng);
  for (int k = 0; k < m; ++k) {
    const int s = node(rng), d = node(rng);
    if (s == d) continue;
    g.edges.push_back({s, d, kAllRelations[static_cast<std::size_t>(rel(rng))]});
  }
  return g;
}

std::vector<Check> checks() {
  std::vector<Check> c;
  c.push_back({"matmul", [](Rng& rng) -> Made {
                 Tensor a = leaf(3, 4, rng), b = leaf(4, 2, rng);
                 Matrix w = weights_like(3, 2, rng);
                 return {[=] { return probe(matmul(a, b), w); }, {a, b}};
               }});
  c.push_back({"transpose", [](Rng& rng) { return unary(rng, 3, 4, [](const Tensor& x) { return transpose(x); }); }});
  auto broadcast = [](const char* name, std::function<Tensor(const Tensor&, const Tensor&)> f) {
    return Check{name, [f](Rng& rng) -> Made {
                   Tensor a = leaf(3, 4, rng), same = leaf(3, 4, rng), row = leaf(1, 4, rng), col = leaf(3, 1, rng),
                          sc = leaf(1, 1, rng);
                   Matrix w = weights_like(3, 4, rng);
                   return {[=] { return probe(f(f(f(f(a, same), row), col), sc), w); }, {a, same, row, col, sc}};
                 }};
  };
  c.push_back(broadcast("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }));
  c.push_back(broadcast("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  c.push_back(broadcast("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  c.push_back({"scale", [](Rng& rng) { return unary(rng, 2, 3, [](const Tensor& x) { return scale(x, -1.7); }); }});
  c.push_back({"add_scalar", [](Rng& rng) { return unary(rng, 2, 3, [](const Tensor& x) { return add_scalar(x, 0.3); }); }});
  c.push_back({"relu", [](Rng& rng) { return unary(rng, 3, 3, [](const Tensor& x) { return relu(x); }, true); }});
  c.push_back({"sigmoid", [](Rng& rng) { return unary(rng, 3, 3, [](const Tensor& x) { return sigmoid(scale(x, 4.0)); }); }});
  c.push_back({"softmax_cols",
               [](Rng& rng) { return unary(rng, 3, 5, [](const Tensor& x) { return softmax(x, Axis::Cols); }); }});
  c.push_back({"softmax_rows",
               [](Rng& rng) { return unary(rng, 4, 3, [](const Tensor& x) { return softmax(x, Axis::Rows); }); }});
  c.push_back({"log_softmax", [](Rng& rng) { return unary(rng, 3, 5, [](const Tensor& x) { return log_softmax(x); }); }});
  c.push_back({"layer_norm", [](Rng& rng) -> Made {
                 Tensor x = leaf(3, 6, rng), g = leaf(1, 6, rng, 0.5, 1.5), b = leaf(1, 6, rng);
                 Matrix w = weights_like(3, 6, rng);
                 return {[=] { return probe(layer_norm(x, g, b), w); }, {x, g, b}};
               }});
  c.push_back({"mean_pool", [](Rng& rng) {
                 return unary(rng, 5, 3, [](const Tensor& x) { return mean_pool(x, {true, false, true, true, false}); });
               }});
  c.push_back({"cross_entropy", [](Rng& rng) -> Made {
                 Tensor x = leaf(4, 5, rng, -2.0, 2.0);
                 return {[=] { return cross_entropy(x, {1, 4, -1, 0}, -1); }, {x}};
               }});
  c.push_back({"binary_cross_entropy", [](Rng& rng) -> Made {
                 Tensor x = leaf(1, 4, rng, -2.0, 2.0);
                 Matrix y(1, 4);
                 y << 1, 0, 0, 1;
                 return {[=] { return binary_cross_entropy(sigmoid(x), y); }, {x}};
               }});
  c.push_back({"sum", [](Rng& rng) -> Made {
                 Tensor x = leaf(3, 3, rng);
                 return {[=] { return scale(sum(x), 0.7); }, {x}};
               }});
  c.push_back({"mean", [](Rng& rng) -> Made {
                 Tensor x = leaf(3, 3, rng);
                 return {[=] { return scale(mean(x), 1.3); }, {x}};
               }});
  c.push_back({"vstack", [](Rng& rng) -> Made {
                 Tensor a = leaf(2, 3, rng), b = leaf(1, 3, rng);
                 Matrix w = weights_like(3, 3, rng);
                 return {[=] { return probe(vstack({a, b}), w); }, {a, b}};
               }});
  c.push_back({"hstack", [](Rng& rng) -> Made {
                 Tensor a = leaf(2, 3, rng), b = leaf(2, 2, rng);
                 Matrix w = weights_like(2, 5, rng);
                 return {[=] { return probe(hstack({a, b}), w); }, {a, b}};
               }});
  c.push_back({"gather_rows",
               [](Rng& rng) { return unary(rng, 4, 3, [](const Tensor& x) { return gather_rows(x, {2, 0, 2, 3}); }); }});
  c.push_back({"slice_cols", [](Rng& rng) { return unary(rng, 3, 5, [](const Tensor& x) { return slice_cols(x, 1, 3); }); }});
  c.push_back({"slice_rows", [](Rng& rng) { return unary(rng, 5, 3, [](const Tensor& x) { return slice_rows(x, 2, 2); }); }});
  c.push_back({"scatter_rows", [](Rng& rng) -> Made {
                 Tensor base = leaf(4, 3, rng), vals = leaf(2, 3, rng);
                 Matrix w = weights_like(4, 3, rng);
                 return {[=] { return probe(scatter_rows(base, {3, 1}, vals), w); }, {base, vals}};
               }});
  c.push_back({"multi_head_attention", [](Rng& rng) -> Made {
                 Tensor x = leaf(4, 6, rng), wq = leaf(6, 6, rng), wk = leaf(6, 6, rng), wv = leaf(6, 6, rng),
                        wo = leaf(6, 6, rng);
                 Matrix mask = Matrix::Zero(4, 4);
                 for (Index i = 0; i < 4; ++i) {
                   for (Index j = i + 1; j < 4; ++j) mask(i, j) = -1e9;
                 }
                 Matrix w = weights_like(4, 6, rng);
                 return {[=] {
                           const Tensor m(mask);
                           return probe(multi_head_attention(x, wq, wk, wv, wo, 2, &m), w);
                         },
                         {x, wq, wk, wv, wo}};
               }});
  c.push_back({"selective_attention", [](Rng& rng) -> Made {
                 Tensor h = leaf(3, 4, rng), nodes = leaf(5, 4, rng);
                 Matrix w = weights_like(3, 4, rng);
                 return {[=] { return probe(selective_attention(h, nodes), w); }, {h, nodes}};
               }});
  c.push_back({"injector", [](Rng& rng) -> Made {
                 ModelParams p;
                 const InjectorParams ip = InjectorParams::create(p, "inj", 4, rng, false, true);
                 Tensor h = leaf(3, 4, rng), vis = leaf(4, 4, rng), sem = leaf(6, 4, rng);
                 Matrix w = weights_like(3, 4, rng);
                 std::vector<Tensor> in{h, vis, sem};
                 for (const auto& e : p.entries()) in.push_back(e.tensor);
                 return {[=] { return probe(inject(h, vis, sem, ip), w); }, in};
               }});
  c.push_back({"rgcn_layer", [](Rng& rng) -> Made {
                 ModelParams p;
                 const RgcnStack st = RgcnStack::create(p, "r", 1, 3, rng, true);
                 const EventGraph g = random_graph(rng, 6);
                 Tensor x = leaf(6, 3, rng);
                 Matrix w = weights_like(6, 3, rng);
                 std::vector<Tensor> in{x};
                 for (const auto& e : p.entries()) in.push_back(e.tensor);
                 return {[=] { return probe(rgcn_layer(g, x, st.layers[0]), w); }, in};
               },
               1e-6});
  c.push_back({"incoherence_head", [](Rng& rng) -> Made {
                 ModelParams p;
                 DecoderConfig dc;
                 dc.vocab_size = 7;
                 dc.d_model = 4;
                 dc.n_heads = 2;
                 dc.layers = 1;
                 dc.max_positions = 6;
                 const DecoderStack st = DecoderStack::create(p, "d", dc, rng);
                 Tensor h = leaf(1, 4, rng);
                 return {[=] { return clf_loss(incoherence_probs(h, st), {1, 0, 0, 1}); },
                         {h, st.clf_w1, st.clf_b1, st.clf_w2, st.clf_b2}};
               },
               1e-6});
  c.push_back({"decoder", [](Rng& rng) -> Made {
                 ModelParams p;
                 DecoderConfig dc;
                 dc.vocab_size = 7;
                 dc.d_model = 4;
                 dc.n_heads = 2;
                 dc.layers = 2;
                 dc.max_positions = 6;
                 const DecoderStack st = DecoderStack::create(p, "d", dc, rng);
                 Tensor vis = leaf(3, 4, rng), sem = leaf(5, 4, rng);
                 std::vector<Tensor> in{vis, sem};
                 for (const auto& e : p.entries()) in.push_back(e.tensor);
                 return {[=] { return generation_loss({2, 5, 4, 6, 3}, NodeMemory{vis, sem}, st, 0); }, in};
               },
               1e-6});
  c.push_back({"pipeline", [](Rng& rng) -> Made {
                 std::uniform_int_distribution<int> place(0, 4);
                 std::uniform_int_distribution<int> scene(0, 5);
                 const int pl = place(rng);
                 const int s0 = scene(rng);
                 std::vector<StoryRecord> stories{synthetic_story("a", 0, pl, s0),
                                                  synthetic_story("b", 1, (pl + 1) % 5, (s0 + 1) % 6)};
                 ModelConfig mc;
                 mc.d_model = 8;
                 mc.n_heads = 2;
                 mc.dec_layers = 2;
                 mc.reason_layers = 2;
                 mc.fuse_layers = 1;
                 mc.max_positions = 16;
                 mc.encoder_positions = 16;
                 auto model = std::make_shared<MetModel>(mc, build_vocabularies(stories), rng());
                 const std::uint64_t corruption_seed = rng();
                 // Zero biases on dead rows put relu inputs exactly on the kink;
                 // jitter every parameter so the check runs at a differentiable point.
                 std::normal_distribution<double> jitter(0.0, 0.05);
                 std::vector<Tensor> in;
                 for (const auto& e : model->params().entries()) {
                   Tensor t = e.tensor;
                   t.mutable_value() = t.value().unaryExpr([&](double v) { return v + jitter(rng); });
                   in.push_back(t);
                 }
                 return {[model, stories, corruption_seed] {
                           Rng r(corruption_seed);
                           std::vector<const StoryRecord*> batch{&stories[0], &stories[1]};
                           return batch_losses(*model, batch, 0.2, 0.5, false, r).total;
                         },
                         in};
               },
               1e-6, 16});
  return c;
}

// Identity in the forward pass; scales the upstream gradient on the way back.
Tensor faulty(const Tensor& x) {
  return make_result(x.value(), "faulty", {x}, [](const Tape::Record& r) {
    accumulate_grad(*r.inputs[0], 1.5 * r.output->grad);
  });
}

}  // namespace

std::vector<std::string> gradcheck_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : checks()) names.push_back(c.name);
  return names;
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradSuiteOptions& opt) {
  std::vector<GradcheckResult> out;
  Rng rng(opt.seed);
  for (const auto& c : checks()) {
    auto [loss, inputs] = c.make(rng);
    if (c.name == opt.fault) loss = [inner = loss] { return faulty(inner()); };
    GradcheckOptions go;
    go.step = c.step;
    go.rtol = opt.rtol;
    go.atol = opt.atol;
    go.max_elements = c.max_elements;
    go.sample_seed = rng();
    out.push_back(check_gradients(c.name, loss, inputs, go));
  }
  return out;
}

}  // namespace met
