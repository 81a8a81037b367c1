#include "helpers.hpp"
#include "met/decoder.hpp"
#include "met/injector.hpp"
#include "met/model.hpp"
#include "met/ops.hpp"
#include "met/rgcn.hpp"
#include "met/training.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>

using namespace met;
using testutil::random_matrix;

namespace {

DecoderConfig small_config(int vocab = 9) {
  DecoderConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.layers = 2;
  c.max_positions = 12;
  c.n_sentences = 4;
  return c;
}

struct Fixture {
  ModelParams params;
  DecoderStack stack;
  NodeMemory memory;
  explicit Fixture(std::uint64_t seed, int vocab = 9) {
    Rng rng(seed);
    stack = DecoderStack::create(params, "dec", small_config(vocab), rng);
    memory = {Tensor(random_matrix(3, 8, rng)), Tensor(random_matrix(5, 8, rng))};
  }
};

// Independent pre-norm causal decoder written directly against Eigen.
Matrix ln_ref(const Matrix& x, const Matrix& g, const Matrix& b) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const Eigen::RowVectorXd c = x.row(i).array() - mu;
    const double var = c.squaredNorm() / static_cast<double>(x.cols());
    y.row(i) = (c.array() / std::sqrt(var + 1e-5) * g.row(0).array() + b.row(0).array()).matrix();
  }
  return y;
}

Matrix plain_decoder_logits(const std::vector<int>& tokens, const DecoderStack& s) {
  const auto t = static_cast<Index>(tokens.size());
  const Index d = s.config.d_model, dh = d / s.config.n_heads;
  Matrix x(t, d);
  for (Index i = 0; i < t; ++i) {
    x.row(i) = s.token_embedding.value().row(tokens[static_cast<std::size_t>(i)]) + s.position_embedding.value().row(i);
  }
  for (const auto& L : s.layers) {
    const Matrix a = ln_ref(x, L.ln1_gain.value(), L.ln1_bias.value());
    const Matrix q = a * L.wq.value(), k = a * L.wk.value(), v = a * L.wv.value();
    Matrix heads(t, d);
    for (int h = 0; h < s.config.n_heads; ++h) {
      for (Index i = 0; i < t; ++i) {
        std::vector<double> w(static_cast<std::size_t>(i + 1));
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j <= i; ++j) {
          w[static_cast<std::size_t>(j)] = q.row(i).segment(h * dh, dh).dot(k.row(j).segment(h * dh, dh)) / std::sqrt(double(dh));
          mx = std::max(mx, w[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (auto& e : w) z += (e = std::exp(e - mx));
        Eigen::RowVectorXd o = Eigen::RowVectorXd::Zero(dh);
        for (Index j = 0; j <= i; ++j) o += w[static_cast<std::size_t>(j)] / z * v.row(j).segment(h * dh, dh);
        heads.row(i).segment(h * dh, dh) = o;
      }
    }
    x += heads * L.wo.value();
    const Matrix f = ln_ref(x, L.ln2_gain.value(), L.ln2_bias.value());
    Matrix hidden = f * L.ff1_w.value();
    hidden.rowwise() += L.ff1_b.value().row(0);
    hidden = hidden.cwiseMax(0.0);
    Matrix out = hidden * L.ff2_w.value();
    out.rowwise() += L.ff2_b.value().row(0);
    x += out;
  }
  Matrix logits = ln_ref(x, s.final_gain.value(), s.final_bias.value()) * s.lm_weight.value();
  logits.rowwise() += s.lm_bias.value().row(0);
  return logits;
}

}  // namespace

TEST_CASE("rgcn layer against a hand computation") {
  // 0 -> 2 and 1 -> 2 under SentToEvent, 2 -> 0 under EventToSent.
  EventGraph g;
  g.nodes = {{0, NodeKind::SentenceRoot, 0, 0}, {1, NodeKind::SentenceRoot, 1, 1}, {2, NodeKind::Event, 2, 0}};
  g.edges = {{0, 2, EdgeRelation::SentToEvent}, {1, 2, EdgeRelation::SentToEvent}, {2, 0, EdgeRelation::EventToSent}};
  Rng rng(5);
  ModelParams p;
  const RgcnStack st = RgcnStack::create(p, "r", 1, 3, rng);
  const Matrix x = random_matrix(3, 3, rng);
  const Matrix out = rgcn_layer(g, Tensor(x), st.layers[0]).value();
  const Matrix& w_se = st.layers[0].relation[static_cast<std::size_t>(EdgeRelation::SentToEvent)].value();
  const Matrix& w_es = st.layers[0].relation[static_cast<std::size_t>(EdgeRelation::EventToSent)].value();
  CHECK(out.row(2).isApprox((0.5 * (x.row(0) + x.row(1)) * w_se).cwiseMax(0.0)));
  CHECK(out.row(0).isApprox((x.row(2) * w_es).cwiseMax(0.0)));
  CHECK(out.row(1).isZero(0.0));
  ModelParams p2;
  Rng rng2(5);
  const RgcnStack with_self = RgcnStack::create(p2, "r", 1, 3, rng2, true);
  REQUIRE(with_self.layers[0].self.has_value());
  CHECK(rgcn_layer(g, Tensor(x), with_self.layers[0]).value().row(1).isApprox(
      (x.row(1) * with_self.layers[0].self->value()).cwiseMax(0.0)));
}

TEST_CASE("reasoning stack passes gradient to every used relation weight") {
  Rng rng(6);
  ModelParams p;
  const RgcnStack st = RgcnStack::create(p, "r", 2, 4, rng);
  const EventGraph g = semantic_structure({3, 3}, {{{{"V", 0, 1}}}, {{{"V", 1, 2}}}});
  Tensor x(random_matrix(g.node_count(), 4, rng));
  {
    Tape t;
    TapeScope s(t);
    t.backward(sum(reason(g, x, st)));
  }
  for (EdgeRelation r : {EdgeRelation::SentNext, EdgeRelation::SentToEvent, EdgeRelation::EventToSent}) {
    CHECK(st.layers[0].relation[static_cast<std::size_t>(r)].grad().norm() > 0.0);
  }
  CHECK(st.layers[0].relation[static_cast<std::size_t>(EdgeRelation::ImgToObj)].grad().isZero(0.0));
}

TEST_CASE("injector gate and mixing") {
  Rng rng(7);
  ModelParams p;
  InjectorParams inj = InjectorParams::create(p, "inj", 6, rng);
  const Tensor h(random_matrix(4, 6, rng)), vis(random_matrix(3, 6, rng)), sem(random_matrix(5, 6, rng));
  const Injection out = inject_detailed(h, vis, sem, inj);
  const Matrix hI = selective_attention(h, vis).value(), hS = selective_attention(h, sem).value();
  const Matrix lam = out.gate.value();
  CHECK(lam.minCoeff() > 0.0);
  CHECK(lam.maxCoeff() < 1.0);
  for (Index i = 0; i < 4; ++i) {
    const Eigen::RowVectorXd expect = lam(i, 0) * hI.row(i) + (1.0 - lam(i, 0)) * hS.row(i) + h.value().row(i);
    CHECK((out.output.value().row(i) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(out.visual_weights.rows() == 4);
  CHECK(out.visual_weights.row(0).sum() == doctest::Approx(1.0));

  inj.u.mutable_value().setZero();
  inj.v.mutable_value().setZero();
  CHECK((inject_detailed(h, vis, sem, inj).gate.value().array() == 0.5).all());
  // Identical node sets make the gate irrelevant.
  const Matrix a = inject(h, vis, vis, inj).value();
  inj.u.mutable_value().setConstant(3.0);
  CHECK((inject(h, vis, vis, inj).value() - a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(selective_attention(h, Tensor(Matrix(0, 6))), ContractError);
}

TEST_CASE("decoder with zero memories matches a plain decoder") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Fixture f(seed);
    const NodeMemory zero{Tensor(Matrix::Zero(3, 8)), Tensor(Matrix::Zero(5, 8))};
    const std::vector<int> toks{2, 5, 7, 4, 8, 1};
    const Matrix got = run_decoder(toks, zero, f.stack).logits.value();
    const Matrix ref = plain_decoder_logits(toks, f.stack);
    CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("decoder is causal and autoregressively consistent") {
  Fixture f(11);
  const std::vector<int> a{2, 4, 5, 6, 7}, b{2, 4, 5, 8, 0};
  const Matrix la = run_decoder(a, f.memory, f.stack).logits.value();
  const Matrix lb = run_decoder(b, f.memory, f.stack).logits.value();
  CHECK((la.topRows(3) - lb.topRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((la.row(3) - lb.row(3)).cwiseAbs().maxCoeff() > 1e-6);
  for (std::size_t n = 1; n <= a.size(); ++n) {
    const std::vector<int> prefix(a.begin(), a.begin() + static_cast<long>(n));
    const Eigen::RowVectorXd dist = decode_step(prefix, f.memory, f.stack).distribution;
    CHECK(dist.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dist.minCoeff() >= 0.0);
    const Matrix full = softmax(Tensor(la.row(static_cast<Index>(n) - 1)), Axis::Cols).value();
    CHECK((dist - full.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("next-token entropy at initialization is near uniform") {
  Fixture f(12, 60);
  const Eigen::RowVectorXd p = decode_step({2, 7, 9}, f.memory, f.stack).distribution;
  double h = 0.0;
  for (Index i = 0; i < p.size(); ++i) h -= p(i) * std::log(p(i));
  CHECK(h > 0.9 * std::log(60.0));
  CHECK(h <= std::log(60.0) + 1e-12);
}

TEST_CASE("generation loss ignores trailing padding") {
  Fixture f(13);
  const std::vector<int> seq{2, 5, 6, 3};
  std::vector<int> padded = seq;
  padded.insert(padded.end(), {0, 0, 0});
  CHECK(generation_loss(seq, f.memory, f.stack, 0).item() ==
        doctest::Approx(generation_loss(padded, f.memory, f.stack, 0).item()).epsilon(1e-14));
  CHECK_THROWS_AS(run_decoder({2, 99}, f.memory, f.stack), VocabularyError);
  CHECK_THROWS_AS(run_decoder(std::vector<int>(13, 2), f.memory, f.stack), DimensionError);
  CHECK_THROWS_AS(generation_loss(std::vector<int>{2}, f.memory, f.stack, 0), ContractError);
}

TEST_CASE("incoherence head emits one probability per sentence") {
  Fixture f(14);
  Rng rng(1);
  const Tensor probs = incoherence_probs(Tensor(random_matrix(1, 8, rng)), f.stack);
  CHECK(probs.cols() == 4);
  CHECK(probs.value().minCoeff() > 0.0);
  CHECK(probs.value().maxCoeff() < 1.0);
}

namespace {

// Token ids: 0 bos, 1 eos, 2 "a", 3 "b".
Eigen::RowVectorXd dist(double eos, double a, double b) {
  Eigen::RowVectorXd v(4);
  v << std::log(1e-12), std::log(eos), std::log(a), std::log(b);
  return v;
}

}  // namespace

TEST_CASE("beam search escapes a greedy trap") {
  const NextTokenLogProbs step = [](const std::vector<int>& prefix) {
    if (prefix.size() == 1) return dist(0.1, 0.5, 0.4);
    if (prefix.size() == 2 && prefix[1] == 2) return dist(0.4, 0.3, 0.3);
    return dist(0.9, 0.05, 0.05);
  };
  const BeamHypothesis g = greedy_search(step, 0, 1, 5);
  CHECK(g.tokens == std::vector<int>{2, 1});
  const BeamHypothesis one = beam_search(step, 0, 1, 1, 5);
  CHECK(one.tokens == g.tokens);
  CHECK(one.logprob == doctest::Approx(g.logprob));
  const BeamHypothesis two = beam_search(step, 0, 1, 2, 5);
  CHECK(two.tokens == std::vector<int>{3, 1});
  CHECK(two.logprob == doctest::Approx(std::log(0.4 * 0.9)));
  CHECK(two.logprob > g.logprob);
}

TEST_CASE("beam ties go to the lexicographically smaller sequence") {
  const NextTokenLogProbs step = [](const std::vector<int>& prefix) {
    if (prefix.size() == 1) return dist(0.1, 0.45, 0.45);
    return dist(1.0 - 2e-12, 1e-12, 1e-12);
  };
  const BeamHypothesis best = beam_search(step, 0, 1, 3, 4);
  CHECK(best.tokens == std::vector<int>{2, 1});
}

TEST_CASE("beam search respects max_len") {
  const NextTokenLogProbs step = [](const std::vector<int>&) { return dist(1e-6, 0.6, 0.4 - 1e-6); };
  const BeamHypothesis h = beam_search(step, 0, 1, 2, 3);
  CHECK(h.tokens.size() == 3);
  CHECK_THROWS_AS(beam_search(step, 0, 1, 0, 3), ContractError);
}

TEST_CASE("model generation is deterministic and checkpoints reload exactly") {
  Rng rng(21);
  const auto corpus = make_synthetic_corpus(4, rng);
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.dec_layers = 1;
  mc.reason_layers = 1;
  mc.fuse_layers = 1;
  MetModel m(mc, build_vocabularies(corpus), 3);
  const GeneratedEnding a = m.generate(corpus[0], 3, 8, true);
  const GeneratedEnding b = m.generate(corpus[0], 3, 8, true);
  CHECK(a.ids == b.ids);
  CHECK(a.logprob == b.logprob);
  REQUIRE(a.diagnostics.size() == a.ids.size());
  for (const auto& d : a.diagnostics) {
    CHECK(d.gate > 0.0);
    CHECK(d.gate < 1.0);
    CHECK(d.top_visual.size() <= 3);
  }
  const std::string path = "met_unit_model.ckpt";
  m.save(path);
  const MetModel back = MetModel::from_checkpoint(path);
  CHECK(back.generate(corpus[0], 3, 8).ids == a.ids);
  CHECK(back.params().scalar_count() == m.params().scalar_count());
  std::remove(path.c_str());
}
