#include "helpers.hpp"
#include "met/ops.hpp"
#include "met/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace met;
using testutil::random_matrix;

namespace {

std::string source_path(const std::string& rel) { return std::string(MET_SOURCE_DIR) + "/" + rel; }

std::string desk_text() {
  std::ostringstream s;
  s << format_config(load_config(source_path("configs/desk.cfg")));
  return s.str();
}

std::string without_key(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.rfind(key + " =", 0) != 0) out += line + "\n";
  }
  return out;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.dec_layers = 1;
  mc.reason_layers = 1;
  mc.fuse_layers = 1;
  mc.max_positions = 16;
  mc.encoder_positions = 16;
  return mc;
}

}  // namespace

TEST_CASE("configs load with the documented values") {
  const TrainingConfig desk = load_config(source_path("configs/desk.cfg"));
  CHECK(desk.alpha == 0.2);
  CHECK(desk.lr == 1e-3);
  CHECK(desk.model.cross_modal_bridges);
  const TrainingConfig full = load_config(source_path("configs/full.cfg"));
  CHECK(full.lr == 2e-4);
  CHECK(full.batch_size == 128);
  CHECK(full.model.d_model == 768);
  CHECK(full.model.dec_layers == 12);
  CHECK(full.model.n_heads == 8);
  CHECK(full.model.reason_layers == 4);
  CHECK(full.epochs == 25);
  const TrainingConfig defaults;
  CHECK(defaults.alpha == 0.2);
  CHECK(defaults.lr == 2e-4);
}

TEST_CASE("config parsing is strict") {
  const std::string text = desk_text();
  std::istringstream round(text);
  CHECK(format_config(parse_config(round)) == text);
  std::istringstream missing(without_key(text, "alpha"));
  CHECK_THROWS_WITH_AS(parse_config(missing), "missing config key 'alpha'", ConfigError);
  std::istringstream unknown(text + "mystery = 1\n");
  CHECK_THROWS_WITH_AS(parse_config(unknown), "unknown config key 'mystery'", ConfigError);
  std::istringstream twice(text + "lr = 1\n");
  CHECK_THROWS_AS(parse_config(twice), ConfigError);
  std::istringstream bad_int(without_key(text, "epochs") + "epochs = 2.5\n");
  CHECK_THROWS_AS(parse_config(bad_int), ConfigError);
  std::istringstream bad_bool(without_key(text, "self_loop") + "self_loop = maybe\n");
  CHECK_THROWS_AS(parse_config(bad_bool), ConfigError);
  CHECK_THROWS_AS(load_config(source_path("configs/none.cfg")), ConfigError);
  CHECK(config_keys().size() == 25);
}

TEST_CASE("learning rate warms up linearly then stays flat") {
  TrainingConfig c;
  c.lr = 1e-3;
  c.warmup_proportion = 0.1;
  CHECK(lr_at(1, c, 100) == doctest::Approx(1e-4));
  CHECK(lr_at(5, c, 100) == doctest::Approx(5e-4));
  CHECK(lr_at(10, c, 100) == doctest::Approx(1e-3));
  CHECK(lr_at(11, c, 100) == 1e-3);
  CHECK(lr_at(100, c, 100) == 1e-3);
  CHECK(lr_at(3, c, 25) == doctest::Approx(1e-3));
  CHECK(lr_at(2, c, 25) == doctest::Approx(2e-3 / 3.0));
  c.warmup_proportion = 0.0;
  CHECK(lr_at(1, c, 100) == 1e-3);
  c.max_steps = 0;
  c.epochs = 3;
  c.batch_size = 8;
  CHECK(total_steps(c, 20) == 9);
  c.max_steps = 7;
  CHECK(total_steps(c, 20) == 7);
}

TEST_CASE("corruption swaps same-index roots between stories") {
  Rng rng(1);
  const std::vector<Tensor> feats{Tensor(random_matrix(6, 3, rng)), Tensor(random_matrix(7, 3, rng)),
                                  Tensor(random_matrix(5, 3, rng))};
  const std::vector<std::vector<Index>> roots{{0, 2, 4, 5}, {0, 1, 3, 6}, {0, 1, 2, 4}};
  const std::vector<Matrix> before{feats[0].value(), feats[1].value(), feats[2].value()};

  Rng r0(2);
  const CorruptedBatch none = corrupt(feats, roots, 4, 0.0, r0);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(none.features[b].value() == before[b]);
    CHECK(std::count(none.outcomes[b].labels.begin(), none.outcomes[b].labels.end(), 1) == 0);
  }

  Rng r1(3);
  const CorruptedBatch all = corrupt(feats, roots, 4, 1.0, r1);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(feats[b].value() == before[b]);
    const Matrix& out = all.features[b].value();
    for (Index row = 0; row < out.rows(); ++row) {
      const auto it = std::find(roots[b].begin(), roots[b].end(), row);
      if (it == roots[b].end()) {
        CHECK(out.row(row) == before[b].row(row));
        continue;
      }
      const auto i = static_cast<std::size_t>(it - roots[b].begin());
      CHECK(all.outcomes[b].labels[i] == 1);
      const int d = all.outcomes[b].donors[i];
      REQUIRE(d >= 0);
      CHECK(static_cast<std::size_t>(d) != b);
      CHECK(out.row(row) == before[static_cast<std::size_t>(d)].row(roots[static_cast<std::size_t>(d)][i]));
    }
  }

  Rng mc(4);
  long flips = 0, total = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const CorruptedBatch cb = corrupt(feats, roots, 4, 0.1, mc);
    for (const auto& o : cb.outcomes) {
      flips += std::count(o.labels.begin(), o.labels.end(), 1);
      total += static_cast<long>(o.labels.size());
    }
  }
  CHECK(static_cast<double>(flips) / static_cast<double>(total) == doctest::Approx(0.1).epsilon(0.1));

  Rng lone(5);
  const CorruptedBatch single = corrupt({feats[0]}, {roots[0]}, 4, 1.0, lone);
  CHECK(single.features[0].value() == before[0]);
}

TEST_CASE("classification and joint losses") {
  CHECK(clf_loss(Tensor(Matrix::Constant(1, 4, 0.5)), {1, 0, 0, 1}).item() == doctest::Approx(std::log(2.0)));
  const Tensor p((Matrix(1, 4) << 0.9, 0.1, 0.5, 0.5).finished());
  CHECK(clf_loss(p, {1, 0, 0, 1}).item() == doctest::Approx((-2.0 * std::log(0.9) + 2.0 * std::log(2.0)) / 4.0));
  CHECK_THROWS_AS(clf_loss(p, {1, 0}), DimensionError);
  CHECK(total_loss(Tensor::scalar(2.0), Tensor::scalar(0.5), 0.2).item() == doctest::Approx(2.1));
}

TEST_CASE("joint gradient is linear in alpha") {
  Rng rng(8);
  const auto corpus = make_synthetic_corpus(2, rng);
  MetModel m(tiny_model(), build_vocabularies(corpus), 4);
  const std::vector<const StoryRecord*> batch{&corpus[0], &corpus[1]};
  auto grads = [&](double alpha) {
    m.params().zero_grad();
    Rng r(77);
    Tape t;
    TapeScope s(t);
    t.backward(batch_losses(m, batch, alpha, 0.5, false, r).total);
    std::vector<Matrix> g;
    for (const auto& e : m.params().entries()) g.push_back(e.tensor.grad());
    return g;
  };
  const auto g2 = grads(0.2), g4 = grads(0.4), g6 = grads(0.6);
  double worst = 0.0;
  for (std::size_t i = 0; i < g2.size(); ++i) {
    worst = std::max(worst, ((g6[i] - g2[i]) - 2.0 * (g4[i] - g2[i])).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Rng rng(9);
  const auto corpus = make_synthetic_corpus(6, rng);
  TrainingConfig c;
  c.model = tiny_model();
  c.max_steps = 3;
  c.batch_size = 3;
  c.lr = 1e-3;
  c.seed = 7;
  MetModel a(c.model, build_vocabularies(corpus), c.seed), b(c.model, build_vocabularies(corpus), c.seed);
  const auto la = train(a, corpus, c).log;
  const auto lb = train(b, corpus, c).log;
  REQUIRE(la.size() == 3);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i].loss == lb[i].loss);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params().entries()[i].tensor.value() == b.params().entries()[i].tensor.value());
  }
  CHECK(la[0].lr == doctest::Approx(1e-3 * 1.0 / 1.0).epsilon(1e-12));
  std::ostringstream csv;
  write_log_csv(csv, la);
  CHECK(csv.str().rfind("step,loss,gen_loss,clf_loss,lr\n", 0) == 0);
}

TEST_CASE("synthetic corpus follows its templates") {
  Rng rng(10);
  const auto corpus = make_synthetic_corpus(30, rng);
  const auto& t = synthetic_templates();
  REQUIRE(corpus.size() == 30);
  for (const auto& r : corpus) {
    CHECK(record_problems(r, {}).empty());
    const auto name = std::find(t.names.begin(), t.names.end(), r.sentences[0][0]) - t.names.begin();
    const auto place = std::find(t.places.begin(), t.places.end(), r.sentences[0].end()[-2]) - t.places.begin();
    long scene = -1;
    for (std::size_t s = 0; s < t.scenes.size(); ++s) {
      std::vector<std::string> cats;
      for (const auto& o : r.scene_objects) cats.push_back(o.category);
      if (cats == t.scenes[s].objects) scene = static_cast<long>(s);
    }
    REQUIRE(scene >= 0);
    CHECK(r.ending == synthetic_ending(static_cast<int>(name), static_cast<int>(place), static_cast<int>(scene)));
  }
  const auto pairs = contrast_pairs(corpus);
  CHECK(pairs.size() >= 15);
  for (const auto& [a, b] : pairs) {
    CHECK(corpus[a].sentences == corpus[b].sentences);
    CHECK(corpus[a].ending != corpus[b].ending);
  }
  CHECK(corpus[0].story_id == "syn-0000");
  CHECK_THROWS_AS(make_synthetic_corpus(1, rng), ContractError);
}

TEST_CASE("generation loss reaches every reasoning and fusion stack") {
  Rng rng(12);
  const auto corpus = make_synthetic_corpus(2, rng);
  MetModel m(tiny_model(), build_vocabularies(corpus), 5);
  // Push parameters off the zero-bias initialization so no relu sits exactly on its kink.
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (const auto& e : m.params().entries()) {
    Tensor t = e.tensor;
    t.mutable_value() = t.value().unaryExpr([&](double v) { return v + jitter(rng); });
  }
  const std::vector<const StoryRecord*> batch{&corpus[0], &corpus[1]};
  Rng r(1);
  {
    Tape t;
    TapeScope s(t);
    t.backward(batch_losses(m, batch, 0.0, 0.0, false, r).gen);
  }
  for (const RgcnStack* st : {&m.semantic_stack(), &m.visual_stack(), &m.fusion_stack()}) {
    double norm = 0.0;
    for (const auto& w : st->layers[0].relation) norm += w.grad().norm();
    CHECK(norm > 0.0);
  }
}

TEST_CASE("without corruption the detection head learns to predict clean") {
  Rng rng(13);
  const auto corpus = make_synthetic_corpus(8, rng);
  TrainingConfig c;
  c.model = tiny_model();
  c.corruption_prob = 0.0;
  c.alpha = 0.2;
  c.lr = 3e-3;
  c.max_steps = 120;
  c.batch_size = 4;
  MetModel m(c.model, build_vocabularies(corpus), c.seed);
  train(m, corpus, c);
  double mean_p = 0.0;
  for (const auto& r : corpus) {
    const StoryEncoding enc = m.encode_story(r);
    mean_p += story_losses(m, r, enc, enc.semantic_reasoned, std::vector<int>(4, 0)).probs.value().mean();
  }
  CHECK(mean_p / static_cast<double>(corpus.size()) < 0.2);
}
