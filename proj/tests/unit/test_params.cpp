#include "met/ops.hpp"
#include "met/params.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>

using namespace met;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("met_unit_" + name)).string();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(11);
  ModelParams p;
  p.add_weight("w", 3, 5, rng);
  p.add_embedding("e", 7, 2, rng);
  p.add_bias("b", 5);
  p.at("b").mutable_value()(0, 3) = -0.0;
  p.at("b").mutable_value()(0, 4) = 1e-310;
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, p, {{"note", "x"}});
  const Checkpoint c = read_checkpoint(path);
  CHECK(c.meta.at("note") == "x");
  REQUIRE(c.tensors.size() == 3);
  for (const auto& [name, m] : c.tensors) {
    const Matrix& orig = p.at(name).value();
    REQUIRE(orig.rows() == m.rows());
    REQUIRE(orig.cols() == m.cols());
    CHECK(std::memcmp(orig.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) == 0);
  }
  ModelParams q;
  Rng other(99);
  q.add_weight("w", 3, 5, other);
  q.add_embedding("e", 7, 2, other);
  q.add_bias("b", 5);
  load_into(q, c);
  CHECK(std::memcmp(q.at("w").value().data(), p.at("w").value().data(), sizeof(double) * 15) == 0);
  std::remove(path.c_str());
}

TEST_CASE("load_into lists every offending tensor") {
  Rng rng(12);
  ModelParams a;
  a.add_weight("w", 2, 3, rng);
  a.add_bias("b", 3);
  const std::string path = temp_path("mismatch.ckpt");
  save_checkpoint(path, a, {});
  ModelParams b;
  b.add_weight("w", 3, 3, rng);
  b.add_bias("c", 1);
  try {
    load_into(b, read_checkpoint(path));
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("w (checkpoint [2x3], model [3x3])") != std::string::npos);
    CHECK(msg.find("b (not in model)") != std::string::npos);
    CHECK(msg.find("c (missing from checkpoint)") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = temp_path("garbage.ckpt");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTACKPT........", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(temp_path("does_not_exist.ckpt")), CheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("adam needs gradients") {
  ModelParams p;
  p.add("x", Matrix::Ones(1, 1));
  AdamState s;
  CHECK_THROWS_AS(adam_step(p, s, {}), MissingGradError);
}

TEST_CASE("adam first step with decoupled decay") {
  ModelParams p;
  Tensor x = p.add("x", Matrix::Constant(1, 2, 1.0));
  Tensor nd = p.add("nd", Matrix::Constant(1, 1, 1.0), false);
  {
    Tape t;
    TapeScope s(t);
    t.backward(add(sum(scale(x, 0.5)), sum(scale(nd, -2.0))));
  }
  AdamState st;
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.01;
  adam_step(p, st, o);
  // Bias correction makes the first update lr * g / (|g| + eps).
  const double unit = 0.5 / (0.5 + 1e-8);
  CHECK(x.value()(0, 0) == doctest::Approx(1.0 - 0.1 * (unit + 0.01)).epsilon(1e-14));
  CHECK(nd.value()(0, 0) == doctest::Approx(1.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(st.step == 1);
}

TEST_CASE("parameter registry") {
  Rng rng(1);
  ModelParams p;
  p.add_weight("a", 4, 3, rng);
  CHECK_THROWS_AS(p.add_bias("a", 3), ContractError);
  CHECK_THROWS_AS(p.at("zzz"), ContractError);
  CHECK(p.scalar_count() == 12);
  const double bound = 1.0 / std::sqrt(4.0);
  CHECK(p.at("a").value().cwiseAbs().maxCoeff() <= bound);
}
