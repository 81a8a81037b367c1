#include "met/corpus.hpp"
#include "met/metrics.hpp"
#include "met/tensor.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace met;

namespace {

EvalPair pair(const std::string& hyp, std::vector<std::string> refs) {
  EvalPair p{tokenize(hyp), {}};
  for (const auto& r : refs) p.references.push_back(tokenize(r));
  return p;
}

Tokens random_tokens(std::mt19937_64& rng, int max_len) {
  static const std::vector<std::string> words{"a", "b", "c", "d", "e", "walked", "walking", "dog", "dogs"};
  std::uniform_int_distribution<int> len(1, max_len), w(0, static_cast<int>(words.size()) - 1);
  Tokens t;
  for (int i = len(rng); i > 0; --i) t.push_back(words[static_cast<std::size_t>(w(rng))]);
  return t;
}

}  // namespace

TEST_CASE("bleu hand traces") {
  const std::vector<EvalPair> c{pair("the cat sat on the mat", {"the cat is on the mat"})};
  CHECK(bleu(c, 1) == doctest::Approx(100.0 * 5.0 / 6.0));
  CHECK(bleu(c, 2) == doctest::Approx(100.0 * std::sqrt(0.5)));
  const std::vector<EvalPair> short_hyp{pair("the cat", {"the cat sat", "the cat sat on the mat"})};
  CHECK(bleu(short_hyp, 1) == doctest::Approx(100.0 * std::exp(1.0 - 1.5)));
  const std::vector<EvalPair> tie{pair("a b c d", {"a b c", "a b c d e"})};
  CHECK(bleu_counts(tie, 1).ref_length == 3.0);
  const std::vector<EvalPair> clip{pair("the the the", {"the cat"})};
  CHECK(bleu_counts(clip, 1).matches[0] == 1.0);
  CHECK_THROWS_AS(bleu(c, 5), ContractError);
  CHECK_THROWS_AS(bleu({}, 1), ContractError);
}

TEST_CASE("rouge-l hand traces") {
  CHECK(lcs_length(tokenize("a b c d"), tokenize("a c d e f")) == 3);
  const double p = 0.75, r = 0.6;
  CHECK(rouge_l(pair("a b c d", {"a c d e f"})) == doctest::Approx(100.0 * 2.44 * p * r / (r + 1.44 * p)));
  CHECK(rouge_l(pair("x y", {"a b"})) == 0.0);
  CHECK(rouge_l(pair("a b", {"a b"})) == doctest::Approx(100.0));
}

TEST_CASE("meteor-lite traces") {
  CHECK(meteor_lite(pair("a b c", {"a b c"})) == doctest::Approx(100.0 * (1.0 - 0.5 / 27.0)));
  CHECK(meteor_lite(pair("c b a", {"a b c"})) == doctest::Approx(50.0));
  CHECK(meteor_lite(pair("c b a", {"a b c"})) < meteor_lite(pair("a b c", {"a b c"})));
  CHECK(stem("walking") == "walk");
  CHECK(stem("walked") == "walk");
  CHECK(stem("is") == "is");
  CHECK(meteor_lite(pair("he walked", {"he walking"})) == doctest::Approx(100.0 * (1.0 - 0.5 / 8.0)));
  // Recall weighs nine times precision.
  const double m = 2.0, pr = m / 2.0, rc = m / 4.0;
  CHECK(meteor_lite(pair("a b", {"a b c d"})) ==
        doctest::Approx(100.0 * 10.0 * pr * rc / (rc + 9.0 * pr) * (1.0 - 0.5 / 8.0)));
}

TEST_CASE("cider on disjoint perfect matches") {
  const std::vector<EvalPair> c{pair("a b c d", {"a b c d"}), pair("e f g h", {"e f g h"})};
  CHECK(cider(c) == doctest::Approx(10.0));
  // Three tokens have no 4-grams, so that order contributes zero.
  const std::vector<EvalPair> short_items{pair("a b c", {"a b c"}), pair("d e f", {"d e f"})};
  CHECK(cider(short_items) == doctest::Approx(7.5));
  const std::vector<EvalPair> shared{pair("a b c", {"a b c"}), pair("a b c", {"a b c"})};
  CHECK(cider(shared) == 0.0);
  CHECK_THROWS_AS(cider({pair("a", {"a"})}), ContractError);
}

TEST_CASE("metric ranges and reference-order invariance under fuzzing") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalPair> c, flipped;
    for (int i = 0; i < 3; ++i) {
      EvalPair p{random_tokens(rng, 8), {random_tokens(rng, 8), random_tokens(rng, 8), random_tokens(rng, 8)}};
      c.push_back(p);
      std::reverse(p.references.begin(), p.references.end());
      flipped.push_back(p);
    }
    const auto s = evaluate_corpus(c), t = evaluate_corpus(flipped);
    for (const auto& k : {"B@1", "B@2", "B@3", "B@4", "M", "R-L"}) {
      CHECK(s.at(k) >= 0.0);
      CHECK(s.at(k) <= 100.0 + 1e-9);
    }
    CHECK(s.at("C") >= 0.0);
    for (const auto& [k, v] : s) CHECK(t.at(k) == doctest::Approx(v).epsilon(1e-12));

    // With non-increasing n-gram precisions, higher orders cannot score higher.
    const BleuCounts bc = bleu_counts(c, 4);
    bool decreasing = true;
    for (int n = 1; n < 4; ++n) {
      const double prev = bc.matches[n - 1] / std::max(bc.totals[n - 1], 1.0);
      const double cur = bc.matches[n] / std::max(bc.totals[n], 1.0);
      decreasing = decreasing && cur <= prev;
      if (decreasing) CHECK(bleu(c, n + 1) <= bleu(c, n) + 1e-9);
    }
  }
}

TEST_CASE("perfect corpus scores") {
  const std::vector<EvalPair> c{pair("the dog ran home", {"the dog ran home"}), pair("a cat sat", {"a cat sat"})};
  const auto s = evaluate_corpus(c);
  for (const auto& k : {"B@1", "B@2", "B@3", "B@4", "R-L"}) CHECK(s.at(k) == doctest::Approx(100.0));
  // One chunk per item: penalties 0.5 / 4^3 and 0.5 / 3^3.
  CHECK(s.at("M") == doctest::Approx(100.0 * (1.0 - (0.5 / 64.0 + 0.5 / 27.0) / 2.0)));
}

TEST_CASE("rsum and reports") {
  std::map<std::string, double> s{{"B@1", 1}, {"B@2", 2}, {"B@3", 3}, {"B@4", 4}, {"M", 5}, {"R-L", 6}, {"C", 7}};
  CHECK(rsum(s) == 28.0);
  std::map<std::string, double> zeros;
  for (const auto& k : kScoreColumns) zeros[k] = 0.0;
  CHECK(rsum(zeros) == 0.0);
  s.erase("M");
  CHECK_THROWS_WITH_AS(rsum(s), doctest::Contains("M"), ContractError);
  s["M"] = 5;
  s["rSUM"] = rsum(s);
  const std::string table = report_table(s);
  CHECK(table.find("M-lite") != std::string::npos);
  CHECK(table.find("28.00") != std::string::npos);
  CHECK(report_json(s).contains("M-lite"));
}
