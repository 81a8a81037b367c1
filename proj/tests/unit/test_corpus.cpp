#include "met/corpus.hpp"
#include "met/training.hpp"

#include <doctest.h>

#include <sstream>

using namespace met;

namespace {

std::string good_line() {
  return record_to_json(synthetic_story("ok", 0, 0, 0)).dump();
}

}  // namespace

TEST_CASE("record json round trip") {
  const StoryRecord r = synthetic_story("rt", 2, 3, 4);
  const StoryRecord back = record_from_json(record_to_json(r));
  CHECK(back.story_id == "rt");
  CHECK(back.sentences == r.sentences);
  CHECK(back.ending == r.ending);
  CHECK(back.scene_objects.size() == r.scene_objects.size());
  CHECK(record_to_json(back) == record_to_json(r));
}

TEST_CASE("validation reports the offending line and field") {
  nlohmann::json bad_span = nlohmann::json::parse(good_line());
  bad_span["srl_events"][1][0][2][2] = 40;
  nlohmann::json bad_rel = nlohmann::json::parse(good_line());
  bad_rel["scene_relations"][0][2] = 7;
  std::istringstream in(good_line() + "\n" + bad_span.dump() + "\n\n" + "{\"story_id\": \"trunc\", \"sent" + "\n" +
                        bad_rel.dump() + "\n");
  const ValidationReport rep = validate_corpus(in, {});
  CHECK(rep.records_ok == 1);
  REQUIRE(rep.failures.size() == 3);
  CHECK(rep.failures[0].line == 2);
  CHECK(rep.failures[0].message.find("srl_events[1][0][2]") != std::string::npos);
  CHECK(rep.failures[0].message.find("outside sentence 1") != std::string::npos);
  CHECK(rep.failures[1].line == 4);
  CHECK(rep.failures[1].message.find("parse error") != std::string::npos);
  CHECK(rep.failures[2].line == 5);
  CHECK(rep.failures[2].message.find("object id 7") != std::string::npos);
}

TEST_CASE("structural problems") {
  StoryRecord r = synthetic_story("p", 0, 0, 0);
  CHECK(record_problems(r, {}).empty());
  CorpusLimits three;
  three.n_sentences = 3;
  CHECK(record_problems(r, three).size() == 1);
  r.ending.clear();
  r.scene_objects.push_back(r.scene_objects.front());
  const auto p = record_problems(r, {});
  CHECK(p.size() == 2);
  CHECK_THROWS_AS(record_from_json(nlohmann::json{{"story_id", "x"}}), AnnotationError);
  nlohmann::json extra = nlohmann::json::parse(good_line());
  extra["bogus"] = 1;
  CHECK_THROWS_AS(record_from_json(extra), AnnotationError);
}

TEST_CASE("tokenizer and vocabulary") {
  CHECK(tokenize("The dog, it RAN!") == std::vector<std::string>{"the", "dog", ",", "it", "ran", "!"});
  CHECK(detokenize({"a", "b"}) == "a b");
  Vocab v;
  v.add("x");
  v.add("y");
  CHECK(v.size() == 6);
  CHECK(Vocab(v.tokens()).tokens() == v.tokens());
  CHECK(v.id("x") == 4);
  CHECK(v.id("missing") == Vocab::kUnk);
  CHECK(v.decode({Vocab::kBos, 4, 5, Vocab::kEos, 4}) == std::vector<std::string>{"x", "y"});
  CHECK(v.add("x") == 4);
  LabelSet l;
  l.add("cat");
  CHECK(l.id("cat") == 1);
  CHECK(l.id("dog") == 0);
}

TEST_CASE("vocabularies are built in first-seen order") {
  Rng rng(3);
  const auto corpus = make_synthetic_corpus(6, rng);
  const auto a = build_vocabularies(corpus);
  const auto b = build_vocabularies(corpus);
  CHECK(a.tokens.tokens() == b.tokens.tokens());
  CHECK(a.tokens.token(4) == corpus[0].sentences[0][0]);
  CHECK(a.categories.labels()[1] == corpus[0].scene_objects[0].category);
}
