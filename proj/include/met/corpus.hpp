#pragma once

// Story records, their JSON-lines corpus format, schema validation, and the
// shared tokenizer / vocabulary.

#include <json.hpp>

#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace met {

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SrlSpan {
  std::string role;
  int start = 0;  // inclusive token index
  int end = 0;    // exclusive token index
};
using SrlEvent = std::vector<SrlSpan>;

struct SceneObject {
  int id = 0;
  std::string category;
  std::optional<std::vector<double>> feature;
};

struct SceneRelation {
  int subject = 0;
  std::string predicate;
  int object = 0;
};

struct StoryRecord {
  std::string story_id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::vector<SrlEvent>> srl_events;  // per sentence
  std::vector<SceneObject> scene_objects;
  std::vector<SceneRelation> scene_relations;
  std::vector<std::string> ending;
  std::optional<std::vector<double>> image_feature;
};

struct CorpusLimits {
  int n_sentences = 4;  // 0 accepts any count
  int max_objects = 10;
  int max_relations = 20;
};

// Field-level problems with a record, each formatted "field.path: message".
std::vector<std::string> record_problems(const StoryRecord& r, const CorpusLimits& limits);

// Throws AnnotationError naming the field on malformed JSON structure.
StoryRecord record_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const StoryRecord& r);

struct LineVerdict {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ValidationReport {
  std::size_t records_ok = 0;
  std::vector<LineVerdict> failures;
  bool ok() const { return failures.empty(); }
};

ValidationReport validate_corpus(std::istream& in, const CorpusLimits& limits);

// Reads and validates a JSON-lines corpus; throws AnnotationError naming the
// first offending line.
std::vector<StoryRecord> read_corpus(const std::string& path, const CorpusLimits& limits);
void write_corpus(const std::string& path, const std::vector<StoryRecord>& records);

// Lowercases and splits on whitespace; punctuation characters become their own tokens.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens);

  int add(const std::string& token);
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Stops at the first <eos>; drops <bos> and <pad>.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// Plain label table (object categories, relation predicates) with id 0 = <unk>.
class LabelSet {
 public:
  LabelSet();
  explicit LabelSet(const std::vector<std::string>& labels);
  int add(const std::string& label);
  int id(const std::string& label) const;
  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
  std::map<std::string, int> index_;
};

struct CorpusVocabularies {
  Vocab tokens;
  LabelSet categories;
  LabelSet predicates;
};

// Deterministic: labels are added in first-seen order over the corpus.
CorpusVocabularies build_vocabularies(const std::vector<StoryRecord>& corpus);

}  // namespace met
