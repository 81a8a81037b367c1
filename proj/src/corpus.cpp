#include "met/corpus.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace met {

namespace {

using nlohmann::json;

[[noreturn]] void schema_fail(const std::string& field, const std::string& msg) {
  throw AnnotationError(field + ": " + msg);
}

const json& require(const json& j, const char* key) {
  if (!j.contains(key)) schema_fail(key, "missing required field");
  return j.at(key);
}

std::string as_string(const json& j, const std::string& field) {
  if (!j.is_string()) schema_fail(field, "expected a string");
  return j.get<std::string>();
}

int as_int(const json& j, const std::string& field) {
  if (!j.is_number_integer()) schema_fail(field, "expected an integer");
  return j.get<int>();
}

const json& as_array(const json& j, const std::string& field) {
  if (!j.is_array()) schema_fail(field, "expected an array");
  return j;
}

std::vector<std::string> token_list(const json& j, const std::string& field) {
  std::vector<std::string> out;
  std::size_t i = 0;
  for (const auto& t : as_array(j, field)) out.push_back(as_string(t, field + "[" + std::to_string(i++) + "]"));
  return out;
}

std::vector<double> number_list(const json& j, const std::string& field) {
  std::vector<double> out;
  std::size_t i = 0;
  for (const auto& v : as_array(j, field)) {
    if (!v.is_number()) schema_fail(field + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(v.get<double>());
    ++i;
  }
  return out;
}

std::string idx(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

}  // namespace

StoryRecord record_from_json(const json& j) {
  if (!j.is_object()) schema_fail("record", "expected a JSON object");
  static const std::set<std::string> known = {"story_id",      "sentences",       "srl_events", "scene_objects",
                                              "scene_relations", "ending", "image_feature"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) schema_fail(key, "unknown field");
  }
  StoryRecord r;
  r.story_id = as_string(require(j, "story_id"), "story_id");

  const auto& sents = as_array(require(j, "sentences"), "sentences");
  for (std::size_t i = 0; i < sents.size(); ++i) r.sentences.push_back(token_list(sents[i], idx("sentences", i)));

  const auto& srl = as_array(require(j, "srl_events"), "srl_events");
  for (std::size_t i = 0; i < srl.size(); ++i) {
    const std::string fi = idx("srl_events", i);
    std::vector<SrlEvent> events;
    const auto& evs = as_array(srl[i], fi);
    for (std::size_t e = 0; e < evs.size(); ++e) {
      const std::string fe = idx(fi, e);
      SrlEvent event;
      const auto& spans = as_array(evs[e], fe);
      for (std::size_t s = 0; s < spans.size(); ++s) {
        const std::string fs = idx(fe, s);
        const auto& sp = as_array(spans[s], fs);
        if (sp.size() != 3) schema_fail(fs, "span must be [role_label, token_start, token_end]");
        event.push_back({as_string(sp[0], idx(fs, 0)), as_int(sp[1], idx(fs, 1)), as_int(sp[2], idx(fs, 2))});
      }
      events.push_back(std::move(event));
    }
    r.srl_events.push_back(std::move(events));
  }

  const auto& objs = as_array(require(j, "scene_objects"), "scene_objects");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const std::string fo = idx("scene_objects", i);
    const auto& o = as_array(objs[i], fo);
    if (o.size() != 2 && o.size() != 3) schema_fail(fo, "object must be [object_id, category_label] or [object_id, category_label, feature]");
    SceneObject so;
    so.id = as_int(o[0], idx(fo, 0));
    so.category = as_string(o[1], idx(fo, 1));
    if (o.size() == 3 && !o[2].is_null()) so.feature = number_list(o[2], idx(fo, 2));
    r.scene_objects.push_back(std::move(so));
  }

  const auto& rels = as_array(require(j, "scene_relations"), "scene_relations");
  for (std::size_t i = 0; i < rels.size(); ++i) {
    const std::string fr = idx("scene_relations", i);
    const auto& t = as_array(rels[i], fr);
    if (t.size() != 3) schema_fail(fr, "relation must be [subject_object_id, predicate_label, object_object_id]");
    r.scene_relations.push_back({as_int(t[0], idx(fr, 0)), as_string(t[1], idx(fr, 1)), as_int(t[2], idx(fr, 2))});
  }

  r.ending = token_list(require(j, "ending"), "ending");
  if (j.contains("image_feature") && !j.at("image_feature").is_null()) {
    r.image_feature = number_list(j.at("image_feature"), "image_feature");
  }
  return r;
}

json record_to_json(const StoryRecord& r) {
  json j;
  j["story_id"] = r.story_id;
  j["sentences"] = r.sentences;
  json srl = json::array();
  for (const auto& events : r.srl_events) {
    json evs = json::array();
    for (const auto& ev : events) {
      json spans = json::array();
      for (const auto& s : ev) spans.push_back(json::array({s.role, s.start, s.end}));
      evs.push_back(spans);
    }
    srl.push_back(evs);
  }
  j["srl_events"] = srl;
  json objs = json::array();
  for (const auto& o : r.scene_objects) {
    json e = json::array({o.id, o.category});
    if (o.feature) e.push_back(*o.feature);
    objs.push_back(e);
  }
  j["scene_objects"] = objs;
  json rels = json::array();
  for (const auto& t : r.scene_relations) rels.push_back(json::array({t.subject, t.predicate, t.object}));
  j["scene_relations"] = rels;
  j["ending"] = r.ending;
  if (r.image_feature) j["image_feature"] = *r.image_feature;
  return j;
}

std::vector<std::string> record_problems(const StoryRecord& r, const CorpusLimits& limits) {
  std::vector<std::string> p;
  if (r.story_id.empty()) p.push_back("story_id: empty");
  if (limits.n_sentences > 0 && static_cast<int>(r.sentences.size()) != limits.n_sentences) {
    p.push_back("sentences: expected " + std::to_string(limits.n_sentences) + " sentences, got " +
                std::to_string(r.sentences.size()));
  }
  if (r.srl_events.size() != r.sentences.size()) {
    p.push_back("srl_events: " + std::to_string(r.srl_events.size()) + " entries for " +
                std::to_string(r.sentences.size()) + " sentences");
  }
  for (std::size_t i = 0; i < r.sentences.size(); ++i) {
    if (r.sentences[i].empty()) p.push_back(idx("sentences", i) + ": empty sentence");
  }
  for (std::size_t i = 0; i < r.srl_events.size() && i < r.sentences.size(); ++i) {
    const int len = static_cast<int>(r.sentences[i].size());
    for (std::size_t e = 0; e < r.srl_events[i].size(); ++e) {
      for (std::size_t s = 0; s < r.srl_events[i][e].size(); ++s) {
        const auto& sp = r.srl_events[i][e][s];
        if (sp.start < 0 || sp.start >= sp.end || sp.end > len) {
          p.push_back(idx(idx(idx("srl_events", i), e), s) + ": span [" + std::to_string(sp.start) + ", " +
                      std::to_string(sp.end) + ") outside sentence " + std::to_string(i) + " of length " +
                      std::to_string(len));
        }
      }
    }
  }
  if (static_cast<int>(r.scene_objects.size()) > limits.max_objects) {
    p.push_back("scene_objects: " + std::to_string(r.scene_objects.size()) + " objects exceed max_objects " +
                std::to_string(limits.max_objects));
  }
  if (static_cast<int>(r.scene_relations.size()) > limits.max_relations) {
    p.push_back("scene_relations: " + std::to_string(r.scene_relations.size()) + " relations exceed max_relations " +
                std::to_string(limits.max_relations));
  }
  std::set<int> ids;
  std::optional<std::size_t> dim;
  for (std::size_t i = 0; i < r.scene_objects.size(); ++i) {
    const auto& o = r.scene_objects[i];
    if (!ids.insert(o.id).second) p.push_back(idx("scene_objects", i) + ": duplicate object id " + std::to_string(o.id));
    if (o.category.empty()) p.push_back(idx("scene_objects", i) + ": empty category label");
    if (o.feature) {
      if (o.feature->empty()) p.push_back(idx("scene_objects", i) + ": empty feature vector");
      if (dim && *dim != o.feature->size()) {
        p.push_back(idx("scene_objects", i) + ": feature dimension " + std::to_string(o.feature->size()) +
                    " differs from " + std::to_string(*dim));
      }
      dim = o.feature->size();
    }
  }
  for (std::size_t i = 0; i < r.scene_relations.size(); ++i) {
    const auto& t = r.scene_relations[i];
    if (!ids.count(t.subject)) p.push_back(idx("scene_relations", i) + ": subject id " + std::to_string(t.subject) + " is not a scene object");
    if (!ids.count(t.object)) p.push_back(idx("scene_relations", i) + ": object id " + std::to_string(t.object) + " is not a scene object");
  }
  if (r.ending.empty()) p.push_back("ending: empty");
  return p;
}

ValidationReport validate_corpus(std::istream& in, const CorpusLimits& limits) {
  ValidationReport rep;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const StoryRecord r = record_from_json(json::parse(line));
      const auto problems = record_problems(r, limits);
      if (problems.empty()) {
        ++rep.records_ok;
      } else {
        for (const auto& pr : problems) rep.failures.push_back({n, pr});
      }
    } catch (const json::parse_error& e) {
      rep.failures.push_back({n, std::string("parse error: ") + e.what()});
    } catch (const AnnotationError& e) {
      rep.failures.push_back({n, e.what()});
    }
  }
  return rep;
}

std::vector<StoryRecord> read_corpus(const std::string& path, const CorpusLimits& limits) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus: " + path);
  std::vector<StoryRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(n) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw AnnotationError(where + "parse error: " + e.what());
    }
    StoryRecord r;
    try {
      r = record_from_json(j);
    } catch (const AnnotationError& e) {
      throw AnnotationError(where + e.what());
    }
    const auto problems = record_problems(r, limits);
    if (!problems.empty()) throw AnnotationError(where + "story " + r.story_id + ": " + problems.front());
    out.push_back(std::move(r));
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<StoryRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write corpus: " + path);
  for (const auto& r : records) os << record_to_json(r).dump() << "\n";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && c != '<' && c != '>' && c != '\'' && c != '-') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

Vocab::Vocab() {
  for (const char* s : {"<pad>", "<unk>", "<bos>", "<eos>"}) add(s);
}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) add(t);
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  index_[token] = id;
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kBos || i == kPad) continue;
    out.push_back(token(i));
  }
  return out;
}

LabelSet::LabelSet() { add("<unk>"); }

LabelSet::LabelSet(const std::vector<std::string>& labels) {
  for (const auto& l : labels) add(l);
}

int LabelSet::add(const std::string& label) {
  auto it = index_.find(label);
  if (it != index_.end()) return it->second;
  const int id = size();
  labels_.push_back(label);
  index_[label] = id;
  return id;
}

int LabelSet::id(const std::string& label) const {
  auto it = index_.find(label);
  return it == index_.end() ? 0 : it->second;
}

CorpusVocabularies build_vocabularies(const std::vector<StoryRecord>& corpus) {
  CorpusVocabularies v;
  for (const auto& r : corpus) {
    for (const auto& s : r.sentences) {
      for (const auto& t : s) v.tokens.add(t);
    }
    for (const auto& t : r.ending) v.tokens.add(t);
    for (const auto& o : r.scene_objects) v.categories.add(o.category);
    for (const auto& t : r.scene_relations) v.predicates.add(t.predicate);
  }
  return v;
}

}  // namespace met
