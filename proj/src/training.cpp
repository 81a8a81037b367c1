#include "met/training.hpp"

#include "met/ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace met {

void TrainingConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0, got " + std::to_string(alpha));
  if (!(corruption_prob >= 0.0 && corruption_prob <= 1.0)) {
    throw ConfigError("corruption_prob must lie in [0, 1], got " + std::to_string(corruption_prob));
  }
  if (!(warmup_proportion >= 0.0 && warmup_proportion <= 1.0)) {
    throw ConfigError("warmup_proportion must lie in [0, 1], got " + std::to_string(warmup_proportion));
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1 && max_steps < 1) throw ConfigError("need epochs >= 1 or max_steps >= 1");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (model.d_model < 1 || model.n_heads < 1 || model.d_model % model.n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (model.n_sentences < 1) throw ConfigError("n_sentences must be >= 1");
}

namespace {

// One table drives parsing, formatting, and the key list.
struct Field {
  const char* key;
  std::function<void(TrainingConfig&, const std::string&)> set;
  std::function<std::string(const TrainingConfig&)> get;
};

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "': not an integer: '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

std::string fmt(bool b) { return b ? "true" : "false"; }

#define MET_DOUBLE(name, member)                                                         \
  Field { name, [](TrainingConfig& c, const std::string& v) { c.member = to_double(name, v); }, \
          [](const TrainingConfig& c) { return fmt(static_cast<double>(c.member)); } }
#define MET_INT(name, member, type)                                                                     \
  Field { name, [](TrainingConfig& c, const std::string& v) { c.member = static_cast<type>(to_int(name, v)); }, \
          [](const TrainingConfig& c) { return std::to_string(c.member); } }
#define MET_BOOL(name, member)                                                          \
  Field { name, [](TrainingConfig& c, const std::string& v) { c.member = to_bool(name, v); }, \
          [](const TrainingConfig& c) { return fmt(c.member); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      MET_DOUBLE("alpha", alpha),
      MET_DOUBLE("lr", lr),
      MET_INT("batch_size", batch_size, int),
      MET_INT("epochs", epochs, int),
      MET_INT("max_steps", max_steps, int),
      MET_DOUBLE("weight_decay", weight_decay),
      MET_DOUBLE("warmup_proportion", warmup_proportion),
      MET_DOUBLE("corruption_prob", corruption_prob),
      MET_DOUBLE("grad_clip", grad_clip),
      MET_BOOL("clean_gen_pass", clean_gen_pass),
      MET_INT("seed", seed, std::uint64_t),
      MET_INT("d_model", model.d_model, Index),
      MET_INT("n_heads", model.n_heads, int),
      MET_INT("dec_layers", model.dec_layers, int),
      MET_INT("reason_layers", model.reason_layers, int),
      MET_INT("fuse_layers", model.fuse_layers, int),
      MET_INT("max_positions", model.max_positions, int),
      MET_INT("encoder_positions", model.encoder_positions, int),
      MET_INT("n_sentences", model.n_sentences, int),
      MET_INT("region_dim", model.region_dim, int),
      MET_BOOL("self_loop", model.self_loop),
      MET_BOOL("vector_gate", model.vector_gate),
      MET_BOOL("injector_projections", model.injector_projections),
      MET_BOOL("cross_modal_bridges", model.cross_modal_bridges),
      MET_BOOL("use_image_feature", model.use_image_feature),
  };
  return f;
}

#undef MET_DOUBLE
#undef MET_INT
#undef MET_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

TrainingConfig parse_config(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (values.count(key)) throw ConfigError("config key '" + key + "' given twice");
    values[key] = trim(line.substr(eq + 1));
  }
  TrainingConfig c;
  for (const auto& f : fields()) {
    const auto it = values.find(f.key);
    if (it == values.end()) throw ConfigError(std::string("missing config key '") + f.key + "'");
    f.set(c, it->second);
    values.erase(it);
  }
  if (!values.empty()) throw ConfigError("unknown config key '" + values.begin()->first + "'");
  c.validate();
  return c;
}

TrainingConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string format_config(const TrainingConfig& c) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

int total_steps(const TrainingConfig& c, std::size_t corpus_size) {
  if (c.max_steps > 0) return c.max_steps;
  const auto per_epoch = static_cast<int>((corpus_size + static_cast<std::size_t>(c.batch_size) - 1) /
                                          static_cast<std::size_t>(c.batch_size));
  return c.epochs * per_epoch;
}

double lr_at(int step, const TrainingConfig& c, int total) {
  const auto warm = static_cast<int>(std::lround(c.warmup_proportion * total));
  if (warm > 0 && step <= warm) return c.lr * step / warm;
  return c.lr;
}

CorruptedBatch corrupt(const std::vector<Tensor>& features, const std::vector<std::vector<Index>>& root_rows,
                       int n_sentences, double p, Rng& rng) {
  if (features.size() != root_rows.size()) throw ContractError("corrupt: features and root rows disagree");
  const std::size_t n = features.size();
  CorruptedBatch out;
  out.features = features;
  out.outcomes.assign(n, CorruptionOutcome{std::vector<int>(static_cast<std::size_t>(n_sentences), 0),
                                           std::vector<int>(static_cast<std::size_t>(n_sentences), -1)});
  if (p <= 0.0) return out;
  if (n < 2) {
    std::cerr << "warning: corruption needs at least two stories per batch; batch of " << n << " left clean\n";
    return out;
  }
  std::bernoulli_distribution flip(p);
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<Index> rows;
    std::vector<Tensor> replacements;
    const auto roots = std::min<std::size_t>(root_rows[b].size(), static_cast<std::size_t>(n_sentences));
    for (std::size_t i = 0; i < roots; ++i) {
      if (!flip(rng)) continue;
      std::vector<std::size_t> donors;
      for (std::size_t o = 0; o < n; ++o) {
        if (o != b && root_rows[o].size() > i) donors.push_back(o);
      }
      if (donors.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, donors.size() - 1);
      const std::size_t d = donors[pick(rng)];
      rows.push_back(root_rows[b][i]);
      replacements.push_back(gather_rows(features[d], {root_rows[d][i]}));
      out.outcomes[b].labels[i] = 1;
      out.outcomes[b].donors[i] = static_cast<int>(d);
    }
    if (!rows.empty()) out.features[b] = scatter_rows(features[b], rows, vstack(replacements));
  }
  return out;
}

Tensor clf_loss(const Tensor& probs, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != probs.cols() || probs.rows() != 1) {
    throw DimensionError("clf_loss: " + std::to_string(labels.size()) + " labels for probabilities " +
                         shape_string(probs.value()));
  }
  Matrix y(1, probs.cols());
  for (Index i = 0; i < probs.cols(); ++i) y(0, i) = labels[static_cast<std::size_t>(i)];
  return binary_cross_entropy(probs, y);
}

Tensor total_loss(const Tensor& gen, const Tensor& clf, double alpha) { return add(gen, scale(clf, alpha)); }

StoryLosses story_losses(const MetModel& model, const StoryRecord& r, const StoryEncoding& enc,
                         const Tensor& semantic_features, const std::vector<int>& labels) {
  const NodeMemory memory = MetModel::memory_of(model.fuse_story(enc, semantic_features));
  const std::vector<int> gold = model.gold_sequence(r);
  const std::vector<int> inputs(gold.begin(), gold.end() - 1);
  const std::vector<int> targets(gold.begin() + 1, gold.end());
  const DecoderOutput o = run_decoder(inputs, memory, model.decoder());
  StoryLosses s;
  s.gen = cross_entropy(o.logits, targets, Vocab::kPad);
  s.probs = incoherence_probs(slice_rows(o.hidden, o.hidden.rows() - 1, 1), model.decoder());
  s.clf = clf_loss(s.probs, labels);
  return s;
}

BatchLosses batch_losses(const MetModel& model, const std::vector<const StoryRecord*>& batch, double alpha,
                         double corruption_prob, bool clean_gen_pass, Rng& rng) {
  if (batch.empty()) throw ContractError("batch_losses: empty batch");
  std::vector<StoryEncoding> encs;
  std::vector<Tensor> feats;
  std::vector<std::vector<Index>> roots;
  for (const auto* r : batch) {
    encs.push_back(model.encode_story(*r));
    feats.push_back(encs.back().semantic_reasoned);
    roots.push_back(encs.back().root_rows);
  }
  const int ns = model.config().n_sentences;
  CorruptedBatch cb = corrupt(feats, roots, ns, corruption_prob, rng);
  std::vector<Tensor> gens, clfs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const StoryLosses s = story_losses(model, *batch[b], encs[b], cb.features[b], cb.outcomes[b].labels);
    clfs.push_back(s.clf);
    if (clean_gen_pass && !cb.features[b].same_as(feats[b])) {
      gens.push_back(story_losses(model, *batch[b], encs[b], feats[b], cb.outcomes[b].labels).gen);
    } else {
      gens.push_back(s.gen);
    }
  }
  BatchLosses out;
  out.gen = mean(vstack(gens));
  out.clf = mean(vstack(clfs));
  out.total = total_loss(out.gen, out.clf, alpha);
  out.outcomes = std::move(cb.outcomes);
  return out;
}

TrainingResult train(MetModel& model, const std::vector<StoryRecord>& corpus, const TrainingConfig& config,
                     const StepCallback& on_step) {
  config.validate();
  if (corpus.empty()) throw ContractError("train: empty corpus");
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const int total = total_steps(config, corpus.size());
  AdamState state;
  AdamOptions opt;
  opt.weight_decay = config.weight_decay;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainingResult result;
  for (int step = 1; step <= total; ++step) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<const StoryRecord*> batch;
    while (cursor < order.size() && batch.size() < static_cast<std::size_t>(config.batch_size)) {
      batch.push_back(&corpus[order[cursor++]]);
    }

    model.params().zero_grad();
    Tape tape;
    BatchLosses losses;
    {
      TapeScope scope(tape);
      losses = batch_losses(model, batch, config.alpha, config.corruption_prob, config.clean_gen_pass, rng);
      if (!losses.total.is_finite()) {
        const std::string op = tape.first_nonfinite_op();
        throw NumericError("non-finite loss at step " + std::to_string(step) + "; first non-finite op: " +
                           (op.empty() ? std::string("<input>") : op));
      }
      tape.backward(losses.total);
    }
    const double norm = model.params().grad_norm();
    if (!std::isfinite(norm)) {
      throw NumericError("non-finite gradient at step " + std::to_string(step));
    }
    if (config.grad_clip > 0.0 && norm > config.grad_clip) model.params().scale_grads(config.grad_clip / norm);
    opt.lr = lr_at(step, config, total);
    adam_step(model.params(), state, opt);

    LogRow row{step, losses.total.item(), losses.gen.item(), losses.clf.item(), opt.lr};
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log) {
  out << "step,loss,gen_loss,clf_loss,lr\n";
  out << std::setprecision(10);
  for (const auto& r : log) out << r.step << ',' << r.loss << ',' << r.gen_loss << ',' << r.clf_loss << ',' << r.lr << '\n';
}

double eval_generation_loss(const MetModel& model, const std::vector<StoryRecord>& corpus) {
  NoTapeScope no_tape;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& r : corpus) {
    const StoryEncoding enc = model.encode_story(r);
    const std::vector<int> labels(static_cast<std::size_t>(model.config().n_sentences), 0);
    const StoryLosses s = story_losses(model, r, enc, enc.semantic_reasoned, labels);
    const std::size_t n = r.ending.size() + 1;
    total += s.gen.item() * static_cast<double>(n);
    tokens += n;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

DetectionStats detection_accuracy(const MetModel& model, const std::vector<StoryRecord>& corpus, double p,
                                  int batch_size, Rng& rng) {
  NoTapeScope no_tape;
  int tp = 0, tn = 0;
  DetectionStats st;
  for (std::size_t start = 0; start < corpus.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(corpus.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<StoryEncoding> encs;
    std::vector<Tensor> feats;
    std::vector<std::vector<Index>> roots;
    for (std::size_t i = start; i < end; ++i) {
      encs.push_back(model.encode_story(corpus[i]));
      feats.push_back(encs.back().semantic_reasoned);
      roots.push_back(encs.back().root_rows);
    }
    const CorruptedBatch cb = corrupt(feats, roots, model.config().n_sentences, p, rng);
    for (std::size_t b = 0; b < encs.size(); ++b) {
      const auto& labels = cb.outcomes[b].labels;
      const StoryLosses s = story_losses(model, corpus[start + b], encs[b], cb.features[b], labels);
      const auto roots_here = std::min<std::size_t>(roots[b].size(), labels.size());
      for (std::size_t i = 0; i < roots_here; ++i) {
        const bool predicted = s.probs.value()(0, static_cast<Index>(i)) > 0.5;
        if (labels[i] == 1) {
          ++st.positives;
          tp += predicted ? 1 : 0;
        } else {
          ++st.negatives;
          tn += predicted ? 0 : 1;
        }
      }
    }
  }
  st.tpr = st.positives ? static_cast<double>(tp) / st.positives : 0.0;
  st.tnr = st.negatives ? static_cast<double>(tn) / st.negatives : 0.0;
  if (st.positives && st.negatives) {
    st.balanced_accuracy = 0.5 * (st.tpr + st.tnr);
  } else {
    st.balanced_accuracy = st.positives ? st.tpr : st.tnr;
  }
  return st;
}

const SyntheticTemplates& synthetic_templates() {
  static const SyntheticTemplates t = [] {
    SyntheticTemplates s;
    s.names = {"anna", "ben", "carla", "dev", "emma", "farid", "gina", "hugo"};
    s.places = {"beach", "park", "lake", "garden", "farm"};
    s.scenes = {
        {{"dog", "ball"}, {{0, "chasing", 1}}, "played fetch with a dog"},
        {{"man", "umbrella"}, {{0, "holding", 1}}, "shared an umbrella with a stranger"},
        {{"cake", "table"}, {{0, "on", 1}}, "ate a slice of cake"},
        {{"bird", "tree"}, {{0, "in", 1}}, "watched a bird sing"},
        {{"kite", "sky", "girl"}, {{0, "in", 1}, {2, "flying", 0}}, "flew a red kite"},
        {{"boat", "water"}, {{0, "on", 1}}, "rowed a small boat"},
    };
    return s;
  }();
  return t;
}

std::vector<std::string> synthetic_ending(int name, int place, int scene) {
  const auto& t = synthetic_templates();
  return tokenize(t.names.at(static_cast<std::size_t>(name)) + " " + t.scenes.at(static_cast<std::size_t>(scene)).phrase +
                  " at the " + t.places.at(static_cast<std::size_t>(place)) + " .");
}

StoryRecord synthetic_story(const std::string& id, int name, int place, int scene) {
  const auto& t = synthetic_templates();
  const std::string& who = t.names.at(static_cast<std::size_t>(name));
  const std::string& where = t.places.at(static_cast<std::size_t>(place));
  StoryRecord r;
  r.story_id = id;
  // Each sentence: ARG0 (name), V (verb), ARG1 (rest up to the final period).
  const std::vector<std::pair<std::string, std::string>> plot = {
      {"wanted", "to visit the " + where},
      {"packed", "a bag for the " + where},
      {"took", "the bus to the " + where},
      {"walked", "around the " + where},
  };
  for (const auto& [verb, rest] : plot) {
    auto tokens = tokenize(who + " " + verb + " " + rest + " .");
    const int n = static_cast<int>(tokens.size());
    r.sentences.push_back(tokens);
    r.srl_events.push_back({SrlEvent{{"ARG0", 0, 1}, {"V", 1, 2}, {"ARG1", 2, n - 1}}});
  }
  const auto& sc = t.scenes.at(static_cast<std::size_t>(scene));
  for (std::size_t i = 0; i < sc.objects.size(); ++i) {
    r.scene_objects.push_back({static_cast<int>(i), sc.objects[i], std::nullopt});
  }
  for (const auto& [s, p, o] : sc.triplets) r.scene_relations.push_back({s, p, o});
  r.ending = synthetic_ending(name, place, scene);
  return r;
}

std::vector<StoryRecord> make_synthetic_corpus(int n_stories, Rng& rng) {
  if (n_stories < 2) throw ContractError("make_synthetic_corpus: need at least 2 stories");
  const auto& t = synthetic_templates();
  std::uniform_int_distribution<int> pick_name(0, static_cast<int>(t.names.size()) - 1);
  std::uniform_int_distribution<int> pick_place(0, static_cast<int>(t.places.size()) - 1);
  std::uniform_int_distribution<int> pick_scene(0, static_cast<int>(t.scenes.size()) - 1);
  std::uniform_int_distribution<int> pick_other(1, static_cast<int>(t.scenes.size()) - 1);
  std::vector<StoryRecord> out;
  auto id = [&out] {
    std::ostringstream s;
    s << "syn-" << std::setw(4) << std::setfill('0') << out.size();
    return s.str();
  };
  while (static_cast<int>(out.size()) < n_stories) {
    const int name = pick_name(rng);
    const int place = pick_place(rng);
    const int a = pick_scene(rng);
    const int b = (a + pick_other(rng)) % static_cast<int>(t.scenes.size());
    out.push_back(synthetic_story(id(), name, place, a));
    if (static_cast<int>(out.size()) < n_stories) out.push_back(synthetic_story(id(), name, place, b));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> contrast_pairs(const std::vector<StoryRecord>& corpus) {
  auto scene_key = [](const StoryRecord& r) {
    std::vector<std::string> k;
    for (const auto& o : r.scene_objects) k.push_back(std::to_string(o.id) + ":" + o.category);
    for (const auto& t : r.scene_relations) {
      k.push_back(std::to_string(t.subject) + "-" + t.predicate + "-" + std::to_string(t.object));
    }
    return k;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t j = i + 1; j < corpus.size(); ++j) {
      if (corpus[i].sentences == corpus[j].sentences && scene_key(corpus[i]) != scene_key(corpus[j])) {
        pairs.emplace_back(i, j);
      }
    }
  }
  return pairs;
}

}  // namespace met
