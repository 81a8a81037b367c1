// met: command-line front end (validate, synth, train, generate, evaluate,
// gradcheck, inspect-graph). Data goes to stdout, diagnostics to stderr.

#include "met/corpus.hpp"
#include "met/gradsuite.hpp"
#include "met/graph.hpp"
#include "met/metrics.hpp"
#include "met/model.hpp"
#include "met/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>

using nlohmann::json;

namespace {

met::CorpusLimits limits_for(int n_sentences) {
  met::CorpusLimits l;
  l.n_sentences = n_sentences;
  return l;
}

// Opens the output file or falls back to stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw std::runtime_error("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

int cmd_validate(const std::string& path, int n_sentences) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot read corpus: " << path << "\n";
    return 2;
  }
  const met::ValidationReport rep = met::validate_corpus(in, limits_for(n_sentences));
  for (const auto& f : rep.failures) std::cout << path << ":" << f.line << ": " << f.message << "\n";
  std::cout << rep.records_ok << " records OK";
  if (!rep.ok()) std::cout << ", " << rep.failures.size() << " problems";
  std::cout << "\n";
  return rep.ok() ? 0 : 1;
}

int cmd_synth(int n, std::uint64_t seed, const std::string& out_path) {
  met::Rng rng(seed);
  const auto corpus = met::make_synthetic_corpus(n, rng);
  Output out(out_path);
  for (const auto& r : corpus) out.stream() << met::record_to_json(r).dump() << "\n";
  return 0;
}

int cmd_train(const std::string& corpus_path, const std::string& config_path, const std::string& out_path,
              std::string log_path, std::optional<std::uint64_t> seed, bool quiet) {
  met::TrainingConfig cfg = met::load_config(config_path);
  if (seed) cfg.seed = *seed;
  const auto corpus = met::read_corpus(corpus_path, limits_for(cfg.model.n_sentences));
  met::MetModel model(cfg.model, met::build_vocabularies(corpus), cfg.seed);
  const int total = met::total_steps(cfg, corpus.size());
  std::cerr << "training " << model.params().scalar_count() << " parameters on " << corpus.size() << " stories for "
            << total << " steps\n";
  const auto result = met::train(model, corpus, cfg, [&](const met::LogRow& r) {
    if (!quiet && (r.step % 10 == 0 || r.step == total)) {
      std::cerr << "step " << r.step << " loss " << r.loss << " gen " << r.gen_loss << " clf " << r.clf_loss << "\n";
    }
  });
  model.save(out_path);
  if (log_path.empty()) log_path = out_path + ".log.csv";
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot write " + log_path);
  met::write_log_csv(log, result.log);
  std::cout << "wrote " << out_path << " and " << log_path << "\n";
  return 0;
}

json diagnostics_json(const met::GeneratedEnding& g) {
  json arr = json::array();
  for (const auto& d : g.diagnostics) {
    auto nodes = [](const std::vector<met::DiagnosticNode>& ns) {
      json a = json::array();
      for (const auto& n : ns) a.push_back({{"node", n.node}, {"label", n.label}, {"weight", n.weight}});
      return a;
    };
    arr.push_back({{"token", d.token}, {"lambda", d.gate}, {"visual", nodes(d.top_visual)},
                   {"semantic", nodes(d.top_semantic)}});
  }
  return arr;
}

int cmd_generate(const std::string& corpus_path, const std::string& ckpt, int beam, int max_len, bool diagnostics,
                 const std::string& out_path) {
  const met::MetModel model = met::MetModel::from_checkpoint(ckpt);
  const auto corpus = met::read_corpus(corpus_path, limits_for(model.config().n_sentences));
  Output out(out_path);
  for (const auto& r : corpus) {
    const met::GeneratedEnding g = model.generate(r, beam, max_len, diagnostics);
    json line = {{"story_id", r.story_id}, {"generated_ending", met::detokenize(g.tokens)}, {"logprob", g.logprob}};
    if (diagnostics) line["diagnostics"] = diagnostics_json(g);
    out.stream() << line.dump() << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& generated_path, const std::string& corpus_path, const std::string& json_path) {
  const auto corpus = met::read_corpus(corpus_path, limits_for(0));
  std::map<std::string, const met::StoryRecord*> by_id;
  for (const auto& r : corpus) by_id[r.story_id] = &r;

  std::ifstream in(generated_path);
  if (!in) throw std::runtime_error("cannot read " + generated_path);
  std::vector<met::EvalPair> pairs;
  std::set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    const std::string id = j.at("story_id").get<std::string>();
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::runtime_error(generated_path + ":" + std::to_string(n) + ": story_id '" + id + "' not in " + corpus_path);
    }
    if (!seen.insert(id).second) throw std::runtime_error("story_id '" + id + "' generated twice");
    pairs.push_back({met::tokenize(j.at("generated_ending").get<std::string>()), {it->second->ending}});
  }
  if (pairs.empty()) throw std::runtime_error("no generated endings match the corpus");
  if (seen.size() != by_id.size()) {
    for (const auto& [id, _] : by_id) {
      if (!seen.count(id)) throw std::runtime_error("story_id '" + id + "' has no generated ending");
    }
  }
  const auto scores = met::evaluate_corpus(pairs);
  std::cout << met::report_table(scores);
  if (!json_path.empty()) {
    std::ofstream js(json_path);
    if (!js) throw std::runtime_error("cannot write " + json_path);
    js << met::report_json(scores).dump(2) << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& fault) {
  met::GradSuiteOptions opt;
  opt.seed = seed;
  opt.fault = fault;
  bool ok = true;
  std::cout << std::left << std::setw(24) << "op" << std::setw(14) << "max_rel" << std::setw(14) << "max_abs"
            << "result\n";
  for (const auto& r : met::run_gradcheck_suite(opt)) {
    std::cout << std::left << std::setw(24) << r.name << std::setw(14) << std::setprecision(3) << std::scientific
              << r.max_rel_error << std::setw(14) << r.max_abs_error << (r.passed ? "PASS" : "FAIL") << "\n";
    if (!r.passed) {
      ok = false;
      std::cerr << "gradient mismatch in " << r.name << " (input " << r.worst_input << ", element " << r.worst_element
                << ")\n";
    }
  }
  return ok ? 0 : 1;
}

json graph_json(const met::EventGraph& g) {
  json nodes = json::array(), edges = json::array();
  for (const auto& n : g.nodes) {
    json node = {{"id", n.id}, {"kind", met::to_string(n.kind)}};
    if (n.sentence >= 0) node["sentence"] = n.sentence;
    nodes.push_back(node);
  }
  for (const auto& e : g.edges) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"relation", met::to_string(e.relation)}});
  return {{"nodes", nodes}, {"edges", edges}};
}

int cmd_inspect(const std::string& corpus_path, const std::string& story_id, bool no_bridge) {
  const auto corpus = met::read_corpus(corpus_path, limits_for(0));
  for (const auto& r : corpus) {
    if (!story_id.empty() && r.story_id != story_id) continue;
    std::vector<int> lengths;
    for (const auto& s : r.sentences) lengths.push_back(static_cast<int>(s.size()));
    const met::EventGraph merged =
        met::merge_graphs(met::semantic_structure(lengths, r.srl_events, r.story_id),
                          met::visual_structure(r.scene_objects, r.scene_relations), !no_bridge);
    merged.validate();
    json j = graph_json(merged);
    j["story_id"] = r.story_id;
    std::cout << j.dump() << "\n";
    if (!story_id.empty()) return 0;
  }
  if (!story_id.empty()) throw std::runtime_error("story_id '" + story_id + "' not found in " + corpus_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal event transformer for image-guided story endings"};
  app.require_subcommand(1);

  std::string corpus, config, out, log, ckpt, generated, json_out, story_id, fault;
  int n_sentences = 4, n_stories = 20, beam = 3, max_len = 25;
  std::uint64_t seed = 1;
  bool diagnostics = false, quiet = false, no_bridge = false;

  auto* validate = app.add_subcommand("validate", "Check a JSONL corpus against the record schema");
  validate->add_option("corpus", corpus, "Corpus path")->required();
  validate->add_option("--n-sentences", n_sentences, "Required plot sentences per story (0 = any)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  synth->add_option("-n,--stories", n_stories, "Number of stories")->check(CLI::Range(2, 1000000));
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("-o,--out", out, "Output path (default stdout)");

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::optional<std::uint64_t> train_seed;
  train->add_option("--corpus", corpus, "Training corpus")->required();
  train->add_option("--config", config, "Training config (key = value)")->required();
  train->add_option("-o,--out", out, "Checkpoint path")->required();
  train->add_option("--log", log, "CSV log path (default <out>.log.csv)");
  train->add_option("--seed", train_seed, "Override the config seed");
  train->add_flag("-q,--quiet", quiet, "No per-step progress");

  auto* generate = app.add_subcommand("generate", "Generate endings as JSONL");
  generate->add_option("--corpus", corpus, "Stories to complete")->required();
  generate->add_option("--checkpoint", ckpt, "Trained checkpoint")->required();
  generate->add_option("--beam", beam, "Beam width")->check(CLI::PositiveNumber);
  generate->add_option("--max-len", max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
  generate->add_flag("--diagnostics", diagnostics, "Add per-token gate values and top attended nodes");
  generate->add_option("-o,--out", out, "Output path (default stdout)");

  auto* evaluate = app.add_subcommand("evaluate", "Score generated endings against the gold corpus");
  evaluate->add_option("generated", generated, "JSONL from generate")->required();
  evaluate->add_option("corpus", corpus, "Gold corpus")->required();
  evaluate->add_option("--json", json_out, "Also write the scores as JSON");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gradcheck->add_option("--seed", seed, "Seed for inputs and parameters");
  gradcheck->add_option("--fault", fault, "Corrupt the backward pass of the named check")
      ->check(CLI::IsMember(met::gradcheck_suite_names()));

  auto* inspect = app.add_subcommand("inspect-graph", "Print merged event graphs as JSON lines");
  inspect->add_option("corpus", corpus, "Corpus path")->required();
  inspect->add_option("--story", story_id, "Only this story");
  inspect->add_flag("--no-bridge", no_bridge, "Omit the image-root to sentence-root edges");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return cmd_validate(corpus, n_sentences);
    if (*synth) return cmd_synth(n_stories, seed, out);
    if (*train) return cmd_train(corpus, config, out, log, train_seed, quiet);
    if (*generate) return cmd_generate(corpus, ckpt, beam, max_len, diagnostics, out);
    if (*evaluate) return cmd_evaluate(generated, corpus, json_out);
    if (*gradcheck) return cmd_gradcheck(seed, fault);
    if (*inspect) return cmd_inspect(corpus, story_id, no_bridge);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
