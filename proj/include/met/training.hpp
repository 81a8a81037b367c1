#pragma once

// Joint training (generation + incoherence detection) and the synthetic
// story generator used for desk-scale runs.

#include "met/model.hpp"
#include "met/params.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <tuple>
#include <string>
#include <vector>

namespace met {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingConfig {
  double alpha = 0.2;
  double lr = 2e-4;
  int batch_size = 8;
  int epochs = 10;
  int max_steps = 0;  // > 0 overrides epochs
  double weight_decay = 0.01;
  double warmup_proportion = 0.1;
  double corruption_prob = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  bool clean_gen_pass = false;
  std::uint64_t seed = 1;
  ModelConfig model;

  void validate() const;
};

// Flat "key = value" text; '#' starts a comment. Every key is required and
// unknown keys are rejected.
TrainingConfig parse_config(std::istream& in);
TrainingConfig load_config(const std::string& path);
std::string format_config(const TrainingConfig& c);
std::vector<std::string> config_keys();

int total_steps(const TrainingConfig& c, std::size_t corpus_size);
// step is 1-based.
double lr_at(int step, const TrainingConfig& c, int total);

struct CorruptionOutcome {
  std::vector<int> labels;  // N_s entries, 1 = root replaced
  std::vector<int> donors;  // batch index of the donor story per root, -1 if kept
};

struct CorruptedBatch {
  std::vector<Tensor> features;
  std::vector<CorruptionOutcome> outcomes;
};

// Per story, each sentence root is independently replaced with probability p
// by the same-index root of a different story in the batch. root_rows[b][i]
// is the row of sentence i in features[b].
CorruptedBatch corrupt(const std::vector<Tensor>& features, const std::vector<std::vector<Index>>& root_rows,
                       int n_sentences, double p, Rng& rng);

Tensor clf_loss(const Tensor& probs, const std::vector<int>& labels);
Tensor total_loss(const Tensor& gen, const Tensor& clf, double alpha);

struct StoryLosses {
  Tensor gen;
  Tensor clf;
  Tensor probs;  // 1 x N_s
};

// Teacher-forced pass on one story given (possibly corrupted) semantic features.
StoryLosses story_losses(const MetModel& model, const StoryRecord& r, const StoryEncoding& enc,
                         const Tensor& semantic_features, const std::vector<int>& labels);

struct BatchLosses {
  Tensor total;
  Tensor gen;
  Tensor clf;
  std::vector<CorruptionOutcome> outcomes;
};

// Forward pass over a batch (corruption drawn from rng when p > 0).
BatchLosses batch_losses(const MetModel& model, const std::vector<const StoryRecord*>& batch, double alpha,
                         double corruption_prob, bool clean_gen_pass, Rng& rng);

struct LogRow {
  int step = 0;
  double loss = 0.0;
  double gen_loss = 0.0;
  double clf_loss = 0.0;
  double lr = 0.0;
};

struct TrainingResult {
  std::vector<LogRow> log;
};

using StepCallback = std::function<void(const LogRow&)>;

// Trains in place. Throws NumericError naming the first non-finite op.
TrainingResult train(MetModel& model, const std::vector<StoryRecord>& corpus, const TrainingConfig& config,
                     const StepCallback& on_step = {});

void write_log_csv(std::ostream& out, const std::vector<LogRow>& log);

// Mean per-token generation loss with clean inputs, no tape.
double eval_generation_loss(const MetModel& model, const std::vector<StoryRecord>& corpus);

struct DetectionStats {
  double balanced_accuracy = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
  int positives = 0;
  int negatives = 0;
};

// Corrupts held-out batches at rate p and thresholds the incoherence head at 0.5.
DetectionStats detection_accuracy(const MetModel& model, const std::vector<StoryRecord>& corpus, double p,
                                  int batch_size, Rng& rng);

// Synthetic stories. Every story mentions one protagonist and one outing;
// the ending depends on the outing and on what the image shows, so text alone
// cannot determine it. Stories are emitted in contrast pairs that share the
// plot and differ only in the image.
struct SyntheticTemplates {
  std::vector<std::string> names;
  std::vector<std::string> places;  // plot topic
  struct Scene {
    std::vector<std::string> objects;
    std::vector<std::tuple<int, std::string, int>> triplets;  // indices into objects
    std::string phrase;                                        // ending fragment
  };
  std::vector<Scene> scenes;
};

const SyntheticTemplates& synthetic_templates();

// name, place, scene -> ending tokens
std::vector<std::string> synthetic_ending(int name, int place, int scene);
StoryRecord synthetic_story(const std::string& id, int name, int place, int scene);

std::vector<StoryRecord> make_synthetic_corpus(int n_stories, Rng& rng);

// Index pairs (a, b) of stories with identical sentences and different scene graphs.
std::vector<std::pair<std::size_t, std::size_t>> contrast_pairs(const std::vector<StoryRecord>& corpus);

}  // namespace met
