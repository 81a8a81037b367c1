#pragma once

// Caption-style text metrics over pre-tokenized (lowercased) token lists.
// BLEU, ROUGE-L, and METEOR-lite are on a 0..100 scale. cider() returns the
// usual CIDEr value (x10 inside); reports show it x100 like the other columns.

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace met {

using Tokens = std::vector<std::string>;

struct EvalPair {
  Tokens hypothesis;
  std::vector<Tokens> references;
};

// Corpus BLEU up to order n. Zero clipped counts at an order are smoothed to
// 1e-9 / (number of hypothesis n-grams); the brevity penalty uses the
// reference length closest to each hypothesis (shorter wins ties).
double bleu(const std::vector<EvalPair>& corpus, int n);

// Clipped n-gram matches and totals per order, summed over the corpus.
struct BleuCounts {
  std::vector<double> matches;
  std::vector<double> totals;
  double hyp_length = 0.0;
  double ref_length = 0.0;
};
BleuCounts bleu_counts(const std::vector<EvalPair>& corpus, int n);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

// LCS F-measure, beta = 1.2, using the best precision and best recall over the references.
double rouge_l(const EvalPair& pair);
double rouge_l(const std::vector<EvalPair>& corpus);  // mean over items

// TF-IDF n-gram cosine (n = 1..4) averaged, times 10; document frequencies
// come from the references of the corpus.
double cider(const std::vector<EvalPair>& corpus);

std::string stem(const std::string& word);

// Exact-then-stem unigram alignment; F_mean = 10PR / (R + 9P), fragmentation
// penalty 0.5 (chunks / matches)^3; best reference wins. No synonym stage.
double meteor_lite(const EvalPair& pair);
double meteor_lite(const std::vector<EvalPair>& corpus);  // mean over items

// Report columns in table order.
inline const std::vector<std::string> kScoreColumns = {"B@1", "B@2", "B@3", "B@4", "M", "R-L", "C"};

double rsum(const std::map<std::string, double>& scores);

// All seven columns (x100 scale) plus rSUM.
std::map<std::string, double> evaluate_corpus(const std::vector<EvalPair>& corpus);

nlohmann::json report_json(const std::map<std::string, double>& scores);
// Plain-text table: header row then one value row; M is labelled M-lite.
std::string report_table(const std::map<std::string, double>& scores, const std::string& method = "MET");

}  // namespace met
