#include "met/metrics.hpp"

#include "met/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace met {

namespace {

using NgramCounts = std::map<Tokens, double>;

NgramCounts ngrams(const Tokens& t, int n) {
  NgramCounts c;
  const auto len = static_cast<int>(t.size());
  for (int i = 0; i + n <= len; ++i) c[Tokens(t.begin() + i, t.begin() + i + n)] += 1.0;
  return c;
}

void check_corpus(const std::vector<EvalPair>& corpus, const char* who) {
  if (corpus.empty()) throw ContractError(std::string(who) + ": empty corpus");
  for (const auto& p : corpus) {
    if (p.references.empty()) throw ContractError(std::string(who) + ": item without references");
  }
}

}  // namespace

BleuCounts bleu_counts(const std::vector<EvalPair>& corpus, int n) {
  if (n < 1 || n > 4) throw ContractError("bleu: order must be in 1..4, got " + std::to_string(n));
  check_corpus(corpus, "bleu");
  BleuCounts bc;
  bc.matches.assign(static_cast<std::size_t>(n), 0.0);
  bc.totals.assign(static_cast<std::size_t>(n), 0.0);
  for (const auto& p : corpus) {
    const auto hl = static_cast<double>(p.hypothesis.size());
    bc.hyp_length += hl;
    double best = -1.0;
    for (const auto& r : p.references) {
      const auto rl = static_cast<double>(r.size());
      if (best < 0 || std::abs(rl - hl) < std::abs(best - hl) || (std::abs(rl - hl) == std::abs(best - hl) && rl < best)) {
        best = rl;
      }
    }
    bc.ref_length += best;
    for (int k = 1; k <= n; ++k) {
      const NgramCounts h = ngrams(p.hypothesis, k);
      NgramCounts max_ref;
      for (const auto& r : p.references) {
        for (const auto& [g, c] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : h) {
        const auto it = max_ref.find(g);
        bc.matches[static_cast<std::size_t>(k - 1)] += std::min(c, it == max_ref.end() ? 0.0 : it->second);
        bc.totals[static_cast<std::size_t>(k - 1)] += c;
      }
    }
  }
  return bc;
}

double bleu(const std::vector<EvalPair>& corpus, int n) {
  const BleuCounts bc = bleu_counts(corpus, n);
  if (bc.hyp_length == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const double m = bc.matches[static_cast<std::size_t>(k)];
    const double t = std::max(bc.totals[static_cast<std::size_t>(k)], 1.0);
    log_sum += std::log((m > 0.0 ? m : 1e-9) / t);
  }
  const double bp = bc.hyp_length > bc.ref_length ? 1.0 : std::exp(1.0 - bc.ref_length / bc.hyp_length);
  return 100.0 * bp * std::exp(log_sum / n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const EvalPair& pair) {
  if (pair.references.empty()) throw ContractError("rouge_l: no references");
  if (pair.hypothesis.empty()) return 0.0;
  double p_max = 0.0, r_max = 0.0;
  for (const auto& r : pair.references) {
    if (r.empty()) continue;
    const auto l = static_cast<double>(lcs_length(pair.hypothesis, r));
    p_max = std::max(p_max, l / static_cast<double>(pair.hypothesis.size()));
    r_max = std::max(r_max, l / static_cast<double>(r.size()));
  }
  if (p_max == 0.0 || r_max == 0.0) return 0.0;
  const double beta2 = 1.2 * 1.2;
  return 100.0 * (1.0 + beta2) * p_max * r_max / (r_max + beta2 * p_max);
}

double rouge_l(const std::vector<EvalPair>& corpus) {
  check_corpus(corpus, "rouge_l");
  double s = 0.0;
  for (const auto& p : corpus) s += rouge_l(p);
  return s / static_cast<double>(corpus.size());
}

double cider(const std::vector<EvalPair>& corpus) {
  check_corpus(corpus, "cider");
  if (corpus.size() < 2) throw ContractError("cider: document frequencies need at least 2 items");
  constexpr int kOrders = 4;
  // Document frequency: number of items whose reference set contains the n-gram.
  std::map<Tokens, double> df;
  for (const auto& p : corpus) {
    std::set<Tokens> seen;
    for (const auto& r : p.references) {
      for (int k = 1; k <= kOrders; ++k) {
        for (const auto& [g, c] : ngrams(r, k)) seen.insert(g);
      }
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(corpus.size()));

  struct Vec {
    std::array<NgramCounts, kOrders> w;
    std::array<double, kOrders> norm{};
  };
  auto tfidf = [&](const Tokens& t) {
    Vec v;
    for (int k = 1; k <= kOrders; ++k) {
      auto& w = v.w[static_cast<std::size_t>(k - 1)];
      double sq = 0.0;
      for (const auto& [g, c] : ngrams(t, k)) {
        const auto it = df.find(g);
        const double idf = log_n - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
        w[g] = c * idf;
        sq += w[g] * w[g];
      }
      v.norm[static_cast<std::size_t>(k - 1)] = std::sqrt(sq);
    }
    return v;
  };

  double total = 0.0;
  for (const auto& p : corpus) {
    const Vec h = tfidf(p.hypothesis);
    std::array<double, kOrders> acc{};
    for (const auto& r : p.references) {
      const Vec rv = tfidf(r);
      for (std::size_t k = 0; k < kOrders; ++k) {
        double dot = 0.0;
        for (const auto& [g, x] : h.w[k]) {
          const auto it = rv.w[k].find(g);
          if (it != rv.w[k].end()) dot += x * it->second;
        }
        if (h.norm[k] != 0.0 && rv.norm[k] != 0.0) acc[k] += dot / (h.norm[k] * rv.norm[k]);
      }
    }
    double mean_n = 0.0;
    for (double a : acc) mean_n += a;
    mean_n /= kOrders;
    total += 10.0 * mean_n / static_cast<double>(p.references.size());
  }
  return total / static_cast<double>(corpus.size());
}

std::string stem(const std::string& word) {
  static const std::vector<std::string> suffixes = {"ing", "ed", "es", "ly", "s"};
  for (const auto& s : suffixes) {
    if (word.size() >= s.size() + 3 && word.compare(word.size() - s.size(), s.size(), s) == 0) {
      return word.substr(0, word.size() - s.size());
    }
  }
  return word;
}

namespace {

double meteor_single(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  std::vector<int> align(hyp.size(), -1);
  std::vector<bool> used(ref.size(), false);
  auto stage = [&](auto&& key) {
    int prev = -2;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (align[i] >= 0) {
        prev = align[i];
        continue;
      }
      int chosen = -1;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (used[j] || key(hyp[i]) != key(ref[j])) continue;
        if (static_cast<int>(j) == prev + 1) {
          chosen = static_cast<int>(j);
          break;
        }
        if (chosen < 0) chosen = static_cast<int>(j);
      }
      if (chosen >= 0) {
        align[i] = chosen;
        used[static_cast<std::size_t>(chosen)] = true;
        prev = chosen;
      }
    }
  };
  stage([](const std::string& w) { return w; });
  stage([](const std::string& w) { return stem(w); });

  double m = 0.0, chunks = 0.0;
  int last = -2;
  bool in_chunk = false;
  for (int a : align) {
    if (a < 0) {
      in_chunk = false;
      continue;
    }
    m += 1.0;
    if (!in_chunk || a != last + 1) chunks += 1.0;
    in_chunk = true;
    last = a;
  }
  if (m == 0.0) return 0.0;
  const double p = m / static_cast<double>(hyp.size());
  const double r = m / static_cast<double>(ref.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(chunks / m, 3.0);
  return 100.0 * f_mean * (1.0 - penalty);
}

}  // namespace

double meteor_lite(const EvalPair& pair) {
  if (pair.references.empty()) throw ContractError("meteor_lite: no references");
  double best = 0.0;
  for (const auto& r : pair.references) best = std::max(best, meteor_single(pair.hypothesis, r));
  return best;
}

double meteor_lite(const std::vector<EvalPair>& corpus) {
  check_corpus(corpus, "meteor_lite");
  double s = 0.0;
  for (const auto& p : corpus) s += meteor_lite(p);
  return s / static_cast<double>(corpus.size());
}

double rsum(const std::map<std::string, double>& scores) {
  double s = 0.0;
  for (const auto& k : kScoreColumns) {
    const auto it = scores.find(k);
    if (it == scores.end()) throw ContractError("rsum: missing component " + k);
    s += it->second;
  }
  return s;
}

std::map<std::string, double> evaluate_corpus(const std::vector<EvalPair>& corpus) {
  std::map<std::string, double> s;
  for (int n = 1; n <= 4; ++n) s["B@" + std::to_string(n)] = bleu(corpus, n);
  s["M"] = meteor_lite(corpus);
  s["R-L"] = rouge_l(corpus);
  s["C"] = corpus.size() >= 2 ? 100.0 * cider(corpus) : 0.0;
  s["rSUM"] = rsum(s);
  return s;
}

nlohmann::json report_json(const std::map<std::string, double>& scores) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : scores) j[k == "M" ? "M-lite" : k] = v;
  return j;
}

std::string report_table(const std::map<std::string, double>& scores, const std::string& method) {
  std::vector<std::string> cols = kScoreColumns;
  cols.emplace_back("rSUM");
  std::ostringstream out;
  out << std::left << std::setw(12) << "Method";
  for (const auto& c : cols) out << std::right << std::setw(9) << (c == "M" ? "M-lite" : c);
  out << '\n' << std::left << std::setw(12) << method << std::fixed << std::setprecision(2);
  for (const auto& c : cols) {
    const auto it = scores.find(c);
    if (it == scores.end()) throw ContractError("report_table: missing column " + c);
    out << std::right << std::setw(9) << it->second;
  }
  out << '\n';
  return out.str();
}

}  // namespace met
