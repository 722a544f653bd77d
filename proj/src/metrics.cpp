#include "signformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "signformer/error.hpp"

namespace signformer {

namespace {

using Ngram = std::vector<int>;

std::map<Ngram, long long> ngram_counts(const std::vector<int>& tokens, int n) {
  std::map<Ngram, long long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu4(const std::vector<std::vector<int>>& hypotheses,
             const std::vector<std::vector<int>>& references) {
  check(!hypotheses.empty(), "bleu4 requires a non-empty corpus");
  check(hypotheses.size() == references.size(), "bleu4 corpus sizes disagree: ",
        hypotheses.size(), " hypotheses vs ", references.size(), " references");
  long long hyp_len = 0, ref_len = 0;
  long long matches[4] = {0, 0, 0, 0};
  long long totals[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<long long>(hypotheses[i].size());
    ref_len += static_cast<long long>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      auto hyp_counts = ngram_counts(hypotheses[i], n);
      auto ref_counts = ngram_counts(references[i], n);
      for (const auto& [gram, count] : hyp_counts) {
        totals[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(matches[n]) / totals[n]);
  }
  double bp = 1.0;
  if (hyp_len < ref_len && hyp_len > 0)
    bp = std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  if (hyp_len == 0) return 0.0;
  return 100.0 * bp * std::exp(log_sum);
}

double rouge_l(const std::vector<std::vector<int>>& hypotheses,
               const std::vector<std::vector<int>>& references) {
  check(!hypotheses.empty(), "rouge_l requires a non-empty corpus");
  check(hypotheses.size() == references.size(), "rouge_l corpus sizes disagree: ",
        hypotheses.size(), " hypotheses vs ", references.size(), " references");
  double sum_f1 = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& ref = references[i];
    if (hyp.empty() || ref.empty()) continue;
    // LCS length by dynamic programming over two rows
    std::vector<int> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
    for (std::size_t a = 1; a <= hyp.size(); ++a) {
      for (std::size_t b = 1; b <= ref.size(); ++b)
        cur[b] = hyp[a - 1] == ref[b - 1] ? prev[b - 1] + 1
                                          : std::max(prev[b], cur[b - 1]);
      std::swap(prev, cur);
    }
    const int lcs = prev[ref.size()];
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / hyp.size();
    const double r = static_cast<double>(lcs) / ref.size();
    sum_f1 += 2.0 * p * r / (p + r);
  }
  return 100.0 * sum_f1 / static_cast<double>(hypotheses.size());
}

double information_density(double score, double params_millions) {
  check(params_millions > 0.0, "information density requires positive parameters");
  return score / params_millions;
}

double netscore(double score, double params_millions, double macs_billions,
                double alpha, double beta, double gamma) {
  check(score > 0.0 && params_millions > 0.0 && macs_billions > 0.0,
        "netscore requires positive score, parameters and MACs");
  return 20.0 * std::log10(std::pow(score, alpha) /
                           (std::pow(params_millions, beta) *
                            std::pow(macs_billions, gamma)));
}

}  // namespace signformer
