#pragma once

#include <vector>

namespace signformer {

// Corpus BLEU-4: uniform 1..4-gram clipped precisions with brevity penalty,
// no smoothing; any order with zero overlap yields 0. Range [0,100].
double bleu4(const std::vector<std::vector<int>>& hypotheses,
             const std::vector<std::vector<int>>& references);

// Mean per-sentence ROUGE-L F1 (plain harmonic mean) * 100.
double rouge_l(const std::vector<std::vector<int>>& hypotheses,
               const std::vector<std::vector<int>>& references);

// score per million parameters
double information_density(double score, double params_millions);

// 20*log10(score^alpha / (params^beta * macs^gamma))
double netscore(double score, double params_millions, double macs_billions,
                double alpha = 2.0, double beta = 0.5, double gamma = 0.5);

}  // namespace signformer
