#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace navgen::metrics {

using Words = std::vector<std::string>;

// Clipped n-gram counts for n = 1..4 (index n-1). Matching is
// case-insensitive.
struct NgramCounts {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double hyp_length = 0.0;
  double ref_length = 0.0;

  NgramCounts& operator+=(const NgramCounts& other);
};

NgramCounts count_ngrams(const Words& hyp, const Words& ref);

// Sentence BLEU in percent. For n >= 2 a zero match count is smoothed to
// (0 + 1) / (total + 1); unigram precision is never smoothed. Brevity penalty
// exp(1 - r/c) when c < r. Empty hypothesis scores 0.
double bleu_sentence(const Words& hyp, const Words& ref);

// BLEU over pooled counts, unsmoothed, in percent.
double bleu_from_counts(const NgramCounts& counts);

struct BleuReport {
  double sentence_bleu_mean = 0.0;
  double corpus_bleu = 0.0;
  std::vector<double> per_pair;
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  std::size_t pairs = 0;
};

// (hypothesis, reference) pairs.
using ScoredPairs = std::vector<std::pair<Words, Words>>;

double bleu_corpus(const ScoredPairs& pairs);
BleuReport bleu_report(const ScoredPairs& pairs);

nlohmann::json to_json(const BleuReport& report);
std::string format_table(const BleuReport& report);

}  // namespace navgen::metrics
