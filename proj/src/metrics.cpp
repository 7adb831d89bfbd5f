#include "navgen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "navgen/error.hpp"

namespace navgen::metrics {

namespace {

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::map<Words, int> ngrams(const Words& words, std::size_t n) {
  std::map<Words, int> out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++out[Words(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

double brevity(double hyp_length, double ref_length) {
  if (hyp_length >= ref_length) return 1.0;
  if (hyp_length == 0.0) return 0.0;
  return std::exp(1.0 - ref_length / hyp_length);
}

}  // namespace

NgramCounts& NgramCounts::operator+=(const NgramCounts& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_length += other.hyp_length;
  ref_length += other.ref_length;
  return *this;
}

NgramCounts count_ngrams(const Words& hyp, const Words& ref) {
  Words h, r;
  for (const auto& w : hyp) h.push_back(lower(w));
  for (const auto& w : ref) r.push_back(lower(w));
  NgramCounts c;
  c.hyp_length = static_cast<double>(h.size());
  c.ref_length = static_cast<double>(r.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    auto hg = ngrams(h, n);
    auto rg = ngrams(r, n);
    for (const auto& [gram, count] : hg) {
      auto it = rg.find(gram);
      int clip = it == rg.end() ? 0 : it->second;
      c.matches[n - 1] += std::min(count, clip);
      c.totals[n - 1] += count;
    }
  }
  return c;
}

double bleu_sentence(const Words& hyp, const Words& ref) {
  if (hyp.empty()) return 0.0;
  auto c = count_ngrams(hyp, ref);
  if (c.matches[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p = c.matches[n] / std::max(c.totals[n], 1.0);
    // A hypothesis shorter than n has no n-grams; smoothing makes that 1/1.
    if (n >= 1 && c.matches[n] == 0.0) p = 1.0 / (c.totals[n] + 1.0);
    log_sum += std::log(p);
  }
  return 100.0 * brevity(c.hyp_length, c.ref_length) * std::exp(log_sum / 4.0);
}

double bleu_from_counts(const NgramCounts& c) {
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (c.matches[n] == 0.0 || c.totals[n] == 0.0) return 0.0;
    log_sum += std::log(c.matches[n] / c.totals[n]);
  }
  return 100.0 * brevity(c.hyp_length, c.ref_length) * std::exp(log_sum / 4.0);
}

double bleu_corpus(const ScoredPairs& pairs) {
  NgramCounts total;
  for (const auto& [h, r] : pairs) total += count_ngrams(h, r);
  return bleu_from_counts(total);
}

BleuReport bleu_report(const ScoredPairs& pairs) {
  BleuReport report;
  report.pairs = pairs.size();
  NgramCounts total;
  double sum = 0.0;
  for (const auto& [h, r] : pairs) {
    double s = bleu_sentence(h, r);
    report.per_pair.push_back(s);
    sum += s;
    total += count_ngrams(h, r);
  }
  if (!pairs.empty()) report.sentence_bleu_mean = sum / static_cast<double>(pairs.size());
  report.corpus_bleu = bleu_from_counts(total);
  for (std::size_t n = 0; n < 4; ++n) {
    report.precisions[n] = total.totals[n] > 0.0 ? total.matches[n] / total.totals[n] : 0.0;
  }
  report.brevity_penalty = brevity(total.hyp_length, total.ref_length);
  return report;
}

nlohmann::json to_json(const BleuReport& r) {
  return {{"sentence_bleu_mean", r.sentence_bleu_mean},
          {"corpus_bleu", r.corpus_bleu},
          {"precisions", r.precisions},
          {"brevity_penalty", r.brevity_penalty},
          {"pairs", r.pairs},
          {"per_pair", r.per_pair}};
}

std::string format_table(const BleuReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "metric               value\n";
  out << "pairs                " << r.pairs << "\n";
  out << "sentence BLEU (%)    " << r.sentence_bleu_mean << "\n";
  out << "corpus BLEU (%)      " << r.corpus_bleu << "\n";
  for (std::size_t n = 0; n < 4; ++n) {
    out << "p" << (n + 1) << "                   " << std::setprecision(4) << r.precisions[n] << std::setprecision(2)
        << "\n";
  }
  out << "brevity penalty      " << std::setprecision(4) << r.brevity_penalty << "\n";
  return out.str();
}

}  // namespace navgen::metrics
