#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dualfb/corpus.hpp"
#include "dualfb/errors.hpp"
#include "dualfb/retriever.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

enum class BleuSmoothing { none, add_one };

struct BleuConfig {
  int max_n = 4;
  BleuSmoothing smoothing = BleuSmoothing::add_one;
};

namespace detail {

// Adds hyp/ref modified n-gram statistics for orders 1..max_n into
// clipped/total (both indexed by n-1).
inline void accumulate_ngrams(const std::vector<std::string>& hyp,
                              const std::vector<std::string>& ref, int max_n,
                              std::vector<double>& clipped,
                              std::vector<double>& total) {
  using Ngram = std::vector<std::string>;
  for (int n = 1; n <= max_n; ++n) {
    const std::size_t un = static_cast<std::size_t>(n);
    std::map<Ngram, int> ref_counts;
    if (ref.size() >= un) {
      for (std::size_t i = 0; i + un <= ref.size(); ++i) {
        ++ref_counts[Ngram(ref.begin() + i, ref.begin() + i + un)];
      }
    }
    std::map<Ngram, int> hyp_counts;
    if (hyp.size() >= un) {
      for (std::size_t i = 0; i + un <= hyp.size(); ++i) {
        ++hyp_counts[Ngram(hyp.begin() + i, hyp.begin() + i + un)];
      }
    }
    for (const auto& [gram, count] : hyp_counts) {
      total[un - 1] += count;
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) {
        clipped[un - 1] += std::min(count, it->second);
      }
    }
  }
}

inline double bleu_from_counts(const std::vector<double>& clipped,
                               const std::vector<double>& total,
                               double hyp_len, double ref_len,
                               const BleuConfig& cfg) {
  if (hyp_len <= 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < cfg.max_n; ++n) {
    double precision;
    if (cfg.smoothing == BleuSmoothing::add_one) {
      precision = (clipped[n] + 1.0) / (total[n] + 1.0);
    } else {
      if (clipped[n] <= 0.0) return 0.0;
      precision = clipped[n] / total[n];
    }
    log_sum += std::log(precision);
  }
  const double geo_mean = std::exp(log_sum / cfg.max_n);
  const double brevity =
      hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return brevity * geo_mean;
}

}  // namespace detail

// Smoothed sentence BLEU; the negative-sampling quality oracle. add_one
// smoothing applies (c+1)/(t+1) at every order, including orders with no
// hypothesis n-grams.
inline double sentence_bleu(const std::vector<std::string>& hyp,
                            const std::vector<std::string>& ref,
                            const BleuConfig& cfg = {}) {
  if (cfg.max_n < 1) throw DataError("bleu: max_n must be >= 1");
  if (ref.empty()) throw DataError("sentence_bleu: empty reference");
  if (hyp.empty()) return 0.0;
  std::vector<double> clipped(static_cast<std::size_t>(cfg.max_n), 0.0);
  std::vector<double> total(static_cast<std::size_t>(cfg.max_n), 0.0);
  detail::accumulate_ngrams(hyp, ref, cfg.max_n, clipped, total);
  return detail::bleu_from_counts(clipped, total,
                                  static_cast<double>(hyp.size()),
                                  static_cast<double>(ref.size()), cfg);
}

inline double sentence_bleu(const std::string& hyp, const std::string& ref,
                            const BleuConfig& cfg = {}) {
  return sentence_bleu(normalize_tokens(hyp), normalize_tokens(ref), cfg);
}

// Corpus BLEU pools n-gram statistics and lengths across all pairs before
// taking precisions; unsmoothed by default, matching conventional reporting.
inline double corpus_bleu(
    const std::vector<std::pair<std::vector<std::string>,
                                std::vector<std::string>>>& pairs,
    const BleuConfig& cfg = {4, BleuSmoothing::none}) {
  if (cfg.max_n < 1) throw DataError("bleu: max_n must be >= 1");
  if (pairs.empty()) throw DataError("corpus_bleu: no hypothesis/reference pairs");
  std::vector<double> clipped(static_cast<std::size_t>(cfg.max_n), 0.0);
  std::vector<double> total(static_cast<std::size_t>(cfg.max_n), 0.0);
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (const auto& [hyp, ref] : pairs) {
    if (ref.empty()) throw DataError("corpus_bleu: empty reference");
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    detail::accumulate_ngrams(hyp, ref, cfg.max_n, clipped, total);
  }
  return detail::bleu_from_counts(clipped, total, hyp_len, ref_len, cfg);
}

inline double corpus_bleu_text(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const BleuConfig& cfg = {4, BleuSmoothing::none}) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>
      tokenized;
  tokenized.reserve(pairs.size());
  for (const auto& [hyp, ref] : pairs) {
    tokenized.emplace_back(normalize_tokens(hyp), normalize_tokens(ref));
  }
  return corpus_bleu(tokenized, cfg);
}

// Maps each distinct normalized KB value to one canonical (attribute, value)
// pair (first occurrence in KB order). Extraction matches the longest value
// first so a value that is a substring of another is not double counted.
class EntityLexicon {
 public:
  EntityLexicon() = default;

  explicit EntityLexicon(const KnowledgeBase& kb) {
    std::set<std::string> seen;
    for (const Entity& e : kb.entities) {
      for (const auto& [attr, value] : e.attributes) {
        const auto value_tokens = normalize_tokens(value);
        if (value_tokens.empty()) continue;
        const std::string key = join_tokens(value_tokens);
        if (!seen.insert(key).second) continue;
        entries_.push_back({value_tokens, {normalize_join(attr), key}});
      }
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& a, const Entry& b) {
                if (a.value_tokens.size() != b.value_tokens.size()) {
                  return a.value_tokens.size() > b.value_tokens.size();
                }
                return a.value_tokens < b.value_tokens;
              });
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  // Deduplicated set of lexicon values present in `text` at token boundaries.
  std::set<AttributeValue> extract(const std::string& text) const {
    std::set<AttributeValue> found;
    const auto tokens = normalize_tokens(text);
    std::size_t i = 0;
    while (i < tokens.size()) {
      bool matched = false;
      for (const Entry& entry : entries_) {
        const std::size_t len = entry.value_tokens.size();
        if (i + len > tokens.size()) continue;
        if (std::equal(entry.value_tokens.begin(), entry.value_tokens.end(),
                       tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
          found.insert(entry.canonical);
          i += len;
          matched = true;
          break;
        }
      }
      if (!matched) ++i;
    }
    return found;
  }

 private:
  struct Entry {
    std::vector<std::string> value_tokens;
    AttributeValue canonical;
  };
  std::vector<Entry> entries_;  // longest first, then lexicographic
};

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

// Micro Entity-F1: per-response value sets, corpus-pooled counts.
inline F1Result entity_f1(const std::vector<std::string>& preds,
                          const std::vector<std::string>& refs,
                          const EntityLexicon& lexicon) {
  if (preds.size() != refs.size()) {
    throw DataError("entity_f1: " + std::to_string(preds.size()) +
                    " predictions vs " + std::to_string(refs.size()) +
                    " references");
  }
  F1Result r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto pred_values = lexicon.extract(preds[i]);
    const auto ref_values = lexicon.extract(refs[i]);
    for (const auto& v : pred_values) {
      if (ref_values.count(v)) ++r.tp;
      else ++r.fp;
    }
    for (const auto& v : ref_values) {
      if (!pred_values.count(v)) ++r.fn;
    }
  }
  if (r.tp + r.fp > 0) r.precision = static_cast<double>(r.tp) / (r.tp + r.fp);
  if (r.tp + r.fn > 0) r.recall = static_cast<double>(r.tp) / (r.tp + r.fn);
  if (r.precision + r.recall > 0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

struct RecallMeasurement {
  double value = 1.0;
  bool vacuous = false;  // empty gold set: vacuously covered, excluded from averages
};

// Fraction of gold attribute values covered by the union of the top-K
// entities' values.
inline RecallMeasurement recall_at_k(const RetrievalResult& topk,
                                     const GoldValueSet& gold,
                                     const KnowledgeBase& kb) {
  if (gold.empty()) return {1.0, true};
  std::set<AttributeValue> covered;
  for (const ScoredEntity& se : topk.entries) {
    const Entity* e = kb.find(se.entity_id);
    if (e == nullptr) {
      throw DataError("recall_at_k: unknown entity '" + se.entity_id + "'");
    }
    for (const auto& [attr, value] : e->attributes) {
      const auto value_tokens = normalize_tokens(value);
      if (value_tokens.empty()) continue;
      covered.emplace(normalize_join(attr), join_tokens(value_tokens));
    }
  }
  std::size_t hit = 0;
  for (const auto& g : gold.values) {
    if (covered.count(g)) ++hit;
  }
  return {static_cast<double>(hit) / static_cast<double>(gold.size()), false};
}

// Mean over non-vacuous measurements; 0 when every turn is vacuous.
inline double mean_recall(const std::vector<RecallMeasurement>& per_turn) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : per_turn) {
    if (m.vacuous) continue;
    sum += m.value;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace dualfb
