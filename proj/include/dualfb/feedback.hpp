#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dualfb/corpus.hpp"
#include "dualfb/errors.hpp"
#include "dualfb/generator.hpp"
#include "dualfb/metrics.hpp"
#include "dualfb/retriever.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

// Generator-side entity scores G (or G⁻): length-normalized log probs for
// probability adapters, relevance scores for the LLM adapter.
struct EntityScores {
  std::vector<std::string> entity_ids;
  std::vector<double> scores;
};

// Retrieval-side dot products S, id-aligned with EntityScores.
struct RetrievalScores {
  std::vector<std::string> entity_ids;
  std::vector<double> scores;
};

struct SoftmaxConfig {
  double temperature = 1.0;
};

enum class NegativeStrategy {
  rank_bleu,       // argmin(R^g − R^o), oracle = smoothed sentence BLEU
  rank_entityf1,   // argmin(R^g − R^o), oracle = per-pair entity F1
  argmin_bleu,     // lowest BLEU outright
  argmin_entityf1  // lowest entity F1 outright
};

inline bool is_rank_strategy(NegativeStrategy s) {
  return s == NegativeStrategy::rank_bleu || s == NegativeStrategy::rank_entityf1;
}

inline bool uses_entity_f1(NegativeStrategy s) {
  return s == NegativeStrategy::rank_entityf1 ||
         s == NegativeStrategy::argmin_entityf1;
}

inline std::string to_string(NegativeStrategy s) {
  switch (s) {
    case NegativeStrategy::rank_bleu: return "rank_bleu";
    case NegativeStrategy::rank_entityf1: return "rank_entityf1";
    case NegativeStrategy::argmin_bleu: return "argmin_bleu";
    case NegativeStrategy::argmin_entityf1: return "argmin_entityf1";
  }
  return "?";
}

inline NegativeStrategy negative_strategy_from_string(const std::string& s) {
  if (s == "rank_bleu") return NegativeStrategy::rank_bleu;
  if (s == "rank_entityf1") return NegativeStrategy::rank_entityf1;
  if (s == "argmin_bleu") return NegativeStrategy::argmin_bleu;
  if (s == "argmin_entityf1") return NegativeStrategy::argmin_entityf1;
  throw DataError("unknown negative-selection strategy '" + s + "'");
}

struct NegativeSelectionConfig {
  NegativeStrategy strategy = NegativeStrategy::rank_bleu;
  int beam_m = 5;
  // When set, selects argmin(R^o − R^g): low self-reported score but high
  // actual quality. Off by default; the standard selection targets
  // high-probability low-quality responses.
  bool invert_polarity = false;

  void validate() const {
    if (beam_m < 1) throw DataError("negative selection: beam size must be >= 1");
    if (is_rank_strategy(strategy) && beam_m < 2) {
      throw DataError("negative selection: rank strategies need beam size >= 2");
    }
  }
};

struct MarginConfig {
  double eta = 0.1;

  void validate() const {
    if (eta < 0.0) throw DataError("margin: eta must be >= 0");
  }
};

inline void check_aligned(const std::vector<std::string>& a,
                          const std::vector<std::string>& b,
                          const char* what) {
  if (a != b) throw DataError(std::string(what) + ": entity id order mismatch");
}

inline std::vector<double> log_softmax(const std::vector<double>& logits,
                                       double tau) {
  if (logits.empty()) throw DataError("softmax: empty input");
  if (tau <= 0.0) throw DataError("softmax: temperature must be positive");
  std::vector<double> out(logits.size());
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw DataError("softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (logits[i] - mx) / tau;
    denom += std::exp(out[i]);
  }
  const double log_denom = std::log(denom);
  for (double& v : out) v -= log_denom;
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits, double tau) {
  std::vector<double> out = log_softmax(logits, tau);
  for (double& v : out) v = std::exp(v);
  return out;
}

// D_KL(A, S) = Σ_i softmax(A/τ)_i · (log softmax(A/τ)_i − log softmax(S/τ)_i).
inline double kl_from_logits(const std::vector<double>& a,
                             const std::vector<double>& s, double tau) {
  if (a.size() != s.size()) throw DataError("kl: length mismatch");
  const auto la = log_softmax(a, tau);
  const auto ls = log_softmax(s, tau);
  double kl = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    kl += std::exp(la[i]) * (la[i] - ls[i]);
  }
  return kl;
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> d_scores;  // dL/dS, aligned with the input ids
};

// Positive feedback: KL from the generator distribution (stop-gradient
// pseudo-label) to the retrieval distribution.
//   L_pos = Σ_i g̃_i (log g̃_i − log s̃_i),  dL/dS_i = (s̃_i − g̃_i)/τ.
inline LossGrad positive_loss(const EntityScores& g, const RetrievalScores& s,
                              const SoftmaxConfig& cfg) {
  check_aligned(g.entity_ids, s.entity_ids, "positive_loss");
  LossGrad out;
  out.loss = kl_from_logits(g.scores, s.scores, cfg.temperature);
  const auto gt = softmax(g.scores, cfg.temperature);
  const auto st = softmax(s.scores, cfg.temperature);
  out.d_scores.resize(st.size());
  for (std::size_t i = 0; i < st.size(); ++i) {
    out.d_scores[i] = (st[i] - gt[i]) / cfg.temperature;
  }
  return out;
}

// Margin-calibrated negative feedback:
//   L_neg = max(0, −(D_KL(G⁻, S) − D_KL(G, S)) + η);
// active gradient dL/dS_i = (g̃⁻_i − g̃_i)/τ, zero when inactive.
inline LossGrad negative_loss(const EntityScores& g, const EntityScores& g_neg,
                              const RetrievalScores& s, const SoftmaxConfig& cfg,
                              const MarginConfig& margin) {
  check_aligned(g.entity_ids, s.entity_ids, "negative_loss");
  check_aligned(g_neg.entity_ids, s.entity_ids, "negative_loss");
  margin.validate();
  const double d_neg = kl_from_logits(g_neg.scores, s.scores, cfg.temperature);
  const double d_pos = kl_from_logits(g.scores, s.scores, cfg.temperature);
  LossGrad out;
  out.d_scores.assign(s.scores.size(), 0.0);
  const double raw = -(d_neg - d_pos) + margin.eta;
  if (raw <= 0.0) return out;
  out.loss = raw;
  const auto gt = softmax(g.scores, cfg.temperature);
  const auto gnt = softmax(g_neg.scores, cfg.temperature);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    out.d_scores[i] = (gnt[i] - gt[i]) / cfg.temperature;
  }
  return out;
}

using OracleFn =
    std::function<double(const Hypothesis&, const std::string& reference)>;

// Ordinal ranks, 1 = highest value; ties keep input order.
inline std::vector<int> ordinal_ranks_desc(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] > values[b];
  });
  std::vector<int> ranks(values.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    ranks[order[j]] = static_cast<int>(j) + 1;
  }
  return ranks;
}

struct NegativeSelection {
  std::size_t index = 0;
  Hypothesis hypothesis;
  bool degenerate = false;         // no discriminating signal among hypotheses
  std::vector<double> oracle_scores;
  std::vector<int> rank_gen;       // empty for argmin_* strategies
  std::vector<int> rank_oracle;
};

// Picks the negative sample. Rank strategies minimize R^g − R^o over the set
// (high generation rank, low quality rank); argmin strategies take the worst
// oracle score outright.
inline NegativeSelection select_negative(const HypothesisSet& hyps,
                                         const std::string& reference,
                                         const NegativeSelectionConfig& cfg,
                                         const OracleFn& oracle_fn) {
  const auto& hs = hyps.hypotheses;
  if (hs.empty()) throw DataError("select_negative: empty hypothesis set");
  if (normalize_tokens(reference).empty()) {
    throw DataError("select_negative: empty reference");
  }
  cfg.validate();

  NegativeSelection sel;
  sel.oracle_scores.reserve(hs.size());
  for (const Hypothesis& h : hs) {
    sel.oracle_scores.push_back(oracle_fn(h, reference));
  }
  sel.degenerate = std::all_of(hs.begin(), hs.end(), [&](const Hypothesis& h) {
    return h.tokens == hs.front().tokens;
  });

  if (is_rank_strategy(cfg.strategy)) {
    std::vector<double> gen_scores;
    gen_scores.reserve(hs.size());
    for (const Hypothesis& h : hs) gen_scores.push_back(h.log_score);
    sel.rank_gen = ordinal_ranks_desc(gen_scores);
    sel.rank_oracle = ordinal_ranks_desc(sel.oracle_scores);
    int best_diff = 0;
    int best_tie = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const int rg = sel.rank_gen[i];
      const int ro = sel.rank_oracle[i];
      const int diff = cfg.invert_polarity ? ro - rg : rg - ro;
      const int tie = cfg.invert_polarity ? ro : rg;
      if (i == 0 || diff < best_diff || (diff == best_diff && tie < best_tie)) {
        best_diff = diff;
        best_tie = tie;
        sel.index = i;
      }
    }
  } else {
    for (std::size_t i = 1; i < hs.size(); ++i) {
      if (sel.oracle_scores[i] < sel.oracle_scores[sel.index]) sel.index = i;
    }
  }
  sel.hypothesis = hs[sel.index];
  return sel;
}

struct FeedbackConfig {
  SoftmaxConfig softmax;
  NegativeSelectionConfig selection;
  MarginConfig margin;
  bool include_negative = true;  // false: positive-feedback-only ablation
};

inline EntityScores score_entities(GeneratorAdapter& adapter,
                                   const DialogueContext& ctx,
                                   const std::vector<const Entity*>& entities,
                                   const std::string& response) {
  if (entities.empty()) throw DataError("score_entities: no entities");
  EntityScores out;
  out.entity_ids.reserve(entities.size());
  for (const Entity* e : entities) out.entity_ids.push_back(e->id);
  out.scores = adapter.score_entities_batch(ctx, entities, response);
  if (out.scores.size() != entities.size()) {
    throw DataError("score_entities: adapter returned " +
                    std::to_string(out.scores.size()) + " scores for " +
                    std::to_string(entities.size()) + " entities");
  }
  return out;
}

// id-resolving bridge from a retrieval result.
inline EntityScores score_entities(GeneratorAdapter& adapter,
                                   const DialogueContext& ctx,
                                   const RetrievalResult& topk,
                                   const KnowledgeBase& kb,
                                   const std::string& response) {
  std::vector<const Entity*> entities;
  entities.reserve(topk.entries.size());
  for (const ScoredEntity& se : topk.entries) {
    const Entity* e = kb.find(se.entity_id);
    if (e == nullptr) {
      throw DataError("score_entities: unknown entity '" + se.entity_id + "'");
    }
    entities.push_back(e);
  }
  return score_entities(adapter, ctx, entities, response);
}

inline OracleFn make_oracle_fn(NegativeStrategy strategy,
                               const EntityLexicon* lexicon) {
  if (uses_entity_f1(strategy)) {
    if (lexicon == nullptr) {
      throw DataError("entity-F1 oracle needs an entity lexicon");
    }
    return [lexicon](const Hypothesis& h, const std::string& reference) {
      return entity_f1({h.text()}, {reference}, *lexicon).f1;
    };
  }
  return [](const Hypothesis& h, const std::string& reference) {
    return sentence_bleu(h.text(), reference);
  };
}

// One training example's dual-feedback outcome; doubles as the trace record.
struct FeedbackResult {
  std::vector<std::string> entity_ids;
  std::vector<double> retrieval_scores;  // S
  std::vector<double> entity_scores;     // G
  std::vector<double> negative_scores;   // G⁻, empty when skipped
  std::string negative_text;
  bool negative_skipped = false;
  std::string skip_reason;
  double loss_pos = 0.0;
  double loss_neg = 0.0;
  double loss = 0.0;
  std::vector<double> d_scores;  // dL/dS
};

// Full dual-feedback pipeline for one (context, reference) example over the
// retained entities and their live retrieval scores. Both generator score
// vectors are constants with respect to S; only dL/dS leaves this function.
inline FeedbackResult retriever_loss(const DialogueContext& ctx,
                                     const std::vector<const Entity*>& entities,
                                     const std::vector<double>& retrieval_scores,
                                     const std::string& reference,
                                     GeneratorAdapter& adapter,
                                     const FeedbackConfig& cfg,
                                     const EntityLexicon* lexicon = nullptr) {
  if (entities.size() != retrieval_scores.size()) {
    throw DataError("retriever_loss: entity/score length mismatch");
  }
  FeedbackResult out;
  const EntityScores g = score_entities(adapter, ctx, entities, reference);
  RetrievalScores s{g.entity_ids, retrieval_scores};
  out.entity_ids = g.entity_ids;
  out.retrieval_scores = retrieval_scores;
  out.entity_scores = g.scores;

  const LossGrad pos = positive_loss(g, s, cfg.softmax);
  out.loss_pos = pos.loss;
  out.d_scores = pos.d_scores;

  if (!cfg.include_negative) {
    out.negative_skipped = true;
    out.skip_reason = "negative feedback disabled";
    out.loss = out.loss_pos;
    return out;
  }

  const HypothesisSet hyps = adapter.generate(ctx, entities, cfg.selection.beam_m);
  if (hyps.hypotheses.empty()) {
    out.negative_skipped = true;
    out.skip_reason = "no hypotheses";
  } else {
    const NegativeSelection sel = select_negative(
        hyps, reference, cfg.selection,
        make_oracle_fn(cfg.selection.strategy, lexicon));
    out.negative_text = sel.hypothesis.text();
    if (sel.degenerate) {
      out.negative_skipped = true;
      out.skip_reason = "degenerate hypothesis set";
    } else if (normalize_join(sel.hypothesis.text()) == normalize_join(reference)) {
      out.negative_skipped = true;
      out.skip_reason = "negative identical to reference";
    } else {
      const EntityScores g_neg =
          score_entities(adapter, ctx, entities, sel.hypothesis.text());
      out.negative_scores = g_neg.scores;
      const LossGrad neg = negative_loss(g, g_neg, s, cfg.softmax, cfg.margin);
      out.loss_neg = neg.loss;
      for (std::size_t i = 0; i < out.d_scores.size(); ++i) {
        out.d_scores[i] += neg.d_scores[i];
      }
    }
  }
  out.loss = out.loss_pos + out.loss_neg;
  return out;
}

}  // namespace dualfb
