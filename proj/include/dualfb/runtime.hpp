#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualfb/corpus.hpp"
#include "dualfb/encoder.hpp"
#include "dualfb/errors.hpp"
#include "dualfb/feedback.hpp"
#include "dualfb/generator.hpp"
#include "dualfb/metrics.hpp"
#include "dualfb/optim.hpp"
#include "dualfb/retriever.hpp"
#include "dualfb/rng.hpp"

namespace dualfb {

struct TrainConfig {
  int k = 6;               // retrieved entities per step
  int beam_m = 5;          // hypotheses for negative selection
  double lr = 2e-5;        // retriever learning rate, fixed schedule
  int start_step = 625;    // optimizer steps withheld before retriever updates
  int total_steps = 1500;  // optimizer steps overall
  int accumulation = 32;   // micro-steps per optimizer step
  int batch_size = 1;      // examples per micro-step
  // Full index refresh cadence, in optimizer steps. Retrieval candidates are
  // only as fresh as the last refresh; with a compact encoder a stale index
  // lets the loss fit whole gradient windows to frozen candidate sets, which
  // wrecks the ranking. Refreshing every step closes the feedback loop and is
  // cheap for knowledge bases that fit in memory; raise this only when entity
  // re-encoding dominates the step budget.
  int refresh_every = 1;
  int validate_every = 250;
  std::uint64_t seed = 0;
  NegativeStrategy strategy = NegativeStrategy::rank_bleu;
  double eta = 0.1;
  double tau = 1.0;
  bool use_negative = true;      // false: positive-feedback-only ablation
  bool invert_polarity = false;
  // Abort when hard adapter failures exceed this fraction of attempts (after
  // a small grace count).
  double max_failure_rate = 0.1;

  void validate() const {
    if (k < 1) throw DataError("train config: k must be >= 1");
    if (beam_m < 1) throw DataError("train config: beam must be >= 1");
    if (lr <= 0.0) throw DataError("train config: lr must be positive");
    if (start_step < 0) throw DataError("train config: negative start step");
    if (total_steps < 1) throw DataError("train config: steps must be >= 1");
    if (start_step > total_steps) {
      throw DataError("train config: start step exceeds total steps");
    }
    if (accumulation < 1) throw DataError("train config: accumulation must be >= 1");
    if (batch_size < 1) throw DataError("train config: batch size must be >= 1");
    if (refresh_every < 1) throw DataError("train config: refresh cadence must be >= 1");
    if (validate_every < 1) throw DataError("train config: validation cadence must be >= 1");
    if (eta < 0.0) throw DataError("train config: eta must be >= 0");
    if (tau <= 0.0) throw DataError("train config: tau must be positive");
    if (max_failure_rate < 0.0 || max_failure_rate > 1.0) {
      throw DataError("train config: failure rate must be in [0,1]");
    }
  }

  FeedbackConfig feedback() const {
    FeedbackConfig fb;
    fb.softmax.temperature = tau;
    fb.selection.strategy = strategy;
    fb.selection.beam_m = beam_m;
    fb.selection.invert_polarity = invert_polarity;
    fb.include_negative = use_negative;
    fb.margin.eta = eta;
    return fb;
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"k", c.k},
                        {"beam", c.beam_m},
                        {"lr", c.lr},
                        {"start_step", c.start_step},
                        {"steps", c.total_steps},
                        {"accumulation", c.accumulation},
                        {"batch_size", c.batch_size},
                        {"refresh_every", c.refresh_every},
                        {"validate_every", c.validate_every},
                        {"seed", c.seed},
                        {"strategy", to_string(c.strategy)},
                        {"eta", c.eta},
                        {"tau", c.tau},
                        {"use_negative", c.use_negative},
                        {"invert_polarity", c.invert_polarity},
                        {"max_failure_rate", c.max_failure_rate}};
}

// Applies the keys present in `j` on top of `base`; unknown keys are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j,
                                          TrainConfig base = {}) {
  static const std::set<std::string> known = {
      "k",           "beam",        "lr",         "start_step",
      "steps",       "accumulation","batch_size", "refresh_every",
      "validate_every", "seed",     "strategy",   "eta",
      "tau",         "use_negative","invert_polarity", "max_failure_rate"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw DataError("train config: unknown key '" + key + "'");
    }
  }
  base.k = j.value("k", base.k);
  base.beam_m = j.value("beam", base.beam_m);
  base.lr = j.value("lr", base.lr);
  base.start_step = j.value("start_step", base.start_step);
  base.total_steps = j.value("steps", base.total_steps);
  base.accumulation = j.value("accumulation", base.accumulation);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.refresh_every = j.value("refresh_every", base.refresh_every);
  base.validate_every = j.value("validate_every", base.validate_every);
  base.seed = j.value("seed", base.seed);
  if (j.contains("strategy")) {
    base.strategy = negative_strategy_from_string(j.at("strategy").get<std::string>());
  }
  base.eta = j.value("eta", base.eta);
  base.tau = j.value("tau", base.tau);
  base.use_negative = j.value("use_negative", base.use_negative);
  base.invert_polarity = j.value("invert_polarity", base.invert_polarity);
  base.max_failure_rate = j.value("max_failure_rate", base.max_failure_rate);
  return base;
}

inline std::string config_hash(const TrainConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(train_config_to_json(c).dump())));
  return buf;
}

struct EvalConfig {
  int k = 6;                        // entities handed to the generator
  std::vector<int> recall_ks = {1, 3, 6};
  int beam_m = 1;                   // top hypothesis becomes the prediction

  void validate() const {
    if (k < 1) throw DataError("eval config: k must be >= 1");
    if (beam_m < 1) throw DataError("eval config: beam must be >= 1");
    if (recall_ks.empty()) throw DataError("eval config: no recall cutoffs");
    for (int rk : recall_ks) {
      if (rk < 1) throw DataError("eval config: recall cutoff must be >= 1");
    }
  }
};

struct EvalSlice {
  std::size_t turns = 0;
  std::size_t vacuous_turns = 0;  // turns with no gold values
  double bleu = 0.0;
  F1Result f1;
  std::map<int, double> recall;  // cutoff -> mean Re@K over non-vacuous turns
};

struct EvalReport {
  EvalSlice overall;
  std::map<std::string, EvalSlice> by_domain;
};

namespace detail {

struct EvalTurn {
  std::string domain;
  std::string pred;
  std::string ref;
  std::map<int, RecallMeasurement> recalls;
};

inline EvalSlice aggregate_slice(const std::vector<const EvalTurn*>& turns,
                                 const EntityLexicon& lexicon,
                                 const std::vector<int>& recall_ks) {
  EvalSlice s;
  s.turns = turns.size();
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> preds;
  std::vector<std::string> refs;
  std::map<int, std::vector<RecallMeasurement>> per_k;
  for (const EvalTurn* t : turns) {
    pairs.emplace_back(t->pred, t->ref);
    preds.push_back(t->pred);
    refs.push_back(t->ref);
    for (const auto& [k, m] : t->recalls) per_k[k].push_back(m);
    if (!t->recalls.empty() && t->recalls.begin()->second.vacuous) {
      ++s.vacuous_turns;
    }
  }
  if (!pairs.empty()) s.bleu = corpus_bleu_text(pairs);
  s.f1 = entity_f1(preds, refs, lexicon);
  for (int k : recall_ks) s.recall[k] = mean_recall(per_k[k]);
  return s;
}

}  // namespace detail

// Read-only evaluation pass: retrieval recall, generation BLEU, and entity F1
// per domain and overall.
inline EvalReport evaluate(const std::vector<Dialogue>& dialogues,
                           const KnowledgeBase& kb, const EncoderParams& params,
                           GeneratorAdapter& adapter, const EvalConfig& cfg) {
  cfg.validate();
  const EntityIndex index = build_index(kb, params);
  const EntityLexicon lexicon(kb);
  int max_k = cfg.k;
  for (int rk : cfg.recall_ks) max_k = std::max(max_k, rk);

  std::vector<detail::EvalTurn> turns;
  for (const Dialogue& d : dialogues) {
    for (std::size_t t = 1; t <= d.turns.size(); ++t) {
      const Turn& turn = d.turns[t - 1];
      if (normalize_tokens(turn.system).empty()) continue;
      const DialogueContext ctx = build_context(d, static_cast<int>(t));
      const RetrievalResult full =
          retrieve_for_context(ctx, index, params, max_k);
      const GoldValueSet gold = extract_gold_values(turn, kb);

      detail::EvalTurn record;
      record.domain = d.domain;
      record.ref = turn.system;
      for (int rk : cfg.recall_ks) {
        RetrievalResult prefix;
        prefix.entries.assign(
            full.entries.begin(),
            full.entries.begin() +
                std::min<std::size_t>(rk, full.entries.size()));
        record.recalls[rk] = recall_at_k(prefix, gold, kb);
      }
      std::vector<const Entity*> entities;
      for (std::size_t i = 0;
           i < std::min<std::size_t>(cfg.k, full.entries.size()); ++i) {
        entities.push_back(kb.find(full.entries[i].entity_id));
      }
      const HypothesisSet hyps = adapter.generate(ctx, entities, cfg.beam_m);
      if (!hyps.hypotheses.empty()) {
        record.pred = hyps.hypotheses.front().text();
      }
      turns.push_back(std::move(record));
    }
  }

  EvalReport report;
  std::vector<const detail::EvalTurn*> all;
  std::map<std::string, std::vector<const detail::EvalTurn*>> grouped;
  for (const auto& t : turns) {
    all.push_back(&t);
    grouped[t.domain].push_back(&t);
  }
  report.overall = detail::aggregate_slice(all, lexicon, cfg.recall_ks);
  for (const auto& [domain, group] : grouped) {
    report.by_domain[domain] = detail::aggregate_slice(group, lexicon, cfg.recall_ks);
  }
  return report;
}

inline nlohmann::json slice_to_json(const EvalSlice& s) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : s.recall) recall[std::to_string(k)] = v;
  return nlohmann::json{{"turns", s.turns},
                        {"vacuous_turns", s.vacuous_turns},
                        {"bleu", s.bleu},
                        {"entity_precision", s.f1.precision},
                        {"entity_recall", s.f1.recall},
                        {"entity_f1", s.f1.f1},
                        {"recall_at", recall}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json domains = nlohmann::json::object();
  for (const auto& [name, slice] : r.by_domain) domains[name] = slice_to_json(slice);
  return nlohmann::json{{"overall", slice_to_json(r.overall)},
                        {"by_domain", domains}};
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  auto line = [&out](const std::string& name, const EvalSlice& s) {
    out << name << ": turns=" << s.turns << " (vacuous " << s.vacuous_turns
        << ")  BLEU=" << s.bleu << "  entity P/R/F1=" << s.f1.precision << "/"
        << s.f1.recall << "/" << s.f1.f1;
    for (const auto& [k, v] : s.recall) out << "  Re@" << k << "=" << v;
    out << "\n";
  };
  line("overall", r.overall);
  for (const auto& [name, slice] : r.by_domain) line("  " + name, slice);
  return out.str();
}

struct CheckpointMeta {
  std::int64_t step = 0;
  double entity_f1 = 0.0;
  double bleu = 0.0;
  double recall = 0.0;  // Re@k at the training k
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline nlohmann::json meta_to_json(const CheckpointMeta& m) {
  return nlohmann::json{{"step", m.step},         {"entity_f1", m.entity_f1},
                        {"bleu", m.bleu},         {"recall", m.recall},
                        {"seed", m.seed},         {"config_hash", m.config_hash}};
}

struct TrainResult {
  EncoderParams best_params;
  CheckpointMeta best_meta;
  EncoderParams final_params;
  std::vector<CheckpointMeta> validations;
  std::size_t examples_processed = 0;
  std::size_t adapter_failures = 0;
  std::size_t negatives_skipped = 0;
  double last_step_loss = 0.0;
};

namespace detail {

struct TrainExample {
  DialogueContext ctx;
  std::vector<int> ctx_ids;
  std::string reference;
};

}  // namespace detail

// Dual-feedback training. Retrieval runs against a params snapshot whose
// index is rebuilt every refresh_every optimizer steps; the loss re-encodes
// the query and the retained entities under live params each micro-step, so
// gradients are exact for the entities that matter. Steps before start_step
// are a pure delay: no data consumed, no updates. Best checkpoint by
// validation entity F1, ties to higher BLEU, then the earlier step.
inline TrainResult train(const std::vector<Dialogue>& train_dialogues,
                         const std::vector<Dialogue>& val_dialogues,
                         const KnowledgeBase& kb, GeneratorAdapter& adapter,
                         EncoderParams params, const TrainConfig& cfg) {
  cfg.validate();
  const FeedbackConfig fb_cfg = cfg.feedback();
  const EntityLexicon lexicon(kb);

  std::vector<detail::TrainExample> examples;
  for (const Dialogue& d : train_dialogues) {
    for (std::size_t t = 1; t <= d.turns.size(); ++t) {
      if (normalize_tokens(d.turns[t - 1].system).empty()) continue;
      detail::TrainExample ex;
      ex.ctx = build_context(d, static_cast<int>(t));
      ex.ctx_ids = tokenize(ex.ctx.query_text(), params.cfg.tokenizer);
      ex.reference = d.turns[t - 1].system;
      examples.push_back(std::move(ex));
    }
  }
  if (examples.empty()) throw DataError("train: no usable training turns");
  Rng rng(cfg.seed);
  rng.shuffle(examples);

  std::map<std::string, std::size_t> entity_pos;
  std::vector<std::vector<int>> entity_token_ids(kb.size());
  for (std::size_t i = 0; i < kb.size(); ++i) {
    entity_pos[kb.entities[i].id] = i;
    entity_token_ids[i] =
        tokenize(linearize_entity(kb.entities[i]), params.cfg.tokenizer);
  }

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  AdamState adam(params.cfg);
  EncoderParams snapshot_params;
  EntityIndex index;

  std::vector<int> recall_ks = {1, 3, cfg.k};
  std::sort(recall_ks.begin(), recall_ks.end());
  recall_ks.erase(std::unique(recall_ks.begin(), recall_ks.end()), recall_ks.end());
  const EvalConfig val_cfg{cfg.k, recall_ks, 1};

  TrainResult result;
  result.best_meta.entity_f1 = -1.0;
  const std::string chash = config_hash(cfg);
  std::size_t cursor = 0;

  auto run_validation = [&](std::int64_t step_done) {
    if (val_dialogues.empty()) return;
    const EvalReport report = evaluate(val_dialogues, kb, params, adapter, val_cfg);
    CheckpointMeta meta;
    meta.step = step_done;
    meta.entity_f1 = report.overall.f1.f1;
    meta.bleu = report.overall.bleu;
    meta.recall = report.overall.recall.at(cfg.k);
    meta.seed = cfg.seed;
    meta.config_hash = chash;
    result.validations.push_back(meta);
    const bool better = meta.entity_f1 > result.best_meta.entity_f1 ||
                        (meta.entity_f1 == result.best_meta.entity_f1 &&
                         meta.bleu > result.best_meta.bleu);
    if (better) {
      result.best_meta = meta;
      result.best_params = params;
    }
  };

  for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
    if (step < cfg.start_step) continue;
    if ((step - cfg.start_step) % cfg.refresh_every == 0) {
      snapshot_params = params;
      index = build_index(kb, snapshot_params);
    }

    ParamGradients grads(params.cfg);
    double step_loss = 0.0;
    std::size_t used = 0;
    const int micro_total = cfg.accumulation * cfg.batch_size;
    for (int micro = 0; micro < micro_total; ++micro) {
      const detail::TrainExample& ex = examples[cursor];
      cursor = (cursor + 1) % examples.size();
      try {
        const Embedding q_snap = encode(ex.ctx_ids, snapshot_params);
        const RetrievalResult topk =
            retrieve(q_snap, index, snapshot_params, cfg.k);

        std::vector<const Entity*> entities;
        std::vector<const std::vector<int>*> ent_ids;
        for (const ScoredEntity& se : topk.entries) {
          const std::size_t pos = entity_pos.at(se.entity_id);
          entities.push_back(&kb.entities[pos]);
          ent_ids.push_back(&entity_token_ids[pos]);
        }

        ForwardCache q_cache;
        const Embedding q_live = encode(ex.ctx_ids, params, &q_cache);
        std::vector<Embedding> e_live(entities.size());
        std::vector<ForwardCache> e_caches(entities.size());
        std::vector<double> scores(entities.size());
        for (std::size_t i = 0; i < entities.size(); ++i) {
          e_live[i] = encode(*ent_ids[i], params, &e_caches[i]);
          scores[i] = dot(q_live, e_live[i]);
        }

        const FeedbackResult fb = retriever_loss(
            ex.ctx, entities, scores, ex.reference, adapter, fb_cfg, &lexicon);
        if (fb.negative_skipped) ++result.negatives_skipped;
        step_loss += fb.loss;

        // dS_i flows to both sides of the dot product.
        Embedding dq(q_live.size(), 0.0);
        for (std::size_t i = 0; i < entities.size(); ++i) {
          for (std::size_t d = 0; d < dq.size(); ++d) {
            dq[d] += fb.d_scores[i] * e_live[i][d];
          }
        }
        backward_one(ex.ctx_ids, dq, params, q_cache, grads);
        for (std::size_t i = 0; i < entities.size(); ++i) {
          Embedding de(q_live.size());
          for (std::size_t d = 0; d < de.size(); ++d) {
            de[d] = fb.d_scores[i] * q_live[d];
          }
          backward_one(*ent_ids[i], de, params, e_caches[i], grads);
        }
        ++used;
        ++result.examples_processed;
      } catch (const AdapterError&) {
        ++result.adapter_failures;
        const std::size_t attempts =
            result.examples_processed + result.adapter_failures;
        if (result.adapter_failures > 10 &&
            static_cast<double>(result.adapter_failures) >
                cfg.max_failure_rate * static_cast<double>(attempts)) {
          throw DataError(
              "train: adapter failure rate exceeded after " +
              std::to_string(result.adapter_failures) + " failures in " +
              std::to_string(attempts) + " attempts");
        }
      }
    }
    if (used > 0) {
      grads.scale(1.0 / static_cast<double>(used));
      adam.step(params, grads, adam_cfg);
    }
    result.last_step_loss = used > 0 ? step_loss / static_cast<double>(used) : 0.0;

    if ((step + 1 - cfg.start_step) % cfg.validate_every == 0 ||
        step + 1 == cfg.total_steps) {
      run_validation(step + 1);
    }
  }

  result.final_params = params;
  if (result.best_meta.entity_f1 < 0.0) {
    result.best_params = result.final_params;
    result.best_meta = CheckpointMeta{cfg.total_steps, 0.0, 0.0, 0.0, cfg.seed, chash};
  }
  return result;
}

// Feedback record for one dialogue turn under the current params; the
// retrieval snapshot is the live params, so S matches what training would see
// right after a refresh.
inline FeedbackResult trace_example(const Dialogue& d, int turn,
                                    const KnowledgeBase& kb,
                                    const EncoderParams& params,
                                    GeneratorAdapter& adapter,
                                    const FeedbackConfig& cfg, int k) {
  const DialogueContext ctx = build_context(d, turn);
  const EntityIndex index = build_index(kb, params);
  const RetrievalResult topk = retrieve_for_context(ctx, index, params, k);
  std::vector<const Entity*> entities;
  std::vector<double> scores;
  for (const ScoredEntity& se : topk.entries) {
    entities.push_back(kb.find(se.entity_id));
    scores.push_back(se.score);
  }
  const EntityLexicon lexicon(kb);
  const Turn& t = d.turns[static_cast<std::size_t>(turn) - 1];
  return retriever_loss(ctx, entities, scores, t.system, adapter, cfg, &lexicon);
}

inline nlohmann::json feedback_to_json(const FeedbackResult& fb,
                                       const std::string& dialogue_id,
                                       int turn) {
  double norm = 0.0;
  for (double g : fb.d_scores) norm += g * g;
  return nlohmann::json{{"dialogue_id", dialogue_id},
                        {"turn", turn},
                        {"entity_ids", fb.entity_ids},
                        {"retrieval_scores", fb.retrieval_scores},
                        {"entity_scores", fb.entity_scores},
                        {"negative_scores", fb.negative_scores},
                        {"negative_text", fb.negative_text},
                        {"negative_skipped", fb.negative_skipped},
                        {"skip_reason", fb.skip_reason},
                        {"loss_pos", fb.loss_pos},
                        {"loss_neg", fb.loss_neg},
                        {"loss", fb.loss},
                        {"d_scores", fb.d_scores},
                        {"grad_norm", std::sqrt(norm)}};
}

// Sorted unique normalized tokens across dialogues and KB values, plus eos;
// the default base vocabulary for oracle runs on real data files.
inline std::vector<std::string> build_base_vocab(
    const std::vector<Dialogue>& dialogues, const KnowledgeBase& kb,
    const std::string& eos) {
  std::set<std::string> vocab;
  for (const Dialogue& d : dialogues) {
    for (const Turn& t : d.turns) {
      for (const auto& tok : normalize_tokens(t.user)) vocab.insert(tok);
      for (const auto& tok : normalize_tokens(t.system)) vocab.insert(tok);
    }
  }
  for (const Entity& e : kb.entities) {
    for (const auto& [attr, value] : e.attributes) {
      for (const auto& tok : normalize_tokens(value)) vocab.insert(tok);
    }
  }
  std::vector<std::string> out(vocab.begin(), vocab.end());
  out.push_back(eos);
  return out;
}

}  // namespace dualfb
