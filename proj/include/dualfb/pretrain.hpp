#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dualfb/corpus.hpp"
#include "dualfb/encoder.hpp"
#include "dualfb/errors.hpp"
#include "dualfb/optim.hpp"
#include "dualfb/rng.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

struct DistantLabel {
  std::string entity_id;
  int match_count = 0;
};

// Labels a context with the entity whose attribute values occur most often in
// context + response (token-boundary matches, overlapping occurrences all
// counted). Ties go to the ascending entity id; no label when nothing matches.
inline std::optional<DistantLabel> distant_label(const DialogueContext& ctx,
                                                 const std::string& response,
                                                 const KnowledgeBase& kb) {
  if (kb.entities.empty()) throw DataError("distant_label: empty knowledge base");
  std::vector<std::string> haystack;
  for (const auto& seg : ctx.segments) {
    for (const auto& t : normalize_tokens(seg.text)) haystack.push_back(t);
  }
  for (const auto& t : normalize_tokens(response)) haystack.push_back(t);

  std::optional<DistantLabel> best;
  for (const Entity& e : kb.entities) {
    int count = 0;
    for (const auto& [attr, value] : e.attributes) {
      const auto value_tokens = normalize_tokens(value);
      if (value_tokens.empty()) continue;
      count += static_cast<int>(find_token_matches(haystack, value_tokens).size());
    }
    if (count == 0) continue;
    if (!best || count > best->match_count ||
        (count == best->match_count && e.id < best->entity_id)) {
      best = DistantLabel{e.id, count};
    }
  }
  return best;
}

struct InfoNCEConfig {
  double tau = 0.05;
  int batch_size = 128;
  int epochs = 10;
  double lr = 5e-5;  // linear decay to 0 across the run
  double weight_decay = 0.01;

  void validate() const {
    if (tau <= 0.0) throw DataError("infonce: tau must be positive");
    if (batch_size < 2) throw DataError("infonce: batch size must be >= 2");
    if (epochs < 1) throw DataError("infonce: epochs must be >= 1");
    if (lr <= 0.0) throw DataError("infonce: learning rate must be positive");
    if (weight_decay < 0.0) throw DataError("infonce: negative weight decay");
  }
};

struct InfoNCEGrad {
  double loss = 0.0;
  std::vector<Embedding> d_queries;
  std::vector<Embedding> d_positives;
};

// Contrastive loss with in-batch negatives:
//   L = −(1/B) Σ_j log [exp(q_j·p_j/τ) / Σ_k exp(q_j·p_k/τ)].
// Exact gradients for every query and positive embedding.
inline InfoNCEGrad infonce_loss(const std::vector<Embedding>& queries,
                                const std::vector<Embedding>& positives,
                                double tau) {
  const std::size_t b = queries.size();
  if (b < 2) throw DataError("infonce_loss: batch size must be >= 2");
  if (positives.size() != b) throw DataError("infonce_loss: query/positive count mismatch");
  if (tau <= 0.0) throw DataError("infonce_loss: tau must be positive");
  const std::size_t dim = queries[0].size();

  InfoNCEGrad out;
  out.d_queries.assign(b, Embedding(dim, 0.0));
  out.d_positives.assign(b, Embedding(dim, 0.0));

  for (std::size_t j = 0; j < b; ++j) {
    if (queries[j].size() != dim || positives[j].size() != dim) {
      throw DataError("infonce_loss: embedding dimension mismatch");
    }
    std::vector<double> logits(b);
    double mx = -1e300;
    for (std::size_t k = 0; k < b; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += queries[j][d] * positives[k][d];
      logits[k] = s / tau;
      mx = std::max(mx, logits[k]);
    }
    double denom = 0.0;
    for (double& l : logits) {
      l -= mx;
      denom += std::exp(l);
    }
    out.loss += -(logits[j] - std::log(denom)) / static_cast<double>(b);

    // dL/dlogit_jk = (softmax_k − δ_jk)/B; chain through the scaled dot.
    for (std::size_t k = 0; k < b; ++k) {
      const double soft = std::exp(logits[k]) / denom;
      const double dz = (soft - (k == j ? 1.0 : 0.0)) / static_cast<double>(b);
      const double coef = dz / tau;
      for (std::size_t d = 0; d < dim; ++d) {
        out.d_queries[j][d] += coef * positives[k][d];
        out.d_positives[k][d] += coef * queries[j][d];
      }
    }
  }
  return out;
}

struct LabeledPair {
  std::string context_text;
  std::string entity_id;
  std::string entity_text;
};

// Collects (context, labeled entity) pairs across all dialogue turns with a
// non-empty response; zero-match contexts are dropped.
inline std::vector<LabeledPair> collect_labeled_pairs(
    const std::vector<Dialogue>& dialogues, const KnowledgeBase& kb) {
  std::vector<LabeledPair> pairs;
  for (const Dialogue& d : dialogues) {
    for (std::size_t t = 1; t <= d.turns.size(); ++t) {
      const Turn& turn = d.turns[t - 1];
      if (normalize_tokens(turn.system).empty()) continue;
      const DialogueContext ctx = build_context(d, static_cast<int>(t));
      const auto label = distant_label(ctx, turn.system, kb);
      if (!label) continue;
      const Entity* e = kb.find(label->entity_id);
      pairs.push_back({ctx.query_text(), label->entity_id, linearize_entity(*e)});
    }
  }
  return pairs;
}

// Shuffles pair indices and packs them into full batches with no repeated
// positive entity inside a batch (a repeat would be a false in-batch
// negative). Deferred examples roll into later batches; a remainder that
// cannot fill a clean batch is dropped for the epoch.
inline std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<LabeledPair>& pairs, int batch_size, Rng& rng) {
  std::vector<std::size_t> pool(pairs.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  rng.shuffle(pool);

  std::vector<std::vector<std::size_t>> batches;
  while (pool.size() >= static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> batch;
    std::vector<std::size_t> rest;
    std::set<std::string> used;
    for (std::size_t idx : pool) {
      if (batch.size() < static_cast<std::size_t>(batch_size) &&
          used.insert(pairs[idx].entity_id).second) {
        batch.push_back(idx);
      } else {
        rest.push_back(idx);
      }
    }
    if (batch.size() < static_cast<std::size_t>(batch_size)) break;
    batches.push_back(std::move(batch));
    pool = std::move(rest);
  }
  return batches;
}

struct PretrainResult {
  EncoderParams params;
  std::vector<double> epoch_mean_loss;
  std::size_t labeled_pairs = 0;
};

// Distant-supervision pre-training: InfoNCE over labeled (context, entity)
// pairs, Adam with decoupled weight decay and a linear lr schedule.
// Deterministic given the seed.
inline PretrainResult pretrain_loop(const std::vector<Dialogue>& dialogues,
                                    const KnowledgeBase& kb,
                                    EncoderParams params,
                                    const InfoNCEConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  const std::vector<LabeledPair> pairs = collect_labeled_pairs(dialogues, kb);
  if (pairs.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw DataError("pretrain: only " + std::to_string(pairs.size()) +
                    " labeled pairs for batch size " +
                    std::to_string(cfg.batch_size));
  }

  std::vector<std::vector<int>> context_ids;
  std::vector<std::vector<int>> entity_ids;
  context_ids.reserve(pairs.size());
  entity_ids.reserve(pairs.size());
  for (const LabeledPair& p : pairs) {
    context_ids.push_back(tokenize(p.context_text, params.cfg.tokenizer));
    entity_ids.push_back(tokenize(p.entity_text, params.cfg.tokenizer));
  }

  const std::int64_t schedule_total =
      static_cast<std::int64_t>(cfg.epochs) *
      static_cast<std::int64_t>(pairs.size() / static_cast<std::size_t>(cfg.batch_size));

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamState adam(params.cfg);
  Rng rng(seed);

  PretrainResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(pairs, cfg.batch_size, rng);
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      std::vector<Embedding> queries(batch.size());
      std::vector<Embedding> positives(batch.size());
      std::vector<ForwardCache> q_caches(batch.size());
      std::vector<ForwardCache> p_caches(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) {
        queries[j] = encode(context_ids[batch[j]], params, &q_caches[j]);
        positives[j] = encode(entity_ids[batch[j]], params, &p_caches[j]);
      }
      const InfoNCEGrad g = infonce_loss(queries, positives, cfg.tau);
      epoch_loss += g.loss;

      ParamGradients grads(params.cfg);
      for (std::size_t j = 0; j < batch.size(); ++j) {
        backward_one(context_ids[batch[j]], g.d_queries[j], params, q_caches[j], grads);
        backward_one(entity_ids[batch[j]], g.d_positives[j], params, p_caches[j], grads);
      }
      adam.step(params, grads, adam_cfg,
                linear_decay_lr(cfg.lr, step, schedule_total));
      ++step;
    }
    result.epoch_mean_loss.push_back(
        batches.empty() ? 0.0 : epoch_loss / static_cast<double>(batches.size()));
  }
  result.labeled_pairs = pairs.size();
  result.params = std::move(params);
  return result;
}

}  // namespace dualfb
