#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dualfb/corpus.hpp"
#include "dualfb/errors.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

struct Hypothesis {
  std::vector<std::string> tokens;  // never contains the eos marker
  double log_score = 0.0;  // length-normalized log prob; parsed confidence for LLM adapters

  std::string text() const { return join_tokens(tokens); }
};

// Ranked beam output: log_score non-increasing, token sequences pairwise
// distinct. `truncated` marks that fewer than the requested number of
// distinct hypotheses exist.
struct HypothesisSet {
  std::vector<Hypothesis> hypotheses;
  bool truncated = false;

  std::size_t size() const { return hypotheses.size(); }
};

// Black-box generator contract: per-entity response scoring plus m-best
// response generation. Implementations must not expose gradients; feedback
// treats these outputs as constants.
class GeneratorAdapter {
 public:
  virtual ~GeneratorAdapter() = default;

  // Length-normalized log p(response | ctx, entity) for probability-bearing
  // adapters; a relevance score in [0,1] for the LLM adapter.
  virtual double score_response(const DialogueContext& ctx, const Entity& entity,
                                const std::string& response) = 0;

  // Up to m distinct hypotheses conditioned on ctx and the entity list.
  virtual HypothesisSet generate(const DialogueContext& ctx,
                                 const std::vector<const Entity*>& entities,
                                 int m) = 0;

  // Scores all entities against one response. Default is a per-entity loop;
  // adapters with a native list protocol override this with a single call.
  virtual std::vector<double> score_entities_batch(
      const DialogueContext& ctx, const std::vector<const Entity*>& entities,
      const std::string& response) {
    std::vector<double> out;
    out.reserve(entities.size());
    for (const Entity* e : entities) {
      out.push_back(score_response(ctx, *e, response));
    }
    return out;
  }

  virtual std::string name() const = 0;
};

// Copy-mixture unigram generator. Per-token distribution is a weighted
// mixture of three uniforms (entity value tokens, context tokens, base
// vocabulary), renormalized when a positive-weight component has empty
// support. Prefix-independent by construction, so beam search is exactly
// checkable against brute-force enumeration.
struct OracleGenConfig {
  double lambda_entity = 0.6;
  double lambda_context = 0.2;
  double lambda_uniform = 0.2;
  std::vector<std::string> base_vocab;  // must contain eos
  std::string eos = "<eos>";
  int max_len = 8;
  int beam_width = 16;
  double floor_log_prob = -30.0;  // per-token log prob for out-of-support tokens

  void validate() const {
    if (lambda_entity < 0 || lambda_context < 0 || lambda_uniform < 0) {
      throw DataError("oracle config: negative mixture weight");
    }
    const double sum = lambda_entity + lambda_context + lambda_uniform;
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DataError("oracle config: mixture weights sum to " +
                      std::to_string(sum) + ", expected 1");
    }
    if (std::find(base_vocab.begin(), base_vocab.end(), eos) == base_vocab.end()) {
      throw DataError("oracle config: base_vocab must contain the eos token");
    }
    for (const std::string& t : base_vocab) {
      if (t == eos) continue;
      const auto norm = normalize_tokens(t);
      if (norm.size() != 1 || norm[0] != t) {
        throw DataError("oracle config: base_vocab token '" + t +
                        "' is not a normalized token");
      }
    }
    if (max_len < 1) throw DataError("oracle config: max_len must be >= 1");
    if (beam_width < 1) throw DataError("oracle config: beam_width must be >= 1");
  }
};

// Unigram distribution with explicit support; tokens ascending, all probs > 0.
struct TokenDist {
  std::vector<std::string> tokens;
  std::vector<double> probs;

  double prob_of(const std::string& tok) const {
    const auto it = std::lower_bound(tokens.begin(), tokens.end(), tok);
    if (it == tokens.end() || *it != tok) return 0.0;
    return probs[static_cast<std::size_t>(it - tokens.begin())];
  }
};

class OracleGenerator : public GeneratorAdapter {
 public:
  explicit OracleGenerator(OracleGenConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  const OracleGenConfig& config() const { return cfg_; }
  std::string name() const override { return "oracle"; }

  // Mixture distribution for one decoding position. The model is unigram, so
  // the same distribution applies at every position regardless of prefix.
  TokenDist token_dist(const DialogueContext& ctx,
                       const std::vector<const Entity*>& entities) const {
    std::set<std::string> entity_toks;
    for (const Entity* e : entities) {
      for (const auto& [attr, value] : e->attributes) {
        for (const std::string& t : normalize_tokens(value)) entity_toks.insert(t);
      }
    }
    std::set<std::string> context_toks;
    for (const auto& seg : ctx.segments) {
      for (const std::string& t : normalize_tokens(seg.text)) context_toks.insert(t);
    }
    const std::set<std::string> vocab_toks(cfg_.base_vocab.begin(),
                                           cfg_.base_vocab.end());

    struct Component {
      const std::set<std::string>* support;
      double weight;
    };
    std::vector<Component> live;
    for (const Component c : {Component{&entity_toks, cfg_.lambda_entity},
                              Component{&context_toks, cfg_.lambda_context},
                              Component{&vocab_toks, cfg_.lambda_uniform}}) {
      if (c.weight > 0.0 && !c.support->empty()) live.push_back(c);
    }
    if (live.empty()) throw DataError("token_dist: empty mixture support");
    double total_weight = 0.0;
    for (const Component& c : live) total_weight += c.weight;

    std::map<std::string, double> p;
    for (const Component& c : live) {
      const double share =
          c.weight / total_weight / static_cast<double>(c.support->size());
      for (const std::string& t : *c.support) p[t] += share;
    }
    TokenDist dist;
    dist.tokens.reserve(p.size());
    dist.probs.reserve(p.size());
    for (const auto& [tok, prob] : p) {
      dist.tokens.push_back(tok);
      dist.probs.push_back(prob);
    }
    return dist;
  }

  double score_response(const DialogueContext& ctx, const Entity& entity,
                        const std::string& response) override {
    return score_with(token_dist(ctx, {&entity}), response);
  }

  double score_with(const TokenDist& dist, const std::string& response) const {
    const auto toks = normalize_tokens(response);
    if (toks.empty()) throw DataError("score_response: empty response");
    double sum = 0.0;
    for (const std::string& t : toks) {
      const double p = dist.prob_of(t);
      sum += p > 0.0 ? std::log(p) : cfg_.floor_log_prob;
    }
    return sum / static_cast<double>(toks.size());
  }

  HypothesisSet generate(const DialogueContext& ctx,
                         const std::vector<const Entity*>& entities,
                         int m) override {
    return beam_search(ctx, entities, m, std::max(cfg_.beam_width, m));
  }

  // Hypotheses ranked by total sequence probability
  //   p(y) = Π p(y_j) · (|y| < max_len ? p(eos) : 1),
  // ties by lexicographic token order. Stored log_score is the
  // length-normalized token sum without the eos factor, matching
  // score_response on the hypothesis text.
  HypothesisSet beam_search(const DialogueContext& ctx,
                            const std::vector<const Entity*>& entities, int m,
                            int width) const {
    if (m < 1) throw DataError("beam_search: m must be >= 1");
    if (width < 1) throw DataError("beam_search: width must be >= 1");
    const TokenDist dist = token_dist(ctx, entities);
    return finalize(enumerate_beam(dist, width), m);
  }

  // Brute-force top-m over every sequence of length 1..max_len; the oracle
  // against which beam_search is tested.
  HypothesisSet exhaustive_topM(const DialogueContext& ctx,
                                const std::vector<const Entity*>& entities,
                                int m) const {
    if (m < 1) throw DataError("exhaustive_topM: m must be >= 1");
    const TokenDist dist = token_dist(ctx, entities);
    std::vector<std::size_t> step_idx;
    for (std::size_t i = 0; i < dist.tokens.size(); ++i) {
      if (dist.tokens[i] != cfg_.eos) step_idx.push_back(i);
    }
    double space = 0.0;
    double layer = 1.0;
    for (int len = 1; len <= cfg_.max_len; ++len) {
      layer *= static_cast<double>(step_idx.size());
      space += layer;
    }
    if (space > 1e6) {
      throw DataError("exhaustive_topM: search space of " +
                      std::to_string(space) + " sequences is too large");
    }

    const double p_eos = dist.prob_of(cfg_.eos);
    std::vector<Candidate> done;
    for (int len = 1; len <= cfg_.max_len; ++len) {
      if (len < cfg_.max_len && p_eos <= 0.0) continue;  // unterminable length
      if (step_idx.empty()) break;
      std::vector<std::size_t> odo(static_cast<std::size_t>(len), 0);
      while (true) {
        Candidate c;
        c.tokens.reserve(odo.size());
        for (std::size_t i : odo) {
          c.tokens.push_back(dist.tokens[step_idx[i]]);
          c.sum += std::log(dist.probs[step_idx[i]]);
        }
        c.total = c.sum + (len < cfg_.max_len ? std::log(p_eos) : 0.0);
        done.push_back(std::move(c));
        std::size_t pos = odo.size();
        while (pos > 0 && odo[pos - 1] + 1 == step_idx.size()) odo[--pos] = 0;
        if (pos == 0) break;
        ++odo[pos - 1];
      }
    }
    return finalize(std::move(done), m);
  }

 private:
  struct Candidate {
    std::vector<std::string> tokens;
    double sum = 0.0;    // Σ log p(token), eos excluded
    double total = 0.0;  // sum + eos termination factor where applicable
  };

  std::vector<Candidate> enumerate_beam(const TokenDist& dist, int width) const {
    const double p_eos = dist.prob_of(cfg_.eos);
    std::vector<Candidate> alive{{{}, 0.0, 0.0}};
    std::vector<Candidate> done;
    for (int depth = 1; depth <= cfg_.max_len; ++depth) {
      std::vector<Candidate> next;
      for (const Candidate& c : alive) {
        for (std::size_t i = 0; i < dist.tokens.size(); ++i) {
          if (dist.tokens[i] == cfg_.eos) continue;
          Candidate ext;
          ext.tokens = c.tokens;
          ext.tokens.push_back(dist.tokens[i]);
          ext.sum = c.sum + std::log(dist.probs[i]);
          next.push_back(std::move(ext));
        }
      }
      std::sort(next.begin(), next.end(), [](const Candidate& a, const Candidate& b) {
        if (a.sum != b.sum) return a.sum > b.sum;
        return a.tokens < b.tokens;
      });
      if (next.size() > static_cast<std::size_t>(width)) {
        next.resize(static_cast<std::size_t>(width));
      }
      for (const Candidate& c : next) {
        if (depth == cfg_.max_len) {
          done.push_back({c.tokens, c.sum, c.sum});
        } else if (p_eos > 0.0) {
          done.push_back({c.tokens, c.sum, c.sum + std::log(p_eos)});
        }
      }
      alive = std::move(next);
      if (alive.empty()) break;
    }
    return done;
  }

  HypothesisSet finalize(std::vector<Candidate> done, int m) const {
    std::sort(done.begin(), done.end(), [](const Candidate& a, const Candidate& b) {
      if (a.total != b.total) return a.total > b.total;
      return a.tokens < b.tokens;
    });
    HypothesisSet out;
    const std::size_t take = std::min<std::size_t>(m, done.size());
    out.truncated = done.size() < static_cast<std::size_t>(m);
    out.hypotheses.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      out.hypotheses.push_back(
          {done[i].tokens,
           done[i].sum / static_cast<double>(done[i].tokens.size())});
    }
    std::sort(out.hypotheses.begin(), out.hypotheses.end(),
              [](const Hypothesis& a, const Hypothesis& b) {
                if (a.log_score != b.log_score) return a.log_score > b.log_score;
                return a.tokens < b.tokens;
              });
    return out;
  }

  OracleGenConfig cfg_;
};

}  // namespace dualfb
