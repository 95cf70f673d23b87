#pragma once

#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

#include "dualfb/corpus.hpp"
#include "dualfb/generator.hpp"
#include "dualfb/rng.hpp"

namespace dualfb {

// Generated dataset-level corpora with exactly known gold entities, used by
// the end-to-end training checks and the demo programs.
struct SyntheticConfig {
  int entities = 200;   // planted corpus size
  int pairs = 30;       // confusable corpus: near-duplicate pairs (2 entities each)
  int dialogues = 500;
  double val_fraction = 0.1;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  KnowledgeBase kb;
  std::vector<Dialogue> train;
  std::vector<Dialogue> val;
  OracleGenConfig oracle;
};

namespace detail {

inline const std::vector<std::string>& area_pool() {
  static const std::vector<std::string> pool = {
      "north",    "south",    "east",    "west",    "centre",
      "riverside","uptown",   "downtown","midtown", "harbour"};
  return pool;
}

inline const std::vector<std::string>& food_pool() {
  static const std::vector<std::string> pool = {
      "chinese",  "indian",   "italian",  "thai",      "mexican",
      "french",   "japanese", "korean",   "greek",     "turkish",
      "spanish",  "vietnamese","lebanese","persian",   "ethiopian",
      "german",   "british",  "polish",   "moroccan",  "brazilian"};
  return pool;
}

inline const std::vector<std::string>& price_pool() {
  static const std::vector<std::string> pool = {"cheap", "moderate", "expensive",
                                                "budget", "premium"};
  return pool;
}

inline std::string padded(const char* prefix, int i, const char* fmt = "%s%03d") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), fmt, prefix, i);
  return buf;
}

inline Entity make_entity(const std::string& id, const std::string& name,
                          const std::string& area, const std::string& food,
                          const std::string& price, const std::string& phone) {
  return Entity{id,
                {{"name", name},
                 {"area", area},
                 {"food", food},
                 {"price", price},
                 {"phone", phone}}};
}

inline OracleGenConfig synthetic_oracle(std::vector<std::string> template_words) {
  OracleGenConfig cfg;
  cfg.lambda_entity = 0.6;
  cfg.lambda_context = 0.2;
  cfg.lambda_uniform = 0.2;
  cfg.eos = "<eos>";
  template_words.push_back(cfg.eos);
  cfg.base_vocab = std::move(template_words);
  cfg.max_len = 6;
  cfg.beam_width = 16;
  return cfg;
}

inline void split(std::vector<Dialogue> all, double val_fraction,
                  SyntheticCorpus& out) {
  const std::size_t val_count = static_cast<std::size_t>(
      static_cast<double>(all.size()) * val_fraction);
  const std::size_t train_count = all.size() - val_count;
  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(train_count));
  out.val.assign(all.begin() + static_cast<std::ptrdiff_t>(train_count), all.end());
}

}  // namespace detail

// Each dialogue is a single request turn whose reference response carries
// exactly one entity's values. The corpus shape is tuned so that dual
// feedback has a clean learning signal:
//
//  - food, area, and price come from shared pools while name and phone are
//    unique, so generator posteriors over a candidate set grade candidates by
//    how many of the reference's values they share. Feedback is informative
//    even on examples whose candidate set misses the gold entity, and the
//    (food, area) pair still identifies every entity uniquely.
//  - User turns are terse keyword queries made of alias surface forms
//    ("britishstyle", "northside", "spot017") that never occur in the
//    knowledge base or in responses. An untrained encoder has no token
//    overlap to exploit and ranks near chance, and query embeddings are
//    dominated by example-specific alias rows; filler-heavy utterances make
//    retrieval nearly context-independent, in which case training can only
//    equalize a global popularity ranking.
//  - References list the gold values and nothing else. Scores are
//    length-normalized, so every non-value token would dilute the per-token
//    evidence and flatten the generator distribution the retriever distills.
inline SyntheticCorpus make_planted_corpus(const SyntheticConfig& cfg = {}) {
  SyntheticCorpus corpus;
  const auto& areas = detail::area_pool();
  const auto& foods = detail::food_pool();
  const auto& prices = detail::price_pool();

  corpus.kb.level = KbLevel::dataset;
  for (int i = 0; i < cfg.entities; ++i) {
    corpus.kb.entities.push_back(detail::make_entity(
        detail::padded("e", i), detail::padded("venue", i),
        areas[static_cast<std::size_t>(i / 20) % areas.size()],
        foods[static_cast<std::size_t>(i) % foods.size()],
        prices[static_cast<std::size_t>(i) % prices.size()],
        detail::padded("555", i, "%s%04d")));
  }

  std::vector<Dialogue> all;
  for (int j = 0; j < cfg.dialogues; ++j) {
    const int gi = j % cfg.entities;
    const Entity& gold = corpus.kb.entities[static_cast<std::size_t>(gi)];
    const std::string& name = gold.attributes[0].second;
    const std::string& area = gold.attributes[1].second;
    const std::string& food = gold.attributes[2].second;
    const std::string& price = gold.attributes[3].second;
    const std::string& phone = gold.attributes[4].second;

    Dialogue d;
    d.id = detail::padded("d", j);
    d.domain = "restaurant";
    const std::string user = detail::padded("spot", gi) + " " + food +
                             "style " + area + "side " + price + "ish";
    const std::string sys =
        name + " " + food + " " + area + " " + price + " " + phone;
    d.turns.push_back({user, sys, std::vector<std::string>{gold.id}});
    all.push_back(std::move(d));
  }
  detail::split(std::move(all), cfg.val_fraction, corpus);

  corpus.oracle = detail::synthetic_oracle({"please", "thanks"});
  return corpus;
}

// Near-duplicate pairs: two entities identical in every attribute except the
// name. The first turn mentions the partner's name before the response
// corrects to the gold entity, so later contexts contain both names; pair
// roles alternate across dialogues so each member serves as gold.
inline SyntheticCorpus make_confusable_corpus(const SyntheticConfig& cfg = {}) {
  SyntheticCorpus corpus;
  const auto& areas = detail::area_pool();
  const auto& foods = detail::food_pool();
  const auto& prices = detail::price_pool();

  corpus.kb.level = KbLevel::dataset;
  for (int p = 0; p < cfg.pairs; ++p) {
    const std::string area = areas[static_cast<std::size_t>(p / 20) % areas.size()];
    const std::string food = foods[static_cast<std::size_t>(p) % foods.size()];
    const std::string price = prices[static_cast<std::size_t>(p) % prices.size()];
    const std::string phone = detail::padded("666", p, "%s%04d");
    corpus.kb.entities.push_back(detail::make_entity(
        detail::padded("e", 2 * p), detail::padded("alpha", p), area, food,
        price, phone));
    corpus.kb.entities.push_back(detail::make_entity(
        detail::padded("e", 2 * p + 1), detail::padded("bravo", p), area, food,
        price, phone));
  }

  std::vector<Dialogue> all;
  for (int j = 0; j < cfg.dialogues; ++j) {
    const int p = j % cfg.pairs;
    const bool first_is_gold = (j / cfg.pairs) % 2 == 0;
    const Entity& gold =
        corpus.kb.entities[static_cast<std::size_t>(2 * p + (first_is_gold ? 0 : 1))];
    const Entity& other =
        corpus.kb.entities[static_cast<std::size_t>(2 * p + (first_is_gold ? 1 : 0))];
    const std::string gold_name = gold.attributes[0].second;
    const std::string other_name = other.attributes[0].second;
    const std::string area = gold.attributes[1].second;
    const std::string food = gold.attributes[2].second;
    const std::string price = gold.attributes[3].second;
    const std::string phone = gold.attributes[4].second;

    Dialogue d;
    d.id = detail::padded("d", j);
    d.domain = "restaurant";
    d.turns.push_back(
        {"how about " + other_name + " do they serve " + food +
             " food in the " + area + " area",
         "i would suggest " + gold_name + " instead it serves " + food +
             " food in the " + area + " area at a " + price + " price",
         std::vector<std::string>{gold.id}});
    d.turns.push_back({"ok what is the phone number there",
                       "the phone number of " + gold_name + " is " + phone,
                       std::vector<std::string>{gold.id}});
    all.push_back(std::move(d));
  }
  detail::split(std::move(all), cfg.val_fraction, corpus);

  corpus.oracle = detail::synthetic_oracle(
      {"how",  "about", "do",   "they", "serve",  "food", "in",
       "the",  "area",  "i",    "would","suggest","instead", "it",
       "serves","at",   "a",    "price","ok",     "what", "is",
       "phone","number","there","of"});
  return corpus;
}

}  // namespace dualfb
