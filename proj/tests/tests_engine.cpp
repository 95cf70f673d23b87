// Unit tests: oracle generator, metrics, dual-feedback losses, negative
// selection, distant-supervision pretraining.

#include <gtest/gtest.h>

#include <cmath>

#include "dualfb/dualfb.hpp"

using namespace dualfb;

namespace {

DialogueContext context_of(const std::string& user) {
  Dialogue d;
  d.id = "d";
  d.turns.push_back({user, "placeholder", std::nullopt});
  return build_context(d, 1);
}

Entity entity_with_values(std::vector<std::string> values) {
  Entity e;
  e.id = "e";
  for (std::size_t i = 0; i < values.size(); ++i) {
    e.attributes.push_back({"attr" + std::to_string(i), values[i]});
  }
  return e;
}

OracleGenConfig oracle_cfg(double le, double lc, double lu,
                           std::vector<std::string> vocab, int max_len = 4) {
  OracleGenConfig cfg;
  cfg.lambda_entity = le;
  cfg.lambda_context = lc;
  cfg.lambda_uniform = lu;
  cfg.base_vocab = std::move(vocab);
  cfg.base_vocab.push_back(cfg.eos);
  cfg.max_len = max_len;
  return cfg;
}

std::vector<std::string> ten_vocab() {
  // Nine words; oracle_cfg appends eos for ten tokens total.
  return {"a", "b", "w3", "w4", "w5", "w6", "w7", "w8", "w9"};
}

// Fixed-score stub used to exercise adapter-facing checks.
class StubAdapter : public GeneratorAdapter {
 public:
  std::vector<double> batch_result;
  double score_response(const DialogueContext&, const Entity&,
                        const std::string&) override {
    return 0.0;
  }
  HypothesisSet generate(const DialogueContext&,
                         const std::vector<const Entity*>&, int) override {
    return {};
  }
  std::vector<double> score_entities_batch(const DialogueContext&,
                                           const std::vector<const Entity*>&,
                                           const std::string&) override {
    return batch_result;
  }
  std::string name() const override { return "stub"; }
};

}  // namespace

// ---------------------------------------------------------------------------
// Oracle generator: scoring
// ---------------------------------------------------------------------------

TEST(OracleScore, MixtureWorkedExample) {
  // p("a") = 0.5 * 1/2 (entity: {a, b}) + 0.5 * 1/10 (vocab of ten) = 0.3.
  OracleGenerator gen(oracle_cfg(0.5, 0.0, 0.5, ten_vocab()));
  const Entity e = entity_with_values({"a", "b"});
  const DialogueContext ctx;  // empty context; its component has zero weight
  EXPECT_NEAR(gen.score_response(ctx, e, "a"), std::log(0.3), 1e-12);
}

TEST(OracleScore, UniformOnly) {
  OracleGenerator gen(oracle_cfg(0.0, 0.0, 1.0, ten_vocab()));
  const Entity e = entity_with_values({"a"});
  EXPECT_NEAR(gen.score_response({}, e, "w3"), std::log(0.1), 1e-12);
  EXPECT_NEAR(gen.score_response({}, e, "w3 w4"), std::log(0.1), 1e-12);
}

TEST(OracleScore, EmptySupportComponentRenormalized) {
  // Context weight 0.2 with no context tokens: the remaining components are
  // rescaled to sum to one, so p("a") = (0.6/0.8)/2 + (0.2/0.8)/10 = 0.4.
  OracleGenerator gen(oracle_cfg(0.6, 0.2, 0.2, ten_vocab()));
  const Entity e = entity_with_values({"a", "b"});
  EXPECT_NEAR(gen.score_response({}, e, "a"), std::log(0.4), 1e-12);
}

TEST(OracleScore, ContextComponentCounts) {
  // "a" draws from all three components once the context is {a, there}:
  // p = 0.6/2 (entity {a, b}) + 0.2/2 (context) + 0.2/10 (vocab) = 0.42.
  OracleGenerator gen(oracle_cfg(0.6, 0.2, 0.2, ten_vocab()));
  const Entity e = entity_with_values({"a", "b"});
  const DialogueContext ctx = context_of("a there");
  EXPECT_NEAR(gen.score_response(ctx, e, "a"), std::log(0.42), 1e-12);
}

TEST(OracleScore, FloorForOutOfSupportTokens) {
  OracleGenerator gen(oracle_cfg(0.5, 0.0, 0.5, ten_vocab()));
  const Entity e = entity_with_values({"a", "b"});
  const double expected = (std::log(0.3) + -30.0) / 2.0;
  EXPECT_NEAR(gen.score_response({}, e, "a zzz"), expected, 1e-12);
}

TEST(OracleScore, EmptyResponseThrows) {
  OracleGenerator gen(oracle_cfg(0.0, 0.0, 1.0, ten_vocab()));
  const Entity e = entity_with_values({"a"});
  EXPECT_THROW(gen.score_response({}, e, ""), DataError);
  EXPECT_THROW(gen.score_response({}, e, "   "), DataError);
}

TEST(OracleScore, ConfigValidation) {
  EXPECT_THROW(OracleGenerator(oracle_cfg(0.5, 0.0, 0.4, ten_vocab())),
               DataError);  // weights sum to 0.9
  OracleGenConfig no_eos = oracle_cfg(0.0, 0.0, 1.0, ten_vocab());
  no_eos.base_vocab.pop_back();
  EXPECT_THROW(OracleGenerator(std::move(no_eos)), DataError);
  OracleGenConfig bad_token = oracle_cfg(0.0, 0.0, 1.0, {"Two Words"});
  EXPECT_THROW(OracleGenerator(std::move(bad_token)), DataError);
}

// ---------------------------------------------------------------------------
// Oracle generator: beam search
// ---------------------------------------------------------------------------

TEST(OracleBeam, MatchesExhaustiveOnSmallConfig) {
  OracleGenerator gen(oracle_cfg(0.5, 0.0, 0.5, {"a", "b", "c"}, 3));
  const Entity e = entity_with_values({"a", "b"});
  const std::vector<const Entity*> ents = {&e};
  const HypothesisSet beam = gen.beam_search({}, ents, 10, 256);
  const HypothesisSet full = gen.exhaustive_topM({}, ents, 10);
  ASSERT_EQ(beam.size(), full.size());
  for (std::size_t i = 0; i < beam.size(); ++i) {
    EXPECT_EQ(beam.hypotheses[i].tokens, full.hypotheses[i].tokens) << i;
    EXPECT_NEAR(beam.hypotheses[i].log_score, full.hypotheses[i].log_score,
                1e-12);
  }
}

TEST(OracleBeam, ScoresSelfConsistent) {
  OracleGenerator gen(oracle_cfg(0.6, 0.2, 0.2, {"a", "b", "c"}, 3));
  const Entity e = entity_with_values({"a", "b"});
  const DialogueContext ctx = context_of("b c");
  const HypothesisSet hyps = gen.generate(ctx, {&e}, 8);
  ASSERT_GT(hyps.size(), 0u);
  for (const Hypothesis& h : hyps.hypotheses) {
    EXPECT_NEAR(gen.score_response(ctx, e, h.text()), h.log_score, 1e-12);
  }
}

TEST(OracleBeam, TerminationAndLexTies) {
  // Single usable token x with p = 1/2: sequences [x] (with eos factor) and
  // [x, x] (at max length, no factor) have equal total probability; the
  // lexicographically smaller [x] ranks first.
  OracleGenerator gen(oracle_cfg(0.0, 0.0, 1.0, {"x"}, 2));
  const Entity e = entity_with_values({"irrelevant"});
  const HypothesisSet hyps = gen.generate({}, {&e}, 3);
  ASSERT_EQ(hyps.size(), 2u);
  EXPECT_TRUE(hyps.truncated);
  EXPECT_EQ(hyps.hypotheses[0].tokens, (std::vector<std::string>{"x"}));
  EXPECT_EQ(hyps.hypotheses[1].tokens, (std::vector<std::string>{"x", "x"}));
  EXPECT_NEAR(hyps.hypotheses[0].log_score, std::log(0.5), 1e-12);
  EXPECT_NEAR(hyps.hypotheses[1].log_score, std::log(0.5), 1e-12);
}

TEST(OracleBeam, NoEosMeansOnlyMaxLengthSequences) {
  // Entity-only mixture has no eos in support, so shorter sequences cannot
  // terminate; only length-max_len sequences exist, in lexicographic order.
  OracleGenerator gen(oracle_cfg(1.0, 0.0, 0.0, {}, 2));
  const Entity e = entity_with_values({"a", "b"});
  const HypothesisSet hyps = gen.generate({}, {&e}, 5);
  ASSERT_EQ(hyps.size(), 4u);
  EXPECT_TRUE(hyps.truncated);
  const std::vector<std::vector<std::string>> expected = {
      {"a", "a"}, {"a", "b"}, {"b", "a"}, {"b", "b"}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(hyps.hypotheses[i].tokens, expected[i]);
  }
  const HypothesisSet exact = gen.exhaustive_topM({}, {&e}, 5);
  ASSERT_EQ(exact.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(exact.hypotheses[i].tokens, hyps.hypotheses[i].tokens);
  }
}

TEST(OracleBeam, UnionOverEntities) {
  // generate() conditions on the union of candidate entity values.
  OracleGenerator gen(oracle_cfg(1.0, 0.0, 0.0, {}, 1));
  const Entity e1 = entity_with_values({"a"});
  const Entity e2 = entity_with_values({"b"});
  const HypothesisSet hyps = gen.generate({}, {&e1, &e2}, 4);
  ASSERT_EQ(hyps.size(), 2u);
  EXPECT_EQ(hyps.hypotheses[0].tokens, (std::vector<std::string>{"a"}));
  EXPECT_EQ(hyps.hypotheses[1].tokens, (std::vector<std::string>{"b"}));
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

TEST(Bleu, IdenticalSentence) {
  EXPECT_NEAR(sentence_bleu("the cat sat", "the cat sat"), 1.0, 1e-12);
}

TEST(Bleu, PrefixBrevityPenalty) {
  // All smoothed precisions are 1; BP = exp(1 - 3/2).
  EXPECT_NEAR(sentence_bleu("the cat", "the cat sat"), std::exp(-0.5), 1e-12);
}

TEST(Bleu, RepeatedTokenClipping) {
  // hyp "the the the" vs ref "the cat": p1 = (1+1)/(3+1), p2 = (0+1)/(2+1),
  // p3 = (0+1)/(1+1), p4 = (0+1)/(0+1); BLEU = (1/12)^(1/4), BP = 1.
  EXPECT_NEAR(sentence_bleu("the the the", "the cat"),
              std::pow(12.0, -0.25), 1e-12);
}

TEST(Bleu, EmptyHypZeroEmptyRefThrows) {
  EXPECT_EQ(sentence_bleu("", "the cat"), 0.0);
  EXPECT_THROW(sentence_bleu("the cat", ""), DataError);
}

TEST(Bleu, StringOverloadNormalizes) {
  EXPECT_NEAR(sentence_bleu("The CAT!", "the cat !"), 1.0, 1e-12);
}

TEST(Bleu, CorpusPooledCounts) {
  // Pooled over two pairs at max_n=2, unsmoothed: p1 = 5/5, p2 = 3/3,
  // BP = exp(1 - 6/5).
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"the cat sat", "the cat sat"}, {"a dog", "a dog runs"}};
  BleuConfig cfg;
  cfg.max_n = 2;
  cfg.smoothing = BleuSmoothing::none;
  EXPECT_NEAR(corpus_bleu_text(pairs, cfg), std::exp(-0.2), 1e-12);
}

TEST(Bleu, CorpusUnsmoothedZeroWithoutFourgramMatch) {
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"the cat sat", "the cat sat"}, {"a dog", "a dog runs"}};
  EXPECT_EQ(corpus_bleu_text(pairs, {4, BleuSmoothing::none}), 0.0);
}

TEST(Bleu, CorpusIsNotMeanOfSentenceScores) {
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"aa bb", "aa bb"}, {"cc", "cc dd ee ff"}};
  BleuConfig cfg{2, BleuSmoothing::none};
  const double pooled = corpus_bleu_text(pairs, cfg);
  const double mean = (sentence_bleu("aa bb", "aa bb", cfg) +
                       sentence_bleu("cc", "cc dd ee ff", cfg)) /
                      2.0;
  EXPECT_GT(std::abs(pooled - mean), 1e-6);
}

TEST(Bleu, LongHypothesisNoPenalty) {
  // hyp longer than ref: BP = 1; with add-one smoothing the mismatched tail
  // only lowers precision.
  const double b = sentence_bleu("the cat sat down", "the cat sat");
  EXPECT_GT(b, 0.0);
  EXPECT_LT(b, 1.0);
}

// ---------------------------------------------------------------------------
// Entity F1 and Re@K
// ---------------------------------------------------------------------------

namespace {

KnowledgeBase f1_kb() {
  KnowledgeBase kb;
  kb.level = KbLevel::dataset;
  kb.entities.push_back(
      Entity{"e1", {{"name", "alpha"}, {"area", "city centre"}}});
  kb.entities.push_back(Entity{"e2", {{"name", "beta"}, {"area", "centre"}}});
  return kb;
}

}  // namespace

TEST(EntityF1, HalfPrecisionHalfRecall) {
  const EntityLexicon lex(f1_kb());
  // pred {alpha, beta}, ref {alpha, centre}: tp=1, fp=1, fn=1.
  const F1Result r = entity_f1({"alpha and beta"}, {"alpha in the centre"}, lex);
  EXPECT_EQ(r.tp, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.fn, 1);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
}

TEST(EntityF1, LongestMatchWins) {
  const EntityLexicon lex(f1_kb());
  // "city centre" must absorb its tokens; bare "centre" elsewhere still hits.
  const auto vals = lex.extract("city centre or just centre");
  EXPECT_TRUE(vals.count({"area", "city centre"}));
  EXPECT_TRUE(vals.count({"area", "centre"}));
  EXPECT_EQ(vals.size(), 2u);
  const auto only_long = lex.extract("the city centre spot");
  EXPECT_EQ(only_long.size(), 1u);
  EXPECT_TRUE(only_long.count({"area", "city centre"}));
}

TEST(EntityF1, NoEntitiesAnywhereIsAllZero) {
  const EntityLexicon lex(f1_kb());
  const F1Result r = entity_f1({"nothing here"}, {"nothing there"}, lex);
  EXPECT_EQ(r.tp + r.fp + r.fn, 0);
  EXPECT_DOUBLE_EQ(r.f1, 0.0);
}

TEST(EntityF1, MicroPoolsAcrossExamples) {
  const EntityLexicon lex(f1_kb());
  // Example 1: tp=1. Example 2: fp=1, fn=1. Micro: p=1/2, r=1/2.
  const F1Result r = entity_f1({"alpha", "beta"}, {"alpha", "the centre"}, lex);
  EXPECT_EQ(r.tp, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.fn, 1);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
}

TEST(EntityF1, LengthMismatchThrows) {
  const EntityLexicon lex(f1_kb());
  EXPECT_THROW(entity_f1({"a"}, {"a", "b"}, lex), DataError);
}

TEST(RecallAtK, CoverageOfGoldValues) {
  const KnowledgeBase kb = f1_kb();
  RetrievalResult topk;
  topk.entries = {{"e2", 1.0}};
  GoldValueSet gold;
  gold.values = {{"name", "beta"}, {"name", "alpha"}};
  const RecallMeasurement m = recall_at_k(topk, gold, kb);
  EXPECT_FALSE(m.vacuous);
  EXPECT_DOUBLE_EQ(m.value, 0.5);

  topk.entries.push_back({"e1", 0.5});
  EXPECT_DOUBLE_EQ(recall_at_k(topk, gold, kb).value, 1.0);
}

TEST(RecallAtK, VacuousAndUnknown) {
  const KnowledgeBase kb = f1_kb();
  RetrievalResult topk;
  topk.entries = {{"e1", 1.0}};
  const RecallMeasurement m = recall_at_k(topk, {}, kb);
  EXPECT_TRUE(m.vacuous);
  EXPECT_DOUBLE_EQ(m.value, 1.0);

  RetrievalResult bad;
  bad.entries = {{"zzz", 1.0}};
  GoldValueSet gold;
  gold.values = {{"name", "alpha"}};
  EXPECT_THROW(recall_at_k(bad, gold, kb), DataError);
}

TEST(RecallAtK, MeanExcludesVacuousTurns) {
  const std::vector<RecallMeasurement> per_turn = {
      {0.5, false}, {1.0, true}, {1.0, false}};
  EXPECT_DOUBLE_EQ(mean_recall(per_turn), 0.75);
  EXPECT_DOUBLE_EQ(mean_recall({{1.0, true}}), 0.0);
}

// ---------------------------------------------------------------------------
// Feedback losses
// ---------------------------------------------------------------------------

namespace {

EntityScores entity_scores(std::vector<double> v) {
  EntityScores g;
  for (std::size_t i = 0; i < v.size(); ++i) {
    g.entity_ids.push_back("e" + std::to_string(i));
  }
  g.scores = std::move(v);
  return g;
}

RetrievalScores retrieval_scores(std::vector<double> v) {
  RetrievalScores s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s.entity_ids.push_back("e" + std::to_string(i));
  }
  s.scores = std::move(v);
  return s;
}

}  // namespace

TEST(Softmax, TemperatureSharpens) {
  const auto p1 = softmax({1.0, 0.0}, 1.0);
  const auto p2 = softmax({1.0, 0.0}, 0.5);
  EXPECT_GT(p2[0], p1[0]);
  EXPECT_NEAR(p1[0] + p1[1], 1.0, 1e-12);
}

TEST(Kl, ZeroOnSelfPositiveOtherwise) {
  EXPECT_NEAR(kl_from_logits({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 1.0), 0.0, 1e-12);
  // Shifting logits by a constant changes nothing.
  EXPECT_NEAR(kl_from_logits({1.0, 2.0}, {11.0, 12.0}, 1.0), 0.0, 1e-12);
  EXPECT_GT(kl_from_logits({3.0, 0.0}, {0.0, 3.0}, 1.0), 0.0);
}

TEST(PositiveLoss, WorkedExample) {
  // G = (0, 0), S = (ln 3, 0), tau = 1: gt = (1/2, 1/2), st = (3/4, 1/4);
  // L = 0.5 ln(2/3) + 0.5 ln 2 = 0.5 ln(4/3); dL/dS = (1/4, -1/4).
  const LossGrad out = positive_loss(entity_scores({0.0, 0.0}),
                                     retrieval_scores({std::log(3.0), 0.0}),
                                     {1.0});
  EXPECT_NEAR(out.loss, 0.5 * std::log(4.0 / 3.0), 1e-12);
  ASSERT_EQ(out.d_scores.size(), 2u);
  EXPECT_NEAR(out.d_scores[0], 0.25, 1e-12);
  EXPECT_NEAR(out.d_scores[1], -0.25, 1e-12);
}

TEST(PositiveLoss, GradientMatchesFiniteDifference) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(6);
    std::vector<double> g(k), s(k);
    for (auto& x : g) x = rng.uniform(-3.0, 3.0);
    for (auto& x : s) x = rng.uniform(-3.0, 3.0);
    const double tau = 0.5 + rng.uniform();
    const LossGrad out =
        positive_loss(entity_scores(g), retrieval_scores(s), {tau});
    double grad_sum = 0.0;
    const double eps = 1e-6;
    for (std::size_t i = 0; i < k; ++i) {
      auto sp = s, sm = s;
      sp[i] += eps;
      sm[i] -= eps;
      const double fd =
          (positive_loss(entity_scores(g), retrieval_scores(sp), {tau}).loss -
           positive_loss(entity_scores(g), retrieval_scores(sm), {tau}).loss) /
          (2 * eps);
      EXPECT_NEAR(out.d_scores[i], fd, 1e-7);
      grad_sum += out.d_scores[i];
    }
    EXPECT_NEAR(grad_sum, 0.0, 1e-12);  // softmax differences sum to zero
  }
}

TEST(NegativeLoss, EqualDistributionsGiveMarginOnly) {
  const EntityScores g = entity_scores({1.0, 2.0, 3.0});
  const LossGrad out = negative_loss(g, g, retrieval_scores({0.0, 0.5, 1.0}),
                                     {1.0}, {0.1});
  EXPECT_NEAR(out.loss, 0.1, 1e-12);
  for (double d : out.d_scores) EXPECT_EQ(d, 0.0);
}

TEST(NegativeLoss, InactiveHingeIsZero) {
  // S matches G exactly, and G⁻ is far from S: the margin is comfortably
  // satisfied, loss and gradient vanish.
  const LossGrad out =
      negative_loss(entity_scores({5.0, 0.0}), entity_scores({0.0, 5.0}),
                    retrieval_scores({5.0, 0.0}), {1.0}, {0.1});
  EXPECT_EQ(out.loss, 0.0);
  for (double d : out.d_scores) EXPECT_EQ(d, 0.0);
}

TEST(NegativeLoss, ActiveGradientClosedForm) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(6);
    std::vector<double> g(k), gn(k), s(k);
    for (auto& x : g) x = rng.uniform(-2.0, 2.0);
    for (auto& x : gn) x = rng.uniform(-2.0, 2.0);
    for (auto& x : s) x = rng.uniform(-2.0, 2.0);
    const double tau = 0.5 + rng.uniform();
    // Enormous margin forces the hinge active regardless of the KL gap.
    const LossGrad out = negative_loss(entity_scores(g), entity_scores(gn),
                                       retrieval_scores(s), {tau}, {1e6});
    const auto gt = softmax(g, tau);
    const auto gnt = softmax(gn, tau);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_NEAR(out.d_scores[i], (gnt[i] - gt[i]) / tau, 1e-9);
    }
  }
}

TEST(NegativeLoss, MisalignedIdsThrow) {
  EntityScores g = entity_scores({1.0, 2.0});
  EntityScores gn = entity_scores({1.0, 2.0});
  gn.entity_ids[1] = "other";
  EXPECT_THROW(
      negative_loss(g, gn, retrieval_scores({0.0, 0.0}), {1.0}, {0.1}),
      DataError);
}

// ---------------------------------------------------------------------------
// Negative selection
// ---------------------------------------------------------------------------

namespace {

HypothesisSet hypothesis_set(
    const std::vector<std::pair<std::string, double>>& items) {
  HypothesisSet hs;
  for (const auto& [text, score] : items) {
    Hypothesis h;
    h.tokens = normalize_tokens(text);
    h.log_score = score;
    hs.hypotheses.push_back(std::move(h));
  }
  return hs;
}

}  // namespace

TEST(OrdinalRanks, DescendingWithStableTies) {
  EXPECT_EQ(ordinal_ranks_desc({-1.0, -2.0, -3.0}), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(ordinal_ranks_desc({5.0, 5.0, 1.0}), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(ordinal_ranks_desc({1.0, 5.0, 5.0}), (std::vector<int>{3, 1, 2}));
}

TEST(SelectNegative, WorkedRankExample) {
  // log scores (-1, -2, -3) give generation ranks (1, 2, 3); oracle scores
  // (0.9, 0.1, 0.5) give quality ranks (1, 3, 2). Rank differences are
  // (0, -1, 1): the second hypothesis is most over-generated.
  const HypothesisSet hs =
      hypothesis_set({{"aa", -1.0}, {"bb", -2.0}, {"cc", -3.0}});
  const std::map<std::string, double> quality = {
      {"aa", 0.9}, {"bb", 0.1}, {"cc", 0.5}};
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::rank_bleu;
  const NegativeSelection sel = select_negative(
      hs, "reference", cfg,
      [&](const Hypothesis& h, const std::string&) {
        return quality.at(h.text());
      });
  EXPECT_EQ(sel.index, 1u);
  EXPECT_EQ(sel.hypothesis.text(), "bb");
  EXPECT_EQ(sel.rank_gen, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(sel.rank_oracle, (std::vector<int>{1, 3, 2}));
  EXPECT_FALSE(sel.degenerate);
}

TEST(SelectNegative, InvertedPolarityPicksUnderGenerated) {
  const HypothesisSet hs =
      hypothesis_set({{"aa", -1.0}, {"bb", -2.0}, {"cc", -3.0}});
  const std::map<std::string, double> quality = {
      {"aa", 0.9}, {"bb", 0.1}, {"cc", 0.5}};
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::rank_bleu;
  cfg.invert_polarity = true;
  const NegativeSelection sel = select_negative(
      hs, "reference", cfg,
      [&](const Hypothesis& h, const std::string&) {
        return quality.at(h.text());
      });
  EXPECT_EQ(sel.index, 2u);  // diffs R^o - R^g = (0, 1, -1)
}

TEST(SelectNegative, RankTiesPreferHigherGenerationRank) {
  // Oracle equal everywhere: diffs all zero; tie key is the generation rank,
  // so the most probable hypothesis wins.
  const HypothesisSet hs =
      hypothesis_set({{"cc", -3.0}, {"aa", -1.0}, {"bb", -2.0}});
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::rank_bleu;
  const NegativeSelection sel = select_negative(
      hs, "reference", cfg,
      [](const Hypothesis&, const std::string&) { return 0.5; });
  EXPECT_EQ(sel.index, 1u);  // "aa", rank_gen 1
}

TEST(SelectNegative, ArgminTakesWorstOracleScore) {
  const HypothesisSet hs =
      hypothesis_set({{"aa", -1.0}, {"bb", -2.0}, {"cc", -3.0}});
  const std::map<std::string, double> quality = {
      {"aa", 0.5}, {"bb", 0.2}, {"cc", 0.2}};
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::argmin_bleu;
  const NegativeSelection sel = select_negative(
      hs, "reference", cfg,
      [&](const Hypothesis& h, const std::string&) {
        return quality.at(h.text());
      });
  EXPECT_EQ(sel.index, 1u);  // tie on 0.2 keeps input order
  EXPECT_TRUE(sel.rank_gen.empty());
}

TEST(SelectNegative, DegenerateWhenAllHypothesesEqual) {
  const HypothesisSet hs = hypothesis_set({{"same text", -1.0},
                                           {"same text", -2.0}});
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::rank_bleu;
  const NegativeSelection sel = select_negative(
      hs, "reference", cfg,
      [](const Hypothesis&, const std::string&) { return 0.5; });
  EXPECT_TRUE(sel.degenerate);
}

TEST(SelectNegative, EmptyInputsThrow) {
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::rank_bleu;
  const auto noop = [](const Hypothesis&, const std::string&) { return 0.0; };
  EXPECT_THROW(select_negative({}, "ref", cfg, noop), DataError);
  const HypothesisSet hs = hypothesis_set({{"aa", -1.0}, {"bb", -2.0}});
  EXPECT_THROW(select_negative(hs, "  ", cfg, noop), DataError);
}

TEST(SelectNegative, RankStrategyNeedsBeamOfTwo) {
  NegativeSelectionConfig cfg;
  cfg.strategy = NegativeStrategy::rank_bleu;
  cfg.beam_m = 1;
  EXPECT_THROW(cfg.validate(), DataError);
  cfg.strategy = NegativeStrategy::argmin_bleu;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(StrategyNames, RoundTrip) {
  for (const auto s :
       {NegativeStrategy::rank_bleu, NegativeStrategy::rank_entityf1,
        NegativeStrategy::argmin_bleu, NegativeStrategy::argmin_entityf1}) {
    EXPECT_EQ(negative_strategy_from_string(to_string(s)), s);
  }
  EXPECT_THROW(negative_strategy_from_string("nope"), DataError);
}

TEST(OracleFns, BleuAndEntityF1) {
  Hypothesis h;
  h.tokens = normalize_tokens("the cat");
  const OracleFn bleu_fn = make_oracle_fn(NegativeStrategy::rank_bleu, nullptr);
  EXPECT_NEAR(bleu_fn(h, "the cat sat"), sentence_bleu("the cat", "the cat sat"),
              1e-12);

  const EntityLexicon lex(f1_kb());
  const OracleFn f1_fn =
      make_oracle_fn(NegativeStrategy::rank_entityf1, &lex);
  Hypothesis h2;
  h2.tokens = normalize_tokens("alpha and beta");
  EXPECT_NEAR(f1_fn(h2, "alpha in the centre"), 0.5, 1e-12);
}

// ---------------------------------------------------------------------------
// retriever_loss integration
// ---------------------------------------------------------------------------

TEST(RetrieverLoss, ComposesPositiveAndNegative) {
  // Two entities with distinct single values; reference is "x" (entity e0's
  // value). Hypotheses are [x] and [y]; [x] equals the reference, so the
  // negative is skipped; loss must equal the positive term alone.
  KnowledgeBase kb;
  kb.level = KbLevel::dataset;
  kb.entities.push_back(Entity{"e0", {{"v", "x"}}});
  kb.entities.push_back(Entity{"e1", {{"v", "y"}}});

  OracleGenConfig ocfg = oracle_cfg(0.5, 0.0, 0.5, {"x", "y"}, 1);
  OracleGenerator gen(ocfg);
  const std::vector<const Entity*> ents = {&kb.entities[0], &kb.entities[1]};

  FeedbackConfig cfg;
  cfg.selection.strategy = NegativeStrategy::rank_bleu;
  cfg.selection.beam_m = 2;
  const DialogueContext ctx;
  const std::vector<double> scores = {0.2, -0.1};
  const FeedbackResult fb =
      retriever_loss(ctx, ents, scores, "x", gen, cfg, nullptr);

  EXPECT_TRUE(fb.negative_skipped);
  EXPECT_EQ(fb.skip_reason, "negative identical to reference");
  EXPECT_EQ(fb.loss_neg, 0.0);
  EXPECT_NEAR(fb.loss, fb.loss_pos, 1e-12);

  // The positive term matches a direct computation from adapter scores.
  EntityScores g;
  g.entity_ids = {"e0", "e1"};
  g.scores = gen.score_entities_batch(ctx, ents, "x");
  RetrievalScores s;
  s.entity_ids = {"e0", "e1"};
  s.scores = scores;
  const LossGrad pos = positive_loss(g, s, cfg.softmax);
  EXPECT_NEAR(fb.loss_pos, pos.loss, 1e-12);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(fb.d_scores[i], pos.d_scores[i], 1e-12);
  }
}

TEST(RetrieverLoss, NegativeDisabledByConfig) {
  KnowledgeBase kb;
  kb.level = KbLevel::dataset;
  kb.entities.push_back(Entity{"e0", {{"v", "x"}}});
  kb.entities.push_back(Entity{"e1", {{"v", "y"}}});
  OracleGenerator gen(oracle_cfg(0.5, 0.0, 0.5, {"x", "y"}, 1));
  FeedbackConfig cfg;
  cfg.include_negative = false;
  const FeedbackResult fb = retriever_loss(
      {}, {&kb.entities[0], &kb.entities[1]}, {0.0, 0.0}, "x", gen, cfg,
      nullptr);
  EXPECT_TRUE(fb.negative_skipped);
  EXPECT_EQ(fb.skip_reason, "negative feedback disabled");
}

TEST(RetrieverLoss, ActiveNegativeAddsGradients) {
  // Reference "x x": hypotheses [x] and [y] are distinct and neither equals
  // the reference text, so a negative is selected and the hinge (eta-margin)
  // contributes; gradients must equal positive + negative closed forms.
  KnowledgeBase kb;
  kb.level = KbLevel::dataset;
  kb.entities.push_back(Entity{"e0", {{"v", "x"}}});
  kb.entities.push_back(Entity{"e1", {{"v", "y"}}});
  OracleGenerator gen(oracle_cfg(0.5, 0.0, 0.5, {"x", "y"}, 1));
  const std::vector<const Entity*> ents = {&kb.entities[0], &kb.entities[1]};

  FeedbackConfig cfg;
  cfg.selection.beam_m = 2;
  const std::vector<double> scores = {0.3, -0.2};
  const FeedbackResult fb =
      retriever_loss({}, ents, scores, "x x", gen, cfg, nullptr);
  ASSERT_FALSE(fb.negative_skipped);
  EXPECT_FALSE(fb.negative_text.empty());

  EntityScores g;
  g.entity_ids = {"e0", "e1"};
  g.scores = gen.score_entities_batch({}, ents, "x x");
  EntityScores gn;
  gn.entity_ids = {"e0", "e1"};
  gn.scores = gen.score_entities_batch({}, ents, fb.negative_text);
  RetrievalScores s;
  s.entity_ids = {"e0", "e1"};
  s.scores = scores;
  const LossGrad pos = positive_loss(g, s, cfg.softmax);
  const LossGrad neg = negative_loss(g, gn, s, cfg.softmax, cfg.margin);
  EXPECT_NEAR(fb.loss, pos.loss + neg.loss, 1e-12);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(fb.d_scores[i], pos.d_scores[i] + neg.d_scores[i], 1e-12);
  }
}

TEST(ScoreEntities, BatchCountMismatchThrows) {
  StubAdapter stub;
  stub.batch_result = {0.0};  // one score for two entities
  KnowledgeBase kb;
  kb.entities.push_back(Entity{"e0", {{"v", "x"}}});
  kb.entities.push_back(Entity{"e1", {{"v", "y"}}});
  EXPECT_THROW(score_entities(stub, {}, {&kb.entities[0], &kb.entities[1]},
                              "resp"),
               DataError);
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

TEST(DistantLabel, CountsContextAndResponse) {
  KnowledgeBase kb;
  kb.level = KbLevel::session;
  kb.entities.push_back(Entity{"e1", {{"name", "alpha"}}});
  kb.entities.push_back(Entity{"e2", {{"name", "beta"}}});

  const auto label =
      distant_label(context_of("alpha please"), "alpha beats beta", kb);
  ASSERT_TRUE(label.has_value());
  EXPECT_EQ(label->entity_id, "e1");  // two matches vs one
  EXPECT_EQ(label->match_count, 2);
}

TEST(DistantLabel, TieGoesToAscendingIdAndNoMatchIsEmpty) {
  KnowledgeBase kb;
  kb.level = KbLevel::session;
  kb.entities.push_back(Entity{"e2", {{"name", "beta"}}});
  kb.entities.push_back(Entity{"e1", {{"name", "alpha"}}});

  const auto tie = distant_label(context_of("hi"), "alpha or beta", kb);
  ASSERT_TRUE(tie.has_value());
  EXPECT_EQ(tie->entity_id, "e1");

  EXPECT_FALSE(distant_label(context_of("hi"), "nothing here", kb).has_value());
}

TEST(InfoNce, UniformLogitsGiveLogB) {
  // Identical embeddings: every softmax is uniform, loss = log B exactly.
  const Embedding v = {0.3, -0.7, 0.2};
  const std::vector<Embedding> batch = {v, v, v};
  const InfoNCEGrad out = infonce_loss(batch, batch, 0.05);
  EXPECT_NEAR(out.loss, std::log(3.0), 1e-12);
}

TEST(InfoNce, PerfectSeparationDrivesLossDown) {
  const std::vector<Embedding> q = {{1.0, 0.0}, {0.0, 1.0}};
  const InfoNCEGrad out = infonce_loss(q, q, 0.05);
  EXPECT_LT(out.loss, 1e-8);
}

TEST(InfoNce, GradientsMatchFiniteDifference) {
  Rng rng(11);
  const std::size_t b = 4, dim = 3;
  std::vector<Embedding> q(b, Embedding(dim)), p(b, Embedding(dim));
  for (auto& row : q)
    for (auto& x : row) x = rng.uniform(-1.0, 1.0);
  for (auto& row : p)
    for (auto& x : row) x = rng.uniform(-1.0, 1.0);
  const double tau = 0.3;
  const InfoNCEGrad out = infonce_loss(q, p, tau);
  const double eps = 1e-6;
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t d = 0; d < dim; ++d) {
      auto qp = q, qm = q;
      qp[j][d] += eps;
      qm[j][d] -= eps;
      const double fd =
          (infonce_loss(qp, p, tau).loss - infonce_loss(qm, p, tau).loss) /
          (2 * eps);
      EXPECT_NEAR(out.d_queries[j][d], fd, 1e-7);
      auto pp = p, pm = p;
      pp[j][d] += eps;
      pm[j][d] -= eps;
      const double fdp =
          (infonce_loss(q, pp, tau).loss - infonce_loss(q, pm, tau).loss) /
          (2 * eps);
      EXPECT_NEAR(out.d_positives[j][d], fdp, 1e-7);
    }
  }
}

TEST(InfoNce, InputValidation) {
  const Embedding v = {1.0, 0.0};
  EXPECT_THROW(infonce_loss({v}, {v}, 0.05), DataError);
  EXPECT_THROW(infonce_loss({v, v}, {v}, 0.05), DataError);
  EXPECT_THROW(infonce_loss({v, v}, {v, v}, 0.0), DataError);
  EXPECT_THROW(infonce_loss({v, v}, {v, {1.0, 0.0, 0.0}}, 0.05), DataError);
}

TEST(MakeBatches, NoRepeatedEntityWithinBatch) {
  std::vector<LabeledPair> pairs;
  for (int i = 0; i < 12; ++i) {
    pairs.push_back({"ctx" + std::to_string(i),
                     "e" + std::to_string(i % 4),  // four distinct entities
                     "ent"});
  }
  Rng rng(1);
  const auto batches = make_batches(pairs, 4, rng);
  ASSERT_EQ(batches.size(), 3u);  // 12 pairs, four entities: three clean rounds
  for (const auto& batch : batches) {
    ASSERT_EQ(batch.size(), 4u);
    std::set<std::string> ids;
    for (std::size_t idx : batch) ids.insert(pairs[idx].entity_id);
    EXPECT_EQ(ids.size(), 4u);
  }
}

TEST(MakeBatches, DropsUnfillableRemainder) {
  // Six pairs but only two distinct entities: each batch of two uses both,
  // three batches total; with batch size 3 no clean batch can form.
  std::vector<LabeledPair> pairs;
  for (int i = 0; i < 6; ++i) {
    pairs.push_back({"ctx" + std::to_string(i), "e" + std::to_string(i % 2),
                     "ent"});
  }
  Rng rng1(2);
  EXPECT_EQ(make_batches(pairs, 2, rng1).size(), 3u);
  Rng rng2(2);
  EXPECT_TRUE(make_batches(pairs, 3, rng2).empty());
}

TEST(CollectLabeledPairs, PlantedCorpusLabelsAreGold) {
  SyntheticConfig cfg;
  cfg.entities = 20;
  cfg.dialogues = 40;
  const SyntheticCorpus corpus = make_planted_corpus(cfg);
  const auto pairs = collect_labeled_pairs(corpus.train, corpus.kb);
  ASSERT_EQ(pairs.size(), corpus.train.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].entity_id,
              corpus.train[i].turns[0].gold_entity_ids->front());
  }
}

TEST(PretrainLoop, RejectsTinyCorpora) {
  SyntheticConfig cfg;
  cfg.entities = 5;
  cfg.dialogues = 10;
  const SyntheticCorpus corpus = make_planted_corpus(cfg);
  const EncoderParams params = init_encoder(0, {});
  InfoNCEConfig pcfg;  // batch 128 against ten pairs
  EXPECT_THROW(pretrain_loop(corpus.train, corpus.kb, params, pcfg, 0),
               DataError);
}

TEST(PretrainLoop, DeterministicAndFinite) {
  SyntheticConfig cfg;
  cfg.entities = 10;
  cfg.dialogues = 30;
  const SyntheticCorpus corpus = make_planted_corpus(cfg);
  EncoderConfig ecfg;
  ecfg.tokenizer.hash_vocab_size = 512;
  ecfg.embed_dim = 16;
  ecfg.hidden_dim = 16;
  ecfg.output_dim = 8;
  const EncoderParams init = init_encoder(1, ecfg);
  InfoNCEConfig pcfg;
  pcfg.batch_size = 8;
  pcfg.epochs = 3;

  const PretrainResult a = pretrain_loop(corpus.train, corpus.kb, init, pcfg, 7);
  const PretrainResult b = pretrain_loop(corpus.train, corpus.kb, init, pcfg, 7);
  EXPECT_EQ(a.params.table, b.params.table);
  EXPECT_EQ(a.params.w2, b.params.w2);
  EXPECT_EQ(a.epoch_mean_loss, b.epoch_mean_loss);
  ASSERT_EQ(a.epoch_mean_loss.size(), 3u);
  for (double l : a.epoch_mean_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_NE(a.params.table, init.table);  // it actually trained
  EXPECT_GT(a.params.version, init.version);
}
