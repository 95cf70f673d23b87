// End-to-end walkthrough on a small generated corpus: contrastive
// pre-training, dual-feedback training, evaluation, and a feedback trace.

#include <iostream>

#include "dualfb/dualfb.hpp"

int main() {
  using namespace dualfb;

  SyntheticConfig syn;
  syn.entities = 40;
  syn.dialogues = 120;
  syn.seed = 11;
  SyntheticCorpus corpus = make_planted_corpus(syn);
  std::cout << "corpus: " << corpus.kb.entities.size() << " entities, "
            << corpus.train.size() << " train / " << corpus.val.size()
            << " val dialogues\n";

  EncoderConfig ecfg;
  ecfg.tokenizer.hash_vocab_size = 4096;
  EncoderParams params = init_encoder(3, ecfg);

  InfoNCEConfig nce;
  nce.batch_size = 32;
  nce.epochs = 4;
  nce.lr = 2e-3;
  PretrainResult pre = pretrain_loop(corpus.train, corpus.kb, std::move(params), nce, 3);
  std::cout << "pretrain: " << pre.labeled_pairs << " labeled pairs, last epoch loss "
            << pre.epoch_mean_loss.back() << "\n";

  OracleGenerator adapter(corpus.oracle);
  TrainConfig cfg;
  cfg.k = 5;
  cfg.lr = 1e-3;
  cfg.start_step = 0;
  cfg.total_steps = 60;
  cfg.accumulation = 8;
  cfg.refresh_every = 10;
  cfg.validate_every = 20;
  cfg.seed = 3;
  TrainResult result = train(corpus.train, corpus.val, corpus.kb, adapter,
                             std::move(pre.params), cfg);
  std::cout << "train: best step " << result.best_meta.step << ", val entity F1 "
            << result.best_meta.entity_f1 << ", Re@" << cfg.k << " "
            << result.best_meta.recall << "\n";

  EvalConfig eval_cfg;
  eval_cfg.k = 5;
  eval_cfg.recall_ks = {1, 3, 5};
  EvalReport report =
      evaluate(corpus.val, corpus.kb, result.best_params, adapter, eval_cfg);
  std::cout << format_report(report);

  FeedbackResult fb = trace_example(corpus.val.front(), 1, corpus.kb,
                                    result.best_params, adapter, cfg.feedback(),
                                    cfg.k);
  std::cout << "trace: loss " << fb.loss << " (pos " << fb.loss_pos << ", neg "
            << fb.loss_neg << ")";
  if (fb.negative_skipped) std::cout << ", negative skipped: " << fb.skip_reason;
  std::cout << "\nnegative: " << fb.negative_text << "\n";
  return 0;
}
