// Command-line surface for the dual-feedback retriever engine.
//
// Machine-readable output (line-delimited JSON records) goes to stdout;
// human-readable tables and progress go to stderr.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dualfb/dualfb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw dualfb::DataError("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

json oracle_to_json(const dualfb::OracleGenConfig& cfg) {
  return json{{"lambda_entity", cfg.lambda_entity},
              {"lambda_context", cfg.lambda_context},
              {"lambda_uniform", cfg.lambda_uniform},
              {"base_vocab", cfg.base_vocab},
              {"eos", cfg.eos},
              {"max_len", cfg.max_len},
              {"beam_width", cfg.beam_width}};
}

dualfb::OracleGenConfig oracle_from_json(const json& j) {
  dualfb::OracleGenConfig cfg;
  cfg.lambda_entity = j.at("lambda_entity").get<double>();
  cfg.lambda_context = j.at("lambda_context").get<double>();
  cfg.lambda_uniform = j.at("lambda_uniform").get<double>();
  cfg.base_vocab = j.at("base_vocab").get<std::vector<std::string>>();
  cfg.eos = j.at("eos").get<std::string>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.beam_width = j.at("beam_width").get<int>();
  cfg.validate();
  return cfg;
}

// Options shared by every subcommand that runs a generator adapter.
struct AdapterOptions {
  std::string adapter = "oracle";
  std::string oracle_config_path;
  std::string endpoint;
  std::string model;

  void add(CLI::App& cmd) {
    cmd.add_option("--adapter", adapter, "Generator adapter: oracle or llm")
        ->check(CLI::IsMember({"oracle", "llm"}))
        ->capture_default_str();
    cmd.add_option("--oracle-config", oracle_config_path,
                   "Oracle generator config JSON (default: derived from data)");
    cmd.add_option("--endpoint", endpoint,
                   "LLM endpoint base URL (default: $LLM_API_ENDPOINT)");
    cmd.add_option("--model", model, "LLM model name");
  }

  std::unique_ptr<dualfb::GeneratorAdapter> make(
      const std::vector<dualfb::Dialogue>& dialogues,
      const dualfb::KnowledgeBase& kb) const {
    if (adapter == "llm") {
      dualfb::LlmConfig cfg = dualfb::LlmConfig::from_env();
      if (!endpoint.empty()) cfg.endpoint = endpoint;
      if (!model.empty()) cfg.model = model;
      cfg.validate();
      return std::make_unique<dualfb::LlmAdapter>(cfg);
    }
    dualfb::OracleGenConfig cfg;
    if (!oracle_config_path.empty()) {
      cfg = oracle_from_json(dualfb::read_json_file(oracle_config_path));
    } else {
      cfg.base_vocab = dualfb::build_base_vocab(dialogues, kb, cfg.eos);
      cfg.validate();
    }
    return std::make_unique<dualfb::OracleGenerator>(cfg);
  }
};

// Train-config flags; only flags the user actually passed override the
// config-file (or default) values.
struct TrainFlags {
  int k = 0, beam = 0, start_step = 0, steps = 0, accumulation = 0;
  int batch_size = 0, refresh_every = 0, validate_every = 0;
  double eta = 0.0, tau = 0.0, lr = 0.0;
  std::uint64_t seed = 0;
  std::string strategy;
  bool no_negative = false, invert_polarity = false;
  std::string config_path;

  CLI::Option *ok = nullptr, *obeam = nullptr, *ostart = nullptr,
              *osteps = nullptr, *oacc = nullptr, *obatch = nullptr,
              *orefresh = nullptr, *ovalidate = nullptr, *oeta = nullptr,
              *otau = nullptr, *olr = nullptr, *oseed = nullptr,
              *ostrategy = nullptr;

  void add(CLI::App& cmd) {
    cmd.add_option("--config", config_path,
                   "JSON config file; flags override its values");
    ok = cmd.add_option("--k", k, "Entities retrieved per step");
    obeam = cmd.add_option("--beam", beam, "Beam size for negative selection");
    olr = cmd.add_option("--lr", lr, "Retriever learning rate");
    ostart = cmd.add_option("--start-step", start_step,
                            "Optimizer steps withheld before updates");
    osteps = cmd.add_option("--steps", steps, "Total optimizer steps");
    oacc = cmd.add_option("--accumulation", accumulation,
                          "Micro-steps per optimizer step");
    obatch = cmd.add_option("--batch-size", batch_size, "Examples per micro-step");
    orefresh = cmd.add_option("--refresh-every", refresh_every,
                              "Full index refresh cadence (optimizer steps)");
    ovalidate = cmd.add_option("--validate-every", validate_every,
                               "Validation cadence (optimizer steps)");
    oseed = cmd.add_option("--seed", seed, "Run seed");
    ostrategy = cmd.add_option(
        "--strategy", strategy,
        "Negative selection: rank_bleu, rank_entityf1, argmin_bleu, argmin_entityf1");
    oeta = cmd.add_option("--eta", eta, "Margin for the negative loss");
    otau = cmd.add_option("--tau", tau, "Softmax temperature");
    cmd.add_flag("--no-negative", no_negative,
                 "Disable negative feedback (positive-only ablation)");
    cmd.add_flag("--invert-polarity", invert_polarity,
                 "Flip the rank-disagreement polarity");
  }

  dualfb::TrainConfig resolve() const {
    dualfb::TrainConfig cfg;
    if (!config_path.empty()) {
      cfg = dualfb::train_config_from_json(dualfb::read_json_file(config_path), cfg);
    }
    if (ok->count()) cfg.k = k;
    if (obeam->count()) cfg.beam_m = beam;
    if (olr->count()) cfg.lr = lr;
    if (ostart->count()) cfg.start_step = start_step;
    if (osteps->count()) cfg.total_steps = steps;
    if (oacc->count()) cfg.accumulation = accumulation;
    if (obatch->count()) cfg.batch_size = batch_size;
    if (orefresh->count()) cfg.refresh_every = refresh_every;
    if (ovalidate->count()) cfg.validate_every = validate_every;
    if (oseed->count()) cfg.seed = seed;
    if (ostrategy->count())
      cfg.strategy = dualfb::negative_strategy_from_string(strategy);
    if (oeta->count()) cfg.eta = eta;
    if (otau->count()) cfg.tau = tau;
    if (no_negative) cfg.use_negative = false;
    if (invert_polarity) cfg.invert_polarity = true;
    cfg.validate();
    return cfg;
  }
};

dualfb::KbLevel parse_level(const std::string& s) {
  if (s == "dataset") return dualfb::KbLevel::dataset;
  if (s == "session") return dualfb::KbLevel::session;
  throw dualfb::DataError("unknown kb level '" + s + "'");
}

std::vector<int> parse_k_list(const std::string& csv) {
  std::vector<int> ks;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    ks.push_back(std::stoi(item));
  }
  if (ks.empty()) throw dualfb::DataError("empty K list");
  return ks;
}

void emit(const json& record) { std::cout << record.dump() << "\n"; }

int run_gen_data(const std::string& kind, const std::string& out_dir,
                 const dualfb::SyntheticConfig& cfg) {
  dualfb::SyntheticCorpus corpus = kind == "confusable"
                                       ? dualfb::make_confusable_corpus(cfg)
                                       : dualfb::make_planted_corpus(cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_json_file(dir / "kb.json", dualfb::kb_to_json(corpus.kb));
  write_json_file(dir / "train.json", dualfb::dialogues_to_json(corpus.train));
  write_json_file(dir / "val.json", dualfb::dialogues_to_json(corpus.val));
  write_json_file(dir / "oracle.json", oracle_to_json(corpus.oracle));
  emit(json{{"record", "gen_data"},
            {"kind", kind},
            {"entities", corpus.kb.entities.size()},
            {"train_dialogues", corpus.train.size()},
            {"val_dialogues", corpus.val.size()},
            {"out", out_dir}});
  std::cerr << "wrote " << corpus.kb.entities.size() << " entities, "
            << corpus.train.size() << "/" << corpus.val.size()
            << " train/val dialogues to " << out_dir << "\n";
  return 0;
}

int run_validate_data(const std::string& kb_path, const std::string& dlg_path,
                      const std::string& level) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  std::vector<dualfb::Dialogue> dialogues = dualfb::load_dialogues(dlg_path, kb);
  std::size_t turns = 0;
  for (const auto& d : dialogues) turns += d.turns.size();
  emit(json{{"record", "validate_data"},
            {"entities", kb.entities.size()},
            {"dialogues", dialogues.size()},
            {"turns", turns},
            {"status", "ok"}});
  std::cerr << "ok: " << kb.entities.size() << " entities, " << dialogues.size()
            << " dialogues, " << turns << " turns\n";
  return 0;
}

int run_pretrain(const std::string& kb_path, const std::string& dlg_path,
                 const std::string& level, const std::string& out,
                 const dualfb::InfoNCEConfig& cfg, std::uint64_t seed,
                 int hash_vocab) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  std::vector<dualfb::Dialogue> dialogues = dualfb::load_dialogues(dlg_path, kb);
  dualfb::EncoderConfig ecfg;
  if (hash_vocab > 0) ecfg.tokenizer.hash_vocab_size = hash_vocab;
  dualfb::EncoderParams params = dualfb::init_encoder(seed, ecfg);
  dualfb::PretrainResult result =
      dualfb::pretrain_loop(dialogues, kb, std::move(params), cfg, seed);
  dualfb::save_checkpoint(result.params, out);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    emit(json{{"record", "pretrain_epoch"},
              {"epoch", e + 1},
              {"mean_loss", result.epoch_mean_loss[e]}});
  }
  emit(json{{"record", "pretrain_done"},
            {"labeled_pairs", result.labeled_pairs},
            {"checkpoint", out}});
  std::cerr << "pretrained on " << result.labeled_pairs << " pairs; saved " << out
            << "\n";
  return 0;
}

int run_train(const std::string& kb_path, const std::string& train_path,
              const std::string& val_path, const std::string& level,
              const std::string& init_ckpt, const std::string& out,
              const TrainFlags& flags, const AdapterOptions& adapter_opts) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  std::vector<dualfb::Dialogue> train_dialogues =
      dualfb::load_dialogues(train_path, kb);
  std::vector<dualfb::Dialogue> val_dialogues =
      val_path.empty() ? std::vector<dualfb::Dialogue>{}
                       : dualfb::load_dialogues(val_path, kb);
  dualfb::TrainConfig cfg = flags.resolve();

  dualfb::EncoderParams params =
      init_ckpt.empty() ? dualfb::init_encoder(cfg.seed, {})
                        : dualfb::load_checkpoint(init_ckpt);
  auto adapter = adapter_opts.make(train_dialogues, kb);

  dualfb::TrainResult result = dualfb::train(train_dialogues, val_dialogues, kb,
                                             *adapter, std::move(params), cfg);
  dualfb::save_checkpoint(result.best_params, out);
  for (const auto& meta : result.validations) {
    json rec = dualfb::meta_to_json(meta);
    rec["record"] = "validation";
    emit(rec);
  }
  json best = dualfb::meta_to_json(result.best_meta);
  best["record"] = "best_checkpoint";
  best["checkpoint"] = out;
  best["examples_processed"] = result.examples_processed;
  best["adapter_failures"] = result.adapter_failures;
  best["negatives_skipped"] = result.negatives_skipped;
  emit(best);
  std::cerr << "best checkpoint @ step " << result.best_meta.step
            << " entity_f1=" << result.best_meta.entity_f1
            << " bleu=" << result.best_meta.bleu << " -> " << out << "\n";
  return 0;
}

int run_eval(const std::string& kb_path, const std::string& dlg_path,
             const std::string& level, const std::string& ckpt, int k,
             const std::string& recall_ks, const AdapterOptions& adapter_opts) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  std::vector<dualfb::Dialogue> dialogues = dualfb::load_dialogues(dlg_path, kb);
  dualfb::EncoderParams params = dualfb::load_checkpoint(ckpt);
  auto adapter = adapter_opts.make(dialogues, kb);
  dualfb::EvalConfig cfg;
  cfg.k = k;
  cfg.recall_ks = parse_k_list(recall_ks);
  dualfb::EvalReport report =
      dualfb::evaluate(dialogues, kb, params, *adapter, cfg);
  json overall = dualfb::slice_to_json(report.overall);
  overall["record"] = "eval";
  overall["slice"] = "overall";
  emit(overall);
  for (const auto& [name, slice] : report.by_domain) {
    json rec = dualfb::slice_to_json(slice);
    rec["record"] = "eval";
    rec["slice"] = name;
    emit(rec);
  }
  std::cerr << dualfb::format_report(report);
  return 0;
}

int run_retrieve(const std::string& kb_path, const std::string& level,
                 const std::string& ckpt, const std::string& query, int k) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  dualfb::EncoderParams params = dualfb::load_checkpoint(ckpt);
  dualfb::EntityIndex index = dualfb::build_index(kb, params);
  dualfb::Embedding q = dualfb::encode_text(query, params);
  dualfb::RetrievalResult result = dualfb::retrieve(q, index, params, k);
  std::unordered_map<std::string, const dualfb::Entity*> by_id;
  for (const auto& e : kb.entities) by_id[e.id] = &e;
  int rank = 1;
  for (const auto& entry : result.entries) {
    emit(json{{"record", "retrieval"},
              {"rank", rank},
              {"entity_id", entry.entity_id},
              {"score", entry.score},
              {"entity", dualfb::linearize_entity(*by_id.at(entry.entity_id))}});
    std::cerr << rank << ". " << entry.entity_id << "  score=" << entry.score
              << "  " << dualfb::linearize_entity(*by_id.at(entry.entity_id))
              << "\n";
    ++rank;
  }
  return 0;
}

int run_trace(const std::string& kb_path, const std::string& dlg_path,
              const std::string& level, const std::string& ckpt,
              const std::string& dialogue_id, int turn, const TrainFlags& flags,
              const AdapterOptions& adapter_opts) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  std::vector<dualfb::Dialogue> dialogues = dualfb::load_dialogues(dlg_path, kb);
  const dualfb::Dialogue* target = nullptr;
  for (const auto& d : dialogues) {
    if (d.id == dialogue_id) target = &d;
  }
  if (!target) throw dualfb::DataError("dialogue '" + dialogue_id + "' not found");
  dualfb::EncoderParams params = dualfb::load_checkpoint(ckpt);
  auto adapter = adapter_opts.make(dialogues, kb);
  dualfb::TrainConfig cfg = flags.resolve();
  dualfb::FeedbackResult fb = dualfb::trace_example(*target, turn, kb, params,
                                                    *adapter, cfg.feedback(), cfg.k);
  json rec = dualfb::feedback_to_json(fb, dialogue_id, turn);
  rec["record"] = "trace";
  emit(rec);
  std::cerr << "dialogue " << dialogue_id << " turn " << turn
            << ": loss=" << fb.loss << " (pos=" << fb.loss_pos
            << ", neg=" << fb.loss_neg << ")";
  if (fb.negative_skipped) std::cerr << "  negative skipped: " << fb.skip_reason;
  std::cerr << "\n";
  return 0;
}

int run_sweep_k(const std::string& kb_path, const std::string& dlg_path,
                const std::string& level, const std::string& ckpt,
                const std::string& k_csv, const AdapterOptions& adapter_opts) {
  dualfb::KnowledgeBase kb = dualfb::load_kb(kb_path, parse_level(level));
  std::vector<dualfb::Dialogue> dialogues = dualfb::load_dialogues(dlg_path, kb);
  dualfb::EncoderParams params = dualfb::load_checkpoint(ckpt);
  auto adapter = adapter_opts.make(dialogues, kb);
  std::vector<int> ks = parse_k_list(k_csv);

  std::ostringstream table;
  table << "    K      BLEU        F1      Re@K     turns\n";
  for (int k : ks) {
    dualfb::EvalConfig cfg;
    cfg.k = k;
    cfg.recall_ks = {k};
    dualfb::EvalReport report =
        dualfb::evaluate(dialogues, kb, params, *adapter, cfg);
    const dualfb::EvalSlice& s = report.overall;
    emit(json{{"record", "sweep_k"},
              {"k", k},
              {"bleu", s.bleu},
              {"entity_f1", s.f1.f1},
              {"recall", s.recall.at(k)},
              {"turns", s.turns}});
    char row[128];
    std::snprintf(row, sizeof(row), "%5d  %8.4f  %8.4f  %8.4f  %8zu\n", k,
                  s.bleu, s.f1.f1, s.recall.at(k), s.turns);
    table << row;
  }
  std::cerr << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-feedback knowledge retriever engine"};
  app.require_subcommand(1);

  std::string kb_path, dlg_path, train_path, val_path, level = "dataset";
  std::string ckpt, init_ckpt, out, query, dialogue_id, kind = "planted";
  std::string recall_ks = "1,3,6", k_csv = "1,3,7,10";
  int k = 6, turn = 1, hash_vocab = 0;
  std::uint64_t seed = 0;
  dualfb::SyntheticConfig syn_cfg;
  dualfb::InfoNCEConfig nce_cfg;
  TrainFlags train_flags, trace_flags;
  AdapterOptions train_adapter, eval_adapter, trace_adapter, sweep_adapter;

  auto add_data = [&](CLI::App* cmd, bool dialogues = true) {
    cmd->add_option("--kb", kb_path, "Knowledge base JSON")->required();
    if (dialogues)
      cmd->add_option("--dialogues", dlg_path, "Dialogue corpus JSON")->required();
    cmd->add_option("--level", level, "KB level: dataset or session")
        ->check(CLI::IsMember({"dataset", "session"}))
        ->capture_default_str();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--kind", kind, "planted or confusable")
      ->check(CLI::IsMember({"planted", "confusable"}))
      ->capture_default_str();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--entities", syn_cfg.entities, "Planted corpus entity count")
      ->capture_default_str();
  gen->add_option("--pairs", syn_cfg.pairs, "Confusable corpus pair count")
      ->capture_default_str();
  gen->add_option("--dialogues", syn_cfg.dialogues, "Dialogue count")
      ->capture_default_str();
  gen->add_option("--seed", syn_cfg.seed, "Corpus seed")->capture_default_str();
  gen->callback([&] { std::exit(run_gen_data(kind, out, syn_cfg)); });

  CLI::App* validate = app.add_subcommand("validate-data", "Check a corpus");
  add_data(validate);
  validate->callback(
      [&] { std::exit(run_validate_data(kb_path, dlg_path, level)); });

  CLI::App* pretrain =
      app.add_subcommand("pretrain", "Contrastive pre-training from distant labels");
  add_data(pretrain);
  pretrain->add_option("--out", out, "Checkpoint output path")->required();
  pretrain->add_option("--seed", seed, "Run seed")->capture_default_str();
  pretrain->add_option("--epochs", nce_cfg.epochs)->capture_default_str();
  pretrain->add_option("--batch-size", nce_cfg.batch_size)->capture_default_str();
  pretrain->add_option("--lr", nce_cfg.lr)->capture_default_str();
  pretrain->add_option("--tau-nce", nce_cfg.tau, "InfoNCE temperature")
      ->capture_default_str();
  pretrain->add_option("--weight-decay", nce_cfg.weight_decay)
      ->capture_default_str();
  pretrain->add_option("--hash-vocab", hash_vocab,
                       "Hash vocabulary size (0 = default)");
  pretrain->callback([&] {
    std::exit(
        run_pretrain(kb_path, dlg_path, level, out, nce_cfg, seed, hash_vocab));
  });

  CLI::App* train = app.add_subcommand("train", "Dual-feedback retriever training");
  train->add_option("--kb", kb_path, "Knowledge base JSON")->required();
  train->add_option("--train", train_path, "Training dialogues JSON")->required();
  train->add_option("--val", val_path, "Validation dialogues JSON");
  train->add_option("--level", level, "KB level: dataset or session")
      ->check(CLI::IsMember({"dataset", "session"}))
      ->capture_default_str();
  train->add_option("--init", init_ckpt, "Initial checkpoint (e.g. pretrained)");
  train->add_option("--out", out, "Best-checkpoint output path")->required();
  train_flags.add(*train);
  train_adapter.add(*train);
  train->callback([&] {
    std::exit(run_train(kb_path, train_path, val_path, level, init_ckpt, out,
                        train_flags, train_adapter));
  });

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_data(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--k", k, "Entities handed to the generator")
      ->capture_default_str();
  eval_cmd->add_option("--recall-ks", recall_ks, "Comma-separated recall cutoffs")
      ->capture_default_str();
  eval_adapter.add(*eval_cmd);
  eval_cmd->callback([&] {
    std::exit(run_eval(kb_path, dlg_path, level, ckpt, k, recall_ks, eval_adapter));
  });

  CLI::App* retrieve = app.add_subcommand("retrieve", "One-off top-K query");
  retrieve->add_option("--kb", kb_path, "Knowledge base JSON")->required();
  retrieve->add_option("--level", level, "KB level: dataset or session")
      ->check(CLI::IsMember({"dataset", "session"}))
      ->capture_default_str();
  retrieve->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  retrieve->add_option("--query", query, "Query text")->required();
  retrieve->add_option("--k", k, "Result count")->capture_default_str();
  retrieve->callback(
      [&] { std::exit(run_retrieve(kb_path, level, ckpt, query, k)); });

  CLI::App* trace =
      app.add_subcommand("trace", "Dump the feedback record for one turn");
  add_data(trace);
  trace->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  trace->add_option("--dialogue", dialogue_id, "Dialogue id")->required();
  trace->add_option("--turn", turn, "1-based turn index")->capture_default_str();
  trace_flags.add(*trace);
  trace_adapter.add(*trace);
  trace->callback([&] {
    std::exit(run_trace(kb_path, dlg_path, level, ckpt, dialogue_id, turn,
                        trace_flags, trace_adapter));
  });

  CLI::App* sweep = app.add_subcommand("sweep-k", "Evaluate across a K list");
  add_data(sweep);
  sweep->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  sweep->add_option("--k", k_csv, "Comma-separated K list")->capture_default_str();
  sweep_adapter.add(*sweep);
  sweep->callback([&] {
    std::exit(run_sweep_k(kb_path, dlg_path, level, ckpt, k_csv, sweep_adapter));
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
