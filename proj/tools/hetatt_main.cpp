// hetatt: corpus -> masks -> model -> evaluation driver.

#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hetformer/commands.hpp"
#include "hetformer/parallel.hpp"

namespace {

using hetformer::cli::RunConfig;

// --config is applied before the remaining flags so explicit flags win.
std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

void add_common(CLI::App* sub, RunConfig& cfg, std::string& config_path) {
  sub->add_option("--config", config_path, "JSON file with option values (flags override it)");
  sub->add_option("--seed", cfg.seed, "Seed for every random stream");
  sub->add_option("--threads", cfg.threads, "Worker thread cap (results do not depend on it)");
}

void add_model(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--d-model", cfg.d_model);
  sub->add_option("--heads", cfg.heads);
  sub->add_option("--d-head", cfg.d_head);
  sub->add_option("--layers", cfg.layers);
  sub->add_option("--d-ff", cfg.d_ff);
  sub->add_option("--dropout", cfg.dropout);
  sub->add_option("--max-positions", cfg.max_positions);
  sub->add_option("--schedule", cfg.schedule, "Window schedule: inc, dec or fixed:W");
  sub->add_option("--w-min", cfg.w_min, "Smallest window radius of inc/dec schedules");
  sub->add_option("--w-max", cfg.w_max, "Largest window radius of inc/dec schedules");
  sub->add_flag("--no-ts", cfg.no_ts, "Disable the sentence/document global pattern");
  sub->add_flag("--no-e2e", cfg.no_e2e, "Disable the entity cluster pattern");
  sub->add_flag("--global-positions", cfg.global_positions, "Do not restart positions at each sentence");
  sub->add_option("--min-count", cfg.min_count, "Minimum corpus frequency for a vocabulary entry");
  sub->add_flag("--multi-doc", cfg.multi_doc, "Insert document nodes at doc_boundaries");
}

std::ostream* open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return &std::cout;
  file.open(path, std::ios::trunc | std::ios::binary);
  if (!file) throw hetformer::cli::CommandError("cannot open output file: " + path);
  return &file;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  std::string config_path = find_config_path(argc, argv);
  try {
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw hetformer::cli::CommandError("cannot open config file: " + config_path);
      cfg.merge_json(nlohmann::json::parse(f));
    }
  } catch (const std::exception& e) {
    std::cerr << "hetatt: " << e.what() << '\n';
    return 1;
  }

  CLI::App app{"Heterogeneous sparse-attention extractive summarizer"};
  app.require_subcommand(1);

  auto* vocab = app.add_subcommand("build-vocab", "Write the vocabulary, one token per line in id order");
  add_common(vocab, cfg, config_path);
  vocab->add_option("--corpus", cfg.corpus, "Corpus JSONL");
  vocab->add_option("--out", cfg.out, "Output file (default stdout)");
  vocab->add_option("--min-count", cfg.min_count);

  auto* label = app.add_subcommand("oracle-label", "Add greedy ROUGE-2 oracle labels to a corpus");
  add_common(label, cfg, config_path);
  label->add_option("--corpus", cfg.corpus, "Corpus JSONL with summaries");
  label->add_option("--out", cfg.out, "Labeled JSONL (default stdout)");
  label->add_option("--max-k", cfg.max_k, "Maximum oracle sentences per document");

  auto* train = app.add_subcommand("train", "Train the sentence extractor");
  add_common(train, cfg, config_path);
  add_model(train, cfg);
  train->add_option("--corpus", cfg.corpus, "Labeled corpus JSONL");
  train->add_option("--out-dir", cfg.out_dir, "Directory for checkpoint, loss trace and resolved config");
  train->add_option("--lr", cfg.lr);
  train->add_option("--warmup-steps", cfg.warmup_steps);
  train->add_option("--max-steps", cfg.max_steps);
  train->add_option("--batch", cfg.batch);
  train->add_option("--accum", cfg.accum);

  auto* extract = app.add_subcommand("extract", "Score sentences and write extractive summaries");
  add_common(extract, cfg, config_path);
  extract->add_option("--corpus", cfg.corpus, "Corpus JSONL");
  extract->add_option("--checkpoint", cfg.checkpoint, "Model checkpoint");
  extract->add_option("--out", cfg.out, "Summaries JSONL (default stdout)");
  extract->add_option("--k", cfg.k, "Sentences per summary (3 single-doc, 9 multi-doc)");
  extract->add_flag("--no-blocking{false}", cfg.blocking, "Disable trigram blocking");
  extract->add_flag("--multi-doc", cfg.multi_doc, "Insert document nodes at doc_boundaries");

  auto* evaluate = app.add_subcommand("evaluate", "ROUGE-1/2/L F1 of summaries against gold");
  add_common(evaluate, cfg, config_path);
  evaluate->add_option("--corpus", cfg.corpus, "Corpus JSONL with gold summaries");
  evaluate->add_option("--summaries", cfg.summaries, "Summaries JSONL from extract");
  evaluate->add_option("--out", cfg.out, "CSV report (default stdout)");

  auto* memcost = app.add_subcommand("memcost", "Stored attention entries per layer vs dense");
  add_common(memcost, cfg, config_path);
  memcost->add_option("--n", cfg.n, "Sequence length");
  memcost->add_option("--layers", cfg.layers);
  memcost->add_option("--schedule", cfg.schedule, "inc, dec or fixed:W");
  memcost->add_option("--w-min", cfg.w_min);
  memcost->add_option("--w-max", cfg.w_max);
  memcost->add_flag("--no-ts", cfg.no_ts);
  memcost->add_flag("--no-e2e", cfg.no_e2e);
  memcost->add_option("--tokens-per-sentence", cfg.tokens_per_sentence);
  memcost->add_option("--mention-stride", cfg.mention_stride, "Every k-th token is an entity mention");
  memcost->add_option("--num-entities", cfg.num_entities);
  memcost->add_option("--out", cfg.out, "CSV report (default stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient tensor");
  add_common(gradcheck, cfg, config_path);
  add_model(gradcheck, cfg);
  gradcheck->add_option("--corpus", cfg.corpus, "Use the first document of this corpus instead of the toy one");
  gradcheck->add_option("--out", cfg.out, "CSV report (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    cfg.subcommand = app.get_subcommands().front()->get_name();
    hetformer::parallel::set_num_threads(cfg.threads);

    if (cfg.subcommand == "train") {
      hetformer::cli::cmd_train(cfg, std::cout);
      return 0;
    }

    std::ofstream file;
    std::ostream* out = open_output(cfg.out, file);
    if (out == &file) hetformer::cli::write_resolved_config(cfg, cfg.out + ".config.json");

    bool ok = true;
    if (cfg.subcommand == "build-vocab") hetformer::cli::cmd_build_vocab(cfg, *out);
    else if (cfg.subcommand == "oracle-label") hetformer::cli::cmd_oracle_label(cfg, *out);
    else if (cfg.subcommand == "extract") hetformer::cli::cmd_extract(cfg, *out);
    else if (cfg.subcommand == "evaluate") hetformer::cli::cmd_evaluate(cfg, *out);
    else if (cfg.subcommand == "memcost") hetformer::cli::cmd_memcost(cfg, *out);
    else if (cfg.subcommand == "gradcheck") ok = hetformer::cli::cmd_gradcheck(cfg, *out);
    out->flush();
    if (!*out) throw hetformer::cli::CommandError("write failed on output");
    if (!ok) {
      std::cerr << "hetatt: gradient check failed\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "hetatt: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
