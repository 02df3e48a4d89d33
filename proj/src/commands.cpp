#include "hetformer/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "hetformer/checkpoint.hpp"
#include "hetformer/corpus.hpp"
#include "hetformer/eval.hpp"
#include "hetformer/extract.hpp"
#include "hetformer/gradcheck.hpp"
#include "hetformer/maskgen.hpp"

namespace hetformer::cli {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- config

ordered_json RunConfig::to_json() const {
  return {{"subcommand", subcommand},
          {"corpus", corpus},
          {"out", out},
          {"out_dir", out_dir},
          {"checkpoint", checkpoint},
          {"summaries", summaries},
          {"seed", seed},
          {"min_count", min_count},
          {"multi_doc", multi_doc},
          {"d_model", d_model},
          {"heads", heads},
          {"d_head", d_head},
          {"layers", layers},
          {"d_ff", d_ff},
          {"dropout", dropout},
          {"max_positions", max_positions},
          {"schedule", schedule},
          {"w_min", w_min},
          {"w_max", w_max},
          {"no_ts", no_ts},
          {"no_e2e", no_e2e},
          {"global_positions", global_positions},
          {"lr", lr},
          {"warmup_steps", warmup_steps},
          {"max_steps", max_steps},
          {"batch", batch},
          {"accum", accum},
          {"k", k},
          {"blocking", blocking},
          {"max_k", max_k},
          {"n", n},
          {"tokens_per_sentence", tokens_per_sentence},
          {"mention_stride", mention_stride},
          {"num_entities", num_entities}};
}

void RunConfig::merge_json(const json& j) {
  if (!j.is_object()) throw CommandError("config file must hold a JSON object");
  const auto known = to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "threads" && !known.contains(it.key())) throw CommandError("unknown config key \"" + it.key() + "\"");
  try {
#define MERGE(field) field = j.value(#field, field)
    MERGE(subcommand);
    MERGE(corpus);
    MERGE(out);
    MERGE(out_dir);
    MERGE(checkpoint);
    MERGE(summaries);
    MERGE(seed);
    MERGE(threads);
    MERGE(min_count);
    MERGE(multi_doc);
    MERGE(d_model);
    MERGE(heads);
    MERGE(d_head);
    MERGE(layers);
    MERGE(d_ff);
    MERGE(dropout);
    MERGE(max_positions);
    MERGE(schedule);
    MERGE(w_min);
    MERGE(w_max);
    MERGE(no_ts);
    MERGE(no_e2e);
    MERGE(global_positions);
    MERGE(lr);
    MERGE(warmup_steps);
    MERGE(max_steps);
    MERGE(batch);
    MERGE(accum);
    MERGE(k);
    MERGE(blocking);
    MERGE(max_k);
    MERGE(n);
    MERGE(tokens_per_sentence);
    MERGE(mention_stride);
    MERGE(num_entities);
#undef MERGE
  } catch (const json::exception& e) {
    throw CommandError(std::string("bad config value: ") + e.what());
  }
}

model::ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.heads = heads;
  c.d_head = d_head;
  c.layers = layers;
  c.d_ff = d_ff;
  c.schedule = maskgen::WindowSchedule::parse(schedule, w_min, w_max);
  c.dropout = dropout;
  c.max_positions = max_positions;
  c.enable_ts = !no_ts;
  c.enable_e2e = !no_e2e;
  c.global_positions = global_positions;
  c.seed = seed;
  c.validate();
  return c;
}

model::TrainOptions RunConfig::train_options() const {
  model::TrainOptions o;
  o.lr = lr;
  o.warmup_steps = warmup_steps;
  o.max_steps = max_steps;
  o.batch = batch;
  o.accum = accum;
  return o;
}

void write_resolved_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CommandError("cannot write resolved config: " + path);
  f << cfg.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------- helpers

namespace {

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw CommandError(std::string("missing required option ") + flag);
}

std::vector<corpus::Document> load_corpus(const RunConfig& cfg) {
  require(cfg.corpus, "--corpus");
  auto docs = corpus::parse_corpus(cfg.corpus);
  if (docs.empty()) throw CommandError("corpus is empty: " + cfg.corpus);
  return docs;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
  return s;
}

}  // namespace

corpus::Document toy_document() {
  corpus::Document d;
  d.id = "toy";
  d.sentences = {"alice met bob", "bob left"};
  d.gold_summary = std::vector<std::string>{"bob left"};
  d.labels = std::vector<int>{0, 1};
  return d;
}

// ---------------------------------------------------------------- commands

void cmd_build_vocab(const RunConfig& cfg, std::ostream& out) {
  const auto docs = load_corpus(cfg);
  const auto vocab = corpus::build_vocab(docs, cfg.min_count);
  for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab.token(static_cast<std::int32_t>(i)) << '\n';
}

void cmd_oracle_label(const RunConfig& cfg, std::ostream& out) {
  require(cfg.corpus, "--corpus");
  std::ifstream in(cfg.corpus);
  if (!in) throw CommandError("cannot open corpus file: " + cfg.corpus);

  std::vector<ordered_json> records;
  std::vector<corpus::Document> docs;
  std::vector<std::string> missing;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    docs.push_back(corpus::parse_document(line, line_no));
    records.push_back(ordered_json::parse(line));
    if (!docs.back().gold_summary || docs.back().gold_summary->empty()) missing.push_back(docs.back().id);
  }
  if (!missing.empty()) throw CommandError("documents without a gold summary: " + join_ids(missing));

  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto labels = eval::greedy_oracle_labels(docs[i].sentences, *docs[i].gold_summary, cfg.max_k);
    records[i]["labels"] = labels.labels;
    out << records[i].dump() << '\n';
  }
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  require(cfg.out_dir, "--out-dir");
  const auto docs = load_corpus(cfg);
  std::vector<std::string> unlabeled;
  for (const auto& d : docs)
    if (!d.labels) unlabeled.push_back(d.id);
  if (!unlabeled.empty())
    throw CommandError("documents without oracle labels (run oracle-label first): " + join_ids(unlabeled));

  std::filesystem::create_directories(cfg.out_dir);
  const std::filesystem::path dir(cfg.out_dir);
  write_resolved_config(cfg, (dir / "resolved_config.json").string());

  const auto vocab = corpus::build_vocab(docs, cfg.min_count);
  const auto mcfg = cfg.model_config(vocab.size());
  std::vector<model::Example> examples;
  examples.reserve(docs.size());
  for (const auto& d : docs) examples.push_back(model::make_example(d, vocab, mcfg, cfg.multi_doc));

  auto result = model::train(examples, mcfg, cfg.train_options(), model::init_model(mcfg));
  model::round_to_f32(result.state);
  model::save_checkpoint(dir / "model.ckpt", result.state, mcfg, vocab);

  std::ofstream trace(dir / "loss.csv", std::ios::trunc);
  if (!trace) throw CommandError("cannot write loss trace in " + cfg.out_dir);
  trace << "step,lr,loss\n";
  char buf[96];
  for (const auto& r : result.trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9e,%.9e\n", r.step, r.lr, r.loss);
    trace << buf;
  }
  const double eval_loss = model::evaluation_loss(examples, result.state, mcfg);
  std::snprintf(buf, sizeof buf, "%zu steps, last step loss %.6f, training-set eval loss %.6f\n", result.trace.size(),
                result.trace.empty() ? eval_loss : result.trace.back().loss, eval_loss);
  log << "trained " << buf;
}

void cmd_extract(const RunConfig& cfg, std::ostream& out) {
  require(cfg.checkpoint, "--checkpoint");
  if (cfg.k < 1) throw CommandError("--k must be >= 1");
  const auto ck = model::load_checkpoint(cfg.checkpoint);
  const auto docs = load_corpus(cfg);
  for (const auto& d : docs) {
    const auto ex = model::make_example(d, ck.vocab, ck.config, cfg.multi_doc);
    const auto scores = model::predict(ex, ck.state, ck.config);
    const auto r = model::extract(scores, d.sentences, cfg.k, cfg.blocking);
    ordered_json rec;
    rec["id"] = d.id;
    rec["selected"] = r.selected;
    rec["scores"] = r.scores;
    rec["summary"] = r.summary;
    out << rec.dump() << '\n';
  }
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  require(cfg.summaries, "--summaries");
  const auto docs = load_corpus(cfg);
  std::map<std::string, std::vector<std::string>> extracted;
  std::ifstream in(cfg.summaries);
  if (!in) throw CommandError("cannot open summaries file: " + cfg.summaries);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = json::parse(line);
      extracted[rec.at("id").get<std::string>()] = rec.at("summary").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw CommandError("summaries line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (extracted.size() != docs.size())
    throw CommandError("summaries file has " + std::to_string(extracted.size()) + " documents, corpus has " +
                       std::to_string(docs.size()));
  std::vector<eval::SummaryPair> pairs;
  for (const auto& d : docs) {
    auto it = extracted.find(d.id);
    if (it == extracted.end()) throw CommandError("no extracted summary for document \"" + d.id + "\"");
    if (!d.gold_summary) throw CommandError("document \"" + d.id + "\" has no gold summary");
    pairs.push_back({d.id, it->second, *d.gold_summary});
  }
  out << eval::format_scores_csv(eval::evaluate_summaries(pairs));
}

void cmd_memcost(const RunConfig& cfg, std::ostream& out) {
  const auto nodes = maskgen::synthetic_layout(cfg.n, cfg.tokens_per_sentence, cfg.mention_stride, cfg.num_entities);
  const auto sched = maskgen::WindowSchedule::parse(cfg.schedule, cfg.w_min, cfg.w_max);
  const auto masks = maskgen::build_mask_set(nodes, sched.widths(cfg.layers), !cfg.no_ts, !cfg.no_e2e);
  const auto counts = maskgen::entry_counts(masks);
  out << "layer,w,t2t,ts,e2e,total,dense,ratio\n";
  char buf[192];
  std::size_t t2t = 0, ts = 0, e2e = 0;
  for (std::size_t l = 0; l < counts.layers.size(); ++l) {
    const auto& c = counts.layers[l];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%zu,%zu,%.6f\n", l, c.w, c.t2t, c.ts, c.e2e, c.total, c.dense,
                  c.ratio);
    out << buf;
    t2t += c.t2t;
    ts += c.ts;
    e2e += c.e2e;
  }
  std::snprintf(buf, sizeof buf, "total,,%zu,%zu,%zu,%zu,%zu,%.6f\n", t2t, ts, e2e, counts.total_sparse,
                counts.total_dense, counts.ratio);
  out << buf;
}

bool cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  corpus::Document doc = toy_document();
  if (!cfg.corpus.empty()) {
    doc = load_corpus(cfg).front();
    if (!doc.labels) {
      if (!doc.gold_summary) throw CommandError("gradcheck document \"" + doc.id + "\" has neither labels nor summary");
      doc.labels = eval::greedy_oracle_labels(doc.sentences, *doc.gold_summary, cfg.max_k).labels;
    }
  }
  const auto vocab = corpus::build_vocab({doc}, 1);
  auto mcfg = cfg.model_config(vocab.size());
  const auto ex = model::make_example(doc, vocab, mcfg, cfg.multi_doc);
  auto state = model::init_model(mcfg);
  model::perturb_for_gradcheck(state, cfg.seed);
  model::GradcheckOptions opt;
  opt.seed = cfg.seed;
  const auto checks = model::gradcheck(ex, state, mcfg, opt);
  out << model::format_gradcheck_csv(checks);
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

}  // namespace hetformer::cli
