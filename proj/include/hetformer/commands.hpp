#pragma once

// Subcommands of the `hetatt` tool. Each command is deterministic given its
// inputs and resolved configuration; failures are reported as exceptions and
// turned into "hetatt: ..." messages by the driver.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "hetformer/model.hpp"
#include "hetformer/train.hpp"

namespace hetformer::cli {

struct RunConfig {
  std::string subcommand;
  std::string corpus;
  std::string out;      // output file; "-" or empty means standard output
  std::string out_dir;  // train
  std::string checkpoint;
  std::string summaries;
  std::uint64_t seed = 42;
  int threads = 0;  // 0 = OpenMP default

  // corpus / layout
  std::size_t min_count = 1;
  bool multi_doc = false;

  // model
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t layers = 4;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  std::size_t max_positions = 512;
  std::string schedule = "inc";
  std::size_t w_min = 4;
  std::size_t w_max = 32;
  bool no_ts = false;
  bool no_e2e = false;
  bool global_positions = false;

  // optimizer
  double lr = 0.005;
  std::size_t warmup_steps = 100;
  std::size_t max_steps = 1000;
  std::size_t batch = 1;
  std::size_t accum = 2;

  // extraction / labeling
  std::size_t k = 3;
  bool blocking = true;
  std::size_t max_k = 5;

  // memcost
  std::size_t n = 512;
  std::size_t tokens_per_sentence = 16;
  std::size_t mention_stride = 8;
  std::size_t num_entities = 8;

  // Every effective value except `threads`, which never changes results.
  nlohmann::ordered_json to_json() const;
  // Keys absent from `j` keep their current values.
  void merge_json(const nlohmann::json& j);
  model::ModelConfig model_config(std::size_t vocab_size) const;
  model::TrainOptions train_options() const;
};

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_resolved_config(const RunConfig& cfg, const std::string& path);

void cmd_build_vocab(const RunConfig& cfg, std::ostream& out);
void cmd_oracle_label(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_extract(const RunConfig& cfg, std::ostream& out);
void cmd_evaluate(const RunConfig& cfg, std::ostream& out);
void cmd_memcost(const RunConfig& cfg, std::ostream& out);
// Returns true when every tensor passes.
bool cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

// The two-sentence document used by gradcheck when no corpus is given.
corpus::Document toy_document();

}  // namespace hetformer::cli
