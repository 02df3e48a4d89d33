#pragma once

// Sentence-extraction encoder: token/position/segment embeddings, a stack of
// post-norm layers built on heterogeneous sparse attention, and a sigmoid
// classifier over sentence-node states.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetformer/corpus.hpp"
#include "hetformer/hetatt.hpp"
#include "hetformer/linalg.hpp"
#include "hetformer/maskgen.hpp"
#include "hetformer/rng.hpp"

namespace hetformer::model {

using linalg::Matrix;
using Mat = Matrix<double>;

struct ModelConfig {
  std::size_t vocab_size = 1000;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_head = 16;
  std::size_t layers = 4;
  std::size_t d_ff = 256;
  maskgen::WindowSchedule schedule{maskgen::ScheduleKind::Increasing, 4, 32, 16};
  double dropout = 0.1;
  std::size_t max_positions = 512;
  bool enable_ts = true;
  bool enable_e2e = true;
  bool global_positions = false;
  std::uint64_t seed = 42;

  static ModelConfig desk(std::size_t vocab_size);
  // 768 hidden, 12 heads of 64, 12 layers, windows 32..512.
  static ModelConfig full_size(std::size_t vocab_size);

  void validate() const;
  std::vector<std::size_t> window_schedule() const { return schedule.widths(layers); }
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct LayerParams {
  hetatt::AttentionParams<double> attn;
  Mat ln1_gamma, ln1_beta;
  Mat w1, b1;  // d_model x d_ff, 1 x d_ff
  Mat w2, b2;  // d_ff x d_model, 1 x d_model
  Mat ln2_gamma, ln2_beta;
};

struct NamedTensor {
  std::string name;
  Mat* tensor;
};

struct ModelState {
  Mat tok_emb, pos_emb, seg_emb;
  std::vector<LayerParams> layers;
  Mat cls_w;  // d_model x 1
  Mat cls_b;  // 1 x 1
  std::uint64_t step = 0;

  // All-zero tensors with the shapes implied by `cfg`.
  static ModelState zeros(const ModelConfig& cfg);

  // Fixed traversal order shared by the optimizer, checkpoints and gradcheck.
  std::vector<NamedTensor> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const ModelState& o) const;
};

ModelState init_model(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);
// Rounds every parameter to the nearest 32-bit float, matching checkpoint storage.
void round_to_f32(ModelState& state);

enum class Mode { Train, Eval };

Mat embed(const corpus::NodeSequence& nodes, const ModelState& state, const ModelConfig& cfg);

struct LayerNormCache {
  Mat xhat;
  std::vector<double> inv_std;
};

struct LayerCache {
  hetatt::AttentionCache<double> attn;
  Mat drop1, drop2;  // dropout multipliers; empty in eval mode
  LayerNormCache ln1, ln2;
  Mat h1;            // output of the attention sublayer
  Mat ff_pre;        // h1 W1 + b1
};

struct EncodeCache {
  std::vector<LayerCache> layers;
};

// `dropout_rng` is required in train mode and ignored in eval mode.
Mat encode(const Mat& x, const maskgen::MaskSet& masks, const ModelState& state, const ModelConfig& cfg, Mode mode,
           Rng* dropout_rng = nullptr, EncodeCache* cache = nullptr);

// Accumulates parameter gradients into `grads`; returns dL/dX.
Mat encode_backward(const EncodeCache& cache, const ModelState& state, const Mat& dh, ModelState& grads);

std::vector<double> sentence_logits(const Mat& h, const corpus::NodeSequence& nodes, const ModelState& state);
std::vector<double> score_sentences(const Mat& h, const corpus::NodeSequence& nodes, const ModelState& state);

double sigmoid(double z);

struct BceResult {
  double loss = 0.0;
  std::vector<double> dlogits;
};

// Mean binary cross-entropy evaluated from logits in log space.
BceResult bce_loss(const std::vector<double>& logits, const std::vector<int>& labels);

struct Example {
  std::string id;
  corpus::NodeSequence nodes;
  maskgen::MaskSet masks;
  std::vector<int> labels;
};

Example make_example(const corpus::Document& doc, const corpus::Vocab& vocab, const ModelConfig& cfg,
                     bool multi_doc);

struct LossAndGrad {
  double loss = 0.0;
  ModelState grads;
  Mat dx;  // gradient w.r.t. the summed input embeddings
};

// Full forward + backward for one document.
LossAndGrad loss_and_gradient(const Example& ex, const ModelState& state, const ModelConfig& cfg, Mode mode,
                              std::uint64_t dropout_seed = 0);

// Loss from given input embeddings (the embedding lookup is skipped).
double loss_from_embeddings(const Mat& x, const Example& ex, const ModelState& state, const ModelConfig& cfg,
                            Mode mode, std::uint64_t dropout_seed = 0);

// Eval-mode sentence scores for a prepared example.
std::vector<double> predict(const Example& ex, const ModelState& state, const ModelConfig& cfg);

}  // namespace hetformer::model
