#include "hetformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace hetformer::model {

namespace {

constexpr double kLayerNormEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat layer_norm(const Mat& z, const Mat& gamma, const Mat& beta, LayerNormCache* cache) {
  const std::size_t n = z.rows(), d = z.cols();
  Mat out(n, d);
  Mat xhat(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += z(i, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (z(i, c) - mean) * (z(i, c) - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(i, c) = (z(i, c) - mean) * inv_std[i];
      out(i, c) = gamma(0, c) * xhat(i, c) + beta(0, c);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Mat layer_norm_backward(const LayerNormCache& cache, const Mat& gamma, const Mat& dy, Mat& dgamma, Mat& dbeta) {
  const std::size_t n = dy.rows(), d = dy.cols();
  Mat dz(n, d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0, sum_x = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dgamma(0, c) += dy(i, c) * cache.xhat(i, c);
      dbeta(0, c) += dy(i, c);
      dxhat[c] = dy(i, c) * gamma(0, c);
      sum += dxhat[c];
      sum_x += dxhat[c] * cache.xhat(i, c);
    }
    const double k = cache.inv_std[i] / static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c)
      dz(i, c) = k * (static_cast<double>(d) * dxhat[c] - sum - cache.xhat(i, c) * sum_x);
  }
  return dz;
}

void add_row_bias(Mat& m, const Mat& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) m(i, c) += bias(0, c);
}

void accumulate_col_sums(const Mat& m, Mat& out) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(i, c);
}

Mat dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Mat m(rows, cols, 1.0);
  if (p <= 0.0) return m;
  const double keep = 1.0 / (1.0 - p);
  for (auto& v : m.data()) v = rng.uniform() < p ? 0.0 : keep;
  return m;
}

void hadamard_inplace(Mat& a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] *= b.data()[i];
}

void fill_xavier(Mat& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  // Draw at 32-bit precision so a fresh model round-trips through a checkpoint exactly.
  for (auto& v : m.data()) v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
}

}  // namespace

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::desk(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::full_size(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 768;
  c.heads = 12;
  c.d_head = 64;
  c.layers = 12;
  c.d_ff = 3072;
  c.schedule = {maskgen::ScheduleKind::Increasing, 32, 512, 128};
  c.max_positions = 4096;
  return c;
}

void ModelConfig::validate() const {
  if (d_model != heads * d_head)
    throw std::invalid_argument("config: d_model (" + std::to_string(d_model) + ") must equal heads * d_head (" +
                                std::to_string(heads * d_head) + ")");
  if (heads == 0 || d_head == 0) throw std::invalid_argument("config: heads and d_head must be positive");
  if (vocab_size < corpus::Vocab::kReserved) throw std::invalid_argument("config: vocab_size below reserved ids");
  if (d_ff == 0) throw std::invalid_argument("config: d_ff must be positive");
  if (max_positions == 0) throw std::invalid_argument("config: max_positions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config: dropout must be in [0, 1)");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"d_model", d_model},
          {"heads", heads},
          {"d_head", d_head},
          {"layers", layers},
          {"d_ff", d_ff},
          {"schedule", schedule.to_string()},
          {"w_min", schedule.w_min},
          {"w_max", schedule.w_max},
          {"dropout", dropout},
          {"max_positions", max_positions},
          {"enable_ts", enable_ts},
          {"enable_e2e", enable_e2e},
          {"global_positions", global_positions},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.d_head = j.value("d_head", c.d_head);
  c.layers = j.value("layers", c.layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.schedule = maskgen::WindowSchedule::parse(j.value("schedule", c.schedule.to_string()),
                                              j.value("w_min", c.schedule.w_min), j.value("w_max", c.schedule.w_max));
  c.dropout = j.value("dropout", c.dropout);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.enable_ts = j.value("enable_ts", c.enable_ts);
  c.enable_e2e = j.value("enable_e2e", c.enable_e2e);
  c.global_positions = j.value("global_positions", c.global_positions);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- state

ModelState ModelState::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  ModelState s;
  s.tok_emb = Mat(cfg.vocab_size, d);
  s.pos_emb = Mat(cfg.max_positions, d);
  s.seg_emb = Mat(2, d);
  s.layers.resize(cfg.layers);
  for (auto& l : s.layers) {
    l.attn = hetatt::AttentionParams<double>::zeros({d, cfg.heads, cfg.d_head});
    l.ln1_gamma = Mat(1, d);
    l.ln1_beta = Mat(1, d);
    l.w1 = Mat(d, cfg.d_ff);
    l.b1 = Mat(1, cfg.d_ff);
    l.w2 = Mat(cfg.d_ff, d);
    l.b2 = Mat(1, d);
    l.ln2_gamma = Mat(1, d);
    l.ln2_beta = Mat(1, d);
  }
  s.cls_w = Mat(d, 1);
  s.cls_b = Mat(1, 1);
  return s;
}

std::vector<NamedTensor> ModelState::tensors() {
  std::vector<NamedTensor> t{{"tok_emb", &tok_emb}, {"pos_emb", &pos_emb}, {"seg_emb", &seg_emb}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    for (std::size_t p = 0; p < hetatt::kNumPatterns; ++p) {
      const std::string pp = pre + "attn." + std::string(hetatt::pattern_name(p)) + ".";
      t.push_back({pp + "wq", &L.attn.pattern[p].wq});
      t.push_back({pp + "wk", &L.attn.pattern[p].wk});
      t.push_back({pp + "wv", &L.attn.pattern[p].wv});
    }
    t.push_back({pre + "attn.wo", &L.attn.wo});
    t.push_back({pre + "ln1.gamma", &L.ln1_gamma});
    t.push_back({pre + "ln1.beta", &L.ln1_beta});
    t.push_back({pre + "ffn.w1", &L.w1});
    t.push_back({pre + "ffn.b1", &L.b1});
    t.push_back({pre + "ffn.w2", &L.w2});
    t.push_back({pre + "ffn.b2", &L.b2});
    t.push_back({pre + "ln2.gamma", &L.ln2_gamma});
    t.push_back({pre + "ln2.beta", &L.ln2_beta});
  }
  t.push_back({"cls.w", &cls_w});
  t.push_back({"cls.b", &cls_b});
  return t;
}

std::vector<std::pair<std::string, const Mat*>> ModelState::tensors() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (auto& nt : const_cast<ModelState*>(this)->tensors()) out.emplace_back(nt.name, nt.tensor);
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += t->size();
  return n;
}

bool ModelState::all_finite() const {
  for (const auto& [name, t] : tensors())
    if (!linalg::all_finite(*t)) return false;
  return true;
}

bool ModelState::operator==(const ModelState& o) const {
  const auto a = tensors(), b = o.tensors();
  if (a.size() != b.size() || step != o.step) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i].second == *b[i].second)) return false;
  return true;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, inner = cfg.heads * cfg.d_head;
  const std::size_t per_layer = 3 * 3 * d * inner + inner * d + 4 * d + d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;
  return cfg.vocab_size * d + cfg.max_positions * d + 2 * d + cfg.layers * per_layer + d + 1;
}

ModelState init_model(const ModelConfig& cfg) {
  ModelState s = ModelState::zeros(cfg);
  Rng rng(cfg.seed, "init");
  fill_xavier(s.tok_emb, rng);
  fill_xavier(s.pos_emb, rng);
  fill_xavier(s.seg_emb, rng);
  for (auto& l : s.layers) {
    for (auto& p : l.attn.pattern) {
      fill_xavier(p.wq, rng);
      fill_xavier(p.wk, rng);
      fill_xavier(p.wv, rng);
    }
    fill_xavier(l.attn.wo, rng);
    l.ln1_gamma.fill(1.0);
    l.ln2_gamma.fill(1.0);
    fill_xavier(l.w1, rng);
    fill_xavier(l.w2, rng);
  }
  return s;
}

void round_to_f32(ModelState& state) {
  for (auto& nt : state.tensors())
    for (auto& v : nt.tensor->data()) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------- forward

Mat embed(const corpus::NodeSequence& nodes, const ModelState& state, const ModelConfig& cfg) {
  const std::size_t n = nodes.size(), d = cfg.d_model;
  Mat x(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    const auto id = nodes.node_ids[j];
    if (id < 0 || static_cast<std::size_t>(id) >= state.tok_emb.rows())
      throw std::out_of_range("embed: token id " + std::to_string(id) + " outside the vocabulary");
    if (nodes.position[j] >= state.pos_emb.rows())
      throw std::out_of_range("embed: position " + std::to_string(nodes.position[j]) + " at node " +
                              std::to_string(j) + " exceeds max_positions " + std::to_string(state.pos_emb.rows()));
    const auto tok = state.tok_emb.row(static_cast<std::size_t>(id));
    const auto pos = state.pos_emb.row(nodes.position[j]);
    const auto seg = state.seg_emb.row(nodes.segment[j]);
    for (std::size_t c = 0; c < d; ++c) x(j, c) = tok[c] + pos[c] + seg[c];
  }
  return x;
}

Mat encode(const Mat& x, const maskgen::MaskSet& masks, const ModelState& state, const ModelConfig& cfg, Mode mode,
           Rng* dropout_rng, EncodeCache* cache) {
  if (masks.layers.size() != state.layers.size())
    throw std::invalid_argument("encode: mask set has " + std::to_string(masks.layers.size()) + " layers, model has " +
                                std::to_string(state.layers.size()));
  const bool train = mode == Mode::Train && cfg.dropout > 0.0;
  if (train && !dropout_rng) throw std::invalid_argument("encode: train mode needs a dropout generator");
  if (cache) cache->layers.assign(state.layers.size(), {});

  Mat h = x;
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto& L = state.layers[l];
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[l] : local;

    Mat a = hetatt::het_attention_forward(h, masks.layers[l], L.attn, cfg.heads, cache ? &lc.attn : nullptr);
    if (train) {
      lc.drop1 = dropout_mask(a.rows(), a.cols(), cfg.dropout, *dropout_rng);
      hadamard_inplace(a, lc.drop1);
    }
    a += h;
    Mat h1 = layer_norm(a, L.ln1_gamma, L.ln1_beta, cache ? &lc.ln1 : nullptr);

    Mat pre = linalg::matmul(h1, L.w1);
    add_row_bias(pre, L.b1);
    Mat act = pre;
    for (auto& v : act.data()) v = gelu(v);
    Mat f = linalg::matmul(act, L.w2);
    add_row_bias(f, L.b2);
    if (train) {
      lc.drop2 = dropout_mask(f.rows(), f.cols(), cfg.dropout, *dropout_rng);
      hadamard_inplace(f, lc.drop2);
    }
    f += h1;
    h = layer_norm(f, L.ln2_gamma, L.ln2_beta, cache ? &lc.ln2 : nullptr);
    if (cache) {
      lc.h1 = std::move(h1);
      lc.ff_pre = std::move(pre);
    }
  }
  return h;
}

Mat encode_backward(const EncodeCache& cache, const ModelState& state, const Mat& dh_out, ModelState& grads) {
  if (cache.layers.size() != state.layers.size()) throw std::invalid_argument("encode_backward: cache/layer mismatch");
  Mat dh = dh_out;
  for (std::size_t li = state.layers.size(); li-- > 0;) {
    const auto& L = state.layers[li];
    const auto& lc = cache.layers[li];
    auto& G = grads.layers[li];

    Mat dz2 = layer_norm_backward(lc.ln2, L.ln2_gamma, dh, G.ln2_gamma, G.ln2_beta);
    Mat dh1 = dz2;
    Mat df = std::move(dz2);
    if (!lc.drop2.empty()) hadamard_inplace(df, lc.drop2);

    Mat act = lc.ff_pre;
    for (auto& v : act.data()) v = gelu(v);
    G.w2 += linalg::matmul_tn(act, df);
    accumulate_col_sums(df, G.b2);
    Mat dpre = linalg::matmul_nt(df, L.w2);
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data()[i] *= gelu_grad(lc.ff_pre.data()[i]);
    G.w1 += linalg::matmul_tn(lc.h1, dpre);
    accumulate_col_sums(dpre, G.b1);
    dh1 += linalg::matmul_nt(dpre, L.w1);

    Mat dz1 = layer_norm_backward(lc.ln1, L.ln1_gamma, dh1, G.ln1_gamma, G.ln1_beta);
    Mat da = dz1;
    if (!lc.drop1.empty()) hadamard_inplace(da, lc.drop1);
    auto ag = hetatt::het_attention_backward(lc.attn, L.attn, da);
    for (std::size_t p = 0; p < hetatt::kNumPatterns; ++p) {
      G.attn.pattern[p].wq += ag.params.pattern[p].wq;
      G.attn.pattern[p].wk += ag.params.pattern[p].wk;
      G.attn.pattern[p].wv += ag.params.pattern[p].wv;
    }
    G.attn.wo += ag.params.wo;
    dz1 += ag.dx;
    dh = std::move(dz1);
  }
  return dh;
}

double sigmoid(double z) {
  const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  // Keep scores strictly inside (0, 1) even when the logit saturates.
  return std::clamp(s, std::numeric_limits<double>::denorm_min(), 1.0 - 0x1.0p-53);
}

std::vector<double> sentence_logits(const Mat& h, const corpus::NodeSequence& nodes, const ModelState& state) {
  std::vector<double> z;
  z.reserve(nodes.sent_nodes.size());
  for (auto s : nodes.sent_nodes) {
    double acc = state.cls_b(0, 0);
    for (std::size_t c = 0; c < h.cols(); ++c) acc += h(s, c) * state.cls_w(c, 0);
    z.push_back(acc);
  }
  return z;
}

std::vector<double> score_sentences(const Mat& h, const corpus::NodeSequence& nodes, const ModelState& state) {
  auto z = sentence_logits(h, nodes, state);
  for (auto& v : z) v = sigmoid(v);
  return z;
}

BceResult bce_loss(const std::vector<double>& logits, const std::vector<int>& labels) {
  if (logits.size() != labels.size()) throw std::invalid_argument("bce_loss: logits and labels differ in length");
  BceResult r;
  r.dlogits.resize(logits.size());
  if (logits.empty()) return r;
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double y = labels[i];
    r.loss += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    r.dlogits[i] = (p - y) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

// ---------------------------------------------------------------- examples

Example make_example(const corpus::Document& doc, const corpus::Vocab& vocab, const ModelConfig& cfg,
                     bool multi_doc) {
  Example ex;
  ex.id = doc.id;
  ex.nodes = corpus::build_nodes(doc, vocab, {multi_doc, cfg.global_positions});
  ex.masks = maskgen::build_mask_set(ex.nodes, cfg.window_schedule(), cfg.enable_ts, cfg.enable_e2e);
  if (doc.labels) ex.labels = *doc.labels;
  return ex;
}

namespace {

struct Forward {
  Mat h;
  EncodeCache cache;
  std::vector<double> logits;
};

Forward run_forward(const Mat& x, const Example& ex, const ModelState& state, const ModelConfig& cfg, Mode mode,
                    std::uint64_t dropout_seed, bool keep_cache) {
  Forward f;
  Rng rng(dropout_seed, "dropout");
  f.h = encode(x, ex.masks, state, cfg, mode, &rng, keep_cache ? &f.cache : nullptr);
  f.logits = sentence_logits(f.h, ex.nodes, state);
  return f;
}

}  // namespace

double loss_from_embeddings(const Mat& x, const Example& ex, const ModelState& state, const ModelConfig& cfg,
                            Mode mode, std::uint64_t dropout_seed) {
  auto f = run_forward(x, ex, state, cfg, mode, dropout_seed, false);
  return bce_loss(f.logits, ex.labels).loss;
}

LossAndGrad loss_and_gradient(const Example& ex, const ModelState& state, const ModelConfig& cfg, Mode mode,
                              std::uint64_t dropout_seed) {
  if (ex.labels.size() != ex.nodes.sent_nodes.size())
    throw std::invalid_argument("document \"" + ex.id + "\" has no oracle labels matching its sentences");
  const Mat x = embed(ex.nodes, state, cfg);
  auto f = run_forward(x, ex, state, cfg, mode, dropout_seed, true);
  auto bce = bce_loss(f.logits, ex.labels);

  LossAndGrad out;
  out.loss = bce.loss;
  out.grads = ModelState::zeros(cfg);
  auto& g = out.grads;
  Mat dh(f.h.rows(), f.h.cols());
  for (std::size_t i = 0; i < ex.nodes.sent_nodes.size(); ++i) {
    const auto s = ex.nodes.sent_nodes[i];
    const double dz = bce.dlogits[i];
    for (std::size_t c = 0; c < f.h.cols(); ++c) {
      dh(s, c) += dz * state.cls_w(c, 0);
      g.cls_w(c, 0) += dz * f.h(s, c);
    }
    g.cls_b(0, 0) += dz;
  }
  out.dx = encode_backward(f.cache, state, dh, g);
  for (std::size_t j = 0; j < ex.nodes.size(); ++j) {
    auto tok = g.tok_emb.row(static_cast<std::size_t>(ex.nodes.node_ids[j]));
    auto pos = g.pos_emb.row(ex.nodes.position[j]);
    auto seg = g.seg_emb.row(ex.nodes.segment[j]);
    for (std::size_t c = 0; c < out.dx.cols(); ++c) {
      tok[c] += out.dx(j, c);
      pos[c] += out.dx(j, c);
      seg[c] += out.dx(j, c);
    }
  }
  return out;
}

std::vector<double> predict(const Example& ex, const ModelState& state, const ModelConfig& cfg) {
  const Mat x = embed(ex.nodes, state, cfg);
  const Mat h = encode(x, ex.masks, state, cfg, Mode::Eval);
  return score_sentences(h, ex.nodes, state);
}

}  // namespace hetformer::model
