#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hetformer/extract.hpp"
#include "hetformer/gradcheck.hpp"
#include "hetformer/model.hpp"
#include "test_util.hpp"

using namespace hetformer;
using namespace hetformer::model;

namespace {

ModelConfig small_config(std::size_t vocab) {
  auto cfg = ModelConfig::desk(vocab);
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_head = 4;
  cfg.d_ff = 12;
  cfg.layers = 2;
  cfg.schedule = maskgen::WindowSchedule::parse("inc", 1, 2);
  cfg.max_positions = 16;
  return cfg;
}

struct Toy {
  corpus::Vocab vocab;
  ModelConfig cfg;
  Example ex;
};

Toy toy(std::size_t layers = 2) {
  Toy t;
  const auto doc = test::toy_doc();
  t.vocab = corpus::build_vocab({doc}, 1);
  t.cfg = small_config(t.vocab.size());
  t.cfg.layers = layers;
  t.ex = make_example(doc, t.vocab, t.cfg, false);
  return t;
}

// Dense single-layer encoder plus classifier written from the layer equations.
std::vector<double> dense_layer_logits(const Mat& x, const Example& ex, const ModelState& s, const ModelConfig& cfg) {
  const auto& L = s.layers[0];
  const auto dense = test::densify_all(ex.masks.layers[0]);
  const std::size_t n = x.rows(), d = cfg.d_model, dh = cfg.d_head;
  Mat att(n, cfg.heads * dh);
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& p = L.attn.pattern[m];
    for (std::size_t h = 0; h < cfg.heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sc(n, -INFINITY);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          if (!dense[m][i * n + j]) continue;
          double dot = 0;
          for (std::size_t c = 0; c < dh; ++c) {
            double q = 0, k = 0;
            for (std::size_t r = 0; r < d; ++r) {
              q += x(i, r) * p.wq(r, h * dh + c);
              k += x(j, r) * p.wk(r, h * dh + c);
            }
            dot += q * k;
          }
          sc[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, sc[j]);
        }
        if (mx == -INFINITY) continue;
        double z = 0;
        for (auto& v : sc) z += v = std::exp(v - mx);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = 0; c < dh; ++c) {
            double v = 0;
            for (std::size_t r = 0; r < d; ++r) v += x(j, r) * p.wv(r, h * dh + c);
            att(i, h * dh + c) += sc[j] / z * v;
          }
      }
  }
  auto layer_norm = [&](const Mat& a, const Mat& g, const Mat& b) {
    Mat out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < d; ++c) mean += a(i, c);
      mean /= static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) var += (a(i, c) - mean) * (a(i, c) - mean);
      var /= static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) out(i, c) = (a(i, c) - mean) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c);
    }
    return out;
  };
  Mat r1 = linalg::matmul(att, L.attn.wo);
  r1 += x;
  const Mat h1 = layer_norm(r1, L.ln1_gamma, L.ln1_beta);
  Mat r2(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double v = L.b2(0, c);
      for (std::size_t f = 0; f < cfg.d_ff; ++f) {
        double pre = L.b1(0, f);
        for (std::size_t r = 0; r < d; ++r) pre += h1(i, r) * L.w1(r, f);
        v += 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0))) * L.w2(f, c);
      }
      r2(i, c) = v + h1(i, c);
    }
  const Mat h = layer_norm(r2, L.ln2_gamma, L.ln2_beta);
  std::vector<double> logits;
  for (auto j : ex.nodes.sent_nodes) {
    double z = s.cls_b(0, 0);
    for (std::size_t c = 0; c < d; ++c) z += h(j, c) * s.cls_w(c, 0);
    logits.push_back(z);
  }
  return logits;
}

}  // namespace

TEST_CASE("initialization is deterministic per seed") {
  auto cfg = small_config(20);
  CHECK(init_model(cfg) == init_model(cfg));
  auto other = cfg;
  other.seed = 43;
  CHECK_FALSE(init_model(cfg) == init_model(other));
  const auto s = init_model(cfg);
  CHECK(s.all_finite());
  CHECK(s.cls_w == Mat(cfg.d_model, 1));
  for (const auto& [name, t] : s.tensors())
    for (double v : t->data()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("parameter count of the desk configuration") {
  // Embeddings 1000*64 + 512*64 + 2*64 = 96896. Per layer: 9 projections of
  // 64x64 (36864), W_O 4096, two norms 256, FFN 64*256+256+256*64+64 = 33088,
  // giving 74304; four layers 297216. Classifier 65. Total 394177.
  const auto cfg = ModelConfig::desk(1000);
  CHECK(parameter_count(cfg) == 394177);
  CHECK(init_model(cfg).parameter_count() == 394177);
  CHECK(parameter_count(ModelConfig::full_size(1000)) == ModelState::zeros(ModelConfig::full_size(1000)).parameter_count());
}

TEST_CASE("config validation and json round trip") {
  auto cfg = small_config(30);
  CHECK(ModelConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  cfg.d_model = 9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero classifier scores every sentence at one half") {
  auto t = toy();
  const auto s = init_model(t.cfg);
  const auto scores = predict(t.ex, s, t.cfg);
  CHECK(scores == std::vector<double>{0.5, 0.5});
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("embedding rows") {
  auto t = toy();
  const auto s = init_model(t.cfg);
  const auto x = embed(t.ex.nodes, s, t.cfg);
  // Nodes 0 and 4 are both sentence nodes at position 0, in segments 0 and 1.
  for (std::size_t c = 0; c < t.cfg.d_model; ++c)
    CHECK(x(4, c) - x(0, c) == doctest::Approx(s.seg_emb(1, c) - s.seg_emb(0, c)).epsilon(1e-12));
  auto ns = t.ex.nodes;
  ns.segment[4] = 0;
  const auto x2 = embed(ns, s, t.cfg);
  for (std::size_t c = 0; c < t.cfg.d_model; ++c) CHECK(x2(4, c) == x2(0, c));

  ns.position[2] = t.cfg.max_positions;
  CHECK_THROWS_AS(embed(ns, s, t.cfg), std::out_of_range);
}

TEST_CASE("encoder basics") {
  auto t = toy();
  const auto s = init_model(t.cfg);
  const auto x = embed(t.ex.nodes, s, t.cfg);
  CHECK(encode(x, t.ex.masks, s, t.cfg, Mode::Eval) == encode(x, t.ex.masks, s, t.cfg, Mode::Eval));
  CHECK_THROWS(encode(x, t.ex.masks, s, t.cfg, Mode::Train));

  auto t0 = toy(0);
  const auto s0 = init_model(t0.cfg);
  const auto x0 = embed(t0.ex.nodes, s0, t0.cfg);
  CHECK(encode(x0, t0.ex.masks, s0, t0.cfg, Mode::Eval) == x0);
}

TEST_CASE("single layer matches the dense oracle") {
  for (int trial = 0; trial < 5; ++trial) {
    auto t = toy(1);
    auto s = init_model(t.cfg);
    perturb_for_gradcheck(s, 100 + trial, 0.3);
    const auto x = embed(t.ex.nodes, s, t.cfg);
    const auto h = encode(x, t.ex.masks, s, t.cfg, Mode::Eval);
    const auto logits = sentence_logits(h, t.ex.nodes, s);
    const auto ref = dense_layer_logits(x, t.ex, s, t.cfg);
    REQUIRE(logits.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(logits[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("binary cross-entropy") {
  auto r = bce_loss({0.0, 0.0}, {1, 0});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(r.dlogits[0] == doctest::Approx(-0.25));
  CHECK(r.dlogits[1] == doctest::Approx(0.25));
  CHECK(bce_loss({40.0, -40.0}, {1, 0}).loss < 1e-15);
  CHECK(std::isfinite(bce_loss({-800.0}, {1}).loss));
  CHECK(bce_loss({-800.0}, {1}).loss == doctest::Approx(800.0));
  const std::vector<double> z = {0.3, -1.2, 2.0};
  const std::vector<int> y = {1, 0, 0};
  const auto g = bce_loss(z, y);
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += 1e-6;
    zm[i] -= 1e-6;
    CHECK(g.dlogits[i] == doctest::Approx((bce_loss(zp, y).loss - bce_loss(zm, y).loss) / 2e-6).epsilon(1e-6));
  }
  CHECK_THROWS(bce_loss({0.0}, {1, 0}));
}

TEST_CASE("eval-mode scores are bit-identical") {
  auto t = toy();
  auto s = init_model(t.cfg);
  perturb_for_gradcheck(s, 5);
  CHECK(predict(t.ex, s, t.cfg) == predict(t.ex, s, t.cfg));
}

TEST_CASE("extraction examples") {
  const std::vector<std::string> sents = {"a b c", "d e f", "g h i"};
  auto r = extract(std::vector<double>{0.9, 0.1, 0.8}, sents, 2, true);
  CHECK(r.selected == std::vector<std::size_t>{0, 2});
  CHECK(r.summary == std::vector<std::string>{"a b c", "g h i"});

  const std::vector<std::string> dup = {"the cat sat down", "the cat sat down"};
  CHECK(extract(std::vector<double>{0.6, 0.5}, dup, 2, true).selected.size() == 1);
  CHECK(extract(std::vector<double>{0.6, 0.5}, dup, 2, false).selected.size() == 2);

  const std::vector<std::string> mixed = {"x y z", "p q r s", "x y z w", "m n"};
  r = extract(std::vector<double>{0.1, 0.2, 0.3, 0.4}, mixed, 10, true);
  CHECK(r.selected == std::vector<std::size_t>{3, 2, 1});
  r = extract(std::vector<double>{0.5, 0.5, 0.5}, sents, 2, false);
  CHECK(r.selected == std::vector<std::size_t>{0, 1});
  CHECK_THROWS(extract(std::vector<double>{0.5}, {"a"}, 0, true));
  CHECK_THROWS(extract(std::vector<double>{0.5, 0.1}, {"a"}, 1, true));
}

TEST_CASE("extraction properties on random scores") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const auto doc = test::random_doc(rng, trial);
    const auto n = doc.sentences.size();
    std::vector<double> z(n);
    for (auto& v : z) v = std::round(rng.uniform(-3, 3) * 4) / 4;  // coarse, so ties occur
    const std::size_t k = 1 + rng.below(n + 1);
    const bool blocking = trial % 2 == 0;
    std::vector<double> p(n), cubed(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = sigmoid(z[i]);
      cubed[i] = z[i] * z[i] * z[i] + 2 * z[i];
    }
    const auto a = extract(p, doc.sentences, k, blocking);
    CHECK(a.selected == extract(z, doc.sentences, k, blocking).selected);
    CHECK(a.selected == extract(cubed, doc.sentences, k, blocking).selected);
    CHECK(a.selected.size() <= k);
    if (blocking)
      for (std::size_t i = 0; i < a.selected.size(); ++i)
        for (std::size_t j = i + 1; j < a.selected.size(); ++j)
          CHECK_FALSE(shares_trigram(doc.sentences[a.selected[i]], doc.sentences[a.selected[j]]));
    std::vector<std::size_t> sorted = a.selected;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(a.summary.size() == sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(a.summary[i] == doc.sentences[sorted[i]]);
  }
}

TEST_CASE("end-to-end gradient check on the toy document") {
  auto t = toy();
  auto s = init_model(t.cfg);
  perturb_for_gradcheck(s, 3);
  GradcheckOptions opt;
  opt.max_entries = 0;
  const auto checks = gradcheck(t.ex, s, t.cfg, opt);
  CHECK(checks.size() == s.tensors().size() + 1);
  CHECK(checks.back().name == kInputEmbeddingsName);
  for (const auto& c : checks) {
    INFO(c.name, " ", c.max_rel_error);
    CHECK(c.pass);
    CHECK(c.max_rel_error < 1e-5);
  }
}

TEST_CASE("gradient check in train mode with dropout") {
  auto t = toy();
  auto s = init_model(t.cfg);
  perturb_for_gradcheck(s, 4);
  GradcheckOptions opt;
  opt.mode = Mode::Train;
  for (const auto& c : gradcheck(t.ex, s, t.cfg, opt)) {
    INFO(c.name, " ", c.max_rel_error);
    CHECK(c.pass);
  }
}

TEST_CASE("gradient check flags an injected sign error") {
  auto t = toy();
  auto s = init_model(t.cfg);
  perturb_for_gradcheck(s, 3);
  GradcheckOptions opt;
  opt.corrupt = [](const std::string& name, Mat& g) {
    if (name == "layer0.attn.e2e.wk")
      for (auto& v : g.data()) v = -v;
  };
  for (const auto& c : gradcheck(t.ex, s, t.cfg, opt)) CHECK(c.pass == (c.name != "layer0.attn.e2e.wk"));
  const auto csv = format_gradcheck_csv(gradcheck(t.ex, s, t.cfg, opt));
  CHECK(csv.rfind("tensor,checked,max_rel_error,status\n", 0) == 0);
  CHECK(csv.find("layer0.attn.e2e.wk,") != std::string::npos);
  CHECK(csv.find("FAIL") != std::string::npos);
}

TEST_CASE("relative error") {
  CHECK(relative_error(1.0, 1.0, 1e-4) == 0.0);
  CHECK(relative_error(2.0, 1.0, 1e-4) == 0.5);
  CHECK(relative_error(0.0, 1e-9, 1e-4) == doctest::Approx(1e-5));
  CHECK(GradcheckOptions{}.floor == 1e-5);
}
