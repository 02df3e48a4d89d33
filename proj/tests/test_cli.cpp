#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "cli_util.hpp"
#include "hetformer/checkpoint.hpp"
#include "hetformer/commands.hpp"
#include "hetformer/maskgen.hpp"
#include "test_util.hpp"

using namespace hetformer;
using test::RunResult;
using test::Scratch;
using test::slurp;
using test::spit;

namespace {

const std::string kFixtures = FIXTURE_DIR;
const std::string kSmall = " --layers 2 --d-model 16 --heads 2 --d-head 8 --d-ff 32 --w-min 2 --w-max 8 ";

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Labels the single-document fixture and trains a small model on it.
struct Trained {
  Scratch s{"hetatt_cli_trained"};
  Trained() {
    REQUIRE(s.hetatt("oracle-label --corpus " + kFixtures + "/news_single.jsonl --out " + s.str("lab.jsonl")).code == 0);
    REQUIRE(s.hetatt("train --corpus " + s.str("lab.jsonl") + " --out-dir " + s.str("run") + kSmall +
                     "--max-steps 30 --warmup-steps 5")
                .code == 0);
  }
};

}  // namespace

TEST_CASE("build-vocab lists reserved entries first") {
  Scratch s("hetatt_cli_vocab");
  const auto r = s.hetatt("build-vocab --corpus " + kFixtures + "/news_single.jsonl");
  CHECK(r.code == 0);
  const auto v = lines(r.out);
  REQUIRE(v.size() > 4);
  CHECK(std::vector<std::string>(v.begin(), v.begin() + 4) == std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[DOC]"});
  CHECK(v[4] == "the");
}

TEST_CASE("oracle-label adds labels and is idempotent") {
  Scratch s("hetatt_cli_label");
  auto r = s.hetatt("oracle-label --corpus " + kFixtures + "/news_single.jsonl --out " + s.str("a.jsonl"));
  CHECK(r.code == 0);
  const auto a = slurp(s.path("a.jsonl"));
  const auto docs = lines(a);
  CHECK(docs.size() == 3);
  for (const auto& d : docs) CHECK(nlohmann::json::parse(d).contains("labels"));
  CHECK(s.path("a.jsonl.config.json").string().size() > 0);
  CHECK(std::filesystem::exists(s.path("a.jsonl.config.json")));

  r = s.hetatt("oracle-label --corpus " + s.str("a.jsonl") + " --out " + s.str("b.jsonl"));
  CHECK(r.code == 0);
  CHECK(slurp(s.path("b.jsonl")) == a);

  spit(s.path("nosum.jsonl"), R"({"id":"has","sentences":["a b"],"summary":["a b"]})"
                              "\n"
                              R"({"id":"lacks","sentences":["c d"]})"
                              "\n");
  r = s.hetatt("oracle-label --corpus " + s.str("nosum.jsonl"));
  CHECK(r.code == 1);
  CHECK(r.err.rfind("hetatt: ", 0) == 0);
  CHECK(r.err.find("lacks") != std::string::npos);
  CHECK(r.err.find("has,") == std::string::npos);
}

TEST_CASE("train writes its outputs and is reproducible") {
  Trained t;
  const auto& s = t.s;
  CHECK(std::filesystem::exists(s.path("run/model.ckpt")));
  const auto cfg = nlohmann::json::parse(slurp(s.path("run/resolved_config.json")));
  CHECK(cfg["d_model"] == 16);
  CHECK(cfg["seed"] == 42);
  CHECK_FALSE(cfg.contains("threads"));
  const auto trace = lines(slurp(s.path("run/loss.csv")));
  CHECK(trace.front() == "step,lr,loss");
  CHECK(trace.size() == 31);

  const auto again = s.hetatt("train --corpus " + s.str("lab.jsonl") + " --out-dir " + s.str("run2") + kSmall +
                              "--max-steps 30 --warmup-steps 5 --threads 3");
  CHECK(again.code == 0);
  CHECK(slurp(s.path("run/model.ckpt")) == slurp(s.path("run2/model.ckpt")));
  CHECK(slurp(s.path("run/loss.csv")) == slurp(s.path("run2/loss.csv")));

  const auto other = s.hetatt("train --corpus " + s.str("lab.jsonl") + " --out-dir " + s.str("run3") + kSmall +
                              "--max-steps 30 --warmup-steps 5 --seed 5");
  CHECK(other.code == 0);
  CHECK(slurp(s.path("run/model.ckpt")) != slurp(s.path("run3/model.ckpt")));
}

TEST_CASE("zero training steps saves the initialization") {
  Scratch s("hetatt_cli_init");
  REQUIRE(s.hetatt("oracle-label --corpus " + kFixtures + "/news_single.jsonl --out " + s.str("lab.jsonl")).code == 0);
  REQUIRE(s.hetatt("train --corpus " + s.str("lab.jsonl") + " --out-dir " + s.str("run") + kSmall + "--max-steps 0")
              .code == 0);
  const auto ck = model::load_checkpoint(s.path("run/model.ckpt"));
  CHECK(ck.state == model::init_model(ck.config));
}

TEST_CASE("train rejects unlabeled input") {
  Scratch s("hetatt_cli_unlabeled");
  const auto r = s.hetatt("train --corpus " + kFixtures + "/news_single.jsonl --out-dir " + s.str("run") + kSmall);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("hetatt: ", 0) == 0);
  CHECK(r.err.find("n1, n2, n3") != std::string::npos);
}

TEST_CASE("extract, evaluate and blocking") {
  Trained t;
  const auto& s = t.s;
  auto r = s.hetatt("extract --corpus " + s.str("lab.jsonl") + " --checkpoint " + s.str("run/model.ckpt") + " --k 3");
  CHECK(r.code == 0);
  for (const auto& l : lines(r.out)) {
    const auto j = nlohmann::json::parse(l);
    CHECK(j["summary"].size() <= 3);
    CHECK(j["summary"].size() == j["selected"].size());
  }
  spit(s.path("sum.jsonl"), r.out);
  r = s.hetatt("evaluate --corpus " + s.str("lab.jsonl") + " --summaries " + s.str("sum.jsonl"));
  CHECK(r.code == 0);
  const auto csv = lines(r.out);
  REQUIRE(csv.size() == 5);
  CHECK(csv[0] == "doc_id,r1,r2,rl");
  CHECK(csv[4].rfind("mean,", 0) == 0);

  spit(s.path("partial.jsonl"), lines(slurp(s.path("sum.jsonl")))[0] + "\n");
  r = s.hetatt("evaluate --corpus " + s.str("lab.jsonl") + " --summaries " + s.str("partial.jsonl"));
  CHECK(r.code == 1);
  CHECK(r.err.rfind("hetatt: ", 0) == 0);

  spit(s.path("dup.jsonl"), R"({"id":"dup","sentences":["the storm hit the coast","the storm hit the coast","crews restored power"]})"
                            "\n");
  const auto ck = " --checkpoint " + s.str("run/model.ckpt") + " --k 3";
  r = s.hetatt("extract --corpus " + s.str("dup.jsonl") + ck);
  CHECK(nlohmann::json::parse(r.out)["selected"].size() == 2);
  r = s.hetatt("extract --no-blocking --corpus " + s.str("dup.jsonl") + ck);
  CHECK(nlohmann::json::parse(r.out)["selected"].size() == 3);
}

TEST_CASE("multi-document extraction") {
  Scratch s("hetatt_cli_multi");
  REQUIRE(s.hetatt("oracle-label --corpus " + kFixtures + "/news_multi.jsonl --out " + s.str("lab.jsonl")).code == 0);
  REQUIRE(s.hetatt("train --multi-doc --corpus " + s.str("lab.jsonl") + " --out-dir " + s.str("run") + kSmall +
                   "--max-steps 5")
              .code == 0);
  const auto r = s.hetatt("extract --multi-doc --k 9 --corpus " + s.str("lab.jsonl") + " --checkpoint " +
                          s.str("run/model.ckpt"));
  CHECK(r.code == 0);
  const auto docs = lines(r.out);
  CHECK(docs.size() == 2);
  for (const auto& l : docs) {
    const auto n = nlohmann::json::parse(l)["summary"].size();
    CHECK(n <= 9);
    CHECK(n >= 1);
  }
}

TEST_CASE("memcost matches the closed-form counts") {
  Scratch s("hetatt_cli_memcost");
  const auto r = s.hetatt("memcost --n 512 --layers 4 --schedule inc --w-min 32 --w-max 256");
  CHECK(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "layer,w,t2t,ts,e2e,total,dense,ratio");
  const auto ns = maskgen::synthetic_layout(512, 16, 8, 8);
  const std::size_t g = ns.sent_nodes.size();
  std::size_t sq = 0;
  for (const auto& c : ns.entity_positions) sq += c.size() * c.size();
  const std::size_t widths[] = {32, 64, 128, 256};
  std::size_t grand = 0;
  for (std::size_t l = 0; l < 4; ++l) {
    const auto w = widths[l];
    const std::size_t band = 512 * (2 * w + 1) - w * (w + 1);
    const std::size_t ts = 2 * g * 512 - g * g;
    const std::size_t total = band + ts + sq;
    grand += total;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%zu,262144,%.6f", l, w, band, ts, sq, total,
                  static_cast<double>(total) / 262144.0);
    CHECK(rows[l + 1] == buf);
  }
  CHECK(rows[5].rfind("total,,", 0) == 0);
  CHECK(rows[5].find("," + std::to_string(grand) + ",") != std::string::npos);
}

TEST_CASE("gradcheck passes on the toy document") {
  Scratch s("hetatt_cli_gradcheck");
  const auto r = s.hetatt("gradcheck --layers 2" + std::string(" --out ") + s.str("g.csv"));
  CHECK(r.code == 0);
  const auto rows = lines(slurp(s.path("g.csv")));
  CHECK(rows.front() == "tensor,checked,max_rel_error,status");
  CHECK(rows.back().rfind("input_embeddings,", 0) == 0);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].substr(rows[i].rfind(',') + 1) == "pass");
}

TEST_CASE("configuration files and error reporting") {
  Scratch s("hetatt_cli_config");
  spit(s.path("c.json"), R"({"n": 64, "layers": 1, "schedule": "fixed:3", "no_e2e": true})");
  auto r = s.hetatt("memcost --config " + s.str("c.json"));
  CHECK(r.code == 0);
  CHECK(lines(r.out)[1].rfind("0,3,", 0) == 0);
  r = s.hetatt("memcost --config " + s.str("c.json") + " --schedule fixed:5");
  CHECK(lines(r.out)[1].rfind("0,5,", 0) == 0);
  r = s.hetatt("memcost --config " + s.str("c.json") + " --out " + s.str("m.csv"));
  const auto resolved = nlohmann::json::parse(slurp(s.path("m.csv.config.json")));
  CHECK(resolved["n"] == 64);
  CHECK(resolved["no_e2e"] == true);

  spit(s.path("bad.json"), R"({"n": 64, "windows": 3})");
  r = s.hetatt("memcost --config " + s.str("bad.json"));
  CHECK(r.code == 1);
  CHECK(r.err == "hetatt: unknown config key \"windows\"\n");

  r = s.hetatt("extract --corpus /nonexistent.jsonl --checkpoint /nonexistent.ckpt");
  CHECK(r.code == 1);
  CHECK(r.err.rfind("hetatt: ", 0) == 0);
  r = s.hetatt("memcost --n 1");
  CHECK(r.code == 1);
  CHECK(r.err.rfind("hetatt: ", 0) == 0);
}

TEST_CASE("in-process commands match the binary") {
  Scratch s("hetatt_cli_inproc");
  cli::RunConfig cfg;
  cfg.corpus = kFixtures + "/news_single.jsonl";
  std::ostringstream out;
  cli::cmd_oracle_label(cfg, out);
  CHECK(out.str() == s.hetatt("oracle-label --corpus " + cfg.corpus).out);
  cfg = {};
  cfg.n = 128;
  cfg.layers = 2;
  std::ostringstream mem;
  cli::cmd_memcost(cfg, mem);
  CHECK(mem.str() == s.hetatt("memcost --n 128 --layers 2").out);
}
