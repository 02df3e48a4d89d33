#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "hetformer/checkpoint.hpp"
#include "hetformer/gradcheck.hpp"
#include "test_util.hpp"

using namespace hetformer;
using namespace hetformer::model;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}

struct Fixture {
  fs::path dir = fs::temp_directory_path() / "hetformer_ckpt_test";
  corpus::Vocab vocab;
  ModelConfig cfg;
  ModelState state;

  Fixture() {
    fs::create_directories(dir);
    const auto doc = test::toy_doc();
    vocab = corpus::build_vocab({doc}, 1);
    cfg = ModelConfig::desk(vocab.size());
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.d_head = 4;
    cfg.d_ff = 12;
    cfg.layers = 2;
    cfg.max_positions = 16;
    state = init_model(cfg);
    perturb_for_gradcheck(state, 9);
    state.step = 17;
  }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "save, load and save again is byte-identical") {
  save_checkpoint(dir / "a.ckpt", state, cfg, vocab);
  const auto ck = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", ck.state, ck.config, ck.vocab);
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));

  const auto bytes = read_bytes(dir / "a.ckpt");
  CHECK(bytes.compare(0, 8, kCheckpointMagic) == 0);
  CHECK(ck.config.to_json() == cfg.to_json());
  CHECK(ck.vocab.non_reserved_tokens() == vocab.non_reserved_tokens());
  CHECK(ck.state.step == 17);

  auto rounded = state;
  round_to_f32(rounded);
  CHECK(ck.state == rounded);
}

TEST_CASE_FIXTURE(Fixture, "loaded model reproduces the saved model's scores") {
  round_to_f32(state);
  save_checkpoint(dir / "m.ckpt", state, cfg, vocab);
  const auto ck = load_checkpoint(dir / "m.ckpt");
  const auto ex = make_example(test::toy_doc(), vocab, cfg, false);
  CHECK(predict(ex, ck.state, ck.config) == predict(ex, state, cfg));
}

TEST_CASE_FIXTURE(Fixture, "edited manifest dimensions are shape errors") {
  save_checkpoint(dir / "a.ckpt", state, cfg, vocab);
  const auto bytes = read_bytes(dir / "a.ckpt");

  auto edit = [&](const std::string& from, const std::string& to) {
    auto b = bytes;
    const auto at = b.find(from);
    REQUIRE(at != std::string::npos);
    b.replace(at, from.size(), to);
    write_bytes(dir / "e.ckpt", b);
  };
  edit("\"d_model\":8", "\"d_model\":16");
  CHECK_THROWS_AS(load_checkpoint(dir / "e.ckpt"), CheckpointShapeError);
  edit("\"d_head\":4", "\"d_head\":3");
  CHECK_THROWS_AS(load_checkpoint(dir / "e.ckpt"), CheckpointShapeError);
  edit("\"d_ff\":12", "\"d_ff\":13");
  CHECK_THROWS_AS(load_checkpoint(dir / "e.ckpt"), CheckpointShapeError);
}

TEST_CASE_FIXTURE(Fixture, "truncated, foreign and future-version files are rejected") {
  save_checkpoint(dir / "a.ckpt", state, cfg, vocab);
  const auto bytes = read_bytes(dir / "a.ckpt");

  write_bytes(dir / "t.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CheckpointTruncatedError);
  write_bytes(dir / "t.ckpt", bytes.substr(0, 40));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CheckpointTruncatedError);
  write_bytes(dir / "t.ckpt", bytes + "xx");
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CheckpointError);

  auto v2 = bytes;
  v2.replace(0, 8, "HETF0002");
  write_bytes(dir / "v.ckpt", v2);
  CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), CheckpointVersionError);

  write_bytes(dir / "x.ckpt", "PK\x03\x04 not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}
