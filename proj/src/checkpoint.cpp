#include "hetformer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace hetformer::model {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::size_t kMagicLen = 8;

void put_f32_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const ModelConfig& cfg,
                     const corpus::Vocab& vocab) {
  ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = cfg.to_json();
  manifest["step"] = state.step;
  manifest["vocab"] = vocab.non_reserved_tokens();
  ordered_json tensors = ordered_json::array();
  std::string blob;
  for (const auto& [name, t] : state.tensors()) {
    tensors.push_back({{"name", name}, {"shape", {t->rows(), t->cols()}}, {"offset", blob.size()}});
    for (double v : t->data()) put_f32_le(blob, v);
  }
  manifest["tensors"] = std::move(tensors);
  manifest["blob_bytes"] = blob.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, kMagicLen);
  const std::string text = manifest.dump();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.put('\n');
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw CheckpointError("write failed for checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kMagicLen) throw CheckpointTruncatedError("checkpoint truncated inside the magic header");
  if (bytes.compare(0, 4, "HETF") != 0) throw CheckpointError("not a checkpoint file (bad magic): " + path.string());
  if (bytes.compare(0, kMagicLen, kCheckpointMagic) != 0)
    throw CheckpointVersionError("unsupported checkpoint version \"" + bytes.substr(0, kMagicLen) + "\", expected \"" +
                                 kCheckpointMagic + "\"");

  const auto nl = bytes.find('\n', kMagicLen);
  if (nl == std::string::npos) throw CheckpointTruncatedError("checkpoint truncated inside the manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + kMagicLen, bytes.begin() + static_cast<std::ptrdiff_t>(nl));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }

  Checkpoint ck;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
      throw CheckpointVersionError("checkpoint manifest version " + manifest.at("format_version").dump() +
                                   " is not supported");
    ck.config = ModelConfig::from_json(manifest.at("config"));
    ck.vocab = corpus::Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    if (ck.vocab.size() != ck.config.vocab_size)
      throw CheckpointShapeError("checkpoint vocabulary has " + std::to_string(ck.vocab.size()) +
                                 " entries but config says " + std::to_string(ck.config.vocab_size));
    ck.state = ModelState::zeros(ck.config);
    ck.state.step = manifest.at("step").get<std::uint64_t>();

    const auto& listed = manifest.at("tensors");
    auto expected = ck.state.tensors();
    if (listed.size() != expected.size())
      throw CheckpointShapeError("checkpoint lists " + std::to_string(listed.size()) + " tensors, config implies " +
                                 std::to_string(expected.size()));
    const std::size_t blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    const std::size_t blob_start = nl + 1;
    if (bytes.size() - blob_start < blob_bytes)
      throw CheckpointTruncatedError("checkpoint blob truncated: " + std::to_string(bytes.size() - blob_start) +
                                     " of " + std::to_string(blob_bytes) + " bytes present");
    if (bytes.size() - blob_start > blob_bytes)
      throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - blob_start - blob_bytes) +
                            " unexpected bytes after the blob");
    const auto* blob = reinterpret_cast<const unsigned char*>(bytes.data() + blob_start);

    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& entry = listed[i];
      auto& t = *expected[i].tensor;
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (name != expected[i].name || shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
        throw CheckpointShapeError("tensor \"" + name + "\" shape " + entry.at("shape").dump() + " does not match \"" +
                                   expected[i].name + "\" [" + std::to_string(t.rows()) + "," +
                                   std::to_string(t.cols()) + "] implied by the config");
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset + 4 * t.size() > blob_bytes)
        throw CheckpointTruncatedError("tensor \"" + name + "\" extends past the end of the blob");
      for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = get_f32_le(blob + offset + 4 * k);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointShapeError(std::string("invalid checkpoint config: ") + e.what());
  }
  return ck;
}

}  // namespace hetformer::model
