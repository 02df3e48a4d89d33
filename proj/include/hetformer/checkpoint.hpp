#pragma once

// Checkpoint layout:
//   8 bytes   magic "HETF0001"
//   manifest  compact UTF-8 JSON (config, vocab, ordered tensor name/shape/
//             offset list, blob size) terminated by a single '\n'
//   blob      little-endian IEEE-754 binary32 values, tensors back to back
//
// Parameters are held in 64-bit during training and downcast on save.

#include <filesystem>
#include <stdexcept>

#include "hetformer/corpus.hpp"
#include "hetformer/model.hpp"

namespace hetformer::model {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[] = "HETF0001";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  corpus::Vocab vocab;
  ModelState state;
};

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const ModelConfig& cfg,
                     const corpus::Vocab& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hetformer::model
