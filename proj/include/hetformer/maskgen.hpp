#pragma once

// Binary attention-connectivity masks. Each mask is stored in its natural
// compressed form and answers membership queries in O(1); nothing here is
// ever materialized as an n x n matrix except through densify().

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hetformer/corpus.hpp"

namespace hetformer::maskgen {

enum class MaskKind : std::uint8_t { Band, Global, Blocks };

class SparseMask {
 public:
  SparseMask() = default;

  static SparseMask band(std::size_t n, std::size_t w);
  static SparseMask global(std::size_t n, std::vector<std::size_t> rows, std::vector<std::size_t> cols);
  // Clusters must be pairwise disjoint.
  static SparseMask blocks(std::size_t n, std::vector<std::vector<std::size_t>> clusters);
  static SparseMask empty(std::size_t n) { return blocks(n, {}); }

  std::size_t n() const { return n_; }
  MaskKind kind() const { return kind_; }
  std::size_t radius() const { return w_; }
  const std::vector<std::size_t>& global_rows() const { return rows_; }
  const std::vector<std::size_t>& global_cols() const { return cols_; }
  const std::vector<std::vector<std::size_t>>& clusters() const { return clusters_; }

  bool contains(std::size_t i, std::size_t j) const;
  std::size_t entry_count() const;
  // Allowed columns of row i in ascending order, appended to `out`.
  void row_columns(std::size_t i, std::vector<std::size_t>& out) const;
  std::size_t row_count(std::size_t i) const;

 private:
  std::size_t n_ = 0;
  MaskKind kind_ = MaskKind::Blocks;
  std::size_t w_ = 0;
  std::vector<std::size_t> rows_, cols_;
  std::vector<std::uint8_t> is_row_, is_col_;
  std::vector<std::vector<std::size_t>> clusters_;
  std::vector<std::int64_t> cluster_of_;
};

struct LayerMasks {
  SparseMask t2t;
  SparseMask ts;
  SparseMask e2e;
};

struct MaskSet {
  std::vector<LayerMasks> layers;
  std::vector<std::size_t> window_schedule;
};

enum class ScheduleKind : std::uint8_t { Increasing, Decreasing, Fixed };

struct WindowSchedule {
  ScheduleKind kind = ScheduleKind::Increasing;
  std::size_t w_min = 32;
  std::size_t w_max = 512;
  std::size_t fixed_w = 128;

  // "inc", "dec" or "fixed:W".
  static WindowSchedule parse(const std::string& text, std::size_t w_min, std::size_t w_max);
  std::string to_string() const;
  // Geometric interpolation w_l = round(w_min * (w_max/w_min)^(l/(L-1))).
  std::vector<std::size_t> widths(std::size_t layers) const;
};

SparseMask build_t2t(std::size_t n, std::size_t w);
SparseMask build_ts(const corpus::NodeSequence& nodes);
SparseMask build_e2e(const corpus::NodeSequence& nodes);
MaskSet build_mask_set(const corpus::NodeSequence& nodes, const std::vector<std::size_t>& schedule,
                       bool enable_ts, bool enable_e2e);

struct LayerCounts {
  std::size_t w = 0;
  std::size_t t2t = 0, ts = 0, e2e = 0;
  std::size_t total = 0;
  std::size_t dense = 0;
  double ratio = 0.0;
};

struct EntryCounts {
  std::vector<LayerCounts> layers;
  std::size_t total_sparse = 0;
  std::size_t total_dense = 0;
  double ratio = 0.0;
};

EntryCounts entry_counts(const MaskSet& ms);

inline constexpr std::size_t kDensifyLimit = 4096;
// Row-major n*n booleans (0/1 bytes).
std::vector<std::uint8_t> densify(const SparseMask& m);

// Closed-form entry counts, used to audit entry_counts().
std::size_t band_count_closed_form(std::size_t n, std::size_t w);
std::size_t global_count_closed_form(std::size_t n, std::size_t g);

// Synthetic single-document layout of exactly n positions: a sentence node
// followed by up to `tokens_per_sentence` tokens, repeated; every
// `mention_stride`-th token joins one of `num_entities` clusters round robin.
corpus::NodeSequence synthetic_layout(std::size_t n, std::size_t tokens_per_sentence,
                                      std::size_t mention_stride, std::size_t num_entities);

}  // namespace hetformer::maskgen
