#pragma once

// Heterogeneous sparse multi-head attention.
//
// Each pattern m in {t2t, ts, e2e} owns its Q/K/V projections. Scores are
// evaluated only at mask entries (CSR layout, one column list per row, shared
// by all heads), so work and storage scale with the entry count rather than
// n^2. Pattern outputs are summed and passed through one shared output
// projection:  Y = (A^t2t + A^ts + A^e2e) W_O.
//
// The kernels are OpenMP-parallel over (head, row) in the forward pass and
// over heads in the backward pass. Every reduction has a fixed order, so
// results are bit-identical for any thread count. dense_reference_attention()
// is the serial O(n^2) oracle kept for tests and benchmarks.

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "hetformer/linalg.hpp"
#include "hetformer/maskgen.hpp"

namespace hetformer::hetatt {

using linalg::Matrix;

inline constexpr std::size_t kNumPatterns = 3;
enum class Pattern : std::uint8_t { T2T = 0, TS = 1, E2E = 2 };
std::string_view pattern_name(std::size_t p);

struct AttentionShape {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t d_head = 0;
  std::size_t inner() const { return heads * d_head; }
};

// Projections for one pattern; head h uses columns [h*d_head, (h+1)*d_head).
template <typename T>
struct PatternProjections {
  Matrix<T> wq, wk, wv;  // d_model x (heads*d_head)
};

template <typename T>
struct AttentionParams {
  std::array<PatternProjections<T>, kNumPatterns> pattern;
  Matrix<T> wo;  // (heads*d_head) x d_model, shared across patterns

  static AttentionParams zeros(const AttentionShape& s);
  AttentionShape shape(std::size_t heads) const;
};

// Row-compressed column lists of a mask. Storage equals the entry count.
struct CsrPattern {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;  // n + 1
  std::vector<std::uint32_t> cols;

  static CsrPattern from_mask(const maskgen::SparseMask& m);
  std::size_t nnz() const { return cols.size(); }
};

struct SoftmaxResult {
  std::vector<double> probs;
  bool empty = false;
};

// Probabilities over `allowed` positions with max subtraction; every other
// position is exactly 0. An empty allowed set yields all zeros and empty=true.
// Throws std::domain_error if any allowed score is NaN.
SoftmaxResult masked_softmax(std::span<const double> scores, std::span<const std::size_t> allowed);

template <typename T>
struct PatternCache {
  CsrPattern csr;
  Matrix<T> q, k, v;        // n x inner
  std::vector<T> probs;     // heads * nnz, head-major
  std::vector<std::uint8_t> empty_row;  // n
  bool active = false;
};

template <typename T>
struct AttentionCache {
  Matrix<T> x;
  Matrix<T> combined;  // sum of pattern outputs, n x inner
  std::array<PatternCache<T>, kNumPatterns> pattern;
  std::size_t heads = 0;
};

template <typename T>
struct AttentionGrads {
  Matrix<T> dx;
  AttentionParams<T> params;
};

// Counts score evaluations (query-key dot products) across all calls.
std::uint64_t score_evaluations();
void reset_score_evaluations();

template <typename T>
struct PatternOutput {
  Matrix<T> out;  // n x inner
  PatternCache<T> cache;
};

template <typename T>
PatternOutput<T> pattern_attention_forward(const Matrix<T>& x, const maskgen::SparseMask& mask,
                                           const PatternProjections<T>& proj, std::size_t heads);

template <typename T>
Matrix<T> het_attention_forward(const Matrix<T>& x, const maskgen::LayerMasks& masks,
                                const AttentionParams<T>& params, std::size_t heads,
                                AttentionCache<T>* cache = nullptr);

template <typename T>
AttentionGrads<T> het_attention_backward(const AttentionCache<T>& cache, const AttentionParams<T>& params,
                                         const Matrix<T>& dy);

inline constexpr std::size_t kDenseReferenceLimit = 256;

// O(n^2) oracle: -inf masking before a full softmax, all-masked rows zeroed.
// `masks` are row-major n*n 0/1 matrices, one per pattern.
template <typename T>
Matrix<T> dense_reference_attention(const Matrix<T>& x,
                                    const std::array<std::vector<std::uint8_t>, kNumPatterns>& masks,
                                    const AttentionParams<T>& params, std::size_t heads);

}  // namespace hetformer::hetatt
