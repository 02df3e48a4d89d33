#include "hetformer/hetatt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hetformer::hetatt {

namespace {

std::atomic<std::uint64_t> g_score_evals{0};

template <typename T>
void check_params(const AttentionParams<T>& p, std::size_t d_model, std::size_t heads) {
  const std::size_t inner = p.wo.rows();
  if (heads == 0 || inner % heads != 0) throw std::invalid_argument("attention: inner width not divisible by heads");
  if (p.wo.cols() != d_model) throw std::invalid_argument("attention: W_O column count != d_model");
  for (const auto& pp : p.pattern)
    for (const auto* w : {&pp.wq, &pp.wk, &pp.wv})
      if (w->rows() != d_model || w->cols() != inner)
        throw std::invalid_argument("attention: projection shape mismatch");
}

}  // namespace

std::string_view pattern_name(std::size_t p) {
  static constexpr std::array<std::string_view, kNumPatterns> names = {"t2t", "ts", "e2e"};
  return names.at(p);
}

std::uint64_t score_evaluations() { return g_score_evals.load(); }
void reset_score_evaluations() { g_score_evals.store(0); }

template <typename T>
AttentionParams<T> AttentionParams<T>::zeros(const AttentionShape& s) {
  AttentionParams<T> p;
  for (auto& pp : p.pattern) {
    pp.wq = Matrix<T>(s.d_model, s.inner());
    pp.wk = Matrix<T>(s.d_model, s.inner());
    pp.wv = Matrix<T>(s.d_model, s.inner());
  }
  p.wo = Matrix<T>(s.inner(), s.d_model);
  return p;
}

template <typename T>
AttentionShape AttentionParams<T>::shape(std::size_t heads) const {
  return {wo.cols(), heads, heads ? wo.rows() / heads : 0};
}

CsrPattern CsrPattern::from_mask(const maskgen::SparseMask& m) {
  CsrPattern c;
  c.n = m.n();
  c.row_ptr.resize(c.n + 1, 0);
  for (std::size_t i = 0; i < c.n; ++i) c.row_ptr[i + 1] = c.row_ptr[i] + m.row_count(i);
  c.cols.reserve(c.row_ptr.back());
  std::vector<std::size_t> row;
  for (std::size_t i = 0; i < c.n; ++i) {
    row.clear();
    m.row_columns(i, row);
    for (auto j : row) c.cols.push_back(static_cast<std::uint32_t>(j));
  }
  return c;
}

SoftmaxResult masked_softmax(std::span<const double> scores, std::span<const std::size_t> allowed) {
  SoftmaxResult r;
  r.probs.assign(scores.size(), 0.0);
  if (allowed.empty()) {
    r.empty = true;
    return r;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (auto j : allowed) {
    if (j >= scores.size()) throw std::out_of_range("masked_softmax: allowed index out of range");
    if (std::isnan(scores[j])) throw std::domain_error("masked_softmax: NaN score");
    mx = std::max(mx, scores[j]);
  }
  double sum = 0.0;
  for (auto j : allowed) sum += (r.probs[j] = std::exp(scores[j] - mx));
  for (auto j : allowed) r.probs[j] /= sum;
  return r;
}

template <typename T>
PatternOutput<T> pattern_attention_forward(const Matrix<T>& x, const maskgen::SparseMask& mask,
                                           const PatternProjections<T>& proj, std::size_t heads) {
  const std::size_t n = x.rows();
  if (mask.n() != n) throw std::invalid_argument("attention: mask size does not match sequence length");
  if (heads == 0 || proj.wq.cols() % heads != 0) throw std::invalid_argument("attention: bad head count");
  if (proj.wq.rows() != x.cols()) throw std::invalid_argument("attention: projection rows != d_model");

  const std::size_t inner = proj.wq.cols();
  const std::size_t dh = inner / heads;
  PatternOutput<T> res;
  res.out = Matrix<T>(n, inner);
  auto& c = res.cache;
  c.empty_row.assign(n, 1);
  if (mask.entry_count() == 0) return res;

  c.active = true;
  c.csr = CsrPattern::from_mask(mask);
  c.q = linalg::matmul(x, proj.wq);
  c.k = linalg::matmul(x, proj.wk);
  c.v = linalg::matmul(x, proj.wv);
  const std::size_t nnz = c.csr.nnz();
  c.probs.assign(heads * nnz, T{0});
  for (std::size_t i = 0; i < n; ++i) c.empty_row[i] = c.csr.row_ptr[i] == c.csr.row_ptr[i + 1];

  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const long work = static_cast<long>(heads * n);
  std::uint64_t evals = 0;
  bool saw_nan = false;
#pragma omp parallel for schedule(static) reduction(+ : evals) reduction(|| : saw_nan) \
    if (nnz * inner >= parallel::kMinParallelWork)
  for (long hi = 0; hi < work; ++hi) {
    const std::size_t h = static_cast<std::size_t>(hi) / n;
    const std::size_t i = static_cast<std::size_t>(hi) % n;
    const std::size_t b = c.csr.row_ptr[i], e = c.csr.row_ptr[i + 1];
    if (b == e) continue;
    T* p = c.probs.data() + h * nnz;
    const T* qi = &c.q(i, h * dh);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t t = b; t < e; ++t) {
      const T* kj = &c.k(c.csr.cols[t], h * dh);
      T s{0};
      for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
      s *= scale;
      ++evals;
      if (std::isnan(s)) saw_nan = true;
      p[t] = s;
      mx = std::max(mx, s);
    }
    T sum{0};
    for (std::size_t t = b; t < e; ++t) sum += (p[t] = std::exp(p[t] - mx));
    for (std::size_t t = b; t < e; ++t) p[t] /= sum;
    T* out = &res.out(i, h * dh);
    for (std::size_t t = b; t < e; ++t) {
      const T* vj = &c.v(c.csr.cols[t], h * dh);
      for (std::size_t d = 0; d < dh; ++d) out[d] += p[t] * vj[d];
    }
  }
  g_score_evals.fetch_add(evals);
  if (saw_nan) throw std::domain_error("attention: NaN attention score");
  return res;
}

template <typename T>
Matrix<T> het_attention_forward(const Matrix<T>& x, const maskgen::LayerMasks& masks,
                                const AttentionParams<T>& params, std::size_t heads, AttentionCache<T>* cache) {
  check_params(params, x.cols(), heads);
  const std::array<const maskgen::SparseMask*, kNumPatterns> m = {&masks.t2t, &masks.ts, &masks.e2e};
  Matrix<T> combined(x.rows(), params.wo.rows());
  std::array<PatternCache<T>, kNumPatterns> pcache;
  for (std::size_t p = 0; p < kNumPatterns; ++p) {
    auto r = pattern_attention_forward(x, *m[p], params.pattern[p], heads);
    if (r.cache.active) combined += r.out;
    pcache[p] = std::move(r.cache);
  }
  Matrix<T> y = linalg::matmul(combined, params.wo);
  if (cache) {
    cache->x = x;
    cache->combined = std::move(combined);
    cache->pattern = std::move(pcache);
    cache->heads = heads;
  }
  return y;
}

template <typename T>
AttentionGrads<T> het_attention_backward(const AttentionCache<T>& cache, const AttentionParams<T>& params,
                                         const Matrix<T>& dy) {
  const std::size_t n = cache.x.rows();
  const std::size_t d_model = cache.x.cols();
  const std::size_t heads = cache.heads;
  if (dy.rows() != n || dy.cols() != d_model) throw std::invalid_argument("attention backward: dY shape mismatch");
  if (cache.combined.rows() != n) throw std::invalid_argument("attention backward: cache does not match dY");
  check_params(params, d_model, heads);

  const std::size_t inner = params.wo.rows();
  const std::size_t dh = inner / heads;
  AttentionGrads<T> g;
  g.params = AttentionParams<T>::zeros({d_model, heads, dh});
  g.dx = Matrix<T>(n, d_model);
  g.params.wo = linalg::matmul_tn(cache.combined, dy);
  const Matrix<T> dcomb = linalg::matmul_nt(dy, params.wo);
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  for (std::size_t p = 0; p < kNumPatterns; ++p) {
    const auto& c = cache.pattern[p];
    if (!c.active) continue;
    const std::size_t nnz = c.csr.nnz();
    Matrix<T> dq(n, inner), dk(n, inner), dv(n, inner);
    const long nheads = static_cast<long>(heads);
    // Heads own disjoint column slices of dq/dk/dv, so scatter updates never race.
#pragma omp parallel for schedule(static) if (nnz * inner >= parallel::kMinParallelWork)
    for (long hl = 0; hl < nheads; ++hl) {
      const std::size_t h = static_cast<std::size_t>(hl);
      const std::size_t off = h * dh;
      const T* prob = c.probs.data() + h * nnz;
      std::vector<T> ds;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = c.csr.row_ptr[i], e = c.csr.row_ptr[i + 1];
        if (b == e) continue;
        const T* dai = &dcomb(i, off);
        ds.assign(e - b, T{0});
        T dot{0};
        for (std::size_t t = b; t < e; ++t) {
          const T* vj = &c.v(c.csr.cols[t], off);
          T dp{0};
          for (std::size_t d = 0; d < dh; ++d) dp += dai[d] * vj[d];
          ds[t - b] = dp;
          dot += prob[t] * dp;
        }
        T* dqi = &dq(i, off);
        const T* qi = &c.q(i, off);
        for (std::size_t t = b; t < e; ++t) {
          const std::size_t j = c.csr.cols[t];
          const T s = prob[t] * (ds[t - b] - dot) * scale;
          const T* kj = &c.k(j, off);
          T* dkj = &dk(j, off);
          T* dvj = &dv(j, off);
          for (std::size_t d = 0; d < dh; ++d) {
            dqi[d] += s * kj[d];
            dkj[d] += s * qi[d];
            dvj[d] += prob[t] * dai[d];
          }
        }
      }
    }
    auto& gp = g.params.pattern[p];
    const auto& pp = params.pattern[p];
    gp.wq = linalg::matmul_tn(cache.x, dq);
    gp.wk = linalg::matmul_tn(cache.x, dk);
    gp.wv = linalg::matmul_tn(cache.x, dv);
    g.dx += linalg::matmul_nt(dq, pp.wq);
    g.dx += linalg::matmul_nt(dk, pp.wk);
    g.dx += linalg::matmul_nt(dv, pp.wv);
  }
  return g;
}

template <typename T>
Matrix<T> dense_reference_attention(const Matrix<T>& x,
                                    const std::array<std::vector<std::uint8_t>, kNumPatterns>& masks,
                                    const AttentionParams<T>& params, std::size_t heads) {
  const std::size_t n = x.rows(), d_model = x.cols();
  if (n > kDenseReferenceLimit) throw std::length_error("dense reference attention limited to n <= 256");
  check_params(params, d_model, heads);
  const std::size_t inner = params.wo.rows();
  const std::size_t dh = inner / heads;
  const T neg_inf = -std::numeric_limits<T>::infinity();

  auto project = [&](const Matrix<T>& w) {
    Matrix<T> r(n, inner);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < inner; ++c) {
        T acc{0};
        for (std::size_t d = 0; d < d_model; ++d) acc += x(i, d) * w(d, c);
        r(i, c) = acc;
      }
    return r;
  };

  Matrix<T> combined(n, inner);
  std::vector<T> row(n);
  for (std::size_t p = 0; p < kNumPatterns; ++p) {
    const auto& mask = masks[p];
    if (mask.size() != n * n) throw std::invalid_argument("dense reference: mask is not n x n");
    const auto& pp = params.pattern[p];
    const Matrix<T> q = project(pp.wq), k = project(pp.wk), v = project(pp.wv);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        T mx = neg_inf;
        for (std::size_t j = 0; j < n; ++j) {
          T s{0};
          for (std::size_t d = 0; d < dh; ++d) s += q(i, h * dh + d) * k(j, h * dh + d);
          row[j] = mask[i * n + j] ? s / std::sqrt(static_cast<T>(dh)) : neg_inf;
          mx = std::max(mx, row[j]);
        }
        if (mx == neg_inf) continue;  // fully masked row contributes zero
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) sum += (row[j] = std::exp(row[j] - mx));
        for (std::size_t d = 0; d < dh; ++d) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += row[j] / sum * v(j, h * dh + d);
          combined(i, h * dh + d) += acc;
        }
      }
    }
  }
  Matrix<T> y(n, d_model);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d_model; ++c) {
      T acc{0};
      for (std::size_t d = 0; d < inner; ++d) acc += combined(i, d) * params.wo(d, c);
      y(i, c) = acc;
    }
  return y;
}

#define HETATT_INSTANTIATE(T)                                                                                    \
  template struct AttentionParams<T>;                                                                            \
  template PatternOutput<T> pattern_attention_forward<T>(const Matrix<T>&, const maskgen::SparseMask&,         \
                                                         const PatternProjections<T>&, std::size_t);             \
  template Matrix<T> het_attention_forward<T>(const Matrix<T>&, const maskgen::LayerMasks&,                    \
                                              const AttentionParams<T>&, std::size_t, AttentionCache<T>*);       \
  template AttentionGrads<T> het_attention_backward<T>(const AttentionCache<T>&, const AttentionParams<T>&,     \
                                                       const Matrix<T>&);                                       \
  template Matrix<T> dense_reference_attention<T>(                                                               \
      const Matrix<T>&, const std::array<std::vector<std::uint8_t>, kNumPatterns>&, const AttentionParams<T>&, \
      std::size_t);

HETATT_INSTANTIATE(float)
HETATT_INSTANTIATE(double)

#undef HETATT_INSTANTIATE

}  // namespace hetformer::hetatt
