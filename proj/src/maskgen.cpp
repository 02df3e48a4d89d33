#include "hetformer/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace hetformer::maskgen {

namespace {

void sort_unique(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

std::vector<std::uint8_t> membership(std::size_t n, const std::vector<std::size_t>& idx) {
  std::vector<std::uint8_t> flags(n, 0);
  for (auto i : idx) {
    if (i >= n) throw std::out_of_range("mask index " + std::to_string(i) + " >= n");
    flags[i] = 1;
  }
  return flags;
}

}  // namespace

SparseMask SparseMask::band(std::size_t n, std::size_t w) {
  SparseMask m;
  m.n_ = n;
  m.kind_ = MaskKind::Band;
  m.w_ = w;
  return m;
}

SparseMask SparseMask::global(std::size_t n, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  SparseMask m;
  m.n_ = n;
  m.kind_ = MaskKind::Global;
  sort_unique(rows);
  sort_unique(cols);
  m.is_row_ = membership(n, rows);
  m.is_col_ = membership(n, cols);
  m.rows_ = std::move(rows);
  m.cols_ = std::move(cols);
  return m;
}

SparseMask SparseMask::blocks(std::size_t n, std::vector<std::vector<std::size_t>> clusters) {
  SparseMask m;
  m.n_ = n;
  m.kind_ = MaskKind::Blocks;
  m.cluster_of_.assign(n, -1);
  for (auto& c : clusters) {
    sort_unique(c);
    if (c.empty()) continue;
    const auto id = static_cast<std::int64_t>(m.clusters_.size());
    for (auto i : c) {
      if (i >= n) throw std::out_of_range("cluster index " + std::to_string(i) + " >= n");
      if (m.cluster_of_[i] != -1) throw std::invalid_argument("mask clusters are not disjoint");
      m.cluster_of_[i] = id;
    }
    m.clusters_.push_back(std::move(c));
  }
  return m;
}

bool SparseMask::contains(std::size_t i, std::size_t j) const {
  if (i >= n_ || j >= n_) return false;
  switch (kind_) {
    case MaskKind::Band:
      return (i > j ? i - j : j - i) <= w_;
    case MaskKind::Global:
      return is_row_[i] || is_col_[j];
    case MaskKind::Blocks:
      return cluster_of_[i] >= 0 && cluster_of_[i] == cluster_of_[j];
  }
  return false;
}

std::size_t SparseMask::row_count(std::size_t i) const {
  switch (kind_) {
    case MaskKind::Band: {
      const std::size_t lo = i > w_ ? i - w_ : 0;
      const std::size_t hi = std::min(n_ - 1, i + w_);
      return hi - lo + 1;
    }
    case MaskKind::Global:
      return is_row_[i] ? n_ : cols_.size();
    case MaskKind::Blocks:
      return cluster_of_[i] < 0 ? 0 : clusters_[static_cast<std::size_t>(cluster_of_[i])].size();
  }
  return 0;
}

void SparseMask::row_columns(std::size_t i, std::vector<std::size_t>& out) const {
  switch (kind_) {
    case MaskKind::Band: {
      const std::size_t lo = i > w_ ? i - w_ : 0;
      const std::size_t hi = std::min(n_ - 1, i + w_);
      for (std::size_t j = lo; j <= hi; ++j) out.push_back(j);
      break;
    }
    case MaskKind::Global:
      if (is_row_[i]) {
        for (std::size_t j = 0; j < n_; ++j) out.push_back(j);
      } else {
        out.insert(out.end(), cols_.begin(), cols_.end());
      }
      break;
    case MaskKind::Blocks:
      if (cluster_of_[i] >= 0) {
        const auto& c = clusters_[static_cast<std::size_t>(cluster_of_[i])];
        out.insert(out.end(), c.begin(), c.end());
      }
      break;
  }
}

std::size_t SparseMask::entry_count() const {
  switch (kind_) {
    case MaskKind::Band:
      return band_count_closed_form(n_, w_);
    case MaskKind::Global:
      return rows_.size() * n_ + n_ * cols_.size() - rows_.size() * cols_.size();
    case MaskKind::Blocks: {
      std::size_t total = 0;
      for (const auto& c : clusters_) total += c.size() * c.size();
      return total;
    }
  }
  return 0;
}

std::size_t band_count_closed_form(std::size_t n, std::size_t w) {
  if (n == 0) return 0;
  if (w >= n - 1) return n * n;
  return n * (2 * w + 1) - w * (w + 1);
}

std::size_t global_count_closed_form(std::size_t n, std::size_t g) { return 2 * g * n - g * g; }

// ---------------------------------------------------------------- schedules

WindowSchedule WindowSchedule::parse(const std::string& text, std::size_t w_min, std::size_t w_max) {
  WindowSchedule s;
  s.w_min = w_min;
  s.w_max = w_max;
  if (text == "inc") {
    s.kind = ScheduleKind::Increasing;
  } else if (text == "dec") {
    s.kind = ScheduleKind::Decreasing;
  } else if (text.rfind("fixed:", 0) == 0) {
    s.kind = ScheduleKind::Fixed;
    try {
      std::size_t used = 0;
      const long v = std::stol(text.substr(6), &used);
      if (v < 0 || used != text.size() - 6) throw std::invalid_argument("");
      s.fixed_w = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad fixed window in schedule \"" + text + "\"");
    }
  } else {
    throw std::invalid_argument("unknown window schedule \"" + text + "\" (expected inc, dec or fixed:W)");
  }
  if (s.kind != ScheduleKind::Fixed && (w_min < 1 || w_max < w_min))
    throw std::invalid_argument("window schedule needs 1 <= w_min <= w_max");
  return s;
}

std::string WindowSchedule::to_string() const {
  switch (kind) {
    case ScheduleKind::Increasing: return "inc";
    case ScheduleKind::Decreasing: return "dec";
    case ScheduleKind::Fixed: return "fixed:" + std::to_string(fixed_w);
  }
  return "inc";
}

std::vector<std::size_t> WindowSchedule::widths(std::size_t layers) const {
  std::vector<std::size_t> w(layers);
  if (kind == ScheduleKind::Fixed) {
    std::fill(w.begin(), w.end(), fixed_w);
    return w;
  }
  const double ratio = static_cast<double>(w_max) / static_cast<double>(w_min);
  for (std::size_t l = 0; l < layers; ++l) {
    const double t = layers == 1 ? 0.0 : static_cast<double>(l) / static_cast<double>(layers - 1);
    w[l] = static_cast<std::size_t>(std::llround(static_cast<double>(w_min) * std::pow(ratio, t)));
  }
  if (kind == ScheduleKind::Decreasing) std::reverse(w.begin(), w.end());
  return w;
}

// ---------------------------------------------------------------- builders

SparseMask build_t2t(std::size_t n, std::size_t w) { return SparseMask::band(n, w); }

SparseMask build_ts(const corpus::NodeSequence& nodes) {
  auto g = nodes.global_nodes();
  return SparseMask::global(nodes.size(), g, g);
}

SparseMask build_e2e(const corpus::NodeSequence& nodes) {
  std::vector<std::int64_t> owner(nodes.size(), -1);
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t c = 0; c < nodes.entity_positions.size(); ++c) {
    std::vector<std::size_t> kept;
    for (auto i : nodes.entity_positions[c]) {
      if (i >= nodes.size()) throw std::out_of_range("entity position past end of sequence");
      if (owner[i] >= 0 && owner[i] != static_cast<std::int64_t>(c)) {
        std::cerr << "hetatt: warning: position " << i << " is in entity clusters " << owner[i] << " and " << c
                  << "; keeping the first\n";
        continue;
      }
      owner[i] = static_cast<std::int64_t>(c);
      kept.push_back(i);
    }
    clusters.push_back(std::move(kept));
  }
  return SparseMask::blocks(nodes.size(), std::move(clusters));
}

MaskSet build_mask_set(const corpus::NodeSequence& nodes, const std::vector<std::size_t>& schedule,
                       bool enable_ts, bool enable_e2e) {
  const std::size_t n = nodes.size();
  const SparseMask ts = enable_ts ? build_ts(nodes) : SparseMask::empty(n);
  const SparseMask e2e = enable_e2e ? build_e2e(nodes) : SparseMask::empty(n);
  MaskSet ms;
  ms.window_schedule = schedule;
  ms.layers.reserve(schedule.size());
  for (auto w : schedule) ms.layers.push_back({build_t2t(n, w), ts, e2e});
  return ms;
}

EntryCounts entry_counts(const MaskSet& ms) {
  EntryCounts out;
  for (std::size_t l = 0; l < ms.layers.size(); ++l) {
    const auto& lm = ms.layers[l];
    LayerCounts c;
    c.w = l < ms.window_schedule.size() ? ms.window_schedule[l] : lm.t2t.radius();
    c.t2t = lm.t2t.entry_count();
    c.ts = lm.ts.entry_count();
    c.e2e = lm.e2e.entry_count();
    c.total = c.t2t + c.ts + c.e2e;
    c.dense = lm.t2t.n() * lm.t2t.n();
    c.ratio = c.dense ? static_cast<double>(c.total) / static_cast<double>(c.dense) : 0.0;
    out.total_sparse += c.total;
    out.total_dense += c.dense;
    out.layers.push_back(c);
  }
  out.ratio = out.total_dense ? static_cast<double>(out.total_sparse) / static_cast<double>(out.total_dense) : 0.0;
  return out;
}

std::vector<std::uint8_t> densify(const SparseMask& m) {
  if (m.n() > kDensifyLimit)
    throw std::length_error("densify: n=" + std::to_string(m.n()) + " exceeds limit " + std::to_string(kDensifyLimit));
  const std::size_t n = m.n();
  std::vector<std::uint8_t> d(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = m.contains(i, j) ? 1 : 0;
  return d;
}

corpus::NodeSequence synthetic_layout(std::size_t n, std::size_t tokens_per_sentence, std::size_t mention_stride,
                                      std::size_t num_entities) {
  if (tokens_per_sentence == 0) throw std::invalid_argument("tokens_per_sentence must be >= 1");
  if (n < 2) throw std::invalid_argument("synthetic layout needs n >= 2");
  corpus::NodeSequence ns;
  std::vector<std::vector<std::size_t>> clusters(num_entities);
  std::size_t token_counter = 0;
  std::size_t sentence = 0;
  while (ns.size() < n) {
    const auto seg = static_cast<std::uint8_t>(sentence % 2);
    ns.sent_nodes.push_back(ns.size());
    ns.node_ids.push_back(corpus::Vocab::kCls);
    ns.node_kind.push_back(corpus::NodeKind::Sent);
    ns.position.push_back(0);
    ns.segment.push_back(seg);
    const std::size_t start = ns.size();
    for (std::size_t k = 0; k < tokens_per_sentence && ns.size() < n; ++k) {
      if (mention_stride > 0 && num_entities > 0 && token_counter % mention_stride == 0)
        clusters[(token_counter / mention_stride) % num_entities].push_back(ns.size());
      ns.node_ids.push_back(corpus::Vocab::kUnk);
      ns.node_kind.push_back(corpus::NodeKind::Token);
      ns.position.push_back(k + 1);
      ns.segment.push_back(seg);
      ++token_counter;
    }
    if (ns.size() == start) {
      // A trailing sentence node with no room for tokens is not a valid layout.
      ns.sent_nodes.pop_back();
      ns.node_ids.back() = corpus::Vocab::kUnk;
      ns.node_kind.back() = corpus::NodeKind::Token;
      ns.position.back() = tokens_per_sentence + 1;
      ns.segment.back() = static_cast<std::uint8_t>((sentence - 1) % 2);
      ns.sent_span.back().end = ns.size();
      break;
    }
    ns.sent_span.push_back({start, ns.size()});
    ++sentence;
  }
  for (auto& c : clusters)
    if (!c.empty()) ns.entity_positions.push_back(std::move(c));
  return ns;
}

}  // namespace hetformer::maskgen
