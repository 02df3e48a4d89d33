#include <algorithm>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "hetformer/corpus.hpp"
#include "hetformer/eval.hpp"

namespace hetformer::eval {

namespace {

RougeScore from_counts(std::size_t overlap, std::size_t cand, std::size_t ref) {
  RougeScore s;
  s.precision = cand ? static_cast<double>(overlap) / static_cast<double>(cand) : 0.0;
  s.recall = ref ? static_cast<double>(overlap) / static_cast<double>(ref) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                             t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

}  // namespace

RougeScore rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  if (n != 1 && n != 2) throw std::invalid_argument("rouge_n supports n = 1 or 2");
  const auto cc = ngram_counts(candidate, n);
  const auto rc = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [g, c] : cc)
    if (auto it = rc.find(g); it != rc.end()) overlap += std::min(c, it->second);
  const std::size_t cand_total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
  const std::size_t ref_total = reference.size() >= n ? reference.size() - n + 1 : 0;
  return from_counts(overlap, cand_total, ref_total);
}

RougeScore rouge_l(const Tokens& candidate, const Tokens& reference) {
  const std::size_t a = candidate.size(), b = reference.size();
  std::vector<std::size_t> prev(b + 1, 0), cur(b + 1, 0);
  for (std::size_t i = 1; i <= a; ++i) {
    for (std::size_t j = 1; j <= b; ++j)
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return from_counts(prev[b], a, b);
}

Tokens join_tokens(const std::vector<std::string>& sentences) {
  Tokens out;
  for (const auto& s : sentences) {
    auto w = corpus::tokenize_words(s);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

CorpusScores evaluate_summaries(const std::vector<SummaryPair>& pairs) {
  CorpusScores out;
  for (const auto& p : pairs) {
    const auto cand = join_tokens(p.extracted);
    const auto ref = join_tokens(p.gold);
    out.docs.push_back({p.id, rouge_n(cand, ref, 1).f1, rouge_n(cand, ref, 2).f1, rouge_l(cand, ref).f1});
  }
  out.mean.id = "mean";
  if (!out.docs.empty()) {
    for (const auto& d : out.docs) {
      out.mean.r1 += d.r1;
      out.mean.r2 += d.r2;
      out.mean.rl += d.rl;
    }
    const double k = static_cast<double>(out.docs.size());
    out.mean.r1 /= k;
    out.mean.r2 /= k;
    out.mean.rl /= k;
  }
  return out;
}

std::string format_scores_csv(const CorpusScores& scores) {
  std::string out = "doc_id,r1,r2,rl\n";
  char buf[128];
  auto row = [&](const DocScores& d) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", d.r1, d.r2, d.rl);
    out += d.id;
    out += buf;
  };
  for (const auto& d : scores.docs) row(d);
  row(scores.mean);
  return out;
}

}  // namespace hetformer::eval
