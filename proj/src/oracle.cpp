#include <stdexcept>

#include "hetformer/corpus.hpp"
#include "hetformer/eval.hpp"

namespace hetformer::eval {

double selection_rouge2(const std::vector<Tokens>& sentence_tokens, const Tokens& gold, const std::vector<int>& labels) {
  Tokens cand;
  for (std::size_t i = 0; i < sentence_tokens.size(); ++i)
    if (labels[i]) cand.insert(cand.end(), sentence_tokens[i].begin(), sentence_tokens[i].end());
  return rouge_n(cand, gold, 2).f1;
}

namespace {

std::vector<Tokens> tokenize_all(const std::vector<std::string>& sentences) {
  std::vector<Tokens> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(corpus::tokenize_words(s));
  return out;
}

}  // namespace

OracleLabels greedy_oracle_labels(const std::vector<std::string>& sentences,
                                  const std::vector<std::string>& gold_summary, std::size_t max_k) {
  if (gold_summary.empty()) throw std::invalid_argument("greedy oracle: gold summary is empty");
  if (max_k < 1) throw std::invalid_argument("greedy oracle: max_k must be >= 1");
  const auto toks = tokenize_all(sentences);
  const auto gold = join_tokens(gold_summary);

  OracleLabels out;
  out.labels.assign(sentences.size(), 0);
  for (std::size_t round = 0; round < max_k; ++round) {
    double best = out.score;
    std::size_t best_i = sentences.size();
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (out.labels[i]) continue;
      out.labels[i] = 1;
      const double s = selection_rouge2(toks, gold, out.labels);
      out.labels[i] = 0;
      if (s > best) {
        best = s;
        best_i = i;
      }
    }
    if (best_i == sentences.size()) break;
    out.labels[best_i] = 1;
    out.score = best;
    out.trajectory.push_back(best);
  }
  return out;
}

OracleLabels exhaustive_oracle(const std::vector<std::string>& sentences, const std::vector<std::string>& gold_summary,
                               std::size_t max_k) {
  if (sentences.size() > kExhaustiveMaxSentences || max_k > kExhaustiveMaxK)
    throw std::length_error("exhaustive oracle limited to 12 sentences and max_k <= 4");
  const auto toks = tokenize_all(sentences);
  const auto gold = join_tokens(gold_summary);
  const std::size_t n = sentences.size();

  OracleLabels best;
  best.labels.assign(n, 0);
  std::vector<std::size_t> best_set;
  std::vector<std::size_t> current;
  std::vector<int> labels(n, 0);

  // Depth-first enumeration visits index sets in lexicographic order, so a
  // later set replaces the incumbent only on a strict improvement.
  auto visit = [&](auto&& self, std::size_t start) -> void {
    if (!current.empty()) {
      const double s = selection_rouge2(toks, gold, labels);
      if (s > best.score) {
        best.score = s;
        best_set = current;
      }
    }
    if (current.size() == max_k) return;
    for (std::size_t i = start; i < n; ++i) {
      current.push_back(i);
      labels[i] = 1;
      self(self, i + 1);
      labels[i] = 0;
      current.pop_back();
    }
  };
  visit(visit, 0);
  for (auto i : best_set) best.labels[i] = 1;
  return best;
}

}  // namespace hetformer::eval
