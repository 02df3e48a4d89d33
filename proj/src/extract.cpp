#include "hetformer/extract.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include "hetformer/corpus.hpp"

namespace hetformer::model {

namespace {

using Trigram = std::tuple<std::string, std::string, std::string>;

std::set<Trigram> trigrams(const std::string& sentence) {
  const auto w = corpus::tokenize_words(sentence);
  std::set<Trigram> out;
  for (std::size_t i = 0; i + 2 < w.size(); ++i) out.emplace(w[i], w[i + 1], w[i + 2]);
  return out;
}

bool intersects(const std::set<Trigram>& a, const std::set<Trigram>& b) {
  for (const auto& t : a)
    if (b.count(t)) return true;
  return false;
}

}  // namespace

bool shares_trigram(const std::string& a, const std::string& b) { return intersects(trigrams(a), trigrams(b)); }

ExtractionResult extract(std::span<const double> scores, const std::vector<std::string>& sentences, std::size_t k,
                         bool blocking) {
  if (k < 1) throw std::invalid_argument("extract: k must be >= 1");
  if (scores.size() != sentences.size()) throw std::invalid_argument("extract: one score per sentence required");

  ExtractionResult r;
  r.scores.assign(scores.begin(), scores.end());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::set<Trigram>> chosen;
  for (auto i : order) {
    if (r.selected.size() >= k) break;
    if (blocking) {
      auto tri = trigrams(sentences[i]);
      if (std::any_of(chosen.begin(), chosen.end(), [&](const auto& c) { return intersects(tri, c); })) continue;
      chosen.push_back(std::move(tri));
    }
    r.selected.push_back(i);
  }

  auto doc_order = r.selected;
  std::sort(doc_order.begin(), doc_order.end());
  for (auto i : doc_order) r.summary.push_back(sentences[i]);
  return r;
}

}  // namespace hetformer::model
