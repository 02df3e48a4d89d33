#pragma once

// ROUGE-1/2/L F1 (clipped counts, no stemming) and extractive oracle labels.

#include <cstddef>
#include <string>
#include <vector>

namespace hetformer::eval {

using Tokens = std::vector<std::string>;

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

RougeScore rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n);
RougeScore rouge_l(const Tokens& candidate, const Tokens& reference);

// Concatenates the tokenized sentences into one sequence.
Tokens join_tokens(const std::vector<std::string>& sentences);

struct OracleLabels {
  std::vector<int> labels;
  double score = 0.0;                // R-2 F1 of the selected set
  std::vector<double> trajectory;    // score after each greedy addition
};

inline constexpr std::size_t kDefaultOracleK = 5;

// Greedy R-2 F1 maximization against the gold summary. Each round adds the
// sentence giving the highest score of the selection (in document order);
// ties go to the lowest index; stops when nothing strictly improves.
OracleLabels greedy_oracle_labels(const std::vector<std::string>& sentences,
                                  const std::vector<std::string>& gold_summary, std::size_t max_k);

inline constexpr std::size_t kExhaustiveMaxSentences = 12;
inline constexpr std::size_t kExhaustiveMaxK = 4;

// Best subset of size <= max_k by R-2 F1; ties go to the lexicographically
// smallest index set (the empty set is smallest).
OracleLabels exhaustive_oracle(const std::vector<std::string>& sentences, const std::vector<std::string>& gold_summary,
                               std::size_t max_k);

// R-2 F1 of the sentences flagged in `labels`, joined in document order.
double selection_rouge2(const std::vector<Tokens>& sentence_tokens, const Tokens& gold, const std::vector<int>& labels);

struct SummaryPair {
  std::string id;
  std::vector<std::string> extracted;
  std::vector<std::string> gold;
};

struct DocScores {
  std::string id;
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
};

struct CorpusScores {
  std::vector<DocScores> docs;
  DocScores mean;
};

CorpusScores evaluate_summaries(const std::vector<SummaryPair>& pairs);
std::string format_scores_csv(const CorpusScores& scores);

}  // namespace hetformer::eval
