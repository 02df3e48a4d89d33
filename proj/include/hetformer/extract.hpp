#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hetformer::model {

struct ExtractionResult {
  std::vector<double> scores;
  std::vector<std::size_t> selected;  // selection order (descending score)
  std::vector<std::string> summary;   // selected sentences in document order
};

// Top-k selection in descending score order (ties: lower index first). With
// blocking on, a candidate sharing any word trigram with an already selected
// sentence is skipped.
ExtractionResult extract(std::span<const double> scores, const std::vector<std::string>& sentences, std::size_t k,
                         bool blocking);

bool shares_trigram(const std::string& a, const std::string& b);

}  // namespace hetformer::model
