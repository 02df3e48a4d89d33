#pragma once

// Central finite-difference audit of the analytic gradients, per parameter
// tensor plus the summed input embeddings.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hetformer/model.hpp"

namespace hetformer::model {

inline constexpr char kInputEmbeddingsName[] = "input_embeddings";

struct GradcheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-5;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged on an absolute scale. Central-difference rounding noise
  // at eps 1e-5 is about 1e-11, so it adds at most 1e-6 relative error.
  double floor = 1e-5;
  // Entries checked per tensor: the largest-magnitude analytic entries plus a
  // seeded random sample. 0 checks every entry.
  std::size_t max_entries = 24;
  Mode mode = Mode::Eval;
  std::uint64_t dropout_seed = 7;
  std::uint64_t seed = 1;
  // Test hook applied to each analytic gradient tensor before comparison.
  std::function<void(const std::string& name, Mat& grad)> corrupt;
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

double relative_error(double analytic, double numeric, double floor);

std::vector<TensorCheck> gradcheck(const Example& ex, const ModelState& state, const ModelConfig& cfg,
                                   const GradcheckOptions& opt = {});

// Adds seeded noise to every tensor (including the zero-initialized
// classifier and normalization parameters) so no gradient path is trivially 0.
void perturb_for_gradcheck(ModelState& state, std::uint64_t seed, double scale = 0.1);

std::string format_gradcheck_csv(const std::vector<TensorCheck>& checks);

}  // namespace hetformer::model
