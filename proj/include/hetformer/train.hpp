#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "hetformer/model.hpp"

namespace hetformer::model {

struct TrainOptions {
  double lr = 0.005;
  std::size_t warmup_steps = 100;
  std::size_t max_steps = 1000;
  std::size_t batch = 1;  // documents per micro-batch
  std::size_t accum = 2;  // micro-batches per optimizer step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TraceRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<TraceRow> trace;
};

// lr * min(step^-0.5, step * warmup^-1.5), step counted from 1.
double learning_rate(double base_lr, std::size_t step, std::size_t warmup);

// Adam with gradient accumulation. Documents are visited in a seeded
// shuffled order; each document's gradient is computed independently and
// summed in a fixed order, so the result does not depend on thread count.
// Throws std::runtime_error if the loss becomes NaN.
// Mean eval-mode binary cross-entropy over labeled examples.
double evaluation_loss(const std::vector<Example>& examples, const ModelState& state, const ModelConfig& cfg);

TrainResult train(const std::vector<Example>& examples, const ModelConfig& cfg, const TrainOptions& opt,
                  ModelState initial, const std::function<void(const TraceRow&)>& on_step = {});

}  // namespace hetformer::model
