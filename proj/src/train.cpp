#include "hetformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>

namespace hetformer::model {

double learning_rate(double base_lr, std::size_t step, std::size_t warmup) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double decay = 1.0 / std::sqrt(s);
  if (warmup == 0) return base_lr * decay;
  const double ramp = s * std::pow(static_cast<double>(warmup), -1.5);
  return base_lr * std::min(decay, ramp);
}

double evaluation_loss(const std::vector<Example>& examples, const ModelState& state, const ModelConfig& cfg) {
  if (examples.empty()) throw std::invalid_argument("evaluation_loss: empty corpus");
  std::vector<double> losses(examples.size());
  const long count = static_cast<long>(examples.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) {
    const auto& ex = examples[static_cast<std::size_t>(i)];
    const auto x = embed(ex.nodes, state, cfg);
    losses[static_cast<std::size_t>(i)] = loss_from_embeddings(x, ex, state, cfg, Mode::Eval);
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(examples.size());
}

TrainResult train(const std::vector<Example>& examples, const ModelConfig& cfg, const TrainOptions& opt,
                  ModelState initial, const std::function<void(const TraceRow&)>& on_step) {
  if (examples.empty()) throw std::invalid_argument("train: empty corpus");
  if (opt.batch == 0 || opt.accum == 0) throw std::invalid_argument("train: batch and accum must be >= 1");
  for (const auto& ex : examples)
    if (ex.labels.size() != ex.nodes.sent_nodes.size())
      throw std::invalid_argument("train: document \"" + ex.id + "\" is not labeled");

  TrainResult res;
  res.state = std::move(initial);
  ModelState& state = res.state;
  ModelState m = ModelState::zeros(cfg), v = ModelState::zeros(cfg);
  auto params = state.tensors();
  auto ms = m.tensors();
  auto vs = v.tensors();

  Rng order_rng(cfg.seed, "data-order");
  const std::uint64_t dropout_base = substream_seed(cfg.seed, "dropout");
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  auto next_doc = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng.engine());
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::size_t per_step = opt.batch * opt.accum;
  std::vector<std::size_t> slots(per_step);
  std::vector<LossAndGrad> results(per_step);

  for (std::size_t step = 1; step <= opt.max_steps; ++step) {
    for (auto& s : slots) s = next_doc();

    std::exception_ptr failure;
    const long count = static_cast<long>(per_step);
#pragma omp parallel for schedule(static)
    for (long k = 0; k < count; ++k) {
      try {
        const std::uint64_t seed = substream_seed(dropout_base + step * per_step + static_cast<std::uint64_t>(k), "doc");
        results[static_cast<std::size_t>(k)] =
            loss_and_gradient(examples[slots[static_cast<std::size_t>(k)]], state, cfg, Mode::Train, seed);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);

    double loss = 0.0;
    for (const auto& r : results) loss += r.loss;
    loss /= static_cast<double>(per_step);
    if (!std::isfinite(loss))
      throw std::runtime_error("training diverged: loss is " + std::to_string(loss) + " at step " + std::to_string(step));

    const double lr = learning_rate(opt.lr, step, opt.warmup_steps);
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    const double inv = 1.0 / static_cast<double>(per_step);
    std::vector<std::vector<NamedTensor>> grads;
    grads.reserve(results.size());
    for (auto& r : results) grads.push_back(r.grads.tensors());

    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& p = params[t].tensor->data();
      auto& mt = ms[t].tensor->data();
      auto& vt = vs[t].tensor->data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        double g = 0.0;
        for (const auto& gr : grads) g += gr[t].tensor->data()[i];
        g *= inv;
        mt[i] = opt.beta1 * mt[i] + (1.0 - opt.beta1) * g;
        vt[i] = opt.beta2 * vt[i] + (1.0 - opt.beta2) * g * g;
        if (lr != 0.0) p[i] -= lr * (mt[i] / bc1) / (std::sqrt(vt[i] / bc2) + opt.adam_eps);
      }
    }
    state.step += 1;
    TraceRow row{step, lr, loss};
    res.trace.push_back(row);
    if (on_step) on_step(row);
  }
  return res;
}

}  // namespace hetformer::model
