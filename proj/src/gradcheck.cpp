#include "hetformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace hetformer::model {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::size_t> pick_entries(const Mat& grad, std::size_t max_entries, Rng& rng) {
  const std::size_t n = grad.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_entries == 0 || n <= max_entries) return idx;
  const std::size_t top = max_entries / 2;
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ga = std::abs(grad.data()[a]), gb = std::abs(grad.data()[b]);
                      return ga != gb ? ga > gb : a < b;
                    });
  std::set<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top));
  while (chosen.size() < max_entries) chosen.insert(static_cast<std::size_t>(rng.below(n)));
  return {chosen.begin(), chosen.end()};
}

}  // namespace

std::vector<TensorCheck> gradcheck(const Example& ex, const ModelState& state, const ModelConfig& cfg,
                                   const GradcheckOptions& opt) {
  auto analytic = loss_and_gradient(ex, state, cfg, opt.mode, opt.dropout_seed);
  Rng rng(opt.seed, "gradcheck");
  std::vector<TensorCheck> out;

  auto check = [&](const std::string& name, Mat& grad, Mat& param, const std::function<double()>& loss) {
    if (opt.corrupt) opt.corrupt(name, grad);
    TensorCheck tc;
    tc.name = name;
    for (auto i : pick_entries(grad, opt.max_entries, rng)) {
      double& v = param.data()[i];
      const double saved = v;
      v = saved + opt.eps;
      const double up = loss();
      v = saved - opt.eps;
      const double down = loss();
      v = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      tc.max_rel_error = std::max(tc.max_rel_error, relative_error(grad.data()[i], numeric, opt.floor));
      ++tc.checked;
    }
    tc.pass = tc.max_rel_error < opt.tolerance;
    out.push_back(tc);
  };

  ModelState work = state;
  auto params = work.tensors();
  auto grads = analytic.grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    check(params[t].name, *grads[t].tensor, *params[t].tensor, [&] {
      return loss_from_embeddings(embed(ex.nodes, work, cfg), ex, work, cfg, opt.mode, opt.dropout_seed);
    });
  }

  Mat x = embed(ex.nodes, state, cfg);
  check(kInputEmbeddingsName, analytic.dx, x,
        [&] { return loss_from_embeddings(x, ex, state, cfg, opt.mode, opt.dropout_seed); });
  return out;
}

void perturb_for_gradcheck(ModelState& state, std::uint64_t seed, double scale) {
  Rng rng(seed, "gradcheck-perturb");
  for (auto& nt : state.tensors())
    for (auto& v : nt.tensor->data()) v += rng.uniform(-scale, scale);
}

std::string format_gradcheck_csv(const std::vector<TensorCheck>& checks) {
  std::string out = "tensor,checked,max_rel_error,status\n";
  char buf[96];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, ",%zu,%.3e,%s\n", c.checked, c.max_rel_error, c.pass ? "pass" : "FAIL");
    out += c.name;
    out += buf;
  }
  return out;
}

}  // namespace hetformer::model
