#include "restv2/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "restv2/ops.hpp"
#include "restv2/tape.hpp"

namespace restv2 {

namespace {

TensorD perturbed(const TensorD& x, std::size_t index, double delta) {
  auto values = x.values();
  values[index] += delta;
  return TensorD(x.shape(), std::move(values));
}

}  // namespace

double finite_diff_at(const std::function<double(const TensorD&)>& f, const TensorD& x, std::size_t index,
                      double step) {
  const double h = step * std::max(1.0, std::abs(x.values()[index]));
  const double d1 = f(perturbed(x, index, h)) - f(perturbed(x, index, -h));
  const double d2 = f(perturbed(x, index, 2 * h)) - f(perturbed(x, index, -2 * h));
  return (8.0 * d1 - d2) / (12.0 * h);
}

TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = finite_diff_at(f, x, i, step);
  return TensorD(x.shape(), std::move(g));
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckResult::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

GradCheckResult check_gradients(const std::function<TensorD(const std::vector<TensorD>&)>& fn,
                                const std::vector<TensorD>& inputs, const std::vector<std::string>& names,
                                const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<TensorD> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(t.detach(true));

  TensorD projection;
  TensorD analytic_out;
  {
    Tape<double> tape;
    analytic_out = fn(leaves);
    std::vector<double> proj(analytic_out.size());
    for (auto& v : proj) v = normal(rng);
    projection = TensorD(analytic_out.shape(), std::move(proj));
    auto loss = sum(mul(analytic_out, projection));
    tape.backward(loss);
  }

  double grad_scale = 1.0;
  for (const auto& leaf : leaves) {
    const auto g = leaf.grad_tensor();
    for (double v : g.values()) grad_scale = std::max(grad_scale, std::abs(v));
  }
  const double floor = options.floor * grad_scale;

  GradCheckResult result;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    GradCheckEntry entry;
    entry.name = k < names.size() ? names[k] : "input" + std::to_string(k);
    const auto analytic = leaves[k].grad_tensor();

    auto scalar_fn = [&](const TensorD& xk) {
      std::vector<TensorD> args = inputs;
      args[k] = xk;
      const auto out = fn(args);
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) acc += out.values()[i] * projection.values()[i];
      return acc;
    };

    std::vector<std::size_t> probe(inputs[k].size());
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (options.samples_per_input > 0 && probe.size() > options.samples_per_input) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(options.samples_per_input);
      std::sort(probe.begin(), probe.end());
    }
    for (std::size_t idx : probe) {
      const double numeric = finite_diff_at(scalar_fn, inputs[k], idx, options.step);
      const double err = relative_error(analytic.values()[idx], numeric, floor);
      if (err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = idx;
      }
      ++entry.checked;
    }
    result.entries.push_back(std::move(entry));
  }
  return result;
}

}  // namespace restv2
