#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "modiff/graph.hpp"
#include "modiff/rng.hpp"

namespace modiff {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::map<std::string, double> per_parameter;  // max rel. error per group
};

// Compares analytic gradients against central finite differences for every
// element of every parameter (or a seeded random subsample once the total
// exceeds max_elements). `build_loss` must be deterministic: same inputs and
// noise on every call. The relative-error floor keeps near-zero gradients
// from drowning in finite-difference noise; the loss here is O(1), so the
// default floor of 1e-3 compares absolute error below that scale.
inline GradCheckResult grad_check(
    const std::function<TensorPtr(Graph&)>& build_loss,
    const std::vector<std::pair<std::string, TensorPtr>>& parameters,
    double eps = 1e-5, double rel_floor = 1e-3,
    std::size_t max_elements = 10000, std::uint64_t subsample_seed = 0) {
  // analytic pass
  for (const auto& [name, p] : parameters) p->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    TensorPtr loss = build_loss(g);
    if (!loss->all_finite())
      throw NumericError("grad_check: non-finite loss, check aborted");
    g.backward(loss);
    for (const auto& [name, p] : parameters) analytic.push_back(p->grad());
  }

  std::size_t total = 0;
  for (const auto& [name, p] : parameters) total += p->size();
  const bool subsample = total > max_elements;
  const double keep = subsample
                          ? static_cast<double>(max_elements) /
                                static_cast<double>(total)
                          : 1.0;
  Rng pick(subsample_seed);

  const auto eval = [&]() -> double {
    Graph g;
    TensorPtr loss = build_loss(g);
    if (!loss->all_finite())
      throw NumericError("grad_check: non-finite loss, check aborted");
    return (*loss)[0];
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < parameters.size(); ++pi) {
    const auto& name = parameters[pi].first;
    Tensor& p = *parameters[pi].second;
    double group_max = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (subsample && pick.uniform() > keep) continue;
      const double saved = p[i];
      p[i] = saved + eps;
      const double f_plus = eval();
      p[i] = saved - eps;
      const double f_minus = eval();
      p[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom =
          std::max(rel_floor, std::max(std::abs(a), std::abs(numeric)));
      const double rel = std::abs(a - numeric) / denom;
      group_max = std::max(group_max, rel);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = name;
      }
    }
    result.per_parameter[name] = group_max;
  }
  return result;
}

}  // namespace modiff
