#pragma once

#include <cmath>
#include <vector>

#include "modiff/errors.hpp"

namespace modiff {

// Per-step diffusion constants, 1-indexed by step: beta[t], alpha[t] and
// sigma[t] are valid for t in [1, steps]; alpha_bar[t] for t in [0, steps]
// with alpha_bar[0] = 1. alpha_bar is defined as the running product of
// alpha so the product identity holds exactly even where beta is clipped.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;       // beta[0] unused
  std::vector<double> alpha;      // alpha[t] = 1 - beta[t]
  std::vector<double> alpha_bar;  // alpha_bar[0] = 1
  std::vector<double> sigma;      // posterior std, sigma[0] unused

  void require_step(int t, const char* what) const {
    if (t < 1 || t > steps)
      throw StepError(std::string(what) + ": step out of range");
  }
};

// Cosine variance schedule: alpha_bar follows
// f(t)/f(0) with f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2), realized as
// per-step betas clipped at 0.999. sigma_t^2 is the posterior variance
// (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t].
inline NoiseSchedule cosine_schedule(int steps, double s = 0.008) {
  if (steps < 1) throw StepError("cosine_schedule: steps must be >= 1");
  const double pi = 3.14159265358979323846;
  auto f = [&](double t) {
    const double u = ((t / steps + s) / (1.0 + s)) * pi / 2.0;
    const double c = std::cos(u);
    return c * c;
  };
  NoiseSchedule sch;
  sch.steps = steps;
  sch.beta.assign(steps + 1, 0.0);
  sch.alpha.assign(steps + 1, 0.0);
  sch.alpha_bar.assign(steps + 1, 1.0);
  sch.sigma.assign(steps + 1, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double raw = 1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t - 1));
    sch.beta[t] = std::min(raw, 0.999);
    sch.alpha[t] = 1.0 - sch.beta[t];
    sch.alpha_bar[t] = sch.alpha_bar[t - 1] * sch.alpha[t];
    sch.sigma[t] = std::sqrt((1.0 - sch.alpha_bar[t - 1]) /
                             (1.0 - sch.alpha_bar[t]) * sch.beta[t]);
  }
  return sch;
}

}  // namespace modiff
