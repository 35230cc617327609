#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "modiff/dct.hpp"
#include "modiff/denoiser.hpp"
#include "modiff/motion.hpp"
#include "modiff/schedule.hpp"

namespace modiff {

// Frame-domain mask: ones over the H observed frames, zeros over the F
// future frames, broadcast across all 3J coordinates when applied.
struct GuidanceMask {
  std::size_t obs_frames = 0;
  std::size_t future_frames = 0;
  std::vector<double> mask;  // length H+F

  GuidanceMask(std::size_t obs, std::size_t future)
      : obs_frames(obs), future_frames(future), mask(obs + future, 0.0) {
    for (std::size_t i = 0; i < obs; ++i) mask[i] = 1.0;
  }
};

enum class SamplerMode { kDdpm, kDdim };

inline std::string to_string(SamplerMode m) {
  return m == SamplerMode::kDdpm ? "ddpm" : "ddim";
}
inline SamplerMode sampler_mode_from_string(const std::string& s) {
  if (s == "ddpm") return SamplerMode::kDdpm;
  if (s == "ddim") return SamplerMode::kDdim;
  throw ConfigError("unknown sampler mode: " + s);
}

// Called after every completed reverse step with the target step index, the
// mixed state and the noisy observation used for the mix. Test hook.
using StepObserver =
    std::function<void(int t_prev, const Tensor& y_mixed, const Tensor& y_obs)>;

struct SamplerOptions {
  SamplerMode mode = SamplerMode::kDdim;
  int ddim_steps = 100;       // S, ignored in DDPM mode
  double eta = 0.0;           // DDIM stochasticity in [0, 1]
  double guidance_w = 0.0;    // classifier-free mixing weight, >= 0
  std::uint64_t seed = 0;
  // The printed inference loop reuses one z per iteration for both the noisy
  // observation and the DDPM step; this switches to an independent draw.
  bool independent_step_noise = false;
  StepObserver observer;

  void validate(int schedule_steps) const {
    if (mode == SamplerMode::kDdim &&
        (ddim_steps < 1 || ddim_steps > schedule_steps))
      throw ConfigError("sampler: ddim_steps must be in [1, T]");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("sampler: eta must be in [0, 1]");
    if (guidance_w < 0.0) throw ConfigError("sampler: guidance weight must be >= 0");
  }
};

// ---- forward process -------------------------------------------------------

// y_t = sqrt(alpha_bar_t) * y0 + sqrt(1 - alpha_bar_t) * eps.
inline Tensor q_sample(const Tensor& y0, int t, const Tensor& eps,
                       const NoiseSchedule& schedule) {
  schedule.require_step(t, "q_sample");
  if (!y0.same_shape(eps))
    throw DimensionError("q_sample: noise shape differs from y0");
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  Tensor out(y0.shape());
  for (std::size_t i = 0; i < y0.size(); ++i)
    out[i] = a * y0[i] + b * eps[i];
  return out;
}

// ---- training loss ---------------------------------------------------------

// Mean-squared error between the injected noise and the model's prediction
// on the noised coefficients; gradients flow to the model parameters.
inline TensorPtr diffusion_loss(Graph& g, const DenoiserModel& model,
                                const Tensor& y0, const Tensor& condition,
                                int t, const Tensor& eps,
                                const NoiseSchedule& schedule,
                                bool drop_condition) {
  Tensor y_t = q_sample(y0, t, eps, schedule);
  TensorPtr eps_hat = model.forward(g, g.constant(std::move(y_t)),
                                    drop_condition ? nullptr : g.constant(condition),
                                    t, drop_condition);
  auto diff = g.sub(g.constant(eps), eps_hat);
  auto loss = g.mean_all(g.mul(diff, diff));
  if (!loss->all_finite())
    throw NumericError("diffusion loss is non-finite");
  return loss;
}

// ---- reverse steps ---------------------------------------------------------

// One ancestral step: (y_t - beta_t / sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)
// plus sigma_t * z. Callers pass z = 0 at t = 1.
inline Tensor ddpm_step(const Tensor& y_t, const Tensor& eps_hat, int t,
                        const Tensor& z, const NoiseSchedule& schedule) {
  schedule.require_step(t, "ddpm_step");
  if (!y_t.same_shape(eps_hat) || !y_t.same_shape(z))
    throw DimensionError("ddpm_step: operand shapes differ");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
  const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
  const double sigma = schedule.sigma[t];
  Tensor out(y_t.shape());
  for (std::size_t i = 0; i < y_t.size(); ++i)
    out[i] = inv_sqrt_alpha * (y_t[i] - coef * eps_hat[i]) + sigma * z[i];
  return out;
}

// Implicit step from t to t_prev < t. eta = 0 is deterministic; eta = 1 with
// t_prev = t-1 reproduces the ancestral posterior variance.
inline Tensor ddim_step(const Tensor& y_t, const Tensor& eps_hat, int t,
                        int t_prev, const NoiseSchedule& schedule, double eta,
                        const Tensor& z) {
  schedule.require_step(t, "ddim_step");
  if (t_prev < 0 || t_prev >= t)
    throw StepError("ddim_step: need 0 <= t_prev < t");
  if (!y_t.same_shape(eps_hat) || !y_t.same_shape(z))
    throw DimensionError("ddim_step: operand shapes differ");
  const double abar_t = schedule.alpha_bar[t];
  const double abar_p = schedule.alpha_bar[t_prev];
  const double sigma =
      eta * std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) *
      std::sqrt(1.0 - abar_t / abar_p);
  const double dir = std::sqrt(std::max(0.0, 1.0 - abar_p - sigma * sigma));
  const double inv_sqrt_abar_t = 1.0 / std::sqrt(abar_t);
  const double sqrt_one_minus = std::sqrt(1.0 - abar_t);
  const double sqrt_abar_p = std::sqrt(abar_p);
  Tensor out(y_t.shape());
  for (std::size_t i = 0; i < y_t.size(); ++i) {
    const double x0_hat = (y_t[i] - sqrt_one_minus * eps_hat[i]) * inv_sqrt_abar_t;
    out[i] = sqrt_abar_p * x0_hat + dir * eps_hat[i] + sigma * z[i];
  }
  return out;
}

// Classifier-free mixing: (1+w) * conditional - w * unconditional.
inline Tensor cfg_mix(const Tensor& eps_cond, const Tensor& eps_uncond,
                      double w) {
  if (w < 0.0) throw ConfigError("cfg_mix: weight must be >= 0");
  if (!eps_cond.same_shape(eps_uncond))
    throw DimensionError("cfg_mix: shapes differ");
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (1.0 + w) * eps_cond[i] - w * eps_uncond[i];
  return out;
}

// Re-imposes the (noisy) observation on the observed frames: both coefficient
// sets go to the time domain, the mask selects observation rows there, and
// the mix returns to coefficient space.
inline Tensor observation_guidance(const Tensor& y_obs, const Tensor& y_den,
                                   const GuidanceMask& mask,
                                   const DctBasis& basis) {
  if (mask.mask.size() != basis.full)
    throw DimensionError("observation_guidance: mask length != basis size");
  if (!y_obs.same_shape(y_den))
    throw DimensionError("observation_guidance: coefficient shapes differ");
  Tensor x_obs = idct(y_obs, basis);
  Tensor x_den = idct(y_den, basis);
  Tensor mixed(x_obs.shape());
  const std::size_t cols = x_obs.cols();
  for (std::size_t f = 0; f < basis.full; ++f) {
    const double m = mask.mask[f];
    for (std::size_t c = 0; c < cols; ++c)
      mixed(f, c) = m * x_obs(f, c) + (1.0 - m) * x_den(f, c);
  }
  return dct_forward(mixed, basis);
}

// ---- full inference loop ---------------------------------------------------

namespace detail {

// Retained step indices for DDIM: S+1 evenly spaced values from 0 to T.
inline std::vector<int> ddim_step_indices(int steps, int ddim_steps) {
  std::vector<int> taus(ddim_steps + 1);
  for (int i = 0; i <= ddim_steps; ++i)
    taus[i] = static_cast<int>(std::llround(
        static_cast<double>(i) * steps / ddim_steps));
  for (int i = 1; i <= ddim_steps; ++i)
    if (taus[i] <= taus[i - 1]) throw ConfigError("ddim step grid collapsed");
  return taus;
}

}  // namespace detail

// Draws one future: start from white noise in coefficient space, then per
// reverse step form the noisy observation at the target step, denoise with
// the model (optionally classifier-free mixed), and mix both through the
// observation mask. Returns the full (H+F) x 3J motion. Deterministic in
// opts.seed.
inline Tensor sample_prediction(const Tensor& observation,
                                const DenoiserModel& model,
                                const NoiseSchedule& schedule,
                                const DctBasis& basis,
                                const SamplerOptions& opts) {
  opts.validate(schedule.steps);
  const std::size_t obs_frames = observation.rows();
  if (obs_frames < 1 || obs_frames >= basis.full)
    throw DimensionError("sample_prediction: observation length out of range");
  const std::size_t future_frames = basis.full - obs_frames;
  if (observation.cols() != static_cast<std::size_t>(model.config().feature))
    throw DimensionError("sample_prediction: observation width != model feature");
  if (basis.retained != static_cast<std::size_t>(model.config().dct_rows))
    throw DimensionError("sample_prediction: basis rows != model dct_rows");

  Rng rng(opts.seed);
  const std::size_t rows = basis.retained, cols = observation.cols();
  Tensor y_t = Tensor::matrix(rows, cols);
  fill_normal(y_t, rng);

  const Tensor condition = dct_forward(pad_observation(observation, future_frames), basis);
  const GuidanceMask mask(obs_frames, future_frames);

  std::vector<int> taus;
  if (opts.mode == SamplerMode::kDdim)
    taus = detail::ddim_step_indices(schedule.steps, opts.ddim_steps);
  else {
    taus.resize(schedule.steps + 1);
    std::iota(taus.begin(), taus.end(), 0);
  }

  Tensor zero = Tensor::matrix(rows, cols);
  for (std::size_t idx = taus.size() - 1; idx >= 1; --idx) {
    const int t = taus[idx], t_prev = taus[idx - 1];
    Tensor z = zero;
    if (t_prev >= 1) fill_normal(z, rng);

    Tensor y_obs(condition.shape());
    const double a = std::sqrt(schedule.alpha_bar[t_prev]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[t_prev]);
    for (std::size_t i = 0; i < y_obs.size(); ++i)
      y_obs[i] = a * condition[i] + b * z[i];

    try {
      Tensor eps_hat;
      {
        Graph g;
        TensorPtr cond_ptr = g.constant(condition);
        eps_hat = *model.forward(g, g.constant(y_t), cond_ptr, t, false);
        if (opts.guidance_w > 0.0) {
          Graph gu;
          Tensor eps_uncond =
              *model.forward(gu, gu.constant(y_t), nullptr, t, true);
          eps_hat = cfg_mix(eps_hat, eps_uncond, opts.guidance_w);
        }
      }

      Tensor z_step = z;
      if (opts.independent_step_noise && t_prev >= 1) fill_normal(z_step, rng);

      Tensor y_den = opts.mode == SamplerMode::kDdpm
                         ? ddpm_step(y_t, eps_hat, t, z_step, schedule)
                         : ddim_step(y_t, eps_hat, t, t_prev, schedule,
                                     opts.eta, z_step);
      y_t = observation_guidance(y_obs, y_den, mask, basis);
      require_finite(y_t, "sampler state");
    } catch (const NumericError& e) {
      throw NumericError("sampling failed at step t=" + std::to_string(t) +
                         ": " + e.what());
    }
    if (opts.observer) opts.observer(t_prev, y_t, y_obs);
  }
  return idct(y_t, basis);
}

// ---- optimizer and training loop --------------------------------------------

// Adam with bias correction; element order follows the model's parameter
// registry, so training is deterministic.
class AdamOptimizer {
 public:
  AdamOptimizer(const std::vector<std::pair<std::string, TensorPtr>>& params,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = *params_[pi].second;
      if (!p.has_grad()) continue;
      const auto& g = p.grad_view();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  void zero_grad() {
    for (const auto& [name, p] : params_) p->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, TensorPtr>> params_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  int epochs = 100;
  int batch = 64;
  double lr = 3e-4;
  double lr_decay = 0.8;   // multiplier applied every decay_every epochs
  int decay_every = 100;
  double cond_drop = 0.2;  // probability of training on the null condition
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;        // mean per-sample loss per epoch
  std::size_t null_condition_uses = 0;   // draws that trained unconditioned
  std::size_t total_steps = 0;           // optimizer steps taken
};

// Per sample: y0 = DCT(window), c = DCT(pad(observation)), t uniform in
// [1, T], eps standard normal, then one accumulated gradient step per batch.
inline TrainResult train(DenoiserModel& model, const std::vector<Sample>& dataset,
                         const NoiseSchedule& schedule, const DctBasis& basis,
                         const TrainConfig& config) {
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  if (config.batch < 1 || config.epochs < 0 || config.decay_every < 1)
    throw ConfigError("train: bad batch/epoch configuration");

  // Window and padded-observation coefficients are fixed per sample.
  std::vector<Tensor> y0(dataset.size()), cond(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset[i];
    if (s.observation.rows() + s.future.rows() != basis.full)
      throw DimensionError("train: window length != basis size");
    y0[i] = dct_forward(concat_window(s), basis);
    cond[i] = dct_forward(pad_observation(s.observation, s.future.rows()), basis);
  }

  Rng rng(config.seed);
  AdamOptimizer opt(model.named_parameters());
  TrainResult result;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr *
                      std::pow(config.lr_decay, epoch / config.decay_every);
    // Fisher-Yates over the fixed index order keeps shuffling deterministic.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);

    double epoch_sum = 0.0;
    for (std::size_t base = 0; base < order.size();
         base += static_cast<std::size_t>(config.batch)) {
      const std::size_t end =
          std::min(order.size(), base + static_cast<std::size_t>(config.batch));
      opt.zero_grad();
      for (std::size_t bi = base; bi < end; ++bi) {
        const std::size_t si = order[bi];
        const int t = static_cast<int>(rng.uniform_int(1, schedule.steps));
        Tensor eps = Tensor::matrix(basis.retained, y0[si].cols());
        fill_normal(eps, rng);
        const bool drop = rng.uniform() < config.cond_drop;
        if (drop) ++result.null_condition_uses;
        try {
          Graph g;
          TensorPtr loss = diffusion_loss(g, model, y0[si], cond[si], t, eps,
                                          schedule, drop);
          g.backward(loss);
          epoch_sum += (*loss)[0];
        } catch (const NumericError& e) {
          throw NumericError("training aborted at epoch " +
                             std::to_string(epoch) + ", sample " +
                             std::to_string(si) + ": " + e.what());
        }
      }
      // Mean gradient over the batch.
      const double inv = 1.0 / static_cast<double>(end - base);
      for (const auto& [name, p] : model.named_parameters())
        if (p->has_grad())
          for (double& gv : p->grad()) gv *= inv;
      opt.step(lr);
      ++result.total_steps;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));
  }
  return result;
}

}  // namespace modiff
