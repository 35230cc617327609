#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "modiff/diffusion.hpp"

using namespace modiff;

namespace {

DenoiserModel tiny_model(int dct_rows, int feature, std::uint64_t seed,
                         int hidden = 16, int layers = 2) {
  DenoiserConfig cfg;
  cfg.layers = layers;
  cfg.hidden = hidden;
  cfg.heads = 2;
  cfg.ffn = 2 * hidden;
  cfg.se_reduction = 4;
  cfg.dct_rows = dct_rows;
  cfg.feature = feature;
  Rng rng(seed);
  return DenoiserModel::init(cfg, rng);
}

// Schedule with hand-set constants for limit-case tests.
NoiseSchedule manual_schedule(const std::vector<double>& beta) {
  NoiseSchedule s;
  s.steps = static_cast<int>(beta.size()) - 1;  // beta[0] unused
  s.beta = beta;
  s.alpha.assign(beta.size(), 0.0);
  s.alpha_bar.assign(beta.size(), 1.0);
  s.sigma.assign(beta.size(), 0.0);
  for (int t = 1; t <= s.steps; ++t) {
    s.alpha[t] = 1.0 - beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma[t] = std::sqrt((1.0 - s.alpha_bar[t - 1]) /
                           (1.0 - s.alpha_bar[t]) * beta[t]);
  }
  return s;
}

Tensor randn(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = Tensor::matrix(r, c);
  fill_normal(t, rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("cosine schedule satisfies its defining identities") {
  const NoiseSchedule s = cosine_schedule(1000, 0.008);
  REQUIRE(s.alpha_bar[0] == 1.0);
  REQUIRE(s.alpha_bar[1000] < 1e-3);

  double product = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    REQUIRE(s.beta[t] > 0.0);
    REQUIRE(s.beta[t] <= 0.999);
    REQUIRE(s.alpha[t] == 1.0 - s.beta[t]);
    product *= s.alpha[t];
    REQUIRE(std::abs(product - s.alpha_bar[t]) < 1e-12);
    REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    const double posterior = (1.0 - s.alpha_bar[t - 1]) /
                             (1.0 - s.alpha_bar[t]) * s.beta[t];
    REQUIRE(std::abs(s.sigma[t] * s.sigma[t] - posterior) < 1e-12);
  }
  REQUIRE_THROWS_AS(cosine_schedule(0), StepError);
}

TEST_CASE("q_sample limit cases and Monte Carlo moments") {
  Rng rng(7);
  Tensor y0 = randn(4, 6, rng);
  Tensor eps = randn(4, 6, rng);

  // hypothetical alpha_bar = 1: no noise
  NoiseSchedule ones = manual_schedule({0.0, 0.0});
  REQUIRE(max_abs_diff(q_sample(y0, 1, eps, ones), y0) == 0.0);

  // alpha_bar -> 0: pure noise
  NoiseSchedule zeros = manual_schedule({0.0, 1.0 - 1e-18});
  REQUIRE(max_abs_diff(q_sample(y0, 1, eps, zeros), eps) < 1e-8);

  const NoiseSchedule s = cosine_schedule(100);
  REQUIRE_THROWS_AS(q_sample(y0, 0, eps, s), StepError);
  REQUIRE_THROWS_AS(q_sample(y0, 101, eps, s), StepError);

  // over 10^4 draws the sample mean approaches sqrt(abar_t) * y0
  const int t = 50;
  const int draws = 10000;
  Tensor mean = Tensor::matrix(4, 6);
  Rng noise(123);
  for (int i = 0; i < draws; ++i) {
    Tensor e = randn(4, 6, noise);
    Tensor yt = q_sample(y0, t, e, s);
    for (std::size_t k = 0; k < yt.size(); ++k) mean[k] += yt[k];
  }
  const double se = std::sqrt((1.0 - s.alpha_bar[t]) / draws);
  const double a = std::sqrt(s.alpha_bar[t]);
  for (std::size_t k = 0; k < mean.size(); ++k) {
    mean[k] /= draws;
    REQUIRE(std::abs(mean[k] - a * y0[k]) < 4.0 * se);
  }
}

TEST_CASE("terminal step is near standard normal") {
  const NoiseSchedule s = cosine_schedule(1000);
  Rng rng(11);
  Tensor y0 = randn(4, 6, rng);
  const int draws = 10000;
  Tensor sum = Tensor::matrix(4, 6), sum2 = Tensor::matrix(4, 6);
  Rng noise(321);
  for (int i = 0; i < draws; ++i) {
    Tensor e = randn(4, 6, noise);
    Tensor yt = q_sample(y0, s.steps, e, s);
    for (std::size_t k = 0; k < yt.size(); ++k) {
      sum[k] += yt[k];
      sum2[k] += yt[k] * yt[k];
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double mean = sum[k] / draws;
    const double var = sum2[k] / draws - mean * mean;
    REQUIRE(std::abs(mean) < 0.05);
    REQUIRE(var > 0.9);
    REQUIRE(var < 1.1);
  }
}

TEST_CASE("ddpm_step limit cases and hand evaluation") {
  Rng rng(13);
  Tensor y = randn(3, 4, rng);
  Tensor eps_hat = randn(3, 4, rng);
  Tensor z = randn(3, 4, rng);
  Tensor zero = Tensor::matrix(3, 4);

  // beta = 0 is a no-op step
  NoiseSchedule noop = manual_schedule({0.0, 0.5, 0.0});
  REQUIRE(max_abs_diff(ddpm_step(y, eps_hat, 2, z, noop), y) == 0.0);

  // t = 1 with z = 0 is deterministic
  const NoiseSchedule s = cosine_schedule(40);
  const Tensor a = ddpm_step(y, eps_hat, 1, zero, s);
  const Tensor b = ddpm_step(y, eps_hat, 1, zero, s);
  REQUIRE(a.values() == b.values());

  // one step from a q_sample state with eps_hat = eps matches the formula
  // evaluated scalar by scalar
  Rng rng2(17);
  Tensor y0 = randn(3, 4, rng2);
  Tensor eps = randn(3, 4, rng2);
  Tensor zz = randn(3, 4, rng2);
  const int t = 25;
  Tensor yt = q_sample(y0, t, eps, s);
  Tensor got = ddpm_step(yt, eps, t, zz, s);
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double want =
        (yt[i] - s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]) * eps[i]) /
            std::sqrt(s.alpha[t]) +
        s.sigma[t] * zz[i];
    REQUIRE(std::abs(got[i] - want) < 1e-12);
  }
  REQUIRE_THROWS_AS(ddpm_step(y, eps_hat, 0, z, s), StepError);
}

TEST_CASE("ddim_step determinism, inversion and posterior variance") {
  Rng rng(19);
  const NoiseSchedule s = cosine_schedule(60);
  Tensor y0 = randn(3, 5, rng);
  Tensor eps = randn(3, 5, rng);
  Tensor z = randn(3, 5, rng);
  Tensor zero = Tensor::matrix(3, 5);

  // eta = 0 ignores z entirely
  const int t = 40, tp = 30;
  Tensor yt = q_sample(y0, t, eps, s);
  REQUIRE(max_abs_diff(ddim_step(yt, eps, t, tp, s, 0.0, z),
                       ddim_step(yt, eps, t, tp, s, 0.0, zero)) == 0.0);

  // with the true eps and t_prev = 0 the clean signal comes back
  Tensor recovered = ddim_step(yt, eps, t, 0, s, 0.0, zero);
  REQUIRE(max_abs_diff(recovered, y0) < 1e-10);

  // eta = 1 with consecutive steps matches the ancestral noise scale
  for (int step = 2; step <= s.steps; ++step) {
    const double abar_t = s.alpha_bar[step];
    const double abar_p = s.alpha_bar[step - 1];
    const double sigma = std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) *
                         std::sqrt(1.0 - abar_t / abar_p);
    REQUIRE(std::abs(sigma - s.sigma[step]) < 1e-12);
  }

  REQUIRE_THROWS_AS(ddim_step(yt, eps, 10, 10, s, 0.0, zero), StepError);
  REQUIRE_THROWS_AS(ddim_step(yt, eps, 10, 11, s, 0.0, zero), StepError);
}

TEST_CASE("cfg_mix is the stated affine combination") {
  Rng rng(23);
  Tensor c = randn(2, 3, rng);
  Tensor u = randn(2, 3, rng);
  REQUIRE(cfg_mix(c, u, 0.0).values() == c.values());
  REQUIRE(max_abs_diff(cfg_mix(c, c, 3.5), c) < 1e-14);  // cancellation
  Tensor two = cfg_mix(c, u, 1.0);
  for (std::size_t i = 0; i < two.size(); ++i)
    REQUIRE(std::abs(two[i] - (2.0 * c[i] - u[i])) < 1e-15);
  REQUIRE_THROWS_AS(cfg_mix(c, u, -0.1), ConfigError);
}

TEST_CASE("observation guidance respects the mask") {
  Rng rng(29);
  const std::size_t nf = 12, l = 5, cols = 6;
  const DctBasis basis = dct_basis(nf, l);
  Tensor y_obs = randn(l, cols, rng);
  Tensor y_den = randn(l, cols, rng);

  // all-ones mask: identity on coefficients for any truncation
  const GuidanceMask all_obs(nf, 0);
  REQUIRE(max_abs_diff(observation_guidance(y_obs, y_den, all_obs, basis),
                       y_obs) < 1e-12);

  // all-zeros mask: the denoised side passes through
  const GuidanceMask all_den(0, nf);
  REQUIRE(max_abs_diff(observation_guidance(y_obs, y_den, all_den, basis),
                       y_den) < 1e-12);

  // full basis: observed rows of the mixed state equal the observation rows
  const DctBasis full = dct_basis(nf, nf);
  Tensor yo = randn(nf, cols, rng);
  Tensor yd = randn(nf, cols, rng);
  const GuidanceMask mask(4, nf - 4);
  Tensor mixed = observation_guidance(yo, yd, mask, full);
  Tensor x_mixed = idct(mixed, full);
  Tensor x_obs = idct(yo, full);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      REQUIRE(std::abs(x_mixed(r, c) - x_obs(r, c)) < 1e-12);

  const GuidanceMask wrong(3, 4);
  REQUIRE_THROWS_AS(observation_guidance(y_obs, y_den, wrong, basis),
                    DimensionError);
}

TEST_CASE("sampler is seeded, shaped and preserves the observation") {
  // shape contract: H=15, F=60, J=5 -> 75 x 15
  {
    const DenoiserModel model = tiny_model(10, 15, 31);
    const NoiseSchedule s = cosine_schedule(50);
    const DctBasis& basis = dct_basis_cached(75, 10);
    Rng rng(37);
    Tensor obs = randn(15, 15, rng);
    SamplerOptions opts;
    opts.mode = SamplerMode::kDdim;
    opts.ddim_steps = 10;
    opts.seed = 5;
    const Tensor out = sample_prediction(obs, model, s, basis, opts);
    REQUIRE(out.rows() == 75);
    REQUIRE(out.cols() == 15);
    const Tensor again = sample_prediction(obs, model, s, basis, opts);
    REQUIRE(out.values() == again.values());  // bitwise determinism

    SamplerOptions other = opts;
    other.seed = 6;
    REQUIRE(sample_prediction(obs, model, s, basis, other).values() !=
            out.values());
  }

  // full basis: the returned first H frames equal the observation
  {
    const std::size_t h = 5, f = 7, nf = h + f, cols = 6;
    const DenoiserModel model = tiny_model(static_cast<int>(nf),
                                           static_cast<int>(cols), 41);
    const NoiseSchedule s = cosine_schedule(30);
    const DctBasis basis = dct_basis(nf, nf);
    Rng rng(43);
    Tensor obs = randn(h, cols, rng);
    for (SamplerMode mode : {SamplerMode::kDdpm, SamplerMode::kDdim}) {
      SamplerOptions opts;
      opts.mode = mode;
      opts.ddim_steps = 15;
      opts.seed = 9;
      const Tensor out = sample_prediction(obs, model, s, basis, opts);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          REQUIRE(std::abs(out(r, c) - obs(r, c)) < 1e-9);
    }
  }
}

TEST_CASE("sampler guidance keeps the observed region at every step") {
  const std::size_t h = 4, f = 6, nf = h + f, cols = 3;
  const DenoiserModel model = tiny_model(static_cast<int>(nf),
                                         static_cast<int>(cols), 47);
  const NoiseSchedule s = cosine_schedule(25);
  const DctBasis basis = dct_basis(nf, nf);
  Rng rng(53);
  Tensor obs = randn(h, cols, rng);
  SamplerOptions opts;
  opts.mode = SamplerMode::kDdpm;
  opts.seed = 3;
  int steps_seen = 0;
  opts.observer = [&](int, const Tensor& y_mixed, const Tensor& y_obs) {
    const Tensor xm = idct(y_mixed, basis);
    const Tensor xo = idct(y_obs, basis);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        REQUIRE(std::abs(xm(r, c) - xo(r, c)) < 1e-10);
    ++steps_seen;
  };
  sample_prediction(obs, model, s, basis, opts);
  REQUIRE(steps_seen == s.steps);
}

TEST_CASE("diffusion loss limit cases") {
  Rng rng(59);
  const NoiseSchedule s = cosine_schedule(20);
  Tensor y0 = randn(4, 6, rng);
  Tensor cond = randn(4, 6, rng);
  Tensor eps = randn(4, 6, rng);

  // untrained model has a zero-initialized output head, so eps_hat = 0 and
  // the loss is exactly mean(eps^2)
  const DenoiserModel zero_model = tiny_model(4, 6, 61);
  Graph g;
  TensorPtr loss = diffusion_loss(g, zero_model, y0, cond, 10, eps, s, false);
  double want = 0.0;
  for (double v : eps.values()) want += v * v;
  want /= static_cast<double>(eps.size());
  REQUIRE(std::abs((*loss)[0] - want) < 1e-12);

  // a model that reproduces the injected noise exactly scores zero; the
  // zero-initialized head predicts zero noise, so feed zero noise
  Tensor zero_eps = Tensor::matrix(4, 6);
  Graph g2;
  TensorPtr zl = diffusion_loss(g2, zero_model, y0, cond, 10, zero_eps, s, false);
  REQUIRE((*zl)[0] == 0.0);
}

TEST_CASE("training runs, decays loss and honors condition dropout") {
  Rng rng(67);
  const std::size_t h = 4, f = 6, nf = h + f;
  const DctBasis basis = dct_basis(nf, 4);
  const NoiseSchedule s = cosine_schedule(30);

  std::vector<Sample> data(1);
  data[0].observation = randn(h, 3, rng);
  data[0].future = randn(f, 3, rng);

  // lr = 0 leaves parameters untouched
  {
    DenoiserModel model = tiny_model(4, 3, 71, 8);
    std::vector<Tensor> before;
    for (const auto& [n, p] : model.named_parameters()) before.push_back(*p);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    cfg.lr = 0.0;
    cfg.seed = 1;
    train(model, data, s, basis, cfg);
    std::size_t i = 0;
    for (const auto& [n, p] : model.named_parameters())
      REQUIRE(p->values() == before[i++].values());
  }

  // overfit sanity: 200 steps on one sample reduce the loss, probed on a
  // fixed (t, eps) pair since each epoch's recorded loss is a single draw
  {
    DenoiserModel model = tiny_model(4, 3, 73, 8);
    const Tensor y0 = dct_forward(concat_window(data[0]), basis);
    const Tensor cond = dct_forward(
        pad_observation(data[0].observation, f), basis);
    Rng probe_rng(1234);
    const Tensor probe_eps = randn(4, 3, probe_rng);
    auto probe = [&]() {
      Graph g;
      return (*diffusion_loss(g, model, y0, cond, 15, probe_eps, s, false))[0];
    };
    const double before = probe();
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch = 1;
    cfg.lr = 3e-3;
    cfg.cond_drop = 0.0;
    cfg.seed = 2;
    const TrainResult r = train(model, data, s, basis, cfg);
    REQUIRE(r.epoch_loss.size() == 200);
    REQUIRE(probe() < before);
    double early = 0.0, late = 0.0;
    for (int e = 0; e < 50; ++e) {
      early += r.epoch_loss[e];
      late += r.epoch_loss[150 + e];
    }
    REQUIRE(late < early);
    REQUIRE(r.null_condition_uses == 0);
  }

  // cond_drop = 1 trains on the null condition every time
  {
    DenoiserModel model = tiny_model(4, 3, 79, 8);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    cfg.cond_drop = 1.0;
    cfg.seed = 3;
    const TrainResult r = train(model, data, s, basis, cfg);
    REQUIRE(r.null_condition_uses == 5);  // one sample, five epochs
  }

  std::vector<Sample> empty;
  DenoiserModel model = tiny_model(4, 3, 83, 8);
  TrainConfig cfg;
  REQUIRE_THROWS_AS(train(model, empty, s, basis, cfg), ConfigError);
}
