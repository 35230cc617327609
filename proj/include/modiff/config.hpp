#pragma once

#include <cstdint>
#include <string>

#include "modiff/denoiser.hpp"
#include "modiff/diffusion.hpp"

namespace modiff {

// Every tunable of the pipeline in one flat structure. Defaults follow the
// reference training recipe: 1000-step cosine schedule, 20 coefficient rows,
// 512-wide 9-layer denoiser, 0.2 condition dropout, lr 3e-4 decayed by 0.8
// every 100 epochs, 100-step DDIM, 50 predictions per observation.
struct RunConfig {
  // data
  int joints = 17;
  double fps = 50.0;
  int obs_frames = 25;     // H
  int future_frames = 100; // F
  int stride = 1;
  double tau = 0.5;        // multimodal grouping threshold (meters)
  int root_joint = -1;     // >= 0 recenters all joints on this one

  // denoiser
  int layers = 9;
  int hidden = 512;
  int heads = 8;
  int ffn = 1024;
  int se_reduction = 4;
  int dct_rows = 20;       // L
  std::string cond_pool = "mean";

  // schedule
  int steps = 1000;        // T
  double cosine_s = 0.008;

  // training
  int epochs = 100;
  int batch = 64;
  double lr = 3e-4;
  double lr_decay = 0.8;
  int decay_every = 100;
  double cond_drop = 0.2;

  // sampler
  std::string sampler = "ddim";
  int ddim_steps = 100;    // S
  double eta = 0.0;
  double guidance_w = 0.0;
  int predictions = 50;    // K
  std::uint64_t seed = 42;
  bool independent_step_noise = false;

  // synthetic data
  int synth_sequences = 8;
  int synth_frames = 250;
  int harmonics = 3;
  double amp_min = 0.05;
  double amp_max = 0.5;

  // plotting
  int plot_keyframes = 5;
  std::string bones;       // "0-1,1-2,..."; empty = chain joints in order

  // paths
  std::string data_dir = "data";
  std::string checkpoint = "model.ckpt";
  std::string report = "report.txt";

  int feature() const { return 3 * joints; }
  int window() const { return obs_frames + future_frames; }

  DenoiserConfig denoiser_config() const {
    DenoiserConfig c;
    c.layers = layers;
    c.hidden = hidden;
    c.heads = heads;
    c.ffn = ffn;
    c.se_reduction = se_reduction;
    c.dct_rows = dct_rows;
    c.feature = feature();
    c.cond_pool = cond_pool_from_string(cond_pool);
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch = batch;
    t.lr = lr;
    t.lr_decay = lr_decay;
    t.decay_every = decay_every;
    t.cond_drop = cond_drop;
    t.seed = seed;
    return t;
  }

  SamplerOptions sampler_options() const {
    SamplerOptions o;
    o.mode = sampler_mode_from_string(sampler);
    o.ddim_steps = ddim_steps;
    o.eta = eta;
    o.guidance_w = guidance_w;
    o.seed = seed;
    o.independent_step_noise = independent_step_noise;
    return o;
  }

  SynthConfig synth_config(std::uint64_t sequence_seed) const {
    SynthConfig s;
    s.joints = static_cast<std::uint32_t>(joints);
    s.fps = static_cast<float>(fps);
    s.frames = static_cast<std::size_t>(synth_frames);
    s.harmonics = static_cast<std::size_t>(harmonics);
    s.amp_min = amp_min;
    s.amp_max = amp_max;
    s.seed = sequence_seed;
    return s;
  }
};

}  // namespace modiff
