// Command-line front end: synthetic data generation, training, sampling,
// evaluation and plotting, all driven by one flat configuration that can be
// loaded from a file (key = value, # comments) and overridden by flags.
//
// Exit codes: 0 ok, 2 I/O failure, 3 empty dataset, 4 numeric failure,
// 5 configuration mismatch, 6 plot input error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modiff/checkpoint.hpp"
#include "modiff/config.hpp"
#include "modiff/metrics.hpp"
#include "modiff/svg_plot.hpp"

namespace fs = std::filesystem;
using namespace modiff;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitEmptyDataset = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitConfigMismatch = 5;
constexpr int kExitPlotInput = 6;

// Flat key = value configuration file with '#' comments; keys are the long
// option names. Returned as synthetic command-line tokens.
std::vector<std::string> read_flat_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::vector<std::string> args;
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line is not 'key = value': " + t);
    const std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// Adds every RunConfig field to a subcommand so each --help lists the full
// configuration surface with its defaults. File values are applied by a
// re-parse with take-last semantics, so explicit flags override the file.
void add_config_options(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
  cmd->option_defaults()->always_capture_default();
  cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  cmd->add_option("--config", config_path,
                  "read options from a key = value file")
      ->configurable(false);

  cmd->add_option("--joints", cfg.joints, "skeleton joint count J");
  cmd->add_option("--fps", cfg.fps, "frame rate (Hz)");
  cmd->add_option("--obs-frames", cfg.obs_frames, "observed frames H");
  cmd->add_option("--future-frames", cfg.future_frames, "predicted frames F");
  cmd->add_option("--stride", cfg.stride, "window stride over sequences");
  cmd->add_option("--tau", cfg.tau, "multimodal grouping threshold (m)");
  cmd->add_option("--root-joint", cfg.root_joint,
                  "recenter all joints on this joint index (-1 = off)");

  cmd->add_option("--layers", cfg.layers, "denoiser transformer blocks");
  cmd->add_option("--hidden", cfg.hidden, "denoiser hidden width d");
  cmd->add_option("--heads", cfg.heads, "attention heads");
  cmd->add_option("--ffn", cfg.ffn, "feed-forward inner width");
  cmd->add_option("--se-reduction", cfg.se_reduction,
                  "squeeze-excitation bottleneck ratio");
  cmd->add_option("--dct-rows", cfg.dct_rows, "retained DCT rows L");
  cmd->add_option("--cond-pool", cfg.cond_pool,
                  "history pooling for the condition token (mean|sum)");

  cmd->add_option("--steps", cfg.steps, "diffusion steps T");
  cmd->add_option("--cosine-s", cfg.cosine_s, "cosine schedule offset s");

  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--batch", cfg.batch, "batch size");
  cmd->add_option("--lr", cfg.lr, "learning rate");
  cmd->add_option("--lr-decay", cfg.lr_decay, "learning-rate decay ratio");
  cmd->add_option("--decay-every", cfg.decay_every,
                  "epochs between learning-rate decays");
  cmd->add_option("--cond-drop", cfg.cond_drop,
                  "probability of training on the null condition");

  cmd->add_option("--sampler", cfg.sampler, "sampling mode (ddpm|ddim)");
  cmd->add_option("--ddim-steps", cfg.ddim_steps, "retained DDIM steps S");
  cmd->add_option("--eta", cfg.eta, "DDIM stochasticity in [0,1]");
  cmd->add_option("--guidance-w", cfg.guidance_w,
                  "classifier-free guidance weight");
  cmd->add_option("--predictions", cfg.predictions,
                  "futures sampled per observation K");
  cmd->add_option("--seed", cfg.seed, "base random seed");
  cmd->add_flag("--independent-step-noise", cfg.independent_step_noise,
                "draw separate noise for the denoising step");

  cmd->add_option("--synth-sequences", cfg.synth_sequences,
                  "synthetic sequences to generate");
  cmd->add_option("--synth-frames", cfg.synth_frames,
                  "frames per synthetic sequence");
  cmd->add_option("--harmonics", cfg.harmonics,
                  "sinusoids per synthetic channel");
  cmd->add_option("--amp-min", cfg.amp_min, "minimum harmonic amplitude (m)");
  cmd->add_option("--amp-max", cfg.amp_max, "maximum harmonic amplitude (m)");

  cmd->add_option("--plot-keyframes", cfg.plot_keyframes,
                  "poses drawn per motion row");
  cmd->add_option("--bones", cfg.bones,
                  "bone list as joint index pairs, e.g. 0-1,1-2");

  cmd->add_option("--data-dir", cfg.data_dir, "motion file directory");
  cmd->add_option("--checkpoint", cfg.checkpoint, "checkpoint path");
  cmd->add_option("--report", cfg.report, "metric report path");
}

void echo_config(CLI::App* cmd, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(out_dir / "effective.cfg", std::ios::binary);
  if (!out) throw IoError("cannot write effective config in " + out_dir.string());
  out << cmd->config_to_str(true, false);
}

std::vector<MotionSequence> load_data_dir(const RunConfig& cfg,
                                          const fs::path& dir) {
  if (!fs::is_directory(dir)) return {};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".motn") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<MotionSequence> sequences;
  for (const auto& f : files) {
    MotionSequence seq = load_motion_file(f);
    if (cfg.root_joint >= 0)
      center_on_root(seq, static_cast<std::size_t>(cfg.root_joint));
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

void require_checkpoint_compatible(const Checkpoint& ck, const RunConfig& cfg) {
  if (ck.config.dct_rows != cfg.dct_rows || ck.config.hidden != cfg.hidden ||
      ck.steps != cfg.steps || ck.config.feature != cfg.feature() ||
      ck.config.layers != cfg.layers)
    throw ConfigError(
        "checkpoint disagrees with the run configuration (L/d/T/J/layers)");
}

int fail(int code, const std::string& message) {
  std::cerr << "error: " << message << "\n";
  return code;
}

// ---- subcommands -----------------------------------------------------------

int run_synth_data(CLI::App* cmd, const RunConfig& cfg) {
  try {
    fs::path dir(cfg.data_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
      throw IoError("cannot create output directory " + dir.string());
    for (int i = 0; i < cfg.synth_sequences; ++i) {
      MotionSequence seq = synth_generate(cfg.synth_config(cfg.seed + i));
      char name[32];
      std::snprintf(name, sizeof(name), "seq_%04d.motn", i);
      save_motion_file(dir / name, seq);
    }
    echo_config(cmd, dir);
    std::cout << "wrote " << cfg.synth_sequences << " sequences to "
              << dir.string() << "\n";
    return 0;
  } catch (const IoError& e) {
    return fail(kExitIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitIo, e.what());
  }
}

int run_train(CLI::App* cmd, const RunConfig& cfg) {
  try {
    const auto sequences = load_data_dir(cfg, cfg.data_dir);
    const auto samples = window_dataset(sequences, cfg.obs_frames,
                                        cfg.future_frames, cfg.stride);
    if (samples.empty())
      return fail(kExitEmptyDataset,
                  "no training windows in " + cfg.data_dir);
    const NoiseSchedule schedule = cosine_schedule(cfg.steps, cfg.cosine_s);
    const DctBasis& basis = dct_basis_cached(cfg.window(), cfg.dct_rows);
    Rng init_rng(cfg.seed);
    DenoiserModel model = DenoiserModel::init(cfg.denoiser_config(), init_rng);

    std::cout << "training on " << samples.size() << " windows, "
              << model.param_count() << " parameters\n";
    const TrainResult result = train(model, samples, schedule, basis,
                                     cfg.train_config());

    fs::path ckpt(cfg.checkpoint);
    if (ckpt.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(ckpt.parent_path(), ec);
    }
    save_checkpoint(ckpt, model, cfg.steps, cfg.cosine_s);

    fs::path loss_path = ckpt;
    loss_path += ".loss.csv";
    std::ofstream loss(loss_path, std::ios::binary);
    if (!loss) throw IoError("cannot write " + loss_path.string());
    loss << "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
      std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", e, result.epoch_loss[e]);
      loss << buf;
    }
    echo_config(cmd, ckpt.has_parent_path() ? ckpt.parent_path()
                                            : fs::path("."));
    if (!result.epoch_loss.empty())
      std::cout << "final epoch loss " << result.epoch_loss.back() << "\n";
    std::cout << "checkpoint written to " << ckpt.string() << "\n";
    return 0;
  } catch (const IoError& e) {
    return fail(kExitIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitIo, e.what());
  } catch (const NumericError& e) {
    return fail(kExitNumeric, e.what());
  }
}

int run_sample(CLI::App* cmd, const RunConfig& cfg, const std::string& obs_file,
               const std::string& out_prefix) {
  try {
    const Checkpoint ck = load_checkpoint(cfg.checkpoint);
    require_checkpoint_compatible(ck, cfg);
    MotionSequence obs_seq = load_motion_file(obs_file);
    if (cfg.root_joint >= 0)
      center_on_root(obs_seq, static_cast<std::size_t>(cfg.root_joint));
    if (obs_seq.coords() != static_cast<std::size_t>(cfg.feature()))
      throw ConfigError("observation joint count differs from configuration");
    if (obs_seq.frame_count() < static_cast<std::size_t>(cfg.obs_frames))
      throw ConfigError("observation file shorter than obs-frames");
    Tensor obs = Tensor::matrix(cfg.obs_frames, obs_seq.coords());
    std::copy(obs_seq.frames.data(),
              obs_seq.frames.data() + obs.size(), obs.data());

    const NoiseSchedule schedule = cosine_schedule(ck.steps, ck.cosine_s);
    const DctBasis& basis = dct_basis_cached(cfg.window(), cfg.dct_rows);
    const SamplerOptions base = cfg.sampler_options();

    fs::path prefix(out_prefix);
    if (prefix.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(prefix.parent_path(), ec);
    }
    for (int k = 0; k < cfg.predictions; ++k) {
      SamplerOptions opts = base;
      opts.seed = base.seed + static_cast<std::uint64_t>(k);
      MotionSequence out_seq;
      out_seq.joints = obs_seq.joints;
      out_seq.fps = obs_seq.fps;
      out_seq.frames = sample_prediction(obs, ck.model, schedule, basis, opts);
      save_motion_file(out_prefix + "_" + std::to_string(k) + ".motn", out_seq);
    }
    echo_config(cmd, prefix.has_parent_path() ? prefix.parent_path()
                                              : fs::path("."));
    std::cout << "wrote " << cfg.predictions << " predictions to "
              << out_prefix << "_*.motn\n";
    return 0;
  } catch (const ConfigError& e) {
    return fail(kExitConfigMismatch, e.what());
  } catch (const IoError& e) {
    return fail(kExitIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitIo, e.what());
  } catch (const NumericError& e) {
    return fail(kExitNumeric, e.what());
  }
}

int run_eval(CLI::App* cmd, const RunConfig& cfg) {
  try {
    const Checkpoint ck = load_checkpoint(cfg.checkpoint);
    require_checkpoint_compatible(ck, cfg);
    const auto sequences = load_data_dir(cfg, cfg.data_dir);
    const auto samples = window_dataset(sequences, cfg.obs_frames,
                                        cfg.future_frames, cfg.stride);
    if (samples.empty())
      return fail(kExitEmptyDataset, "no test windows in " + cfg.data_dir);

    const NoiseSchedule schedule = cosine_schedule(ck.steps, ck.cosine_s);
    const DctBasis& basis = dct_basis_cached(cfg.window(), cfg.dct_rows);
    const MetricReport report =
        evaluate(ck.model, samples, schedule, basis, cfg.sampler_options(),
                 static_cast<std::size_t>(cfg.predictions), cfg.tau);

    fs::path report_path(cfg.report);
    if (report_path.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(report_path.parent_path(), ec);
    }
    save_report(report_path, report);
    echo_config(cmd, report_path.has_parent_path() ? report_path.parent_path()
                                                   : fs::path("."));
    std::cout << format_report(report);
    return 0;
  } catch (const ConfigError& e) {
    return fail(kExitConfigMismatch, e.what());
  } catch (const IoError& e) {
    return fail(kExitIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitIo, e.what());
  } catch (const NumericError& e) {
    return fail(kExitNumeric, e.what());
  }
}

int run_plot(CLI::App* cmd, const RunConfig& cfg,
             const std::vector<std::string>& files, const std::string& out) {
  try {
    if (files.empty()) return fail(kExitPlotInput, "no motion files given");
    std::vector<MotionSequence> motions;
    for (const auto& f : files) motions.push_back(load_motion_file(f));
    PlotOptions opts;
    opts.keyframes = cfg.plot_keyframes;
    opts.obs_frames = static_cast<std::size_t>(cfg.obs_frames);
    opts.bones = parse_bone_list(cfg.bones, motions.front().joints);
    const std::string svg = render_svg(motions, opts);
    fs::path out_path(out);
    if (out_path.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(out_path.parent_path(), ec);
    }
    save_svg(out_path, svg);
    echo_config(cmd, out_path.has_parent_path() ? out_path.parent_path()
                                                : fs::path("."));
    std::cout << "wrote " << out_path.string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    return fail(kExitPlotInput, e.what());
  } catch (const IoError& e) {
    return fail(kExitIo, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitIo, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-based stochastic human motion prediction"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::string obs_file, out_prefix = "prediction", plot_out = "motion.svg";
  std::vector<std::string> plot_files;

  CLI::App* synth = app.add_subcommand(
      "synth-data", "generate synthetic band-limited motion files");
  add_config_options(synth, cfg, config_path);

  CLI::App* train_cmd = app.add_subcommand(
      "train", "train the denoiser on a directory of motion files");
  add_config_options(train_cmd, cfg, config_path);

  CLI::App* sample_cmd = app.add_subcommand(
      "sample", "sample predicted futures for one observation");
  add_config_options(sample_cmd, cfg, config_path);
  sample_cmd->add_option("--obs", obs_file, "observation motion file")
      ->required();
  sample_cmd->add_option("--out-prefix", out_prefix,
                         "output prefix for <prefix>_<k>.motn");

  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "evaluate a checkpoint on a directory of motion files");
  add_config_options(eval_cmd, cfg, config_path);

  CLI::App* plot_cmd = app.add_subcommand(
      "plot", "render motion files as an SVG skeleton strip");
  add_config_options(plot_cmd, cfg, config_path);
  plot_cmd->add_option("files", plot_files, "motion files to draw");
  plot_cmd->add_option("-o,--out", plot_out, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  if (!config_path.empty() && argc >= 2) {
    // file values first, explicit flags afterwards: take-last lets the
    // command line win
    try {
      std::vector<std::string> rebuilt{argv[1]};
      for (auto& arg : read_flat_config(config_path)) rebuilt.push_back(arg);
      for (int i = 2; i < argc; ++i) rebuilt.push_back(argv[i]);
      std::reverse(rebuilt.begin(), rebuilt.end());  // CLI11 parses a stack
      app.parse(rebuilt);
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    } catch (const IoError& e) {
      return fail(kExitIo, e.what());
    } catch (const ConfigError& e) {
      return fail(kExitConfigMismatch, e.what());
    }
  }

  try {
    if (synth->parsed()) return run_synth_data(synth, cfg);
    if (train_cmd->parsed()) return run_train(train_cmd, cfg);
    if (sample_cmd->parsed())
      return run_sample(sample_cmd, cfg, obs_file, out_prefix);
    if (eval_cmd->parsed()) return run_eval(eval_cmd, cfg);
    if (plot_cmd->parsed()) return run_plot(plot_cmd, cfg, plot_files, plot_out);
  } catch (const Error& e) {
    return fail(1, e.what());
  }
  return 0;
}
