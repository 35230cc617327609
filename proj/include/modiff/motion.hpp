#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "modiff/rng.hpp"
#include "modiff/tensor.hpp"

namespace modiff {

// A motion clip: N frames of 3J Cartesian joint coordinates (meters) at a
// fixed frame rate. Row t of `frames` is the pose at frame t.
struct MotionSequence {
  std::uint32_t joints = 0;
  float fps = 0.0f;
  Tensor frames;  // N x 3J

  std::size_t frame_count() const { return frames.rows(); }
  std::size_t coords() const { return 3 * static_cast<std::size_t>(joints); }
};

// One training/evaluation item: H observed frames and the F frames that
// immediately follow them in the source sequence.
struct Sample {
  Tensor observation;  // H x 3J
  Tensor future;       // F x 3J
  std::size_t source_id = 0;
  std::size_t frame_offset = 0;
};

// Futures of all samples whose final observed pose lies within tau of the
// anchor's final observed pose. The anchor's own future is always a member.
struct MultimodalGroup {
  std::size_t anchor = 0;
  std::vector<std::size_t> members;   // sample indices, anchor included
  std::vector<Tensor> futures;        // F x 3J each, aligned with members
};

// ---- MOTN binary format --------------------------------------------------
// Little-endian: magic "MOTN", u32 version=1, u32 J, f32 fps, u64 N,
// then N*3J f32 coordinates row-major.

namespace detail {

template <class T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LengthError(std::string("truncated file while reading ") + what);
  return v;
}

}  // namespace detail

inline void save_motion_file(const std::filesystem::path& path,
                             const MotionSequence& seq) {
  if (seq.frame_count() < 1 || seq.joints < 1)
    throw LengthError("save_motion_file: need at least one frame and joint");
  if (seq.frames.cols() != seq.coords())
    throw DimensionError("save_motion_file: frame width != 3J");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write("MOTN", 4);
  detail::write_raw(out, std::uint32_t{1});
  detail::write_raw(out, seq.joints);
  detail::write_raw(out, seq.fps);
  detail::write_raw(out, static_cast<std::uint64_t>(seq.frame_count()));
  for (double v : seq.frames.values())
    detail::write_raw(out, static_cast<float>(v));
  if (!out) throw IoError("write failed: " + path.string());
}

inline MotionSequence load_motion_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MOTN", 4) != 0)
    throw FormatError("bad magic in " + path.string());
  const auto version = detail::read_raw<std::uint32_t>(in, "version");
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version));
  MotionSequence seq;
  seq.joints = detail::read_raw<std::uint32_t>(in, "joint count");
  seq.fps = detail::read_raw<float>(in, "fps");
  const auto frames = detail::read_raw<std::uint64_t>(in, "frame count");
  if (seq.joints < 1) throw FormatError("joint count must be >= 1");
  if (frames < 1) throw LengthError("frame count must be >= 1");
  if (!std::isfinite(seq.fps) || seq.fps <= 0.0f)
    throw DataError("fps must be finite and positive");
  seq.frames = Tensor::matrix(frames, seq.coords());
  for (double& v : seq.frames.values()) {
    const float f = detail::read_raw<float>(in, "coordinates");
    if (!std::isfinite(f)) throw DataError("non-finite coordinate payload");
    v = static_cast<double>(f);
  }
  return seq;
}

// ---- dataset assembly ------------------------------------------------------

// Every window of length H+F starting at a multiple of `stride`; sequences
// shorter than H+F contribute nothing.
inline std::vector<Sample> window_dataset(
    const std::vector<MotionSequence>& sequences, std::size_t obs_frames,
    std::size_t future_frames, std::size_t stride) {
  if (obs_frames < 1 || future_frames < 1 || stride < 1)
    throw DimensionError("window_dataset: H, F and stride must be >= 1");
  std::vector<Sample> samples;
  const std::size_t window = obs_frames + future_frames;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const Tensor& frames = sequences[s].frames;
    if (frames.rows() < window) continue;
    const std::size_t cols = frames.cols();
    for (std::size_t off = 0; off + window <= frames.rows(); off += stride) {
      Sample smp;
      smp.observation = Tensor::matrix(obs_frames, cols);
      smp.future = Tensor::matrix(future_frames, cols);
      std::copy(frames.data() + off * cols,
                frames.data() + (off + obs_frames) * cols,
                smp.observation.data());
      std::copy(frames.data() + (off + obs_frames) * cols,
                frames.data() + (off + window) * cols, smp.future.data());
      smp.source_id = s;
      smp.frame_offset = off;
      samples.push_back(std::move(smp));
    }
  }
  return samples;
}

// Extends an observation to H+F rows by repeating its last frame.
inline Tensor pad_observation(const Tensor& obs, std::size_t future_frames) {
  if (obs.rows() < 1)
    throw DimensionError("pad_observation: empty observation");
  Tensor padded = Tensor::matrix(obs.rows() + future_frames, obs.cols());
  std::copy(obs.values().begin(), obs.values().end(), padded.data());
  const double* last = obs.data() + (obs.rows() - 1) * obs.cols();
  for (std::size_t t = obs.rows(); t < padded.rows(); ++t)
    std::copy(last, last + obs.cols(), padded.data() + t * obs.cols());
  return padded;
}

// Reconstructs the full source window (used by tests and the training loop).
inline Tensor concat_window(const Sample& sample) {
  Tensor full = Tensor::matrix(
      sample.observation.rows() + sample.future.rows(),
      sample.observation.cols());
  std::copy(sample.observation.values().begin(),
            sample.observation.values().end(), full.data());
  std::copy(sample.future.values().begin(), sample.future.values().end(),
            full.data() + sample.observation.size());
  return full;
}

// Subtracts one joint's coordinates from every joint, per frame.
inline void center_on_root(MotionSequence& seq, std::size_t root_joint) {
  if (root_joint >= seq.joints)
    throw DimensionError("center_on_root: joint index out of range");
  Tensor& f = seq.frames;
  for (std::size_t t = 0; t < f.rows(); ++t)
    for (std::size_t c = 0; c < 3; ++c) {
      const double root = f(t, root_joint * 3 + c);
      for (std::size_t j = 0; j < seq.joints; ++j) f(t, j * 3 + c) -= root;
    }
}

// ---- synthetic data --------------------------------------------------------

struct SynthConfig {
  std::uint32_t joints = 5;
  float fps = 50.0f;
  std::size_t frames = 250;
  std::size_t harmonics = 3;
  double amp_min = 0.05;
  double amp_max = 0.5;
  std::uint64_t seed = 0;
};

// Band-limited stand-in for mocap data: each coordinate channel is a sum of
// `harmonics` sinusoids with frequencies in [0.2, 2.0] Hz plus a constant
// per-channel offset. Band-limiting keeps truncated-DCT reconstruction
// near-lossless, which the codec tests rely on.
inline MotionSequence synth_generate(const SynthConfig& config) {
  if (config.harmonics < 1)
    throw DimensionError("synth_generate: harmonics must be >= 1");
  Rng rng(config.seed);
  MotionSequence seq;
  seq.joints = config.joints;
  seq.fps = config.fps;
  const std::size_t channels = seq.coords();
  seq.frames = Tensor::matrix(config.frames, channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    // joints sit at body-scale positions and oscillate around them
    const double offset = -1.0 + 2.0 * rng.uniform();
    std::vector<double> freq(config.harmonics), phase(config.harmonics),
        amp(config.harmonics);
    for (std::size_t h = 0; h < config.harmonics; ++h) {
      freq[h] = 0.2 + (2.0 - 0.2) * rng.uniform();
      phase[h] = 2.0 * 3.14159265358979323846 * rng.uniform();
      amp[h] = config.amp_min + (config.amp_max - config.amp_min) * rng.uniform();
    }
    for (std::size_t t = 0; t < config.frames; ++t) {
      const double time = static_cast<double>(t) / config.fps;
      double v = offset;
      for (std::size_t h = 0; h < config.harmonics; ++h)
        v += amp[h] * std::sin(2.0 * 3.14159265358979323846 * freq[h] * time +
                               phase[h]);
      seq.frames(t, ch) = v;
    }
  }
  return seq;
}

// ---- multimodal grouping ---------------------------------------------------

// Groups samples by L2 distance between final observed frames: sample j's
// future joins anchor i's group iff ||obs_i[H-1] - obs_j[H-1]||_2 < tau.
inline std::vector<MultimodalGroup> multimodal_group(
    const std::vector<Sample>& samples, double tau) {
  if (tau <= 0.0) throw ConfigError("multimodal_group: tau must be positive");
  std::vector<MultimodalGroup> groups(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    groups[i].anchor = i;
    const Tensor& oi = samples[i].observation;
    const double* a = oi.data() + (oi.rows() - 1) * oi.cols();
    for (std::size_t j = 0; j < samples.size(); ++j) {
      const Tensor& oj = samples[j].observation;
      const double* b = oj.data() + (oj.rows() - 1) * oj.cols();
      double d2 = 0.0;
      for (std::size_t c = 0; c < oi.cols(); ++c)
        d2 += (a[c] - b[c]) * (a[c] - b[c]);
      if (std::sqrt(d2) < tau) {
        groups[i].members.push_back(j);
        groups[i].futures.push_back(samples[j].future);
      }
    }
  }
  return groups;
}

}  // namespace modiff
