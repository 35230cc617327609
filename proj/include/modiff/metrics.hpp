#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "modiff/diffusion.hpp"

namespace modiff {

// K sampled futures for one observation, the matching ground truth, and the
// multimodal ground-truth set the observation belongs to.
struct PredictionSet {
  std::vector<Tensor> samples;   // K of F x 3J
  Tensor ground_truth;           // F x 3J
  std::vector<Tensor> multimodal;  // futures of similar observations
};

enum class Strategy { kBest, kMedian, kWorst };

inline const std::array<Strategy, 3>& all_strategies() {
  static const std::array<Strategy, 3> s{Strategy::kBest, Strategy::kMedian,
                                         Strategy::kWorst};
  return s;
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kBest: return "best";
    case Strategy::kMedian: return "median";
    default: return "worst";
  }
}

// min / lower median (ascending index floor((K-1)/2)) / max of the scores.
inline double reduce_scores(std::vector<double> scores, Strategy strategy) {
  std::sort(scores.begin(), scores.end());
  switch (strategy) {
    case Strategy::kBest: return scores.front();
    case Strategy::kMedian: return scores[(scores.size() - 1) / 2];
    default: return scores.back();
  }
}

// Mean L2 distance between flattened sample pairs (unordered); 0 for K = 1.
inline double apd(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw DimensionError("apd: no samples");
  if (samples.size() == 1) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      if (!samples[i].same_shape(samples[j]))
        throw DimensionError("apd: sample shapes differ");
      double d2 = 0.0;
      for (std::size_t k = 0; k < samples[i].size(); ++k) {
        const double d = samples[i][k] - samples[j][k];
        d2 += d * d;
      }
      total += std::sqrt(d2);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

// Per-frame L2 distance over all 3J coordinates.
inline std::vector<double> displacement_profile(const Tensor& sample,
                                                const Tensor& gt) {
  if (!sample.same_shape(gt))
    throw DimensionError("displacement_profile: shapes differ");
  std::vector<double> profile(sample.rows());
  for (std::size_t f = 0; f < sample.rows(); ++f) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < sample.cols(); ++c) {
      const double d = sample(f, c) - gt(f, c);
      d2 += d * d;
    }
    profile[f] = std::sqrt(d2);
  }
  return profile;
}

namespace detail {

inline double mean_displacement(const Tensor& sample, const Tensor& gt) {
  const auto profile = displacement_profile(sample, gt);
  double sum = 0.0;
  for (double v : profile) sum += v;
  return sum / static_cast<double>(profile.size());
}

inline double final_displacement(const Tensor& sample, const Tensor& gt) {
  return displacement_profile(sample, gt).back();
}

template <class Score>
double strategy_error(const std::vector<Tensor>& samples, const Tensor& gt,
                      Strategy strategy, Score score) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (const Tensor& s : samples) scores.push_back(score(s, gt));
  return reduce_scores(std::move(scores), strategy);
}

}  // namespace detail

inline double ade(const PredictionSet& set, Strategy strategy) {
  if (set.samples.empty()) throw DimensionError("ade: no samples");
  return detail::strategy_error(set.samples, set.ground_truth, strategy,
                                detail::mean_displacement);
}

inline double fde(const PredictionSet& set, Strategy strategy) {
  if (set.samples.empty()) throw DimensionError("fde: no samples");
  return detail::strategy_error(set.samples, set.ground_truth, strategy,
                                detail::final_displacement);
}

// Strategy-reduced error against each multimodal future, then averaged over
// the multimodal set.
inline double mmade(const PredictionSet& set, Strategy strategy) {
  if (set.multimodal.empty())
    throw ConfigError("mmade: multimodal set is empty");
  double sum = 0.0;
  for (const Tensor& g : set.multimodal)
    sum += detail::strategy_error(set.samples, g, strategy,
                                  detail::mean_displacement);
  return sum / static_cast<double>(set.multimodal.size());
}

inline double mmfde(const PredictionSet& set, Strategy strategy) {
  if (set.multimodal.empty())
    throw ConfigError("mmfde: multimodal set is empty");
  double sum = 0.0;
  for (const Tensor& g : set.multimodal)
    sum += detail::strategy_error(set.samples, g, strategy,
                                  detail::final_displacement);
  return sum / static_cast<double>(set.multimodal.size());
}

// All five metrics under all three strategies, averaged over test samples.
struct MetricReport {
  // index 0 = best, 1 = median, 2 = worst
  std::array<double, 3> apd{}, ade{}, fde{}, mmade{}, mmfde{};
  std::size_t sample_count = 0;      // evaluated observations
  std::size_t prediction_count = 0;  // K
};

inline MetricReport evaluate_sets(const std::vector<PredictionSet>& sets) {
  if (sets.empty()) throw ConfigError("evaluate: no prediction sets");
  MetricReport report;
  report.sample_count = sets.size();
  report.prediction_count = sets.front().samples.size();
  for (const PredictionSet& set : sets) {
    const double pairwise = apd(set.samples);
    for (std::size_t s = 0; s < 3; ++s) {
      const Strategy st = all_strategies()[s];
      report.apd[s] += pairwise;  // diversity has no strategy dependence
      report.ade[s] += ade(set, st);
      report.fde[s] += fde(set, st);
      report.mmade[s] += mmade(set, st);
      report.mmfde[s] += mmfde(set, st);
    }
  }
  const double inv = 1.0 / static_cast<double>(sets.size());
  for (std::size_t s = 0; s < 3; ++s) {
    report.apd[s] *= inv;
    report.ade[s] *= inv;
    report.fde[s] *= inv;
    report.mmade[s] *= inv;
    report.mmfde[s] *= inv;
  }
  return report;
}

// Draws K futures per test sample (chain seeds opts.seed + sample*K + chain),
// groups multimodal ground truth at threshold tau, and averages all metrics.
inline MetricReport evaluate(const DenoiserModel& model,
                             const std::vector<Sample>& test_samples,
                             const NoiseSchedule& schedule,
                             const DctBasis& basis, const SamplerOptions& opts,
                             std::size_t predictions, double tau) {
  if (test_samples.empty()) throw ConfigError("evaluate: no test samples");
  if (predictions < 1) throw ConfigError("evaluate: need at least one prediction");
  const auto groups = multimodal_group(test_samples, tau);
  std::vector<PredictionSet> sets;
  sets.reserve(test_samples.size());
  for (std::size_t i = 0; i < test_samples.size(); ++i) {
    const Sample& sample = test_samples[i];
    PredictionSet set;
    set.ground_truth = sample.future;
    set.multimodal = groups[i].futures;
    const std::size_t obs_frames = sample.observation.rows();
    for (std::size_t k = 0; k < predictions; ++k) {
      SamplerOptions chain = opts;
      chain.seed = opts.seed + i * predictions + k;
      Tensor full = sample_prediction(sample.observation, model, schedule,
                                      basis, chain);
      Tensor future = Tensor::matrix(sample.future.rows(), full.cols());
      std::copy(full.data() + obs_frames * full.cols(),
                full.data() + full.size(), future.data());
      set.samples.push_back(std::move(future));
    }
    sets.push_back(std::move(set));
  }
  return evaluate_sets(sets);
}

// Flat key=value serialization, 6 significant digits, one metric per line.
inline std::string format_report(const MetricReport& report) {
  std::string out;
  char buf[64];
  const std::array<std::pair<const char*, const std::array<double, 3>*>, 5>
      metrics{{{"apd", &report.apd},
               {"ade", &report.ade},
               {"fde", &report.fde},
               {"mmade", &report.mmade},
               {"mmfde", &report.mmfde}}};
  for (const auto& [name, values] : metrics)
    for (std::size_t s = 0; s < 3; ++s) {
      std::snprintf(buf, sizeof(buf), "%s_%s=%.6g", name,
                    to_string(all_strategies()[s]).c_str(), (*values)[s]);
      out += buf;
      out += '\n';
    }
  out += "sample_count=" + std::to_string(report.sample_count) + '\n';
  out += "prediction_count=" + std::to_string(report.prediction_count) + '\n';
  return out;
}

inline void save_report(const std::filesystem::path& path,
                        const MetricReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << format_report(report);
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::map<std::string, std::string> parse_report(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  return kv;
}

}  // namespace modiff
