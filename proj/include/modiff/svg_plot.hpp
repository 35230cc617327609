#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "modiff/motion.hpp"

namespace modiff {

// Skeleton-strip rendering: one row per motion, `keyframes` evenly spaced
// poses per row drawn as stick figures (x/y projection). Poses whose frame
// index is below obs_frames use the observation stroke color, the rest the
// future color. Output is deterministic for identical input.
struct PlotOptions {
  int keyframes = 5;
  std::size_t obs_frames = 25;
  std::vector<std::pair<std::size_t, std::size_t>> bones;  // joint index pairs
  double cell = 120.0;  // pixel size of one pose cell
};

inline std::vector<std::pair<std::size_t, std::size_t>> parse_bone_list(
    const std::string& spec, std::uint32_t joints) {
  std::vector<std::pair<std::size_t, std::size_t>> bones;
  if (spec.empty()) {
    for (std::uint32_t j = 0; j + 1 < joints; ++j) bones.emplace_back(j, j + 1);
    return bones;
  }
  std::size_t pos = 0;
  while (pos < spec.size()) {
    auto comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string part = spec.substr(pos, comma - pos);
    const auto dash = part.find('-');
    if (dash == std::string::npos)
      throw ConfigError("bone list entry is not 'a-b': " + part);
    const std::size_t a = std::stoul(part.substr(0, dash));
    const std::size_t b = std::stoul(part.substr(dash + 1));
    if (a >= joints || b >= joints)
      throw ConfigError("bone joint index out of range: " + part);
    bones.emplace_back(a, b);
    pos = comma + 1;
  }
  return bones;
}

inline std::string render_svg(const std::vector<MotionSequence>& motions,
                              const PlotOptions& opts) {
  if (motions.empty()) throw ConfigError("plot: no motions given");
  const std::uint32_t joints = motions.front().joints;
  for (const auto& m : motions)
    if (m.joints != joints)
      throw ConfigError("plot: motions disagree on joint count");
  if (opts.keyframes < 1) throw ConfigError("plot: need at least one keyframe");

  auto bones = opts.bones;
  if (bones.empty()) bones = parse_bone_list("", joints);

  const double cell = opts.cell;
  const double pad = 8.0;
  const double width = pad * 2 + cell * opts.keyframes;
  const double height = pad * 2 + cell * motions.size();

  char buf[192];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                "height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  for (std::size_t mi = 0; mi < motions.size(); ++mi) {
    const MotionSequence& m = motions[mi];
    const std::size_t frames = m.frame_count();
    // per-motion bounding box over the plotted coordinates (x = coord 0,
    // y = coord 1 of each joint)
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    std::vector<std::size_t> picks(opts.keyframes);
    for (int k = 0; k < opts.keyframes; ++k) {
      picks[k] = opts.keyframes == 1
                     ? 0
                     : static_cast<std::size_t>(
                           (static_cast<double>(k) * (frames - 1)) /
                           (opts.keyframes - 1) + 0.5);
      for (std::uint32_t j = 0; j < joints; ++j) {
        const double x = m.frames(picks[k], j * 3);
        const double y = m.frames(picks[k], j * 3 + 1);
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
    const double span_x = max_x - min_x > 1e-12 ? max_x - min_x : 1.0;
    const double span_y = max_y - min_y > 1e-12 ? max_y - min_y : 1.0;
    const double scale = (cell - 2 * pad) / std::max(span_x, span_y);

    for (int k = 0; k < opts.keyframes; ++k) {
      const std::size_t f = picks[k];
      const char* color = f < opts.obs_frames ? "#c23b22" : "#2e7d32";
      const double ox = pad + cell * k + pad;
      const double oy = pad + cell * mi + pad;
      auto px = [&](std::uint32_t j) {
        return ox + (m.frames(f, j * 3) - min_x) * scale;
      };
      auto py = [&](std::uint32_t j) {
        // SVG y grows downward
        return oy + (max_y - m.frames(f, j * 3 + 1)) * scale;
      };
      svg += "<g class=\"pose\">\n";
      for (const auto& [a, b] : bones) {
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                      "stroke=\"%s\" stroke-width=\"1.5\"/>\n",
                      px(static_cast<std::uint32_t>(a)),
                      py(static_cast<std::uint32_t>(a)),
                      px(static_cast<std::uint32_t>(b)),
                      py(static_cast<std::uint32_t>(b)), color);
        svg += buf;
      }
      for (std::uint32_t j = 0; j < joints; ++j) {
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\"/>\n",
                      px(j), py(j), color);
        svg += buf;
      }
      svg += "</g>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline void save_svg(const std::filesystem::path& path,
                     const std::string& svg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << svg;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace modiff
