#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weightscape/checkpoint.hpp"
#include "weightscape/graph.hpp"
#include "weightscape/perturb.hpp"

namespace weightscape {

/// Root-mean-square difference over all elements.
inline double image_l2(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("image_l2 shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(a.size()));
}

/// Per-channel counts over `bins` equal-width bins spanning [-1, 1]; values
/// outside are clamped into the end bins.
inline std::vector<std::vector<std::size_t>> channel_histogram(const Tensor& image,
                                                               std::size_t bins) {
  if (image.rank() != 3) throw ShapeError("channel_histogram expects [C, H, W]");
  if (bins == 0) throw Error("channel_histogram needs at least one bin");
  const std::size_t plane = image.dim(1) * image.dim(2);
  std::vector<std::vector<std::size_t>> counts(image.dim(0), std::vector<std::size_t>(bins, 0));
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = std::clamp(static_cast<double>(image[c * plane + i]), -1.0, 1.0);
      const auto bin = static_cast<std::size_t>((v + 1.0) / 2.0 * static_cast<double>(bins));
      ++counts[c][std::min(bin, bins - 1)];
    }
  }
  return counts;
}

/// image_l2 between the base image and the image of each multiplicatively
/// perturbed checkpoint, for the same (z, c). `alphas` must ascend from 0.
inline std::vector<std::pair<double, double>> divergence_curve(
    const Checkpoint& base, const GeneratorGraph& graph, const std::vector<double>& alphas,
    std::uint64_t seed, const Tensor& z, std::size_t class_index,
    const KindSet& kinds = trainable_kinds()) {
  if (alphas.empty() || alphas.front() != 0.0) {
    throw Error("divergence_curve alphas must start at 0");
  }
  if (!std::is_sorted(alphas.begin(), alphas.end())) {
    throw Error("divergence_curve alphas must be sorted ascending");
  }
  const Tensor reference = forward(graph, base, z, class_index);
  std::vector<std::pair<double, double>> curve;
  for (double alpha : alphas) {
    const Checkpoint perturbed = perturb_multiplicative(base, alpha, seed, kinds);
    curve.emplace_back(alpha, image_l2(forward(graph, perturbed, z, class_index), reference));
  }
  return curve;
}

enum class MatchStatus { pass, fail, identical, changed, skipped };

inline std::string_view to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::pass: return "pass";
    case MatchStatus::fail: return "fail";
    case MatchStatus::identical: return "identical";
    case MatchStatus::changed: return "changed";
    case MatchStatus::skipped: return "skipped";
  }
  return "unknown";
}

struct MatchRecord {
  std::string name;
  BlockId block;
  bool targeted = false;
  MatchStatus status = MatchStatus::skipped;
  std::size_t count = 0;
  double max_abs_z_mean = 0.0;    // worst |mean - base_mean| / (base_std / sqrt(n))
  double max_rel_std_err = 0.0;   // worst |std / base_std - 1|
};

struct MatchThresholds {
  std::size_t min_elements = 10000;
  double mean_sigmas = 4.0;
  double std_rel_tol = 0.05;
};

/// Checks that targeted entries of `replaced` carry the base statistics
/// (per position for per-pixel stats) and that untargeted entries are
/// statistically identical to the base. Entries smaller than min_elements
/// are reported as skipped.
inline std::vector<MatchRecord> stats_match_report(const Checkpoint& replaced,
                                                   const WeightStats& base_stats,
                                                   const std::set<BlockId>& targets,
                                                   const MatchThresholds& limits = {}) {
  std::vector<MatchRecord> report;
  for (const auto& entry : replaced.entries()) {
    const EntryStats* base = base_stats.find(entry.name);
    if (!base) throw ManifestError("base statistics lack entry '" + entry.name + "'");
    const EntryStats now = compute_entry_stats(
        entry, base->per_pixel ? StatsMode::per_pixel : StatsMode::whole_entry);
    MatchRecord rec;
    rec.name = entry.name;
    rec.block = entry.block;
    rec.targeted = targets.contains(entry.block);
    rec.count = entry.tensor.size();

    bool within = true;
    for (std::size_t p = 0; p < now.mean.size(); ++p) {
      const double n = static_cast<double>(now.samples);
      if (base->std[p] == 0.0) {
        if (now.mean[p] != base->mean[p] || now.std[p] != 0.0) {
          within = false;
          rec.max_abs_z_mean = INFINITY;
        }
        continue;
      }
      const double z = std::abs(now.mean[p] - base->mean[p]) / (base->std[p] / std::sqrt(n));
      const double rel = std::abs(now.std[p] / base->std[p] - 1.0);
      rec.max_abs_z_mean = std::max(rec.max_abs_z_mean, z);
      rec.max_rel_std_err = std::max(rec.max_rel_std_err, rel);
      if (z > limits.mean_sigmas || rel > limits.std_rel_tol) within = false;
    }

    if (!rec.targeted) {
      rec.status = now.mean == base->mean && now.std == base->std ? MatchStatus::identical
                                                                  : MatchStatus::changed;
    } else if (rec.count < limits.min_elements) {
      rec.status = MatchStatus::skipped;
    } else {
      rec.status = within ? MatchStatus::pass : MatchStatus::fail;
    }
    report.push_back(std::move(rec));
  }
  return report;
}

inline std::string match_report_text(const std::vector<MatchRecord>& report) {
  std::string out;
  for (const auto& r : report) {
    nlohmann::json j = {
        {"name", r.name},
        {"block", r.block.to_string()},
        {"targeted", r.targeted},
        {"status", std::string(to_string(r.status))},
        {"count", r.count},
        {"max_abs_z_mean", std::isfinite(r.max_abs_z_mean) ? nlohmann::json(r.max_abs_z_mean)
                                                           : nlohmann::json("inf")},
        {"max_rel_std_err", r.max_rel_std_err},
    };
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace weightscape
