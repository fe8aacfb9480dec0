#pragma once

// Weight-space interventions. Each operation maps a base checkpoint and a
// plan to a new checkpoint; the base is never modified. All random draws come
// from per-entry SeedStreams keyed by entry name, so output values do not
// depend on entry order or on the thread count.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "weightscape/checkpoint.hpp"
#include "weightscape/config.hpp"
#include "weightscape/error.hpp"
#include "weightscape/parallel.hpp"
#include "weightscape/random.hpp"

namespace weightscape {

enum class PerturbMode { multiplicative, block_randomize, masked_substitute };

inline std::string_view to_string(PerturbMode mode) {
  switch (mode) {
    case PerturbMode::multiplicative: return "multiplicative";
    case PerturbMode::block_randomize: return "block_randomize";
    case PerturbMode::masked_substitute: return "masked_substitute";
  }
  return "unknown";
}

inline std::string_view to_string(StatsMode mode) {
  return mode == StatsMode::per_pixel ? "per_pixel" : "whole_entry";
}

using KindSet = std::set<ParamKind>;

inline KindSet all_kinds() { return {all_param_kinds.begin(), all_param_kinds.end()}; }

inline KindSet trainable_kinds() {
  KindSet kinds;
  for (ParamKind k : all_param_kinds) {
    if (is_trainable(k)) kinds.insert(k);
  }
  return kinds;
}

/// Element selection for masked substitution: entries whose names match the
/// glob `pattern` ('*' and '?'), and within them each element independently
/// with probability `fraction`, decided by draws from `seed`.
struct MaskSpec {
  std::string pattern = "*";
  double fraction = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

inline bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

/// Declarative description of one intervention. Serializes to a single
/// canonical line:
///
///   plan mode=<m> alpha=<a|-> seed=<s> blocks=<B2,B4|-> kinds=<...>
///        stats=<per_pixel|whole_entry> mask=<pattern:fraction:seed|->
///
/// Fields that do not apply to the mode are written as '-'.
struct PerturbationPlan {
  PerturbMode mode = PerturbMode::multiplicative;
  double alpha = 0.35;
  std::uint64_t seed = 0;
  std::set<BlockId> target_blocks;  // block_randomize; optional filter for masked
  MaskSpec mask;
  KindSet kinds = trainable_kinds();
  StatsMode stats = StatsMode::per_pixel;

  static PerturbationPlan multiplicative(double alpha, std::uint64_t seed) {
    PerturbationPlan p;
    p.mode = PerturbMode::multiplicative;
    p.alpha = alpha;
    p.seed = seed;
    return p;
  }

  /// Running statistics inside the target blocks are regenerated as well.
  static PerturbationPlan block_randomize(std::set<BlockId> targets, std::uint64_t seed) {
    PerturbationPlan p;
    p.mode = PerturbMode::block_randomize;
    p.alpha = 0.0;
    p.seed = seed;
    p.target_blocks = std::move(targets);
    p.kinds = all_kinds();
    return p;
  }

  static PerturbationPlan masked_substitute(MaskSpec mask, std::uint64_t seed) {
    PerturbationPlan p;
    p.mode = PerturbMode::masked_substitute;
    p.alpha = 0.0;
    p.seed = seed;
    p.mask = std::move(mask);
    return p;
  }

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
      throw PlanError("alpha must be a finite value >= 0");
    }
    if (mode == PerturbMode::block_randomize && target_blocks.empty()) {
      throw PlanError("block_randomize needs at least one target block");
    }
    if (mode == PerturbMode::masked_substitute) {
      if (!(mask.fraction >= 0.0 && mask.fraction <= 1.0)) {
        throw PlanError("mask fraction must lie in [0, 1]");
      }
      if (mask.pattern.empty() ||
          mask.pattern.find_first_of(" \t\r\n") != std::string::npos) {
        throw PlanError("mask pattern must be non-empty and contain no whitespace");
      }
    }
    if (kinds.empty()) throw PlanError("kind filter selects no parameter kinds");
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "plan mode=" << to_string(mode) << " alpha=";
    if (mode == PerturbMode::multiplicative) {
      out << format_number(alpha);
    } else {
      out << '-';
    }
    out << " seed=" << seed << " blocks=";
    if (target_blocks.empty() || mode == PerturbMode::multiplicative) {
      out << '-';
    } else {
      bool first = true;
      for (const BlockId& b : target_blocks) {
        out << (first ? "" : ",") << b.to_string();
        first = false;
      }
    }
    out << " kinds=" << kinds_text(kinds) << " stats=" << to_string(stats) << " mask=";
    if (mode == PerturbMode::masked_substitute) {
      out << mask.pattern << ':' << format_number(mask.fraction) << ':' << mask.seed;
    } else {
      out << '-';
    }
    return out.str();
  }

  static PerturbationPlan parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string word;
    if (!(in >> word) || word != "plan") throw PlanError("plan text must start with 'plan'");
    PerturbationPlan p;
    std::set<std::string> seen;
    while (in >> word) {
      const auto eq = word.find('=');
      if (eq == std::string::npos) throw PlanError("malformed plan field '" + word + "'");
      const std::string key = word.substr(0, eq);
      const std::string value = word.substr(eq + 1);
      seen.insert(key);
      if (key == "mode") {
        if (value == "multiplicative") p.mode = PerturbMode::multiplicative;
        else if (value == "block_randomize") p.mode = PerturbMode::block_randomize;
        else if (value == "masked_substitute") p.mode = PerturbMode::masked_substitute;
        else throw PlanError("unknown plan mode '" + value + "'");
      } else if (key == "alpha") {
        p.alpha = value == "-" ? 0.0 : parse_number<double>(value, "alpha");
      } else if (key == "seed") {
        p.seed = parse_number<std::uint64_t>(value, "seed");
      } else if (key == "blocks") {
        p.target_blocks = parse_blocks(value);
      } else if (key == "kinds") {
        p.kinds = parse_kinds(value);
      } else if (key == "stats") {
        if (value == "per_pixel") p.stats = StatsMode::per_pixel;
        else if (value == "whole_entry") p.stats = StatsMode::whole_entry;
        else throw PlanError("unknown stats mode '" + value + "'");
      } else if (key == "mask") {
        if (value != "-") {
          const auto last = value.rfind(':');
          const auto mid = last == std::string::npos || last == 0
                               ? std::string::npos
                               : value.rfind(':', last - 1);
          if (mid == std::string::npos) throw PlanError("mask must be pattern:fraction:seed");
          p.mask.pattern = value.substr(0, mid);
          p.mask.fraction = parse_number<double>(value.substr(mid + 1, last - mid - 1), "mask fraction");
          p.mask.seed = parse_number<std::uint64_t>(value.substr(last + 1), "mask seed");
        }
      } else {
        throw PlanError("unknown plan field '" + key + "'");
      }
    }
    for (const char* required : {"mode", "seed"}) {
      if (!seen.contains(required)) throw PlanError(std::string("plan is missing '") + required + "'");
    }
    if (p.mode != PerturbMode::multiplicative && !seen.contains("alpha")) p.alpha = 0.0;
    if (!seen.contains("kinds") && p.mode == PerturbMode::block_randomize) p.kinds = all_kinds();
    p.validate();
    return p;
  }

  static std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  }

  static std::string kinds_text(const KindSet& kinds) {
    if (kinds == all_kinds()) return "all";
    if (kinds == trainable_kinds()) return "trainable";
    std::string out;
    for (ParamKind k : kinds) {
      if (!out.empty()) out += ',';
      out += to_string(k);
    }
    return out;
  }

  static KindSet parse_kinds(std::string_view text) {
    if (text == "all") return all_kinds();
    if (text == "trainable") return trainable_kinds();
    KindSet kinds;
    for (const auto& item : split(text)) {
      auto k = parse_param_kind(item);
      if (!k) throw PlanError("unknown parameter kind '" + item + "'");
      kinds.insert(*k);
    }
    return kinds;
  }

  /// Comma-separated block ids; ranges like B1..B7 are expanded.
  static std::set<BlockId> parse_blocks(std::string_view text) {
    std::set<BlockId> blocks;
    if (text == "-" || text.empty()) return blocks;
    for (const auto& item : split(text)) {
      if (const auto dots = item.find(".."); dots != std::string::npos) {
        auto lo = BlockId::parse(item.substr(0, dots));
        auto hi = BlockId::parse(item.substr(dots + 2));
        if (!lo || !hi || lo->kind() != BlockId::Kind::block ||
            hi->kind() != BlockId::Kind::block || lo->index() > hi->index()) {
          throw PlanError("malformed block range '" + item + "'");
        }
        for (std::size_t i = lo->index(); i <= hi->index(); ++i) blocks.insert(BlockId::block(i));
        continue;
      }
      auto b = BlockId::parse(item);
      if (!b) throw PlanError("unknown block name '" + item + "'");
      blocks.insert(*b);
    }
    return blocks;
  }

  friend bool operator==(const PerturbationPlan&, const PerturbationPlan&) = default;

 private:
  static std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> items;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find(',', start), text.size());
      if (end > start) items.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
    return items;
  }

  template <typename T>
  static T parse_number(std::string_view text, const char* what) {
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
      throw PlanError(std::string("malformed ") + what + " '" + std::string(text) + "'");
    }
    return value;
  }
};

// ---------------------------------------------------------------------------
// Operations

/// theta = theta* (1 + alpha g), g ~ N(0, 1) per element, for entries whose
/// kind is in `kinds`. Zero elements keep their exact bits. Running variances
/// are folded to |theta| so they stay valid.
inline Checkpoint perturb_multiplicative(const Checkpoint& base, double alpha,
                                         std::uint64_t seed,
                                         const KindSet& kinds = trainable_kinds()) {
  if (!(alpha >= 0.0)) throw PlanError("alpha must be >= 0");
  std::vector<CheckpointEntry> entries = base.entries();
  parallel_for(entries.size(), [&](std::size_t i) {
    auto& entry = entries[i];
    if (!kinds.contains(entry.kind)) return;
    const SeedStream stream(seed, entry.name);
    auto data = entry.tensor.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (data[j] == 0.0f) continue;
      const double factor = 1.0 + alpha * stream.normal(j);
      double value = static_cast<double>(data[j]) * factor;
      if (entry.kind == ParamKind::bn_running_var) value = std::abs(value);
      data[j] = static_cast<float>(value);
    }
  });
  return Checkpoint(std::move(entries), base.provenance());
}

namespace detail {

/// Normal draw matched to the base statistics of the element's position.
/// Running variances are folded to |draw| so they stay valid.
inline float matched_draw(const EntryStats& stats, std::size_t element, double g) {
  const std::size_t p = stats.position_of(element);
  double value = stats.mean[p] + stats.std[p] * g;
  if (stats.kind == ParamKind::bn_running_var) value = std::abs(value);
  return static_cast<float>(value);
}

}  // namespace detail

/// Replaces every entry tagged with one of `targets` (and whose kind is in
/// `kinds`) by normal draws with the entry's own mean and std; everything
/// else is copied bit for bit.
inline Checkpoint randomize_block(const Checkpoint& base, const std::set<BlockId>& targets,
                                  std::uint64_t seed,
                                  StatsMode stats_mode = StatsMode::per_pixel,
                                  const KindSet& kinds = all_kinds()) {
  if (targets.empty()) throw PlanError("randomize_block needs at least one target block");
  for (const BlockId& target : targets) {
    const bool owned = std::any_of(base.entries().begin(), base.entries().end(),
                                   [&](const CheckpointEntry& e) { return e.block == target; });
    if (!owned) throw PlanError("target block " + target.to_string() + " owns no entries");
  }
  std::vector<CheckpointEntry> entries = base.entries();
  parallel_for(entries.size(), [&](std::size_t i) {
    auto& entry = entries[i];
    if (!targets.contains(entry.block) || !kinds.contains(entry.kind)) return;
    const EntryStats stats = compute_entry_stats(entry, stats_mode);
    const SeedStream stream(seed, entry.name);
    auto data = entry.tensor.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      data[j] = detail::matched_draw(stats, j, stream.normal(j));
    }
  });
  return Checkpoint(std::move(entries), base.provenance());
}

struct MaskedResult {
  Checkpoint checkpoint;
  std::size_t matched_entries = 0;
  std::size_t substituted_elements = 0;
  std::vector<std::string> warnings;
};

/// Substitutes the mask-selected elements of matching entries with draws
/// matched to the owning entry's statistics. `blocks`, when non-empty,
/// further restricts the candidate entries.
inline MaskedResult masked_substitute(const Checkpoint& base, const MaskSpec& mask,
                                      std::uint64_t seed,
                                      const std::set<BlockId>& blocks = {},
                                      const KindSet& kinds = trainable_kinds(),
                                      StatsMode stats_mode = StatsMode::per_pixel) {
  if (!(mask.fraction >= 0.0 && mask.fraction <= 1.0)) {
    throw PlanError("mask fraction must lie in [0, 1]");
  }
  std::vector<CheckpointEntry> entries = base.entries();
  std::vector<std::size_t> substituted(entries.size(), 0);
  std::vector<char> matched(entries.size(), 0);
  parallel_for(entries.size(), [&](std::size_t i) {
    auto& entry = entries[i];
    if (!kinds.contains(entry.kind)) return;
    if (!blocks.empty() && !blocks.contains(entry.block)) return;
    if (!glob_match(mask.pattern, entry.name)) return;
    matched[i] = 1;
    if (mask.fraction == 0.0) return;
    const EntryStats stats = compute_entry_stats(entry, stats_mode);
    const SeedStream selector(mask.seed, entry.name);
    const SeedStream stream(seed, entry.name);
    auto data = entry.tensor.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (selector.uniform(j) >= mask.fraction) continue;
      data[j] = detail::matched_draw(stats, j, stream.normal(j));
      ++substituted[i];
    }
  });
  MaskedResult result;
  result.checkpoint = Checkpoint(std::move(entries), base.provenance());
  for (std::size_t i = 0; i < matched.size(); ++i) {
    result.matched_entries += matched[i];
    result.substituted_elements += substituted[i];
  }
  if (result.matched_entries == 0) {
    result.warnings.push_back("mask pattern '" + mask.pattern + "' matched no entries");
  }
  return result;
}

/// Applies a plan and records its canonical text as provenance.
inline Checkpoint apply_plan(const Checkpoint& base, const PerturbationPlan& plan) {
  plan.validate();
  Checkpoint derived;
  switch (plan.mode) {
    case PerturbMode::multiplicative:
      derived = perturb_multiplicative(base, plan.alpha, plan.seed, plan.kinds);
      break;
    case PerturbMode::block_randomize:
      derived = randomize_block(base, plan.target_blocks, plan.seed, plan.stats, plan.kinds);
      break;
    case PerturbMode::masked_substitute:
      derived = masked_substitute(base, plan.mask, plan.seed, plan.target_blocks, plan.kinds,
                                  plan.stats)
                    .checkpoint;
      break;
  }
  return derived.with_provenance(plan.to_text());
}

struct SweepItem {
  PerturbationPlan plan;
  Checkpoint checkpoint;
};

/// One derived checkpoint per seed in [first_seed, last_seed]; `plan`
/// supplies every other field.
inline std::vector<SweepItem> sweep(const Checkpoint& base, const PerturbationPlan& plan,
                                    std::uint64_t first_seed, std::uint64_t last_seed) {
  if (first_seed > last_seed) throw PlanError("sweep seed range is empty");
  std::vector<SweepItem> items;
  for (std::uint64_t s = first_seed;; ++s) {
    PerturbationPlan p = plan;
    p.seed = s;
    items.push_back({p, apply_plan(base, p)});
    if (s == last_seed) break;
  }
  return items;
}

}  // namespace weightscape
