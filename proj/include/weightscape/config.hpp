#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "weightscape/error.hpp"

namespace weightscape {

/// Architectural group a parameter belongs to. Ordered ENTRY < B1 < ... < Bn
/// < ATTENTION < OUTPUT.
class BlockId {
 public:
  enum class Kind { entry = 0, block = 1, attention = 2, output = 3 };

  BlockId() : BlockId(Kind::entry, 0) {}

  static BlockId entry() { return BlockId(Kind::entry, 0); }
  static BlockId attention() { return BlockId(Kind::attention, 0); }
  static BlockId output() { return BlockId(Kind::output, 0); }
  static BlockId block(std::size_t index) {
    if (index == 0) throw ConfigError("block indices start at 1");
    return BlockId(Kind::block, index);
  }

  Kind kind() const noexcept { return kind_; }
  /// 1-based block index; 0 for the distinguished ids.
  std::size_t index() const noexcept { return index_; }

  std::string to_string() const {
    switch (kind_) {
      case Kind::entry: return "ENTRY";
      case Kind::attention: return "ATTENTION";
      case Kind::output: return "OUTPUT";
      case Kind::block: break;
    }
    return "B" + std::to_string(index_);
  }

  /// Accepts ENTRY, ATTENTION, OUTPUT and B<n> (case-insensitive prefix).
  static std::optional<BlockId> parse(std::string_view text) {
    std::string upper(text);
    for (char& ch : upper) ch = static_cast<char>(std::toupper(ch));
    if (upper == "ENTRY") return entry();
    if (upper == "ATTENTION") return attention();
    if (upper == "OUTPUT") return output();
    if (upper.size() < 2 || upper[0] != 'B') return std::nullopt;
    std::size_t index = 0;
    const char* first = upper.data() + 1;
    const char* last = upper.data() + upper.size();
    auto [ptr, ec] = std::from_chars(first, last, index);
    if (ec != std::errc{} || ptr != last || index == 0) return std::nullopt;
    return block(index);
  }

  friend auto operator<=>(const BlockId&, const BlockId&) = default;
  friend bool operator==(const BlockId&, const BlockId&) = default;

 private:
  BlockId(Kind kind, std::size_t index) : kind_(kind), index_(index) {}

  Kind kind_;
  std::size_t index_;
};

enum class ParamKind {
  conv_kernel,
  conv_bias,
  linear_weight,
  linear_bias,
  embedding,
  bn_running_mean,
  bn_running_var,
  scalar_gamma,
};

inline constexpr std::array<ParamKind, 8> all_param_kinds = {
    ParamKind::conv_kernel,     ParamKind::conv_bias,
    ParamKind::linear_weight,   ParamKind::linear_bias,
    ParamKind::embedding,       ParamKind::bn_running_mean,
    ParamKind::bn_running_var,  ParamKind::scalar_gamma,
};

inline std::string_view to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::conv_kernel: return "conv_kernel";
    case ParamKind::conv_bias: return "conv_bias";
    case ParamKind::linear_weight: return "linear_weight";
    case ParamKind::linear_bias: return "linear_bias";
    case ParamKind::embedding: return "embedding";
    case ParamKind::bn_running_mean: return "bn_running_mean";
    case ParamKind::bn_running_var: return "bn_running_var";
    case ParamKind::scalar_gamma: return "scalar_gamma";
  }
  return "unknown";
}

inline std::optional<ParamKind> parse_param_kind(std::string_view text) {
  for (ParamKind kind : all_param_kinds) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

/// Running statistics are buffers, not trainable parameters.
inline bool is_trainable(ParamKind kind) {
  return kind != ParamKind::bn_running_mean &&
         kind != ParamKind::bn_running_var;
}

struct BlockChannels {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const BlockChannels&, const BlockChannels&) = default;
};

/// Scale parameters of the generator topology.
struct GraphConfig {
  std::string name = "custom";
  std::size_t latent_dim = 0;
  std::size_t num_classes = 0;
  std::size_t embed_dim = 0;
  std::size_t base_channels = 0;
  std::size_t num_blocks = 0;
  std::set<std::size_t> upsample_blocks;
  std::size_t attention_after_block = 0;
  std::vector<BlockChannels> channel_schedule;
  std::size_t entry_spatial = 0;
  // Conventions not fixed by the architecture figure.
  std::size_t bottleneck_ratio = 4;
  std::size_t qk_divisor = 8;
  std::size_t value_divisor = 2;
  float bn_epsilon = 1e-4f;

  std::size_t conditioning_dim() const { return latent_dim + embed_dim; }
  std::size_t entry_channels() const { return channel_schedule.front().in; }
  std::size_t output_channels() const { return channel_schedule.back().out; }

  std::size_t output_resolution() const {
    return entry_spatial << upsample_blocks.size();
  }

  /// Spatial extent of the activation leaving block `k` (k = 0 is the entry
  /// stage).
  std::size_t spatial_after_block(std::size_t k) const {
    std::size_t s = entry_spatial;
    for (std::size_t b : upsample_blocks) {
      if (b <= k) s *= 2;
    }
    return s;
  }

  std::size_t hidden_channels(std::size_t block) const {
    return channel_schedule.at(block - 1).in / bottleneck_ratio;
  }

  std::size_t attention_channels() const {
    return channel_schedule.at(attention_after_block - 1).out;
  }

  void validate() const {
    auto fail = [this](const std::string& msg) {
      throw ConfigError("config '" + name + "': " + msg);
    };
    if (latent_dim == 0) fail("latent_dim must be positive");
    if (num_classes == 0) fail("num_classes must be positive");
    if (embed_dim == 0) fail("embed_dim must be positive");
    if (num_blocks == 0) fail("num_blocks must be positive");
    if (entry_spatial == 0) fail("entry_spatial must be positive");
    if (bottleneck_ratio == 0 || qk_divisor == 0 || value_divisor == 0) {
      fail("channel ratios must be positive");
    }
    if (!(bn_epsilon > 0.0f)) fail("bn_epsilon must be positive");
    if (channel_schedule.size() != num_blocks) {
      fail("channel_schedule has " + std::to_string(channel_schedule.size()) +
           " entries, expected " + std::to_string(num_blocks));
    }
    for (std::size_t b : upsample_blocks) {
      if (b < 1 || b > num_blocks) {
        fail("upsample block " + std::to_string(b) + " outside [1, " +
             std::to_string(num_blocks) + "]");
      }
    }
    if (attention_after_block < 1 || attention_after_block > num_blocks) {
      fail("attention_after_block must lie in [1, num_blocks]");
    }
    for (std::size_t i = 0; i < num_blocks; ++i) {
      const auto& ch = channel_schedule[i];
      const std::string label = "block B" + std::to_string(i + 1);
      if (ch.in == 0 || ch.out == 0) fail(label + " has zero channels");
      if (ch.out > ch.in) {
        fail(label + " widens channels; the skip path only truncates");
      }
      if (ch.in % bottleneck_ratio != 0) {
        fail(label + " input channels not divisible by bottleneck ratio");
      }
      if (i + 1 < num_blocks && channel_schedule[i + 1].in != ch.out) {
        fail(label + " output channels do not feed the next block");
      }
    }
    const std::size_t attn = attention_channels();
    if (attn % qk_divisor != 0 || attn % value_divisor != 0) {
      fail("attention channels " + std::to_string(attn) +
           " not divisible by projection divisors");
    }
  }

  friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

namespace detail {

/// Two blocks per stage with the upsampling block last; the first block of
/// a stage changes the channel count.
inline std::vector<BlockChannels> staged_schedule(
    std::size_t base, const std::vector<std::vector<std::size_t>>& stages) {
  std::vector<BlockChannels> schedule;
  for (const auto& stage : stages) {
    // stage = {in_mult, out_mult, blocks}
    for (std::size_t i = 0; i < stage[2]; ++i) {
      schedule.push_back({base * (i == 0 ? stage[0] : stage[1]),
                          base * stage[1]});
    }
  }
  return schedule;
}

}  // namespace detail

/// Desk-scale configuration: 64x64 output, 7 blocks.
inline GraphConfig tiny64_config() {
  GraphConfig c;
  c.name = "tiny64";
  c.latent_dim = 16;
  c.num_classes = 10;
  c.embed_dim = 32;
  c.base_channels = 64;
  c.num_blocks = 7;
  c.upsample_blocks = {2, 4, 6};
  c.attention_after_block = 4;
  c.entry_spatial = 8;
  c.channel_schedule =
      detail::staged_schedule(c.base_channels, {{4, 4, 2}, {4, 2, 2}, {2, 1, 2}, {1, 1, 1}});
  return c;
}

/// Full-size configuration: 256x256 output, 13 blocks, upsampling in
/// B2, B4, B6, B8, B11, B13, attention at 64x64.
inline GraphConfig paper256_config() {
  GraphConfig c;
  c.name = "paper256";
  c.latent_dim = 128;
  c.num_classes = 1000;
  c.embed_dim = 128;
  c.base_channels = 128;
  c.num_blocks = 13;
  c.upsample_blocks = {2, 4, 6, 8, 11, 13};
  c.attention_after_block = 8;
  c.entry_spatial = 4;
  c.channel_schedule = detail::staged_schedule(
      c.base_channels,
      {{16, 16, 2}, {16, 8, 2}, {8, 8, 2}, {8, 4, 2}, {4, 2, 3}, {2, 1, 2}});
  return c;
}

inline nlohmann::json config_to_json(const GraphConfig& c) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& ch : c.channel_schedule) schedule.push_back({ch.in, ch.out});
  return {
      {"name", c.name},
      {"latent_dim", c.latent_dim},
      {"num_classes", c.num_classes},
      {"embed_dim", c.embed_dim},
      {"base_channels", c.base_channels},
      {"num_blocks", c.num_blocks},
      {"upsample_blocks", c.upsample_blocks},
      {"attention_after_block", c.attention_after_block},
      {"channel_schedule", schedule},
      {"entry_spatial", c.entry_spatial},
      {"bottleneck_ratio", c.bottleneck_ratio},
      {"qk_divisor", c.qk_divisor},
      {"value_divisor", c.value_divisor},
      {"bn_epsilon", c.bn_epsilon},
  };
}

inline GraphConfig config_from_json(const nlohmann::json& j) {
  GraphConfig c;
  try {
    c.name = j.value("name", std::string("custom"));
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.base_channels = j.value("base_channels", std::size_t{0});
    c.num_blocks = j.at("num_blocks").get<std::size_t>();
    c.upsample_blocks = j.at("upsample_blocks").get<std::set<std::size_t>>();
    c.attention_after_block = j.at("attention_after_block").get<std::size_t>();
    for (const auto& pair : j.at("channel_schedule")) {
      c.channel_schedule.push_back(
          {pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>()});
    }
    c.entry_spatial = j.at("entry_spatial").get<std::size_t>();
    c.bottleneck_ratio = j.value("bottleneck_ratio", std::size_t{4});
    c.qk_divisor = j.value("qk_divisor", std::size_t{8});
    c.value_divisor = j.value("value_divisor", std::size_t{2});
    c.bn_epsilon = j.value("bn_epsilon", 1e-4f);
    if (j.contains("output_resolution") &&
        j["output_resolution"].get<std::size_t>() != c.output_resolution()) {
      throw ConfigError("output_resolution does not equal entry_spatial * 2^|upsample_blocks|");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Resolves a built-in config name (tiny64, paper256) or a JSON file path.
inline GraphConfig load_config(const std::string& name_or_path) {
  if (name_or_path == "tiny64") return tiny64_config();
  if (name_or_path == "paper256") return paper256_config();
  std::ifstream in(name_or_path);
  if (!in) {
    throw ConfigError("unknown config '" + name_or_path +
                      "' (expected tiny64, paper256 or a JSON file)");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config file '" + name_or_path +
                      "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace weightscape
