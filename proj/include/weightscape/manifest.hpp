#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "weightscape/config.hpp"
#include "weightscape/tensor.hpp"

namespace weightscape {

/// Declaration of one named parameter of the generator.
struct ParamSpec {
  std::string name;
  BlockId block;
  ParamKind kind;
  Shape shape;

  friend bool operator==(const ParamSpec&, const ParamSpec&) = default;
};

using Manifest = std::vector<ParamSpec>;

namespace detail {

inline void add_conditional_norm(Manifest& m, const std::string& prefix,
                                 BlockId block, std::size_t channels,
                                 std::size_t cond_dim) {
  m.push_back({prefix + ".gain.weight", block, ParamKind::linear_weight, {channels, cond_dim}});
  m.push_back({prefix + ".gain.bias", block, ParamKind::linear_bias, {channels}});
  m.push_back({prefix + ".bias.weight", block, ParamKind::linear_weight, {channels, cond_dim}});
  m.push_back({prefix + ".bias.bias", block, ParamKind::linear_bias, {channels}});
  m.push_back({prefix + ".running_mean", block, ParamKind::bn_running_mean, {channels}});
  m.push_back({prefix + ".running_var", block, ParamKind::bn_running_var, {channels}});
}

inline void add_conv(Manifest& m, const std::string& prefix, BlockId block,
                     std::size_t c_out, std::size_t c_in, std::size_t k) {
  m.push_back({prefix + ".weight", block, ParamKind::conv_kernel, {c_out, c_in, k, k}});
  m.push_back({prefix + ".bias", block, ParamKind::conv_bias, {c_out}});
}

}  // namespace detail

inline std::string block_prefix(std::size_t index) {
  return "blocks." + std::to_string(index);
}

/// Parameter manifest in canonical (topological) order. A pure function of
/// the config.
///
/// Residual block k (channels in -> hidden -> out):
///   bn1 relu conv1(1x1) | bn2 relu [up] conv2(3x3) | bn3 relu conv3(3x3) |
///   bn4 relu conv4(1x1), plus the skip path x[:out] ([up]).
inline Manifest build_manifest(const GraphConfig& config) {
  config.validate();
  const std::size_t cond = config.conditioning_dim();
  Manifest m;

  const BlockId entry = BlockId::entry();
  m.push_back({"embedding.weight", entry, ParamKind::embedding,
               {config.num_classes, config.embed_dim}});
  const std::size_t entry_out = config.entry_spatial * config.entry_spatial *
                                config.entry_channels();
  m.push_back({"entry.linear.weight", entry, ParamKind::linear_weight, {entry_out, cond}});
  m.push_back({"entry.linear.bias", entry, ParamKind::linear_bias, {entry_out}});

  for (std::size_t k = 1; k <= config.num_blocks; ++k) {
    const BlockId id = BlockId::block(k);
    const auto [c_in, c_out] = config.channel_schedule[k - 1];
    const std::size_t hidden = config.hidden_channels(k);
    const std::string p = block_prefix(k);
    detail::add_conditional_norm(m, p + ".bn1", id, c_in, cond);
    detail::add_conv(m, p + ".conv1", id, hidden, c_in, 1);
    detail::add_conditional_norm(m, p + ".bn2", id, hidden, cond);
    detail::add_conv(m, p + ".conv2", id, hidden, hidden, 3);
    detail::add_conditional_norm(m, p + ".bn3", id, hidden, cond);
    detail::add_conv(m, p + ".conv3", id, hidden, hidden, 3);
    detail::add_conditional_norm(m, p + ".bn4", id, hidden, cond);
    detail::add_conv(m, p + ".conv4", id, c_out, hidden, 1);

    if (k == config.attention_after_block) {
      const BlockId attn = BlockId::attention();
      const std::size_t c = config.attention_channels();
      const std::size_t c_qk = c / config.qk_divisor;
      const std::size_t c_v = c / config.value_divisor;
      m.push_back({"attention.query.weight", attn, ParamKind::conv_kernel, {c_qk, c, 1, 1}});
      m.push_back({"attention.key.weight", attn, ParamKind::conv_kernel, {c_qk, c, 1, 1}});
      m.push_back({"attention.value.weight", attn, ParamKind::conv_kernel, {c_v, c, 1, 1}});
      m.push_back({"attention.output.weight", attn, ParamKind::conv_kernel, {c, c_v, 1, 1}});
      m.push_back({"attention.gamma", attn, ParamKind::scalar_gamma, {1}});
    }
  }

  const BlockId out = BlockId::output();
  detail::add_conditional_norm(m, "output.bn", out, config.output_channels(), cond);
  detail::add_conv(m, "output.conv", out, 3, config.output_channels(), 3);
  return m;
}

inline std::size_t parameter_count(const Manifest& manifest,
                                   bool trainable_only = true) {
  std::size_t total = 0;
  for (const auto& spec : manifest) {
    if (!trainable_only || is_trainable(spec.kind)) total += shape_size(spec.shape);
  }
  return total;
}

/// Fan-in used by the scaled initialization scheme. Biases take the fan-in
/// of their sibling weight; embeddings, gammas and buffers use 1.
inline std::size_t fan_in(const ParamSpec& spec, const Manifest& manifest) {
  switch (spec.kind) {
    case ParamKind::conv_kernel:
      return spec.shape[1] * spec.shape[2] * spec.shape[3];
    case ParamKind::linear_weight:
      return spec.shape[1];
    case ParamKind::conv_bias:
    case ParamKind::linear_bias: {
      constexpr std::string_view suffix = ".bias";
      const std::string weight_name =
          spec.name.substr(0, spec.name.size() - suffix.size()) + ".weight";
      for (const auto& other : manifest) {
        if (other.name == weight_name) return fan_in(other, manifest);
      }
      return 1;
    }
    default:
      return 1;
  }
}

}  // namespace weightscape
