#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "weightscape/checkpoint.hpp"
#include "weightscape/config.hpp"
#include "weightscape/error.hpp"
#include "weightscape/kernels.hpp"
#include "weightscape/manifest.hpp"
#include "weightscape/tensor.hpp"

namespace weightscape {

/// Topology plus parameter manifest. Immutable; safe to share across threads.
class GeneratorGraph {
 public:
  explicit GeneratorGraph(GraphConfig config)
      : config_(std::move(config)), manifest_(build_manifest(config_)) {}

  const GraphConfig& config() const noexcept { return config_; }
  const Manifest& manifest() const noexcept { return manifest_; }
  std::size_t output_resolution() const { return config_.output_resolution(); }

 private:
  GraphConfig config_;
  Manifest manifest_;
};

inline GeneratorGraph build_graph(const GraphConfig& config) {
  config.validate();
  return GeneratorGraph(config);
}

/// Describes every way a checkpoint fails to match the graph manifest;
/// empty when it matches.
inline std::vector<std::string> manifest_mismatches(const Manifest& expected,
                                                    const Checkpoint& ckpt) {
  std::vector<std::string> problems;
  std::unordered_map<std::string, const ParamSpec*> wanted;
  for (const auto& spec : expected) wanted.emplace(spec.name, &spec);
  for (const auto& spec : expected) {
    const auto* e = ckpt.find(spec.name);
    if (!e) {
      problems.push_back("missing " + spec.name);
    } else if (e->tensor.shape() != spec.shape) {
      problems.push_back("mis-shaped " + spec.name + " (expected " +
                         shape_string(spec.shape) + ", got " +
                         shape_string(e->tensor.shape()) + ")");
    } else if (e->block != spec.block || e->kind != spec.kind) {
      problems.push_back("mis-tagged " + spec.name);
    }
  }
  for (const auto& e : ckpt.entries()) {
    if (!wanted.contains(e.name)) problems.push_back("extra " + e.name);
  }
  return problems;
}

inline void check_manifest(const Manifest& expected, const Checkpoint& ckpt) {
  const auto problems = manifest_mismatches(expected, ckpt);
  if (problems.empty()) return;
  std::string msg = "checkpoint does not match graph manifest:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ManifestError(msg);
}

/// Latent z concatenated with the class embedding; broadcast to every
/// conditional norm.
struct ConditioningVector {
  Tensor values;
};

inline ConditioningVector make_conditioning(const Tensor& z,
                                            const Tensor& class_embedding) {
  detail::expect_rank(z, 1, "latent");
  detail::expect_rank(class_embedding, 1, "class embedding");
  std::vector<float> values(z.data().begin(), z.data().end());
  values.insert(values.end(), class_embedding.data().begin(),
                class_embedding.data().end());
  const std::size_t n = values.size();
  return {Tensor({n}, std::move(values))};
}

struct ConditionalNormParams {
  const Tensor& gain_weight;
  const Tensor& gain_bias;
  const Tensor& bias_weight;
  const Tensor& bias_bias;
};

/// gain = 1 + W_g cond + b_g, bias = W_b cond + b_b.
inline std::pair<Tensor, Tensor> conditional_gain_bias(
    const ConditioningVector& cond, const ConditionalNormParams& p) {
  Tensor gain = linear(cond.values, p.gain_weight, p.gain_bias);
  for (float& g : gain.data()) g = static_cast<float>(1.0 + static_cast<double>(g));
  Tensor bias = linear(cond.values, p.bias_weight, p.bias_bias);
  return {std::move(gain), std::move(bias)};
}

/// Receives every stage output during forward(): ENTRY, each block,
/// ATTENTION and OUTPUT.
using ForwardObserver = std::function<void(BlockId, const Tensor&)>;

namespace detail {

class ForwardPass {
 public:
  ForwardPass(const GeneratorGraph& graph, const Checkpoint& ckpt)
      : config_(graph.config()), ckpt_(ckpt) {}

  const Tensor& param(const std::string& name) const { return ckpt_.at(name).tensor; }

  Tensor conditional_norm(const Tensor& x, const std::string& prefix,
                          const ConditioningVector& cond) const {
    auto [gain, bias] = conditional_gain_bias(
        cond, {param(prefix + ".gain.weight"), param(prefix + ".gain.bias"),
               param(prefix + ".bias.weight"), param(prefix + ".bias.bias")});
    return batch_norm_inference(x, param(prefix + ".running_mean"),
                                param(prefix + ".running_var"), gain, bias,
                                config_.bn_epsilon);
  }

  Tensor conv(const Tensor& x, const std::string& prefix, std::size_t padding) const {
    return conv2d(x, param(prefix + ".weight"), param(prefix + ".bias"), padding);
  }

  Tensor residual_block(const Tensor& x, std::size_t k,
                        const ConditioningVector& cond) const {
    const std::string p = block_prefix(k);
    const bool upsample = config_.upsample_blocks.contains(k);
    Tensor h = conv(relu(conditional_norm(x, p + ".bn1", cond)), p + ".conv1", 0);
    h = relu(conditional_norm(h, p + ".bn2", cond));
    if (upsample) h = upsample_nearest_2x(h);
    h = conv(h, p + ".conv2", 1);
    h = conv(relu(conditional_norm(h, p + ".bn3", cond)), p + ".conv3", 1);
    h = conv(relu(conditional_norm(h, p + ".bn4", cond)), p + ".conv4", 0);

    // skip path: keep the first c_out channels, upsample alongside h
    const std::size_t c_out = config_.channel_schedule[k - 1].out;
    const std::size_t plane = x.dim(1) * x.dim(2);
    Tensor skip({c_out, x.dim(1), x.dim(2)},
                std::vector<float>(x.data().begin(), x.data().begin() + c_out * plane));
    if (upsample) skip = upsample_nearest_2x(skip);
    auto hd = h.data();
    const auto sd = skip.data();
    for (std::size_t i = 0; i < hd.size(); ++i) hd[i] += sd[i];
    return h;
  }

  Tensor attention(const Tensor& x) const {
    AttentionParams params{param("attention.query.weight"), param("attention.key.weight"),
                           param("attention.value.weight"),
                           param("attention.output.weight"),
                           param("attention.gamma")[0]};
    return self_attention(x, params);
  }

  Tensor run(const Tensor& z, std::size_t class_index, const ForwardObserver& observe) const {
    const Tensor& table = param("embedding.weight");
    const std::size_t e = config_.embed_dim;
    Tensor embedding({e}, std::vector<float>(table.data().begin() + class_index * e,
                                             table.data().begin() + (class_index + 1) * e));
    const ConditioningVector cond = make_conditioning(z, embedding);

    const std::size_t s = config_.entry_spatial;
    Tensor x = linear(cond.values, param("entry.linear.weight"), param("entry.linear.bias"))
                   .reshaped({config_.entry_channels(), s, s});
    if (observe) observe(BlockId::entry(), x);

    for (std::size_t k = 1; k <= config_.num_blocks; ++k) {
      x = residual_block(x, k, cond);
      if (observe) observe(BlockId::block(k), x);
      if (k == config_.attention_after_block) {
        x = attention(x);
        if (observe) observe(BlockId::attention(), x);
      }
    }

    x = relu(conditional_norm(x, "output.bn", cond));
    x = tanh(conv(x, "output.conv", 1));
    if (observe) observe(BlockId::output(), x);
    return x;
  }

 private:
  const GraphConfig& config_;
  const Checkpoint& ckpt_;
};

}  // namespace detail

/// Generates one image [3, R, R] with values in [-1, 1] from latent z and
/// class index. Parameters are looked up by name, so manifest order in the
/// checkpoint does not matter.
inline Tensor forward(const GeneratorGraph& graph, const Checkpoint& ckpt, const Tensor& z,
                      std::size_t class_index, const ForwardObserver& observe = {}) {
  const GraphConfig& config = graph.config();
  check_manifest(graph.manifest(), ckpt);
  if (z.rank() != 1 || z.dim(0) != config.latent_dim) {
    throw ShapeError("latent must have shape [" + std::to_string(config.latent_dim) +
                     "], got " + shape_string(z.shape()));
  }
  if (class_index >= config.num_classes) {
    throw ShapeError("class index " + std::to_string(class_index) + " outside [0, " +
                     std::to_string(config.num_classes) + ")");
  }
  return detail::ForwardPass(graph, ckpt).run(z, class_index, observe);
}

}  // namespace weightscape
