#pragma once

// A RenderRecord is the complete provenance of one grid: which graph, which
// base checkpoint file, which plan, which latents and classes. Any grid (or
// single tile) can be regenerated bit-exactly from its record.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weightscape/checkpoint.hpp"
#include "weightscape/graph.hpp"
#include "weightscape/perturb.hpp"
#include "weightscape/random.hpp"
#include "weightscape/render.hpp"

namespace weightscape {

struct RenderRecord {
  std::string graph = "tiny64";
  std::string base;                 // checkpoint path
  std::optional<std::string> plan;  // canonical plan text; none = base only
  std::uint64_t latent_seed = 0;
  std::size_t latent_count = 1;
  std::size_t latent_offset = 0;
  std::vector<std::size_t> classes;
  bool compare_base = true;

  /// Column labels: the derived network first, then the base.
  std::vector<std::string> columns() const {
    std::vector<std::string> cols;
    if (plan) cols.push_back("derived");
    if (!plan || compare_base) cols.push_back("base");
    return cols;
  }

  std::size_t rows() const { return classes.size() * latent_count; }

  nlohmann::json to_json() const {
    return {
        {"graph", graph},
        {"base", base},
        {"plan", plan ? nlohmann::json(*plan) : nlohmann::json(nullptr)},
        {"latent_seed", latent_seed},
        {"latent_count", latent_count},
        {"latent_offset", latent_offset},
        {"classes", classes},
        {"compare_base", compare_base},
    };
  }

  static RenderRecord from_json(const nlohmann::json& j) {
    try {
      RenderRecord r;
      r.graph = j.at("graph").get<std::string>();
      r.base = j.at("base").get<std::string>();
      if (j.contains("plan") && !j["plan"].is_null()) r.plan = j["plan"].get<std::string>();
      r.latent_seed = j.at("latent_seed").get<std::uint64_t>();
      r.latent_count = j.value("latent_count", std::size_t{1});
      r.latent_offset = j.value("latent_offset", std::size_t{0});
      r.classes = j.at("classes").get<std::vector<std::size_t>>();
      r.compare_base = j.value("compare_base", true);
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed render record: ") + e.what());
    }
  }

  /// Content key; equal records give equal ids.
  std::string id() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
  }
};

/// Bounded LRU of derived checkpoints keyed by (base key, plan text).
/// Misses recompute deterministically, so eviction never changes results.
class DerivedCache {
 public:
  explicit DerivedCache(std::size_t budget = 8) : budget_(budget) {}

  std::shared_ptr<const Checkpoint> get(const std::string& base_key, const Checkpoint& base,
                                        const PerturbationPlan& plan) {
    const std::string key = base_key + '\n' + plan.to_text();
    {
      std::lock_guard lock(mutex_);
      if (auto it = index_.find(key); it != index_.end()) {
        order_.splice(order_.begin(), order_, it->second);
        ++hits_;
        return it->second->second;
      }
    }
    auto derived = std::make_shared<const Checkpoint>(apply_plan(base, plan));
    std::lock_guard lock(mutex_);
    ++misses_;
    if (auto it = index_.find(key); it != index_.end()) return it->second->second;
    order_.emplace_front(key, derived);
    index_[key] = order_.begin();
    while (order_.size() > budget_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
    return derived;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return order_.size();
  }
  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }
  std::size_t misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
  }

 private:
  using Item = std::pair<std::string, std::shared_ptr<const Checkpoint>>;
  std::size_t budget_;
  mutable std::mutex mutex_;
  std::list<Item> order_;
  std::unordered_map<std::string, std::list<Item>::iterator> index_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

/// Builds the render request a record describes.
inline RenderRequest request_for(const RenderRecord& record,
                                 std::shared_ptr<const Checkpoint> base,
                                 std::shared_ptr<const Checkpoint> derived) {
  RenderRequest request;
  request.latent_seed = record.latent_seed;
  request.latent_count = record.latent_count;
  request.latent_offset = record.latent_offset;
  request.classes = record.classes;
  for (const auto& label : record.columns()) {
    request.variants.push_back({label, label == "base" ? base : derived});
  }
  return request;
}

inline std::shared_ptr<const Checkpoint> derive(const RenderRecord& record,
                                                std::shared_ptr<const Checkpoint> base,
                                                DerivedCache* cache = nullptr) {
  if (!record.plan) return nullptr;
  const auto plan = PerturbationPlan::parse(*record.plan);
  if (cache) return cache->get(record.base, *base, plan);
  return std::make_shared<const Checkpoint>(apply_plan(*base, plan));
}

inline RenderedGrid replay_grid(const RenderRecord& record, const GeneratorGraph& graph,
                                std::shared_ptr<const Checkpoint> base,
                                DerivedCache* cache = nullptr) {
  auto derived = derive(record, base, cache);
  const RenderRequest request = request_for(record, base, derived);
  RenderedGrid out = render(request, graph);
  out.provenance["record"] = record.to_json();
  return out;
}

/// PNG bytes of a single tile, rendering only that tile.
inline std::string replay_tile(const RenderRecord& record, std::size_t row, std::size_t col,
                               const GeneratorGraph& graph,
                               std::shared_ptr<const Checkpoint> base,
                               DerivedCache* cache = nullptr) {
  const auto cols = record.columns();
  if (row >= record.rows() || col >= cols.size()) throw Error("tile index outside the grid");
  auto derived = derive(record, base, cache);
  RenderRequest request = request_for(record, base, derived);
  const auto inputs = row_inputs(request, graph.config().latent_dim);
  const RowInput& in = inputs.at(row);
  const Tensor image = forward(graph, *request.variants[col].checkpoint, in.z, in.class_index);
  return encode_png(image.dim(2), image.dim(1), to_pixels(image));
}

}  // namespace weightscape
