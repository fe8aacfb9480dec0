#pragma once

// HTTP session API for interactive exploration.
//
//   GET  /health
//   POST /sessions                      {base?, graph_config?}       -> {session_id}
//   POST /sessions/{id}/plan            {mode, alpha, seed, blocks, ...} -> {plan_id, plan}
//   POST /sessions/{id}/render          {classes, latent_seed, count, compare_base}
//                                                                    -> {grid_id, rows, cols}
//   POST /sessions/{id}/lock-latent     {latent_seed, index}
//   POST /sessions/{id}/save            {grid_id, tile: {row, col}}  -> pick record
//   GET  /sessions/{id}                 session state and history
//   GET  /grids/{grid_id}.png
//   GET  /grids/{grid_id}/provenance
//   GET  /gallery
//
// Errors are JSON bodies {code, message, detail} with a 4xx/5xx status.
// Grids are identified by the content hash of their RenderRecord, and every
// image is regenerated from that record on demand.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "weightscape/checkpoint.hpp"
#include "weightscape/config.hpp"
#include "weightscape/graph.hpp"
#include "weightscape/perturb.hpp"
#include "weightscape/replay.hpp"

namespace weightscape {

struct ServiceOptions {
  std::string base;                    // default base checkpoint path
  std::string graph = "tiny64";        // default graph config
  std::filesystem::path gallery_dir = "gallery";
  std::size_t derived_cache_budget = 8;
  std::size_t png_cache_budget = 32;
};

/// Error surfaced to clients as {code, message, detail}.
struct ApiError {
  int status;
  std::string code;
  std::string message;
  std::string detail;
};

class ExplorationService {
 public:
  explicit ExplorationService(ServiceOptions options)
      : options_(std::move(options)), derived_(options_.derived_cache_budget) {
    std::filesystem::create_directories(options_.gallery_dir);
    load_gallery();
  }

  ExplorationService(const ExplorationService&) = delete;
  ExplorationService& operator=(const ExplorationService&) = delete;

  void mount(httplib::Server& server) {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    route(server, "POST", R"(/sessions)", [this](const auto& req, auto&) {
      return create_session(parse_body(req));
    });
    route(server, "GET", R"(/sessions/([^/]+))", [this](const auto& req, auto&) {
      return session_state(req.matches[1]);
    });
    route(server, "POST", R"(/sessions/([^/]+)/plan)", [this](const auto& req, auto&) {
      return set_plan(req.matches[1], parse_body(req));
    });
    route(server, "POST", R"(/sessions/([^/]+)/render)", [this](const auto& req, auto&) {
      return render_session(req.matches[1], parse_body(req));
    });
    route(server, "POST", R"(/sessions/([^/]+)/lock-latent)", [this](const auto& req, auto&) {
      return lock_latent(req.matches[1], parse_body(req));
    });
    route(server, "POST", R"(/sessions/([^/]+)/save)", [this](const auto& req, auto&) {
      return save_pick(req.matches[1], parse_body(req));
    });
    route(server, "GET", R"(/grids/([0-9a-f]+)/provenance)", [this](const auto& req, auto&) {
      return grid_record(req.matches[1]).to_json();
    });
    server.Get(R"(/grids/([0-9a-f]+)\.png)", [this](const httplib::Request& req,
                                                     httplib::Response& res) {
      guarded(res, [&] {
        res.set_content(grid_png(req.matches[1]), "image/png");
      });
    });
    route(server, "GET", R"(/gallery)", [this](const auto&, auto&) { return gallery(); });
  }

  DerivedCache& derived_cache() { return derived_; }

  // --- operations (also callable in-process) ---

  nlohmann::json create_session(const nlohmann::json& body) {
    auto session = std::make_shared<Session>();
    session->base_path = body.value("base", options_.base);
    session->graph_name = body.value("graph_config", options_.graph);
    if (session->base_path.empty()) {
      throw ApiError{400, "missing_base", "no base checkpoint given", "pass 'base' or start the server with --base"};
    }
    session->graph = graph_for(session->graph_name);
    session->base = base_for(session->base_path);
    const auto problems = manifest_mismatches(session->graph->manifest(), *session->base);
    if (!problems.empty()) {
      throw ApiError{422, "manifest_mismatch", "base checkpoint does not match graph",
                     problems.front()};
    }
    const std::uint64_t n = ++session_counter_;
    char buf[20];
    std::snprintf(buf, sizeof buf, "s%016llx",
                  static_cast<unsigned long long>(splitmix64(n ^ session_salt_)));
    session->id = buf;
    std::unique_lock lock(sessions_mutex_);
    sessions_[session->id] = session;
    return {{"session_id", session->id}};
  }

  nlohmann::json set_plan(const std::string& id, const nlohmann::json& body) {
    auto session = find_session(id);
    PerturbationPlan plan = plan_from_body(body);
    try {
      plan.validate();
    } catch (const PlanError& e) {
      throw ApiError{422, "invalid_plan", e.what(), plan.to_text()};
    }
    for (const BlockId& b : plan.target_blocks) {
      const bool owned = std::any_of(session->base->entries().begin(), session->base->entries().end(),
                                     [&](const CheckpointEntry& e) { return e.block == b; });
      if (!owned) {
        throw ApiError{422, "invalid_plan", "target block " + b.to_string() + " owns no entries",
                       plan.to_text()};
      }
    }
    std::lock_guard lock(session->mutex);
    session->plan = plan;
    const std::string plan_id = "p" + std::to_string(++session->plan_count);
    return {{"plan_id", plan_id}, {"plan", plan.to_text()}};
  }

  nlohmann::json render_session(const std::string& id, const nlohmann::json& body) {
    auto session = find_session(id);
    RenderRecord record;
    {
      std::lock_guard lock(session->mutex);
      record.graph = session->graph_name;
      record.base = session->base_path;
      if (session->plan) record.plan = session->plan->to_text();
      record.compare_base = body.value("compare_base", true);
      record.classes = get_field<std::vector<std::size_t>>(body, "classes");
      if (session->locked) {
        record.latent_seed = session->locked->first;
        record.latent_offset = session->locked->second;
        record.latent_count = 1;
      } else {
        record.latent_seed = get_field<std::uint64_t>(body, "latent_seed");
        record.latent_count = body.value("count", std::size_t{1});
      }
    }
    if (record.classes.empty()) throw ApiError{400, "bad_request", "classes must be non-empty", ""};
    if (record.latent_count == 0) throw ApiError{400, "bad_request", "count must be >= 1", ""};
    for (std::size_t c : record.classes) {
      if (c >= session->graph->config().num_classes) {
        throw ApiError{422, "bad_class", "class index out of range", std::to_string(c)};
      }
    }
    const std::string grid_id = record.id();
    {
      std::unique_lock lock(grids_mutex_);
      grids_.emplace(grid_id, record);
    }
    grid_png(grid_id);  // render now so errors surface on this request
    {
      std::lock_guard lock(session->mutex);
      session->history.push_back({record.plan.value_or(""), grid_id});
    }
    return {{"grid_id", grid_id},
            {"rows", record.rows()},
            {"cols", record.columns().size()},
            {"columns", record.columns()}};
  }

  nlohmann::json lock_latent(const std::string& id, const nlohmann::json& body) {
    auto session = find_session(id);
    const auto seed = get_field<std::uint64_t>(body, "latent_seed");
    const auto index = body.value("index", std::size_t{0});
    std::lock_guard lock(session->mutex);
    session->locked = std::make_pair(seed, index);
    return {{"locked", {{"latent_seed", seed}, {"index", index}}}};
  }

  nlohmann::json save_pick(const std::string& id, const nlohmann::json& body) {
    find_session(id);
    const auto grid_id = get_field<std::string>(body, "grid_id");
    const RenderRecord record = grid_record(grid_id);
    std::size_t row = 0, col = 0;
    try {
      row = body.at("tile").at("row").get<std::size_t>();
      col = body.at("tile").at("col").get<std::size_t>();
    } catch (const nlohmann::json::exception&) {
      throw ApiError{400, "bad_request", "tile must be {row, col}", ""};
    }
    if (row >= record.rows() || col >= record.columns().size()) {
      throw ApiError{422, "bad_tile", "tile outside the grid", ""};
    }
    const auto graph = graph_for(record.graph);
    const std::string png = replay_tile(record, row, col, *graph, base_for(record.base), &derived_);
    const std::string pick_id = grid_id + "-r" + std::to_string(row) + "c" + std::to_string(col);
    nlohmann::json pick = {
        {"pick_id", pick_id},
        {"grid_id", grid_id},
        {"tile", {{"row", row}, {"col", col}}},
        {"column", record.columns()[col]},
        {"record", record.to_json()},
        {"image", pick_id + ".png"},
    };
    std::lock_guard lock(gallery_mutex_);
    write_file(options_.gallery_dir / (pick_id + ".png"), png);
    write_file(options_.gallery_dir / (pick_id + ".json"), pick.dump(2) + "\n");
    gallery_[pick_id] = pick;
    return pick;
  }

  nlohmann::json gallery() const {
    std::lock_guard lock(gallery_mutex_);
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [id, pick] : gallery_) list.push_back(pick);
    return {{"picks", list}};
  }

  nlohmann::json session_state(const std::string& id) {
    auto session = find_session(id);
    std::lock_guard lock(session->mutex);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : session->history) history.push_back({{"plan", h.plan}, {"grid_id", h.grid_id}});
    nlohmann::json state = {
        {"session_id", session->id},
        {"base", session->base_path},
        {"graph_config", session->graph_name},
        {"plan", session->plan ? nlohmann::json(session->plan->to_text()) : nlohmann::json(nullptr)},
        {"history", history},
    };
    if (session->locked) {
      state["locked"] = {{"latent_seed", session->locked->first}, {"index", session->locked->second}};
    }
    return state;
  }

  RenderRecord grid_record(const std::string& grid_id) const {
    std::shared_lock lock(grids_mutex_);
    auto it = grids_.find(grid_id);
    if (it == grids_.end()) throw ApiError{404, "unknown_grid", "no grid '" + grid_id + "'", ""};
    return it->second;
  }

  /// Encoded grid image; regenerated from the stored record on cache miss.
  std::string grid_png(const std::string& grid_id) {
    {
      std::lock_guard lock(png_mutex_);
      if (auto it = png_cache_.find(grid_id); it != png_cache_.end()) return it->second;
    }
    const RenderRecord record = grid_record(grid_id);
    const auto graph = graph_for(record.graph);
    std::string png = replay_grid(record, *graph, base_for(record.base), &derived_).png;
    std::lock_guard lock(png_mutex_);
    if (png_cache_.size() >= options_.png_cache_budget) png_cache_.erase(png_cache_.begin());
    png_cache_.emplace(grid_id, png);
    return png;
  }

  static PerturbationPlan plan_from_body(const nlohmann::json& body) {
    try {
      const std::string mode = body.at("mode").get<std::string>();
      const auto seed = body.value("seed", std::uint64_t{0});
      PerturbationPlan plan;
      if (mode == "multiplicative") {
        plan = PerturbationPlan::multiplicative(body.value("alpha", 0.35), seed);
      } else if (mode == "block_randomize") {
        plan = PerturbationPlan::block_randomize(parse_block_field(body), seed);
      } else if (mode == "masked_substitute") {
        MaskSpec mask;
        if (body.contains("mask")) {
          const auto& m = body["mask"];
          mask.pattern = m.value("pattern", std::string("*"));
          mask.fraction = m.value("fraction", 0.0);
          mask.seed = m.value("seed", std::uint64_t{0});
        }
        plan = PerturbationPlan::masked_substitute(mask, seed);
        plan.target_blocks = parse_block_field(body);
      } else {
        throw ApiError{422, "invalid_plan", "unknown mode '" + mode + "'", ""};
      }
      if (body.contains("kinds")) plan.kinds = PerturbationPlan::parse_kinds(body["kinds"].get<std::string>());
      if (body.value("whole_entry_stats", false)) plan.stats = StatsMode::whole_entry;
      return plan;
    } catch (const nlohmann::json::exception& e) {
      throw ApiError{400, "bad_request", "malformed plan body", e.what()};
    } catch (const PlanError& e) {
      throw ApiError{422, "invalid_plan", e.what(), ""};
    }
  }

 private:
  struct HistoryItem {
    std::string plan;
    std::string grid_id;
  };

  struct Session {
    std::string id;
    std::string base_path;
    std::string graph_name;
    std::shared_ptr<const GeneratorGraph> graph;
    std::shared_ptr<const Checkpoint> base;
    std::optional<PerturbationPlan> plan;
    std::optional<std::pair<std::uint64_t, std::size_t>> locked;
    std::vector<HistoryItem> history;
    std::size_t plan_count = 0;
    std::mutex mutex;
  };

  template <typename T>
  static T get_field(const nlohmann::json& body, const char* key) {
    try {
      return body.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ApiError{400, "bad_request", std::string("missing or invalid field '") + key + "'",
                     e.what()};
    }
  }

  static std::set<BlockId> parse_block_field(const nlohmann::json& body) {
    if (!body.contains("blocks")) return {};
    const auto& blocks = body["blocks"];
    if (blocks.is_string()) return PerturbationPlan::parse_blocks(blocks.get<std::string>());
    std::set<BlockId> out;
    for (const auto& b : blocks) {
      auto parsed = PerturbationPlan::parse_blocks(b.get<std::string>());
      out.insert(parsed.begin(), parsed.end());
    }
    return out;
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      auto j = nlohmann::json::parse(req.body);
      if (!j.is_object()) throw ApiError{400, "bad_request", "body must be a JSON object", ""};
      return j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ApiError{400, "bad_json", "request body is not valid JSON", e.what()};
    }
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    auto fail = [&](int status, const std::string& code, const std::string& message,
                    const std::string& detail) {
      res.status = status;
      nlohmann::json body = {{"code", code}, {"message", message}, {"detail", detail}};
      res.set_content(body.dump(), "application/json");
    };
    try {
      fn();
    } catch (const ApiError& e) {
      fail(e.status, e.code, e.message, e.detail);
    } catch (const PlanError& e) {
      fail(422, "invalid_plan", e.what(), "");
    } catch (const ManifestError& e) {
      fail(422, "manifest_mismatch", e.what(), "");
    } catch (const ConfigError& e) {
      fail(422, "bad_config", e.what(), "");
    } catch (const CheckpointError& e) {
      fail(422, "bad_checkpoint", e.what(), "");
    } catch (const std::exception& e) {
      fail(500, "internal", e.what(), "");
    }
  }

  template <typename Handler>
  void route(httplib::Server& server, const std::string& method, const std::string& pattern,
             Handler handler) {
    auto wrapped = [handler](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { res.set_content(handler(req, res).dump(), "application/json"); });
    };
    if (method == "GET") {
      server.Get(pattern, wrapped);
    } else {
      server.Post(pattern, wrapped);
    }
  }

  std::shared_ptr<Session> find_session(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError{404, "unknown_session", "no session '" + id + "'", ""};
    return it->second;
  }

  std::shared_ptr<const GeneratorGraph> graph_for(const std::string& name) {
    std::lock_guard lock(resources_mutex_);
    if (auto it = graphs_.find(name); it != graphs_.end()) return it->second;
    auto graph = std::make_shared<const GeneratorGraph>(build_graph(load_config(name)));
    graphs_[name] = graph;
    return graph;
  }

  std::shared_ptr<const Checkpoint> base_for(const std::string& path) {
    std::lock_guard lock(resources_mutex_);
    if (auto it = bases_.find(path); it != bases_.end()) return it->second;
    std::shared_ptr<const Checkpoint> base;
    try {
      base = std::make_shared<const Checkpoint>(load_checkpoint(path));
    } catch (const CheckpointError&) {
      throw;
    } catch (const Error& e) {
      throw ApiError{404, "unknown_base", e.what(), path};
    }
    bases_[path] = base;
    return base;
  }

  void load_gallery() {
    for (const auto& file : std::filesystem::directory_iterator(options_.gallery_dir)) {
      if (file.path().extension() != ".json") continue;
      std::ifstream in(file.path());
      try {
        auto pick = nlohmann::json::parse(in);
        if (pick.contains("pick_id")) gallery_[pick["pick_id"].get<std::string>()] = pick;
      } catch (const nlohmann::json::exception&) {
        // not a pick record
      }
    }
  }

  ServiceOptions options_;
  DerivedCache derived_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint64_t> session_counter_{0};
  std::uint64_t session_salt_ = splitmix64(
      static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));

  mutable std::shared_mutex grids_mutex_;
  std::map<std::string, RenderRecord> grids_;

  std::mutex png_mutex_;
  std::map<std::string, std::string> png_cache_;

  std::mutex resources_mutex_;
  std::map<std::string, std::shared_ptr<const GeneratorGraph>> graphs_;
  std::map<std::string, std::shared_ptr<const Checkpoint>> bases_;

  mutable std::mutex gallery_mutex_;
  std::map<std::string, nlohmann::json> gallery_;
};

}  // namespace weightscape
