// weightscape: command-line front end for the weight-space exploration engine.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "weightscape/service.hpp"
#include "weightscape/weightscape.hpp"

namespace fs = std::filesystem;
using namespace weightscape;

namespace {

constexpr int exit_usage = 1;
constexpr int exit_data = 2;

struct UsageError : Error {
  using Error::Error;
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::istringstream field(item);
    T value{};
    if (!(field >> value) || !field.eof()) {
      throw UsageError(std::string("malformed ") + what + " '" + item + "'");
    }
    out.push_back(value);
  }
  if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
  return out;
}

/// "A..B" or a single integer.
std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const auto s = std::stoull(text);
      return {s, s};
    }
    return {std::stoull(text.substr(0, dots)), std::stoull(text.substr(dots + 2))};
  } catch (const std::exception&) {
    throw UsageError("malformed seed range '" + text + "'");
  }
}

KindSet parse_kinds_flag(const std::string& text) {
  try {
    return PerturbationPlan::parse_kinds(text);
  } catch (const PlanError& e) {
    throw UsageError(e.what());
  }
}

std::set<BlockId> parse_blocks_flag(const std::string& text) {
  try {
    auto blocks = PerturbationPlan::parse_blocks(text);
    if (blocks.empty()) throw UsageError("no blocks given");
    return blocks;
  } catch (const PlanError& e) {
    throw UsageError(e.what());
  }
}

std::shared_ptr<const Checkpoint> load_shared(const std::string& path) {
  return std::make_shared<const Checkpoint>(load_checkpoint(path));
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

/// Grid of [derived, base] for one derived checkpoint.
void render_pair(const GeneratorGraph& graph, std::shared_ptr<const Checkpoint> derived,
                 std::shared_ptr<const Checkpoint> base, const std::vector<std::size_t>& classes,
                 std::uint64_t latent_seed, std::size_t count, const fs::path& out) {
  RenderRequest request;
  request.latent_seed = latent_seed;
  request.latent_count = count;
  request.classes = classes;
  request.variants = {{"derived", std::move(derived)}, {"base", std::move(base)}};
  write_rendered(render(request, graph), out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weightscape: weight-space exploration for conditional GAN generators"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: $WEIGHTSCAPE_THREADS or all cores)");

  // synth-checkpoint
  std::string config_name = "tiny64", out_path, scheme_name = "scaled_fan_in";
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth-checkpoint", "Write a deterministic synthetic checkpoint");
  synth->add_option("--config", config_name, "Built-in config name or JSON file")->capture_default_str();
  synth->add_option("--seed", seed, "Seed")->capture_default_str();
  synth->add_option("--scheme", scheme_name, "unit_normal or scaled_fan_in")->capture_default_str();
  synth->add_option("--out", out_path, "Output checkpoint file")->required();

  // perturb
  std::string base_path, kinds_text = "trainable";
  double alpha = 0.35;
  auto* perturb = app.add_subcommand("perturb", "Multiplicative perturbation theta* (1 + alpha g)");
  perturb->add_option("--base", base_path, "Base checkpoint")->required();
  perturb->add_option("--alpha", alpha, "Perturbation strength")->capture_default_str();
  perturb->add_option("--seed", seed, "Seed")->capture_default_str();
  perturb->add_option("--kinds", kinds_text, "Affected kinds: all, trainable or a comma list")
      ->capture_default_str();
  perturb->add_option("--out", out_path, "Output checkpoint file")->required();

  // randomize-block
  std::string blocks_text;
  bool whole_entry = false;
  auto* randomize = app.add_subcommand("randomize-block", "Replace whole blocks with matched normal draws");
  randomize->add_option("--base", base_path, "Base checkpoint")->required();
  randomize->add_option("--blocks", blocks_text, "Target blocks, e.g. B2 or B1,B3 or B1..B4")->required();
  randomize->add_option("--seed", seed, "Seed")->capture_default_str();
  randomize->add_flag("--whole-entry-stats", whole_entry, "Use whole-entry statistics for conv kernels");
  randomize->add_option("--out", out_path, "Output checkpoint file")->required();

  // substitute
  std::string pattern = "*";
  double fraction = 0.0;
  std::uint64_t mask_seed = 0;
  auto* substitute = app.add_subcommand("substitute", "Replace a random subset of weights");
  substitute->add_option("--base", base_path, "Base checkpoint")->required();
  substitute->add_option("--pattern", pattern, "Entry name glob")->capture_default_str();
  substitute->add_option("--fraction", fraction, "Per-element selection probability")->required();
  substitute->add_option("--mask-seed", mask_seed, "Seed for element selection")->capture_default_str();
  substitute->add_option("--seed", seed, "Seed for replacement draws")->capture_default_str();
  substitute->add_option("--blocks", blocks_text, "Restrict to these blocks");
  substitute->add_option("--kinds", kinds_text, "Affected kinds")->capture_default_str();
  substitute->add_flag("--whole-entry-stats", whole_entry, "Use whole-entry statistics for conv kernels");
  substitute->add_option("--out", out_path, "Output checkpoint file")->required();

  // sweep (multiplicative over a seed range)
  std::string seeds_text = "0..10", outdir;
  auto* seed_sweep = app.add_subcommand("sweep", "Multiplicative perturbation for every seed in a range");
  seed_sweep->add_option("--base", base_path, "Base checkpoint")->required();
  seed_sweep->add_option("--alpha", alpha, "Perturbation strength")->capture_default_str();
  seed_sweep->add_option("--seeds", seeds_text, "Seed range A..B")->capture_default_str();
  seed_sweep->add_option("--kinds", kinds_text, "Affected kinds")->capture_default_str();
  seed_sweep->add_option("--outdir", outdir, "Output directory")->required();

  // block-sweep
  std::string graph_name = "tiny64", classes_text = "0";
  std::uint64_t latent_seed = 0;
  std::size_t count = 1;
  auto* block_sweep = app.add_subcommand("block-sweep", "Randomize each block in turn and render it against the base");
  block_sweep->add_option("--base", base_path, "Base checkpoint")->required();
  block_sweep->add_option("--blocks", blocks_text, "Blocks to sweep, e.g. B1..B7")->required();
  block_sweep->add_option("--seed", seed, "Seed")->capture_default_str();
  block_sweep->add_option("--graph", graph_name, "Graph config")->capture_default_str();
  block_sweep->add_option("--classes", classes_text, "Comma-separated class indices")->capture_default_str();
  block_sweep->add_option("--latent-seed", latent_seed, "Latent seed")->capture_default_str();
  block_sweep->add_option("--count", count, "Latents per class")->capture_default_str();
  block_sweep->add_flag("--whole-entry-stats", whole_entry, "Use whole-entry statistics for conv kernels");
  block_sweep->add_option("--outdir", outdir, "Output directory")->required();

  // render
  std::string checkpoints_text;
  auto* render_cmd = app.add_subcommand("render", "Render a comparison grid (rows: class x latent, columns: checkpoints)");
  render_cmd->add_option("--graph", graph_name, "Graph config")->capture_default_str();
  render_cmd->add_option("--checkpoints", checkpoints_text, "Comma-separated checkpoint files, one column each")->required();
  render_cmd->add_option("--classes", classes_text, "Comma-separated class indices")->capture_default_str();
  render_cmd->add_option("--latent-seed", latent_seed, "Latent seed")->capture_default_str();
  render_cmd->add_option("--count", count, "Latents per class")->capture_default_str();
  render_cmd->add_option("--out", out_path, "Output PNG (provenance goes to <out>.json)")->required();

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "Per-entry weight statistics (JSON lines)");
  stats_cmd->add_option("--checkpoint", base_path, "Checkpoint")->required();
  stats_cmd->add_flag("--whole-entry-stats", whole_entry, "Whole-entry statistics for conv kernels");
  stats_cmd->add_option("--out", out_path, "Output file (default stdout)");

  // diff
  std::string a_path, b_path;
  auto* diff_cmd = app.add_subcommand("diff", "Per-entry differences between two checkpoints (JSON lines)");
  diff_cmd->add_option("--a", a_path, "First checkpoint")->required();
  diff_cmd->add_option("--b", b_path, "Second checkpoint")->required();
  diff_cmd->add_option("--out", out_path, "Output file (default stdout)");

  // diverge
  std::string alphas_text = "0,0.1,0.35";
  std::size_t class_index = 0;
  auto* diverge = app.add_subcommand("diverge", "Image distance from the base as alpha grows");
  diverge->add_option("--base", base_path, "Base checkpoint")->required();
  diverge->add_option("--graph", graph_name, "Graph config")->capture_default_str();
  diverge->add_option("--alphas", alphas_text, "Ascending alphas starting at 0")->capture_default_str();
  diverge->add_option("--seed", seed, "Perturbation seed")->capture_default_str();
  diverge->add_option("--latent-seed", latent_seed, "Latent seed")->capture_default_str();
  diverge->add_option("--class", class_index, "Class index")->capture_default_str();
  diverge->add_option("--out", out_path, "Output file (default stdout)");

  // match-report
  std::string replaced_path;
  auto* match = app.add_subcommand("match-report", "Check replaced blocks against base statistics");
  match->add_option("--base", base_path, "Base checkpoint")->required();
  match->add_option("--replaced", replaced_path, "Derived checkpoint")->required();
  match->add_option("--blocks", blocks_text, "Blocks that were replaced")->required();
  match->add_flag("--whole-entry-stats", whole_entry, "Whole-entry statistics for conv kernels");
  match->add_option("--out", out_path, "Output file (default stdout)");

  // replay
  std::string pick_path, record_path;
  auto* replay = app.add_subcommand("replay", "Regenerate a saved pick (tile) or a grid from its provenance");
  auto* pick_opt = replay->add_option("--pick", pick_path, "Pick record saved by the service");
  auto* record_opt = replay->add_option("--record", record_path, "Render record (grid provenance)");
  pick_opt->excludes(record_opt);
  replay->add_option("--out", out_path, "Output PNG")->required();

  // serve
  int port = 8080;
  std::string host = "127.0.0.1", gallery = "gallery";
  auto* serve = app.add_subcommand("serve", "Run the exploration HTTP service");
  serve->add_option("--port", port, "Port")->capture_default_str();
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--base", base_path, "Default base checkpoint")->required();
  serve->add_option("--graph", graph_name, "Default graph config")->capture_default_str();
  serve->add_option("--gallery", gallery, "Gallery directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  }

  if (threads > 0) set_thread_count(threads);
  const StatsMode stats_mode = whole_entry ? StatsMode::whole_entry : StatsMode::per_pixel;

  try {
    if (*synth) {
      const GraphConfig config = load_config(config_name);
      const auto scheme = parse_init_scheme(scheme_name);
      if (!scheme) throw UsageError("unknown scheme '" + scheme_name + "'");
      Checkpoint ckpt = synthesize(config, seed, *scheme)
                            .with_provenance("synthesize config=" + config.name + " seed=" +
                                             std::to_string(seed) + " scheme=" + scheme_name);
      save_checkpoint(ckpt, out_path);
      std::cout << "wrote " << out_path << " (" << ckpt.size() << " entries, "
                << parameter_count(ckpt.manifest()) << " trainable parameters)\n";
    } else if (*perturb) {
      PerturbationPlan plan = PerturbationPlan::multiplicative(alpha, seed);
      plan.kinds = parse_kinds_flag(kinds_text);
      try {
        plan.validate();
      } catch (const PlanError& e) {
        throw UsageError(e.what());
      }
      save_checkpoint(apply_plan(load_checkpoint(base_path), plan), out_path);
      std::cout << plan.to_text() << '\n';
    } else if (*randomize) {
      PerturbationPlan plan = PerturbationPlan::block_randomize(parse_blocks_flag(blocks_text), seed);
      plan.stats = stats_mode;
      save_checkpoint(apply_plan(load_checkpoint(base_path), plan), out_path);
      std::cout << plan.to_text() << '\n';
    } else if (*substitute) {
      PerturbationPlan plan = PerturbationPlan::masked_substitute({pattern, fraction, mask_seed}, seed);
      if (!blocks_text.empty()) plan.target_blocks = parse_blocks_flag(blocks_text);
      plan.kinds = parse_kinds_flag(kinds_text);
      plan.stats = stats_mode;
      try {
        plan.validate();
      } catch (const PlanError& e) {
        throw UsageError(e.what());
      }
      const Checkpoint base = load_checkpoint(base_path);
      const auto result =
          masked_substitute(base, plan.mask, plan.seed, plan.target_blocks, plan.kinds, plan.stats);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      save_checkpoint(result.checkpoint.with_provenance(plan.to_text()), out_path);
      std::cout << plan.to_text() << '\n'
                << "substituted " << result.substituted_elements << " elements in "
                << result.matched_entries << " entries\n";
    } else if (*seed_sweep) {
      const auto [first, last] = parse_seed_range(seeds_text);
      if (first > last) throw UsageError("empty seed range");
      PerturbationPlan plan = PerturbationPlan::multiplicative(alpha, first);
      plan.kinds = parse_kinds_flag(kinds_text);
      const Checkpoint base = load_checkpoint(base_path);
      fs::create_directories(outdir);
      nlohmann::json index = nlohmann::json::array();
      for (const auto& item : sweep(base, plan, first, last)) {
        const fs::path file = fs::path(outdir) / ("seed" + std::to_string(item.plan.seed) + ".wsx");
        save_checkpoint(item.checkpoint, file);
        index.push_back({{"file", file.filename().string()}, {"plan", item.plan.to_text()}});
      }
      write_file(fs::path(outdir) / "sweep.json", index.dump(2) + "\n");
      std::cout << "wrote " << index.size() << " checkpoints to " << outdir << '\n';
    } else if (*block_sweep) {
      const auto blocks = parse_blocks_flag(blocks_text);
      const GeneratorGraph graph = build_graph(load_config(graph_name));
      const auto base = load_shared(base_path);
      check_manifest(graph.manifest(), *base);
      const auto classes = parse_list<std::size_t>(classes_text, "class");
      fs::create_directories(outdir);
      nlohmann::json index = nlohmann::json::array();
      for (const BlockId& block : blocks) {
        PerturbationPlan plan = PerturbationPlan::block_randomize({block}, seed);
        plan.stats = stats_mode;
        auto derived = std::make_shared<const Checkpoint>(apply_plan(*base, plan));
        const std::string stem = block.to_string();
        save_checkpoint(*derived, fs::path(outdir) / (stem + ".wsx"));
        render_pair(graph, derived, base, classes, latent_seed, count, fs::path(outdir) / (stem + ".png"));
        index.push_back({{"block", stem},
                         {"checkpoint", stem + ".wsx"},
                         {"grid", stem + ".png"},
                         {"plan", plan.to_text()}});
        std::cout << stem << ": " << plan.to_text() << '\n';
      }
      write_file(fs::path(outdir) / "block-sweep.json", index.dump(2) + "\n");
    } else if (*render_cmd) {
      const GeneratorGraph graph = build_graph(load_config(graph_name));
      RenderRequest request;
      request.latent_seed = latent_seed;
      request.latent_count = count;
      request.classes = parse_list<std::size_t>(classes_text, "class");
      for (std::size_t c : request.classes) {
        if (c >= graph.config().num_classes) throw UsageError("class index out of range: " + std::to_string(c));
      }
      if (count == 0) throw UsageError("--count must be >= 1");
      std::stringstream files(checkpoints_text);
      std::string file;
      while (std::getline(files, file, ',')) {
        if (!file.empty()) request.variants.push_back({file, load_shared(file)});
      }
      if (request.variants.empty()) throw UsageError("no checkpoints given");
      const RenderedGrid rendered = render(request, graph);
      write_rendered(rendered, out_path);
      std::cout << "wrote " << out_path << " (" << rendered.grid.width() << "x"
                << rendered.grid.height() << ", " << rendered.grid.rows << " rows, "
                << rendered.grid.cols << " columns)\n";
    } else if (*stats_cmd) {
      write_text(out_path, stats_report(compute_stats(load_checkpoint(base_path), stats_mode)));
    } else if (*diff_cmd) {
      write_text(out_path, diff_report(diff(load_checkpoint(a_path), load_checkpoint(b_path))));
    } else if (*diverge) {
      const GeneratorGraph graph = build_graph(load_config(graph_name));
      if (class_index >= graph.config().num_classes) throw UsageError("class index out of range");
      const auto alphas = parse_list<double>(alphas_text, "alpha");
      const Tensor z = sample_latents(latent_seed, 1, graph.config().latent_dim).front();
      std::string text;
      for (const auto& [a, l2] : divergence_curve(load_checkpoint(base_path), graph, alphas, seed, z, class_index)) {
        text += nlohmann::json{{"alpha", a}, {"image_l2", l2}}.dump() + "\n";
      }
      write_text(out_path, text);
    } else if (*match) {
      const Checkpoint base = load_checkpoint(base_path);
      const auto report = stats_match_report(load_checkpoint(replaced_path), compute_stats(base, stats_mode),
                                             parse_blocks_flag(blocks_text));
      write_text(out_path, match_report_text(report));
      for (const auto& r : report) {
        if (r.status == MatchStatus::fail || r.status == MatchStatus::changed) return exit_data;
      }
    } else if (*replay) {
      if (pick_path.empty() && record_path.empty()) throw UsageError("replay needs --pick or --record");
      std::ifstream in(pick_path.empty() ? record_path : pick_path);
      if (!in) throw UsageError("cannot open provenance file");
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed provenance file: ") + e.what());
      }
      if (!pick_path.empty()) {
        const RenderRecord record = RenderRecord::from_json(doc.at("record"));
        const GeneratorGraph graph = build_graph(load_config(record.graph));
        write_file(out_path, replay_tile(record, doc.at("tile").at("row").get<std::size_t>(),
                                         doc.at("tile").at("col").get<std::size_t>(), graph,
                                         load_shared(record.base)));
      } else {
        const RenderRecord record = RenderRecord::from_json(doc.contains("record") ? doc["record"] : doc);
        const GeneratorGraph graph = build_graph(load_config(record.graph));
        write_rendered(replay_grid(record, graph, load_shared(record.base)), out_path);
      }
      std::cout << "wrote " << out_path << '\n';
    } else if (*serve) {
      ServiceOptions options;
      options.base = base_path;
      options.graph = graph_name;
      options.gallery_dir = gallery;
      ExplorationService service(options);
      service.create_session({});  // validates --base/--graph before binding
      httplib::Server server;
      service.mount(server);
      std::cout << "serving on http://" << host << ":" << port << std::endl;
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot bind " << host << ":" << port << '\n';
        return exit_data;
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const PlanError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const ApiError& e) {
    std::cerr << "error: " << e.message << " (" << e.detail << ")\n";
    return exit_data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_data;
  }
  return 0;
}
