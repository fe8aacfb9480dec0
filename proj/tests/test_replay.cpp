#include <gtest/gtest.h>

#include <filesystem>

#include "weightscape/replay.hpp"

using namespace weightscape;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir = fs::temp_directory_path() / "ws_replay_test";
  fs::path base_path = dir / "base.wsx";
  std::shared_ptr<const Checkpoint> base;
  GeneratorGraph graph{tiny64_config()};

  Fixture() {
    fs::create_directories(dir);
    base = std::make_shared<const Checkpoint>(synthesize(tiny64_config(), 0, InitScheme::scaled_fan_in));
    save_checkpoint(*base, base_path);
  }
};

Fixture& fx() {
  static Fixture f;
  return f;
}

RenderRecord record() {
  RenderRecord r;
  r.base = fx().base_path.string();
  r.plan = PerturbationPlan::multiplicative(0.35, 2).to_text();
  r.latent_seed = 4;
  r.latent_count = 2;
  r.classes = {3};
  return r;
}

}  // namespace

TEST(RenderRecord, JsonRoundTripAndStableId) {
  const RenderRecord r = record();
  const RenderRecord back = RenderRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.id(), r.id());
  EXPECT_EQ(r.id().size(), 16u);
  RenderRecord other = r;
  other.latent_seed = 5;
  EXPECT_NE(other.id(), r.id());
  EXPECT_THROW(RenderRecord::from_json({{"graph", "tiny64"}}), Error);
}

TEST(RenderRecord, Columns) {
  RenderRecord r = record();
  EXPECT_EQ(r.columns(), (std::vector<std::string>{"derived", "base"}));
  r.compare_base = false;
  EXPECT_EQ(r.columns(), (std::vector<std::string>{"derived"}));
  r.plan.reset();
  EXPECT_EQ(r.columns(), (std::vector<std::string>{"base"}));
  EXPECT_EQ(r.rows(), 2u);
}

TEST(DerivedCache, HitsAndEvictionDoNotChangeResults) {
  DerivedCache cache(1);
  const auto p1 = PerturbationPlan::multiplicative(0.2, 1);
  const auto p2 = PerturbationPlan::multiplicative(0.2, 2);
  const auto a = cache.get("k", *fx().base, p1);
  const auto again = cache.get("k", *fx().base, p1);
  EXPECT_EQ(a.get(), again.get());
  EXPECT_EQ(cache.hits(), 1u);
  cache.get("k", *fx().base, p2);
  EXPECT_EQ(cache.size(), 1u);
  const auto recomputed = cache.get("k", *fx().base, p1);
  EXPECT_EQ(*recomputed, *a);
  EXPECT_EQ(cache.misses(), 3u);
}

TEST(Replay, TileMatchesGrid) {
  const RenderRecord r = record();
  const RenderedGrid grid = replay_grid(r, fx().graph, fx().base);
  EXPECT_EQ(grid.provenance["record"], r.to_json());
  for (std::size_t row = 0; row < 2; ++row)
    for (std::size_t col = 0; col < 2; ++col)
      EXPECT_EQ(replay_tile(r, row, col, fx().graph, fx().base), encode_tile_png(grid.grid, row, col));
  EXPECT_THROW(replay_tile(r, 2, 0, fx().graph, fx().base), Error);
}

TEST(Replay, ZeroAlphaDerivedColumnEqualsBase) {
  RenderRecord r = record();
  r.plan = PerturbationPlan::multiplicative(0.0, 9).to_text();
  r.latent_count = 1;
  const RenderedGrid grid = replay_grid(r, fx().graph, fx().base);
  EXPECT_EQ(grid.grid.tile_at(0, 0), grid.grid.tile_at(0, 1));
}
