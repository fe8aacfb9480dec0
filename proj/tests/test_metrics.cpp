#include <gtest/gtest.h>

#include <cmath>

#include "weightscape/metrics.hpp"
#include "weightscape/render.hpp"

using namespace weightscape;

namespace {

const Checkpoint& base() {
  static const Checkpoint c = synthesize(tiny64_config(), 0, InitScheme::scaled_fan_in);
  return c;
}

}  // namespace

TEST(ImageL2, RootMeanSquare) {
  const Tensor a({3, 2, 2}, 0.5f);
  Tensor b({3, 2, 2}, 0.5f);
  EXPECT_EQ(image_l2(a, b), 0.0);
  b[0] = 1.5f;
  EXPECT_NEAR(image_l2(a, b), std::sqrt(1.0 / 12.0), 1e-12);
  EXPECT_THROW(image_l2(a, Tensor({3, 2, 1})), ShapeError);
}

TEST(Histogram, BinsAndClamping) {
  Tensor img({1, 1, 5}, std::vector<float>{-1.0f, -0.6f, 0.0f, 0.99f, 3.0f});
  const auto h = channel_histogram(img, 4);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0], (std::vector<std::size_t>{2, 0, 1, 2}));
  EXPECT_THROW(channel_histogram(img, 0), Error);
}

TEST(Divergence, StartsAtZeroAndGrows) {
  const GeneratorGraph graph(tiny64_config());
  const Tensor z = sample_latents(0, 1, 16).front();
  const auto curve = divergence_curve(base(), graph, {0.0, 0.1, 1.0}, 4, z, 0);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[0].second, 0.0);
  EXPECT_GT(curve[1].second, 0.0);
  EXPECT_GT(curve[2].second, curve[1].second);
  EXPECT_THROW(divergence_curve(base(), graph, {0.1, 0.2}, 4, z, 0), Error);
  EXPECT_THROW(divergence_curve(base(), graph, {0.0, 0.3, 0.2}, 4, z, 0), Error);
}

TEST(MatchReport, NegativeControlFails) {
  // Draws with twice the base spread must fail the std check.
  auto entries = base().entries();
  for (auto& e : entries)
    if (e.name == "blocks.2.conv2.weight")
      for (float& v : e.tensor.data()) v *= 2.0f;
  const Checkpoint scaled(entries);
  const auto report = stats_match_report(scaled, compute_stats(base()), {BlockId::block(2)});
  bool saw = false;
  for (const auto& r : report) {
    if (r.name == "blocks.2.conv2.weight") {
      EXPECT_EQ(r.status, MatchStatus::fail);
      EXPECT_NEAR(r.max_rel_std_err, 1.0, 1e-6);
      saw = true;
    } else if (!r.targeted) {
      EXPECT_EQ(r.status, MatchStatus::identical);
    }
  }
  EXPECT_TRUE(saw);
}

TEST(MatchReport, UntargetedChangeIsFlagged) {
  const Checkpoint r = randomize_block(base(), {BlockId::block(3)}, 1);
  const auto report = stats_match_report(r, compute_stats(base()), {BlockId::block(2)});
  bool changed = false;
  for (const auto& rec : report) changed |= rec.status == MatchStatus::changed;
  EXPECT_TRUE(changed);
  EXPECT_NE(match_report_text(report).find("\"status\":\"changed\""), std::string::npos);
}

TEST(MatchReport, SmallEntriesSkipped) {
  const Checkpoint r = randomize_block(base(), {BlockId::block(2)}, 1);
  for (const auto& rec : stats_match_report(r, compute_stats(base()), {BlockId::block(2)}))
    if (rec.targeted && rec.count < 10000) {
      EXPECT_EQ(rec.status, MatchStatus::skipped) << rec.name;
    }
}
