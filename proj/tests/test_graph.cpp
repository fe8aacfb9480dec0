#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "oracles.hpp"
#include "weightscape/graph.hpp"

using namespace weightscape;

namespace {

GraphConfig micro_config() {
  GraphConfig c;
  c.name = "micro";
  c.latent_dim = 4;
  c.num_classes = 3;
  c.embed_dim = 4;
  c.num_blocks = 2;
  c.upsample_blocks = {2};
  c.attention_after_block = 1;
  c.entry_spatial = 2;
  c.channel_schedule = {{16, 16}, {16, 8}};
  return c;
}

const GeneratorGraph& tiny_graph() {
  static const GeneratorGraph g(tiny64_config());
  return g;
}

const Checkpoint& tiny_base() {
  static const Checkpoint c = synthesize(tiny64_config(), 0, InitScheme::scaled_fan_in);
  return c;
}

Tensor latent(std::uint64_t seed, std::size_t dim) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor({dim}, rng);
}

// Reference generator assembled from the loop oracles, following the
// documented block layout step by step.
Tensor reference_forward(const GraphConfig& cfg, const Checkpoint& ck, const Tensor& z,
                         std::size_t cls) {
  auto P = [&](const std::string& n) -> const Tensor& { return ck.at(n).tensor; };
  std::vector<float> cv(z.data().begin(), z.data().end());
  for (std::size_t i = 0; i < cfg.embed_dim; ++i) cv.push_back(P("embedding.weight")[cls * cfg.embed_dim + i]);
  const Tensor cond({cv.size()}, cv);
  auto cbn = [&](const Tensor& x, const std::string& p) {
    Tensor gain = oracle::linear(cond, P(p + ".gain.weight"), P(p + ".gain.bias"));
    for (float& g : gain.data()) g += 1.0f;
    const Tensor bias = oracle::linear(cond, P(p + ".bias.weight"), P(p + ".bias.bias"));
    Tensor y = oracle::batch_norm(x, P(p + ".running_mean"), P(p + ".running_var"), gain, bias,
                                  cfg.bn_epsilon);
    for (float& v : y.data()) v = std::max(v, 0.0f);
    return y;
  };
  auto conv = [&](const Tensor& x, const std::string& p, std::size_t pad) {
    return oracle::conv2d(x, P(p + ".weight"), P(p + ".bias"), pad);
  };
  const std::size_t s = cfg.entry_spatial;
  Tensor x = oracle::linear(cond, P("entry.linear.weight"), P("entry.linear.bias"))
                 .reshaped({cfg.channel_schedule[0].in, s, s});
  for (std::size_t k = 1; k <= cfg.num_blocks; ++k) {
    const std::string p = "blocks." + std::to_string(k);
    const bool up = cfg.upsample_blocks.count(k) > 0;
    const std::size_t out = cfg.channel_schedule[k - 1].out;
    Tensor h = conv(cbn(x, p + ".bn1"), p + ".conv1", 0);
    h = cbn(h, p + ".bn2");
    if (up) h = oracle::upsample2x(h);
    h = conv(h, p + ".conv2", 1);
    h = conv(cbn(h, p + ".bn3"), p + ".conv3", 1);
    h = conv(cbn(h, p + ".bn4"), p + ".conv4", 0);
    Tensor skip({out, x.dim(1), x.dim(2)},
                std::vector<float>(x.data().begin(), x.data().begin() + out * x.dim(1) * x.dim(2)));
    if (up) skip = oracle::upsample2x(skip);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += skip[i];
    x = h;
    if (k == cfg.attention_after_block) {
      x = oracle::attention(x, P("attention.query.weight"), P("attention.key.weight"),
                            P("attention.value.weight"), P("attention.output.weight"),
                            P("attention.gamma")[0]);
    }
  }
  x = conv(cbn(x, "output.bn"), "output.conv", 1);
  for (float& v : x.data()) v = std::tanh(v);
  return x;
}

Checkpoint with_value(const Checkpoint& c, const std::string& name, float value) {
  auto entries = c.entries();
  for (auto& e : entries)
    if (e.name == name) std::fill(e.tensor.data().begin(), e.tensor.data().end(), value);
  return Checkpoint(entries, c.provenance());
}

}  // namespace

TEST(Graph, ManifestResolutions) {
  EXPECT_EQ(build_graph(tiny64_config()).output_resolution(), 64u);
  EXPECT_EQ(build_graph(paper256_config()).output_resolution(), 256u);
}

TEST(Graph, ShapeAndRange) {
  const Tensor y = forward(tiny_graph(), tiny_base(), latent(1, 16), 3);
  ASSERT_EQ(y.shape(), (Shape{3, 64, 64}));
  for (float v : y.data()) {
    ASSERT_GE(v, -1.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Graph, BlockOutputsFollowDoublingSchedule) {
  const GraphConfig& cfg = tiny_graph().config();
  std::vector<std::pair<BlockId, Shape>> seen;
  forward(tiny_graph(), tiny_base(), latent(2, 16), 0,
          [&](BlockId id, const Tensor& t) { seen.emplace_back(id, t.shape()); });
  ASSERT_EQ(seen.size(), cfg.num_blocks + 3);
  EXPECT_EQ(seen[0].first, BlockId::entry());
  EXPECT_EQ(seen[0].second, (Shape{256, 8, 8}));
  const std::vector<std::size_t> spatial = {8, 16, 16, 32, 32, 64, 64};
  std::size_t i = 1;
  for (std::size_t k = 1; k <= cfg.num_blocks; ++k, ++i) {
    EXPECT_EQ(seen[i].first, BlockId::block(k));
    EXPECT_EQ(seen[i].second,
              (Shape{cfg.channel_schedule[k - 1].out, spatial[k - 1], spatial[k - 1]}));
    if (k == cfg.attention_after_block) {
      ++i;
      EXPECT_EQ(seen[i].first, BlockId::attention());
      EXPECT_EQ(seen[i].second, seen[i - 1].second);
    }
  }
  EXPECT_EQ(seen.back().first, BlockId::output());
  EXPECT_EQ(seen.back().second, (Shape{3, 64, 64}));
}

TEST(Graph, MatchesOracleComposition) {
  const GraphConfig cfg = micro_config();
  const GeneratorGraph graph(cfg);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Checkpoint ck = synthesize(cfg, seed, InitScheme::unit_normal);
    auto entries = ck.entries();
    std::mt19937_64 rng(seed);
    for (auto& e : entries) {
      if (e.kind == ParamKind::bn_running_mean) e.tensor = oracle::random_tensor(e.tensor.shape(), rng, 0.1);
      if (e.kind == ParamKind::bn_running_var)
        for (float& v : e.tensor.data()) v = 0.5f + static_cast<float>(rng() % 100) / 100.0f;
      if (e.kind != ParamKind::bn_running_var && e.kind != ParamKind::bn_running_mean &&
          e.kind != ParamKind::embedding)
        for (float& v : e.tensor.data()) v *= 0.3f;
    }
    ck = Checkpoint(entries);
    const Tensor z = latent(seed + 100, cfg.latent_dim);
    const std::size_t cls = seed % cfg.num_classes;
    const Tensor got = forward(graph, ck, z, cls);
    const Tensor want = reference_forward(cfg, ck, z, cls);
    EXPECT_LT(oracle::max_abs_diff(got, want), 1e-4) << "seed " << seed;
  }
}

TEST(Graph, Deterministic) {
  const Tensor z = latent(3, 16);
  EXPECT_EQ(forward(tiny_graph(), tiny_base(), z, 1), forward(tiny_graph(), tiny_base(), z, 1));
}

TEST(Graph, ClassAndLatentMatter) {
  const Tensor z = latent(4, 16);
  const Tensor a = forward(tiny_graph(), tiny_base(), z, 1);
  EXPECT_NE(a, forward(tiny_graph(), tiny_base(), z, 2));
  EXPECT_NE(a, forward(tiny_graph(), tiny_base(), latent(5, 16), 1));
}

TEST(Graph, EntryOrderDoesNotMatter) {
  auto entries = tiny_base().entries();
  std::reverse(entries.begin(), entries.end());
  const Checkpoint shuffled(entries);
  const Tensor z = latent(6, 16);
  EXPECT_EQ(forward(tiny_graph(), shuffled, z, 0), forward(tiny_graph(), tiny_base(), z, 0));
}

TEST(Graph, ZeroGammaMakesAttentionInert) {
  const Checkpoint c = with_value(tiny_base(), "attention.gamma", 0.0f);
  const Checkpoint other = with_value(c, "attention.query.weight", 3.0f);
  const Tensor z = latent(7, 16);
  EXPECT_EQ(forward(tiny_graph(), c, z, 0), forward(tiny_graph(), other, z, 0));
}

TEST(Graph, FrozenReferenceOutput) {
  std::ifstream in(std::string(WEIGHTSCAPE_TEST_DATA) + "/tiny64_seed0_z0_c0.f32", std::ios::binary);
  ASSERT_TRUE(in) << "missing frozen reference; run record_golden";
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  ASSERT_EQ(bytes.size(), 3u * 64 * 64 * 4);
  const Tensor y = forward(tiny_graph(), tiny_base(), Tensor({16}), 0);
  double worst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    worst = std::max(worst, std::abs(double(y[i]) - std::bit_cast<float>(bits)));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Graph, RejectsMismatchedCheckpoints) {
  auto entries = tiny_base().entries();
  entries.pop_back();
  const Checkpoint missing(entries);
  EXPECT_THROW(forward(tiny_graph(), missing, Tensor({16}), 0), ManifestError);
  const auto problems = manifest_mismatches(tiny_graph().manifest(), missing);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_NE(problems[0].find("output.conv.bias"), std::string::npos);

  entries = tiny_base().entries();
  entries[0].tensor = Tensor({10, 31});
  EXPECT_THROW(forward(tiny_graph(), Checkpoint(entries), Tensor({16}), 0), ManifestError);

  entries = tiny_base().entries();
  entries[0].block = BlockId::output();
  EXPECT_THROW(forward(tiny_graph(), Checkpoint(entries), Tensor({16}), 0), ManifestError);

  EXPECT_THROW(forward(tiny_graph(), tiny_base(), Tensor({15}), 0), ShapeError);
  EXPECT_THROW(forward(tiny_graph(), tiny_base(), Tensor({16}), 10), ShapeError);
}

TEST(Graph, ConditionalGainIsOnePlusProjection) {
  const Tensor w({2, 3}, std::vector<float>{1, 0, 0, 0, 1, 0});
  const Tensor b({2}, std::vector<float>{0.5f, 0.0f});
  const auto cond = make_conditioning(Tensor({2}, std::vector<float>{2, 3}), Tensor({1}, 4.0f));
  ASSERT_EQ(cond.values.size(), 3u);
  auto [gain, bias] = conditional_gain_bias(cond, {w, b, w, b});
  EXPECT_EQ(gain[0], 3.5f);
  EXPECT_EQ(gain[1], 4.0f);
  EXPECT_EQ(bias[0], 2.5f);
  EXPECT_EQ(bias[1], 3.0f);
}

TEST(Graph, JsonConfigFromConfigsDirectory) {
  const GraphConfig cfg = load_config(std::string(WEIGHTSCAPE_CONFIG_DIR) + "/micro32.json");
  EXPECT_EQ(cfg.name, "micro32");
  const GeneratorGraph graph(cfg);
  EXPECT_EQ(graph.output_resolution(), 32u);
  const Checkpoint ck = synthesize(cfg, 1, InitScheme::scaled_fan_in);
  EXPECT_EQ(forward(graph, ck, latent(1, cfg.latent_dim), 9).shape(), (Shape{3, 32, 32}));
}
