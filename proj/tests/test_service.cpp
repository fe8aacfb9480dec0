#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "png_reader.hpp"
#include "weightscape/service.hpp"

using namespace weightscape;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "ws_service_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    base_path_ = (dir_ / "base.wsx").string();
    save_checkpoint(synthesize(tiny64_config(), 0, InitScheme::scaled_fan_in), base_path_);
    ServiceOptions options;
    options.base = base_path_;
    options.gallery_dir = dir_ / "gallery";
    service_ = new ExplorationService(options);
    server_ = new httplib::Server;
    service_->mount(*server_);
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = new std::thread([] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  static void TearDownTestSuite() {
    server_->stop();
    thread_->join();
    delete thread_;
    delete server_;
    delete service_;
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

  json post(const std::string& path, const json& body, int expect = 200) {
    auto res = client().Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << ": " << res->body;
    return json::parse(res->body);
  }

  std::string new_session() { return post("/sessions", json::object())["session_id"]; }

  static inline fs::path dir_;
  static inline std::string base_path_;
  static inline ExplorationService* service_ = nullptr;
  static inline httplib::Server* server_ = nullptr;
  static inline std::thread* thread_ = nullptr;
  static inline int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, Health) {
  auto res = client().Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["status"], "ok");
}

TEST_F(ServiceTest, RenderIsDeterministicAndCompareColumnMatchesBase) {
  const std::string sid = new_session();
  post("/sessions/" + sid + "/plan", {{"mode", "multiplicative"}, {"alpha", 0.0}, {"seed", 3}});
  const json r = post("/sessions/" + sid + "/render", {{"classes", {1}}, {"latent_seed", 2}});
  EXPECT_EQ(r["columns"], json({"derived", "base"}));
  auto a = client().Get("/grids/" + r["grid_id"].get<std::string>() + ".png");
  auto b = client().Get("/grids/" + r["grid_id"].get<std::string>() + ".png");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(a->body, b->body);
  const auto img = testpng::decode(a->body);
  ASSERT_EQ(img.width, 128u);
  ASSERT_EQ(img.height, 64u);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64 * 3; ++x)
      ASSERT_EQ(img.rgb[y * 128 * 3 + x], img.rgb[y * 128 * 3 + 64 * 3 + x]);

  // a second session with the same inputs gets the same grid id
  const std::string other = new_session();
  post("/sessions/" + other + "/plan", {{"mode", "multiplicative"}, {"alpha", 0.0}, {"seed", 3}});
  EXPECT_EQ(post("/sessions/" + other + "/render", {{"classes", {1}}, {"latent_seed", 2}})["grid_id"],
            r["grid_id"]);
}

TEST_F(ServiceTest, ProvenanceAndSessionState) {
  const std::string sid = new_session();
  post("/sessions/" + sid + "/plan", {{"mode", "block_randomize"}, {"blocks", {"B3"}}, {"seed", 1}});
  const json r = post("/sessions/" + sid + "/render", {{"classes", {0}}, {"latent_seed", 1}});
  auto prov = client().Get("/grids/" + r["grid_id"].get<std::string>() + "/provenance");
  ASSERT_TRUE(prov);
  const json record = json::parse(prov->body);
  EXPECT_EQ(record["plan"], PerturbationPlan::block_randomize({BlockId::block(3)}, 1).to_text());
  auto state = client().Get("/sessions/" + sid);
  ASSERT_TRUE(state);
  EXPECT_EQ(json::parse(state->body)["history"].size(), 1u);
}

TEST_F(ServiceTest, LockLatentPinsTheRow) {
  const std::string sid = new_session();
  post("/sessions/" + sid + "/lock-latent", {{"latent_seed", 6}, {"index", 2}});
  const json r = post("/sessions/" + sid + "/render", {{"classes", {4}}, {"latent_seed", 99}, {"count", 3}});
  EXPECT_EQ(r["rows"], 1);
  const RenderRecord record = service_->grid_record(r["grid_id"]);
  EXPECT_EQ(record.latent_seed, 6u);
  EXPECT_EQ(record.latent_offset, 2u);
  EXPECT_EQ(record.latent_count, 1u);
}

TEST_F(ServiceTest, SavedPickReplaysThroughCli) {
  const std::string sid = new_session();
  post("/sessions/" + sid + "/plan", {{"mode", "multiplicative"}, {"alpha", 0.35}, {"seed", 4}});
  const json r = post("/sessions/" + sid + "/render", {{"classes", {2}}, {"latent_seed", 3}, {"count", 2}});
  const json pick = post("/sessions/" + sid + "/save", {{"grid_id", r["grid_id"]}, {"tile", {{"row", 1}, {"col", 0}}}});
  const fs::path pick_json = dir_ / "gallery" / (pick["pick_id"].get<std::string>() + ".json");
  const fs::path pick_png = dir_ / "gallery" / (pick["pick_id"].get<std::string>() + ".png");
  ASSERT_TRUE(fs::exists(pick_json));
  const fs::path out = dir_ / "replayed.png";
  const std::string cmd = std::string(WEIGHTSCAPE_CLI) + " replay --pick " + pick_json.string() +
                          " --out " + out.string() + " > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(in), {}};
  };
  EXPECT_EQ(read(out), read(pick_png));

  auto gallery = client().Get("/gallery");
  ASSERT_TRUE(gallery);
  bool found = false;
  const json picks = json::parse(gallery->body)["picks"];
  for (const auto& p : picks) found |= p["pick_id"] == pick["pick_id"];
  EXPECT_TRUE(found) << gallery->body;
}

TEST_F(ServiceTest, ErrorsCarryCodeMessageDetail) {
  auto check = [](const httplib::Result& res, int status, const std::string& code) {
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, status) << res->body;
    const json body = json::parse(res->body);
    EXPECT_EQ(body["code"], code) << res->body;
    EXPECT_TRUE(body.contains("message"));
    EXPECT_TRUE(body.contains("detail"));
  };
  auto c = client();
  check(c.Get("/sessions/nope"), 404, "unknown_session");
  check(c.Get("/grids/0123abcd.png"), 404, "unknown_grid");
  check(c.Post("/sessions", "{not json", "application/json"), 400, "bad_json");
  check(c.Post("/sessions", R"({"base":"/no/such/file.wsx"})", "application/json"), 404, "unknown_base");
  const std::string sid = new_session();
  check(c.Post("/sessions/" + sid + "/plan", R"({"mode":"sideways"})", "application/json"), 422, "invalid_plan");
  check(c.Post("/sessions/" + sid + "/plan", R"({"mode":"block_randomize","blocks":["B12"]})", "application/json"),
        422, "invalid_plan");
  check(c.Post("/sessions/" + sid + "/plan", R"({"mode":"multiplicative","alpha":-1})", "application/json"),
        422, "invalid_plan");
  check(c.Post("/sessions/" + sid + "/render", R"({"classes":[0]})", "application/json"), 400, "bad_request");
  check(c.Post("/sessions/" + sid + "/render", R"({"classes":[42],"latent_seed":1})", "application/json"), 422,
        "bad_class");
  check(c.Post("/sessions/" + sid + "/save", R"({"grid_id":"ffff"})", "application/json"), 404, "unknown_grid");
}
