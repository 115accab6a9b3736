#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <future>

#include "atomchip/export.hpp"
#include "atomchip/service.hpp"
#include "fixtures.hpp"
#include "httplib.h"

using namespace atomchip;
using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

const json kDisk = {{"kind", "stamp"},
                    {"shape", {{"type", "disk"}, {"center_um", {0, 0}}, {"radius_um", 276.917227}}},
                    {"write_field_sign", -1},
                    {"beam_power_mW", 20}};

const json kTrapRegion = {{"min_um", {-400, -400, 50}}, {"max_um", {400, 400, 500}}};

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ServiceOptions o;
    o.port = 0;
    o.stream_port = 0;
    service = std::make_unique<Service>(o);
    service->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", service->http_port());
    client->set_read_timeout(120, 0);
  }

  void TearDown() override {
    client.reset();
    service->stop();
  }

  json post(const std::string& path, const json& body, int expect) {
    auto r = client->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r) << path;
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
  }

  json put(const std::string& path, const json& body, int expect) {
    auto r = client->Put(path, body.dump(), "application/json");
    EXPECT_TRUE(r) << path;
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
  }

  // Session with the reversed disk and a 60 uT opposing bias.
  std::string disk_session() {
    const json created = post("/api/session", {{"mot", {{"beam_center_um", {0, 0, 202.66}}}}}, 201);
    const std::string id = created["id"];
    EXPECT_EQ(created["revision"], 0);
    post("/api/session/" + id + "/edits", {{"base_revision", 0}, {"edits", {kDisk}}}, 200);
    put("/api/session/" + id + "/bias", {{"base_revision", 1}, {"bias", {{"static_uT", {0, 0, 60}}}}}, 200);
    return id;
  }

  std::unique_ptr<Service> service;
  std::unique_ptr<httplib::Client> client;
};

class StreamClient {
 public:
  explicit StreamClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    connected_ = ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0;
  }
  ~StreamClient() { close(); }

  bool connected() const { return connected_; }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void send_raw(const std::string& body) {
    const std::uint32_t n = static_cast<std::uint32_t>(body.size());
    const unsigned char head[4] = {static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16),
                                   static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
    ASSERT_EQ(::send(fd_, head, 4, MSG_NOSIGNAL), 4);
    ASSERT_EQ(::send(fd_, body.data(), body.size(), MSG_NOSIGNAL), static_cast<ssize_t>(body.size()));
  }

  void send(const json& msg) { send_raw(msg.dump()); }

  std::optional<json> next(std::chrono::milliseconds timeout = 20s) {
    unsigned char head[4];
    if (!read(reinterpret_cast<char*>(head), 4, timeout)) return std::nullopt;
    const std::uint32_t n = (std::uint32_t(head[0]) << 24) | (std::uint32_t(head[1]) << 16) |
                            (std::uint32_t(head[2]) << 8) | std::uint32_t(head[3]);
    std::string body(n, '\0');
    if (!read(body.data(), n, timeout)) return std::nullopt;
    return json::parse(body);
  }

  // Skips messages until one of the given type arrives.
  std::optional<json> until(const std::string& type, std::chrono::milliseconds timeout = 30s) {
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < end) {
      auto m = next(std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now()));
      if (!m) return std::nullopt;
      if ((*m)["type"] == type) return m;
    }
    return std::nullopt;
  }

 private:
  bool read(char* dst, std::size_t n, std::chrono::milliseconds timeout) {
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (n > 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now());
      if (left.count() <= 0) return false;
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return false;
      const ssize_t k = ::recv(fd_, dst, n, 0);
      if (k <= 0) return false;
      dst += k;
      n -= static_cast<std::size_t>(k);
    }
    return true;
  }

  int fd_ = -1;
  bool connected_ = false;
};

json run_spec(int count = 8) {
  return {{"region", {{"min_um", {-300, -300, 50}}, {"max_um", {300, 300, 500}}}},
          {"ensemble",
           {{"count", count}, {"position_mean_um", {0, 0, 202.66}}, {"position_sigma_um", {20, 20, 20}}}},
          {"dt_us", 10},
          {"frame_interval_ms", 20},
          {"seed", 3}};
}

}  // namespace

TEST_F(ServiceTest, SessionEditsBiasAndTraps) {
  const std::string id = disk_session();
  const json got = json::parse(client->Get("/api/session/" + id)->body);
  EXPECT_EQ(got["revision"], 2);
  EXPECT_EQ(got["scenario"]["edits"].size(), 1u);

  const json traps = post("/api/session/" + id + "/traps", {{"region", kTrapRegion}}, 200);
  EXPECT_EQ(traps["revision"], 2);
  ASSERT_EQ(traps["traps"].size(), 1u);
  const auto& t = traps["traps"][0];
  EXPECT_EQ(t["class"], "quadrupole_3d");
  const double z = t["position_m"][2];
  EXPECT_NEAR(z, 200e-6, 10e-6);
  const auto direct = find_zeros(atomchip::testing::fig3h_source(), atomchip::testing::box({-400e-6, -400e-6, 50e-6}, {400e-6, 400e-6, 500e-6}), 0.0);
  EXPECT_NEAR(z, direct.at(0).position.z(), 1e-12);
}

TEST_F(ServiceTest, StaleRevisionConflicts) {
  const std::string id = disk_session();
  const json edit = {{"base_revision", 2}, {"edits", {kDisk}}};
  auto a = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", service->http_port());
    return c.Post("/api/session/" + id + "/edits", edit.dump(), "application/json")->status;
  });
  auto b = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", service->http_port());
    return c.Post("/api/session/" + id + "/edits", edit.dump(), "application/json")->status;
  });
  const int sa = a.get(), sb = b.get();
  EXPECT_EQ(std::min(sa, sb), 200);
  EXPECT_EQ(std::max(sa, sb), 409);

  const json conflict = put("/api/session/" + id + "/bias", {{"base_revision", 1}, {"bias", {{"static_uT", {0, 0, 1}}}}}, 409);
  EXPECT_EQ(conflict["revision"], 3);
  EXPECT_EQ(conflict["error"]["field"], "base_revision");
  // Without a base revision the write is last-writer-wins.
  EXPECT_EQ(put("/api/session/" + id + "/bias", {{"bias", {{"static_uT", {0, 0, 50}}}}}, 200)["revision"], 4);
}

TEST_F(ServiceTest, ErrorsCarryStatusAndField) {
  EXPECT_EQ(client->Get("/api/session/abc123")->status, 404);
  EXPECT_EQ(client->Post("/api/session/abc123/edits", R"({"edits": []})", "application/json")->status, 404);
  const std::string id = disk_session();
  json e = post("/api/session/" + id + "/edits", {{"edits", {{{"shape", {{"type", "disk"}}}}}}}, 422);
  EXPECT_EQ(e["error"]["field"].get<std::string>().rfind("edits[0]", 0), 0u);
  e = post("/api/session/" + id + "/traps", {{"region", {{"min_um", {-1, -1, 0.1}}, {"max_um", {1, 1, 100}}}}}, 422);
  EXPECT_TRUE(e["error"].contains("message"));
  e = post("/api/session/" + id + "/grid", {{"z_um", 200}, {"x_um", {0, 1}}, {"y_um", {0, 1}}, {"nx", 3000}, {"ny", 3000}},
           422);
  EXPECT_EQ(e["error"]["field"], "nx");
  e = post("/api/session/" + id + "/transport", {{"region", kTrapRegion}}, 422);
  EXPECT_EQ(client->Post("/api/session", "{not json", "application/json")->status, 422);
  e = post("/api/session", {{"film", {{"cell_size_um", -2}}}}, 422);
  EXPECT_EQ(e["error"]["field"].get<std::string>().rfind("film", 0), 0u);
}

TEST_F(ServiceTest, GridMatchesDirectComputation) {
  const std::string id = disk_session();
  const json req = {{"z_um", 200}, {"x_um", {-300, 300}}, {"y_um", {-200, 200}}, {"nx", 7}, {"ny", 5}};
  const json g = post("/api/session/" + id + "/grid", req, 200);
  EXPECT_EQ(g["width"], 7);
  EXPECT_EQ(g["height"], 5);
  // Reference built from the session's own document (the disk radius is
  // rounded there).
  const Scenario doc = scenario_from_json(json::parse(client->Get("/api/session/" + id)->body)["scenario"]);
  const auto pattern = build_pattern(doc);
  const auto src = build_source(doc, pattern);
  const GridSpec spec{-300e-6, 300e-6, 7, -200e-6, 200e-6, 5};
  const auto direct = field_grid(src, 200e-6, spec, 0.0);
  for (std::size_t k = 0; k < direct.B.size(); ++k) {
    EXPECT_EQ(g["Bx"][k].get<double>(), direct.B[k].x());
    EXPECT_EQ(g["Bz"][k].get<double>(), direct.B[k].z());
  }

  httplib::Headers accept{{"Accept", "application/octet-stream"}};
  auto bin = client->Post("/api/session/" + id + "/grid", accept, req.dump(), "application/json");
  ASSERT_TRUE(bin);
  EXPECT_EQ(bin->status, 200);
  EXPECT_EQ(bin->get_header_value("X-Revision"), "2");
  EXPECT_EQ(bin->body, grid_binary(direct, 0.0));

  json spectral = req;
  spectral["backend"] = "spectral";
  const json s = post("/api/session/" + id + "/grid", spectral, 200);
  const std::size_t centre = 2 * 7 + 3;
  EXPECT_NEAR(s["Bz"][centre].get<double>(), direct.B[centre].z(), 3e-6);
}

TEST_F(ServiceTest, FaradayImageAndLogReplay) {
  const std::string id = disk_session();
  auto img = client->Get("/api/session/" + id + "/faraday");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->body.substr(0, 3), "P5\n");
  EXPECT_EQ(img->body, faraday_pgm(atomchip::testing::disk_pattern()));

  const json log = json::parse(client->Get("/api/session/" + id + "/log")->body);
  EXPECT_EQ(log["revision"], 2);
  ASSERT_EQ(log["mutations"].size(), 2u);
  Scenario replayed = scenario_from_json(log["initial"]);
  for (const auto& m : log["mutations"]) apply_mutation(replayed, m);
  const json current = json::parse(client->Get("/api/session/" + id)->body);
  EXPECT_TRUE(replayed == scenario_from_json(current["scenario"]));
}

TEST_F(ServiceTest, TransportEndpoint) {
  const json created = post("/api/session", json::object(), 201);
  const std::string id = created["id"];
  post("/api/session/" + id + "/edits",
       {{"edits",
         {{{"shape", {{"type", "annulus"}, {"center_um", {0, 0}}, {"r_inner_um", 700}, {"r_outer_um", 1000}}},
           {"write_field_sign", -1},
           {"beam_power_mW", 20}}}}},
       200);
  put("/api/session/" + id + "/bias",
      {{"bias",
        {{"static_uT", {0, 0, 40}},
         {"modulation",
          {{"amplitude_uT", {27, 27, 0}}, {"angular_frequency_rad_s", 2 * constants::pi}, {"phase_rad", {0, constants::pi / 2, 0}}}}}}},
      200);
  const json r = post("/api/session/" + id + "/transport",
                      {{"region", {{"min_um", {-1500, -1500, 20}}, {"max_um", {1500, 1500, 800}}, {"seeds", {6, 6, 3}}}},
                       {"samples", 8}},
                      200);
  EXPECT_DOUBLE_EQ(r["period_s"].get<double>(), 1.0);
  EXPECT_TRUE(r["lost_at"].is_null());
  EXPECT_EQ(r["samples"].size(), 8u);
}

TEST_F(ServiceTest, StreamPauseFreezesTime) {
  const std::string id = disk_session();
  StreamClient s(service->stream_port());
  ASSERT_TRUE(s.connected());
  s.send({{"type", "start"}, {"session", id}, {"run", run_spec()}});
  auto started = s.until("started");
  ASSERT_TRUE(started);
  EXPECT_EQ((*started)["revision"], 2);
  auto f1 = s.until("frame");
  ASSERT_TRUE(f1);
  EXPECT_EQ((*f1)["atom_count"], 8);
  ASSERT_EQ((*f1)["traps_m"].size(), 1u);
  EXPECT_NEAR((*f1)["traps_m"][0][2].get<double>(), 202.66e-6, 0.1e-6);
  auto f2 = s.until("frame");
  ASSERT_TRUE(f2);
  EXPECT_GT((*f2)["sim_time_s"].get<double>(), (*f1)["sim_time_s"].get<double>());

  s.send({{"type", "pause"}});
  auto paused = s.until("paused");
  ASSERT_TRUE(paused);
  const double frozen = (*paused)["sim_time_s"];
  for (int k = 0; k < 3; ++k) {
    auto f = s.until("frame");
    ASSERT_TRUE(f);
    EXPECT_TRUE((*f)["paused"].get<bool>());
    EXPECT_EQ((*f)["sim_time_s"].get<double>(), frozen);
  }
  s.send({{"type", "resume"}});
  ASSERT_TRUE(s.until("resumed"));
  double later = frozen;
  for (int k = 0; k < 5 && later == frozen; ++k) later = (*s.until("frame"))["sim_time_s"];
  EXPECT_GT(later, frozen);
}

TEST_F(ServiceTest, StreamBiasChangeMovesTrap) {
  const std::string id = disk_session();
  StreamClient s(service->stream_port());
  s.send({{"type", "start"}, {"session", id}, {"run", run_spec(4)}});
  ASSERT_TRUE(s.until("frame"));
  s.send({{"type", "set-bias"}, {"static_uT", {0, 0, 50}}});
  auto applied = s.until("bias-applied");
  ASSERT_TRUE(applied);
  auto f = s.until("frame");
  ASSERT_TRUE(f);
  EXPECT_NEAR((*f)["bias_uT"][2].get<double>(), 50.0, 1e-9);

  const auto src = make_source(atomchip::testing::disk_pattern(), BiasField{{0, 0, 50e-6}, {}});
  const auto expected = find_zeros(src, atomchip::testing::box({-300e-6, -300e-6, 50e-6}, {300e-6, 300e-6, 500e-6}), 0.0);
  ASSERT_EQ(expected.size(), 1u);
  ASSERT_EQ((*f)["traps_m"].size(), 1u);
  EXPECT_NEAR((*f)["traps_m"][0][2].get<double>(), expected[0].position.z(), 1e-9);
  // The session itself is unchanged.
  EXPECT_EQ(json::parse(client->Get("/api/session/" + id)->body)["revision"], 2);
}

TEST_F(ServiceTest, StreamRejectsMalformedControls) {
  const std::string id = disk_session();
  StreamClient s(service->stream_port());
  s.send_raw("{oops");
  auto e = s.until("error");
  ASSERT_TRUE(e);
  s.send({{"type", "pause"}});
  e = s.until("error");
  ASSERT_TRUE(e);
  EXPECT_EQ((*e)["field"], "type");
  s.send({{"type", "start"}, {"session", "ffff"}, {"run", run_spec()}});
  e = s.until("error");
  ASSERT_TRUE(e);
  EXPECT_EQ((*e)["field"], "session");
  json bad = run_spec();
  bad["dt_us"] = -1;
  s.send({{"type", "start"}, {"session", id}, {"run", bad}});
  e = s.until("error");
  ASSERT_TRUE(e);
  EXPECT_EQ((*e)["field"], "run.dt_us");
  // The connection stays usable.
  s.send({{"type", "start"}, {"session", id}, {"run", run_spec(2)}});
  EXPECT_TRUE(s.until("frame"));
}

TEST_F(ServiceTest, NewerStartPreemptsAndDisconnectReleases) {
  const std::string id = disk_session();
  {
    StreamClient first(service->stream_port());
    first.send({{"type", "start"}, {"session", id}, {"run", run_spec(2)}});
    ASSERT_TRUE(first.until("frame"));
    StreamClient second(service->stream_port());
    second.send({{"type", "start"}, {"session", id}, {"run", run_spec(2)}});
    ASSERT_TRUE(second.until("frame"));
    auto stopped = first.until("stopped");
    ASSERT_TRUE(stopped);
    second.close();
    first.close();
  }
  // Dropped connections do not hold up a new stream or shutdown.
  StreamClient again(service->stream_port());
  again.send({{"type", "start"}, {"session", id}, {"run", run_spec(2)}});
  EXPECT_TRUE(again.until("frame"));
  again.close();
  const auto t0 = std::chrono::steady_clock::now();
  service->stop();
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 5s);
}

TEST(SessionStore, ReadersSeeConsistentSnapshots) {
  SessionStore store;
  const std::string id = store.create(Scenario{});
  auto before = store.get(id);
  store.append_edits(id, {atomchip::testing::stamp(Disk{{0, 0}, 100e-6})}, 0);
  auto after = store.get(id);
  EXPECT_EQ(before->revision, 0u);
  EXPECT_TRUE(before->scenario.edits.empty());
  EXPECT_EQ(after->revision, 1u);
  EXPECT_EQ(after->pattern->edit_log().size(), 1u);
  EXPECT_THROW(store.append_edits(id, {}, 0), RevisionConflict);
  EXPECT_THROW(store.get("nope"), SessionNotFound);
}
