#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <filesystem>
#include <fstream>

#include "goalnca/steer.hpp"

using namespace goalnca;
namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

const std::vector<std::string> kGoals = {"stay", "up", "down", "left", "right"};

SteerModel small_model() {
  RngStream rng(9);
  SteerModel m;
  m.nca = init_nca_params<float>(8, rng);
  for (auto& v : m.nca.w3) v = static_cast<float>((rng.uniform() - 0.5) * 0.02);
  m.encoder = init_goal_encoder<float>(EncoderKind::embedding, 5, 4, rng, 0.05);
  m.goal_names = kGoals;
  return m;
}

json reply_of(const SessionState& s, const std::string& text, SessionState* out = nullptr) {
  auto t = handle_message(s, text, kGoals);
  if (out) *out = t.state;
  return t.reply;
}

}  // namespace

TEST(HandleMessage, SetGoal) {
  SessionState s, next;
  const auto r = reply_of(s, R"({"type":"set_goal","goal":"left"})", &next);
  EXPECT_EQ(r["type"], "state");
  EXPECT_EQ(r["goal"], "left");
  EXPECT_EQ(next.goal, 3);
}

TEST(HandleMessage, PauseAndIdempotentResume) {
  SessionState s, next;
  reply_of(s, R"({"type":"pause"})", &next);
  EXPECT_FALSE(next.running);
  const auto r = reply_of(s, R"({"type":"resume"})", &next);
  EXPECT_TRUE(next.running);
  EXPECT_EQ(r["type"], "state");
  EXPECT_EQ(r["running"], true);
  EXPECT_EQ(next, s);
}

TEST(HandleMessage, RatesValidated) {
  SessionState s, next;
  auto r = reply_of(s, R"({"type":"set_fire_rate","value":1.5})", &next);
  EXPECT_EQ(r["type"], "error");
  EXPECT_EQ(r["message"], "value out of [0,1]");
  EXPECT_EQ(next, s);
  r = reply_of(s, R"({"type":"set_goal_rate","value":0.25})", &next);
  EXPECT_EQ(r["goal_rate"], 0.25);
  EXPECT_EQ(next.goal_rate, 0.25);
  r = reply_of(s, R"({"type":"set_fire_rate","value":"high"})", &next);
  EXPECT_EQ(r["type"], "error");
  EXPECT_EQ(next, s);
}

TEST(HandleMessage, BadInputLeavesStateAlone) {
  SessionState s;
  s.goal = 2;
  for (const char* text : {"{not json", R"({"type":"teleport"})", R"({"goal":"up"})", "[1,2]",
                           R"({"type":"set_goal","goal":"north"})"}) {
    SessionState next;
    const auto r = reply_of(s, text, &next);
    EXPECT_EQ(r["type"], "error") << text;
    EXPECT_EQ(next, s) << text;
  }
}

TEST(HandleMessage, ResetRestartsCounter) {
  SessionState s;
  s.step = 500;
  auto t = handle_message(s, R"({"type":"reset"})", kGoals);
  EXPECT_TRUE(t.reset);
  EXPECT_EQ(t.state.step, 0);
  EXPECT_EQ(t.reply["type"], "state");
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  auto enc = [](std::string s) {
    return base64_encode(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  EXPECT_EQ(enc("Man"), "TWFu");
  EXPECT_EQ(enc("Ma"), "TWE=");
  EXPECT_EQ(enc("M"), "TQ==");
  EXPECT_EQ(enc(""), "");
  RngStream rng(1);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    EXPECT_EQ(base64_decode(base64_encode(v)), v);
  }
}

TEST(Simulation, ResetShowsSeedAndFrameSize) {
  Simulation sim(small_model(), 16);
  for (int i = 0; i < 5; ++i) sim.advance();
  EXPECT_EQ(sim.state().step, 5);
  auto t = sim.apply(R"({"type":"reset"})");
  EXPECT_TRUE(t.reset);
  EXPECT_EQ(sim.state().step, 0);
  EXPECT_EQ(sim.grid(), new_seed<float>(16, 16, 4));
  const auto f = sim.frame();
  EXPECT_EQ(f["step"], 0);
  EXPECT_EQ(base64_decode(f["rgba"].get<std::string>()).size(), 4u * 16 * 16);
}

TEST(Address, Parsing) {
  EXPECT_EQ(parse_address("127.0.0.1:8080"), (std::pair<std::string, unsigned short>{"127.0.0.1", 8080}));
  EXPECT_THROW(parse_address("localhost"), config_error);
  EXPECT_THROW(parse_address("h:99999"), config_error);
  EXPECT_THROW(parse_address(":80"), config_error);
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    static_dir_ = std::filesystem::temp_directory_path() / "goalnca_static";
    std::filesystem::create_directories(static_dir_);
    std::ofstream(static_dir_ / "index.html") << "<html>steer</html>";
    ServeConfig sc;
    sc.port = 0;
    sc.grid_size = 24;
    sc.sim_rate = 200;
    sc.frame_rate = 40;
    sc.static_dir = static_dir_;
    server_ = std::make_unique<SteerServer>(small_model(), sc);
    server_->start();
  }
  void TearDown() override { server_->stop(); }

  http::response<http::string_body> get(const std::string& target) {
    net::io_context ioc;
    tcp::resolver resolver(ioc);
    beast::tcp_stream stream(ioc);
    stream.connect(resolver.resolve("127.0.0.1", std::to_string(server_->port())));
    http::request<http::empty_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "127.0.0.1");
    http::write(stream, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    return res;
  }

  std::filesystem::path static_dir_;
  std::unique_ptr<SteerServer> server_;
};

TEST_F(ServerTest, HealthAndStatic) {
  auto res = get("/health");
  EXPECT_EQ(res.result(), http::status::ok);
  const auto j = json::parse(res.body());
  EXPECT_EQ(j["status"], "ok");
  EXPECT_TRUE(j["step"].is_number_integer());
  res = get("/");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res.body(), "<html>steer</html>");
  EXPECT_EQ(get("/missing.js").result(), http::status::not_found);
}

TEST_F(ServerTest, WebSocketProtocol) {
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  websocket::stream<tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server_->port())));
  ws.handshake("127.0.0.1", "/ws");

  auto next = [&] {
    beast::flat_buffer buf;
    ws.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  };
  // Frames arrive with strictly increasing steps.
  long long last = -1;
  for (int i = 0; i < 5; ++i) {
    const auto f = next();
    ASSERT_EQ(f["type"], "frame");
    EXPECT_GT(f["step"].get<long long>(), last);
    last = f["step"];
    EXPECT_EQ(base64_decode(f["rgba"].get<std::string>()).size(),
              4u * f["width"].get<std::size_t>() * f["height"].get<std::size_t>());
  }
  auto await_reply = [&](const std::string& msg) {
    ws.write(net::buffer(msg));
    for (int i = 0; i < 200; ++i) {
      auto m = next();
      if (m["type"] != "frame") return m;
    }
    return json{};
  };
  auto r = await_reply(R"({"type":"set_goal","goal":"up"})");
  EXPECT_EQ(r["type"], "state");
  EXPECT_EQ(r["goal"], "up");
  r = await_reply("{oops");
  EXPECT_EQ(r["type"], "error");
  r = await_reply(R"({"type":"set_fire_rate","value":1.5})");
  EXPECT_EQ(r["message"], "value out of [0,1]");
  // Connection survives errors; reset yields a step-0 seed frame next.
  r = await_reply(R"({"type":"reset"})");
  EXPECT_EQ(r["type"], "state");
  auto f = next();
  ASSERT_EQ(f["type"], "frame");
  EXPECT_EQ(f["step"], 0);
  const auto px = base64_decode(f["rgba"].get<std::string>());
  const auto seed_px = render_frame(new_seed<float>(24, 24, 4)).pixels;
  EXPECT_EQ(px, seed_px);
  ws.close(websocket::close_code::normal);
}

TEST(Server, BindFailureIsReported) {
  ServeConfig sc;
  sc.port = 0;
  sc.grid_size = 8;
  SteerServer a(small_model(), sc);
  sc.port = a.port();
  EXPECT_THROW(SteerServer(small_model(), sc), io_error);
}
