#pragma once

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "goalnca/error.hpp"
#include "goalnca/eval.hpp"
#include "goalnca/model.hpp"
#include "goalnca/store.hpp"

namespace goalnca {

using nlohmann::json;

/// Control state shared by every connected client. The grid itself lives in
/// the simulation loop.
struct SessionState {
  int goal = 0;
  double fire_rate = 1.0;
  double goal_rate = 1.0;
  double steps_per_second = 60.0;
  bool running = true;
  long long step = 0;

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

struct Transition {
  SessionState state;
  json reply;
  bool reset = false;
};

inline json state_message(const SessionState& s, const std::vector<std::string>& goal_names) {
  return {{"type", "state"},
          {"goal", goal_names.at(static_cast<std::size_t>(s.goal))},
          {"fire_rate", s.fire_rate},
          {"goal_rate", s.goal_rate},
          {"running", s.running}};
}

inline json error_message(std::string_view message) {
  return {{"type", "error"}, {"message", message}};
}

/// Applies one client message. Never throws on bad input; the reply is an
/// "error" message and the state is returned unchanged.
inline Transition handle_message(SessionState s, std::string_view text,
                                 const std::vector<std::string>& goal_names) {
  Transition t{s, {}, false};
  json msg = json::parse(text, nullptr, false);
  if (msg.is_discarded() || !msg.is_object()) {
    t.reply = error_message("malformed JSON");
    return t;
  }
  const auto type_it = msg.find("type");
  if (type_it == msg.end() || !type_it->is_string()) {
    t.reply = error_message("message lacks a string \"type\"");
    return t;
  }
  const std::string type = *type_it;
  auto rate = [&](double& field) {
    const auto v = msg.find("value");
    if (v == msg.end() || !v->is_number()) {
      t.reply = error_message(type + " needs a numeric \"value\"");
      return;
    }
    const double x = *v;
    if (!(x >= 0.0 && x <= 1.0)) {
      t.reply = error_message("value out of [0,1]");
      return;
    }
    field = x;
  };

  if (type == "set_goal") {
    const auto g = msg.find("goal");
    if (g == msg.end() || !g->is_string()) {
      t.reply = error_message("set_goal needs a string \"goal\"");
      return t;
    }
    const std::string name = *g;
    int id = -1;
    for (std::size_t i = 0; i < goal_names.size(); ++i) {
      if (goal_names[i] == name) id = static_cast<int>(i);
    }
    if (id < 0) {
      t.reply = error_message("unknown goal '" + name + "'");
      return t;
    }
    t.state.goal = id;
  } else if (type == "set_fire_rate") {
    rate(t.state.fire_rate);
  } else if (type == "set_goal_rate") {
    rate(t.state.goal_rate);
  } else if (type == "reset") {
    t.state.step = 0;
    t.reset = true;
  } else if (type == "pause") {
    t.state.running = false;
  } else if (type == "resume") {
    t.state.running = true;
  } else {
    t.reply = error_message("unknown message type '" + type + "'");
    return t;
  }
  if (!t.reply.is_null()) {
    t.state = s;
    return t;
  }
  t.reply = state_message(t.state, goal_names);
  return t;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const auto rest = data.size() - i; rest > 0) {
    std::uint32_t v = data[i] << 16;
    if (rest == 2) v |= data[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=') break;
    const int v = val(c);
    if (v < 0) throw io_error("invalid base64 input");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

/// The model a steering session runs.
struct SteerModel {
  NcaParams<float> nca;
  GoalEncoder<float> encoder;
  std::vector<std::string> goal_names;

  static SteerModel from_checkpoint(const Checkpoint& ck) {
    SteerModel m{ck.nca, ck.encoder, ck.meta.goal_names};
    if (static_cast<int>(m.goal_names.size()) != ck.encoder.n_goals) {
      m.goal_names.clear();
      for (int i = 0; i < ck.encoder.n_goals; ++i) m.goal_names.push_back(std::to_string(i));
    }
    return m;
  }
};

/// Single-owner simulation: grid, control state, and RNG. Not thread-safe;
/// the server drives it from one thread.
class Simulation {
 public:
  Simulation(SteerModel model, int grid_size, std::uint64_t seed = 0)
      : model_(std::move(model)), size_(grid_size), seed_(seed) {
    state_.fire_rate = 1.0;
    reset_grid();
  }

  /// Applies a client message; the transition carries the reply.
  Transition apply(std::string_view text) {
    auto t = handle_message(state_, text, model_.goal_names);
    state_ = t.state;
    if (t.reset) reset_grid();
    return t;
  }

  void advance() {
    const StepConfig cfg{state_.fire_rate, state_.goal_rate};
    grid_ = rollout(std::move(grid_), model_.nca, model_.encoder, state_.goal, 1, cfg, rng_);
    ++state_.step;
  }

  json frame() const {
    const Rgba8 img = render_frame(grid_);
    return {{"type", "frame"},
            {"step", state_.step},
            {"width", img.width},
            {"height", img.height},
            {"rgba", base64_encode(img.pixels)}};
  }

  const SessionState& state() const noexcept { return state_; }
  SessionState& state() noexcept { return state_; }
  const CellGrid<float>& grid() const noexcept { return grid_; }
  const SteerModel& model() const noexcept { return model_; }

 private:
  void reset_grid() {
    grid_ = new_seed<float>(size_, size_, model_.encoder.n_hidden);
    rng_ = RngStream(seed_, 0x5ee7 + resets_++);
    state_.step = 0;
  }

  SteerModel model_;
  int size_;
  std::uint64_t seed_;
  std::uint64_t resets_ = 0;
  CellGrid<float> grid_;
  RngStream rng_;
  SessionState state_;
};

struct ServeConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;
  int grid_size = 192;
  double sim_rate = 60.0;
  double frame_rate = 15.0;
  std::filesystem::path static_dir;  // web-ui build output served at "/"
  std::uint64_t seed = 0;
};

/// "host:port" -> (host, port).
inline std::pair<std::string, unsigned short> parse_address(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos) throw config_error("address must be host:port, got '" + std::string(addr) + "'");
  const std::string host(addr.substr(0, colon));
  int port = -1;
  try {
    port = detail::parse_number<int>(addr.substr(colon + 1), "port");
  } catch (const config_error&) {
  }
  if (host.empty() || port < 0 || port > 65535) {
    throw config_error("address must be host:port, got '" + std::string(addr) + "'");
  }
  return {host, static_cast<unsigned short>(port)};
}

namespace steer_detail {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

class Hub;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void start(http::request<http::string_body> req);
  void send_reply(std::shared_ptr<const std::string> msg) {
    replies_.push_back(std::move(msg));
    flush();
  }
  /// Only the newest unsent frame is kept. A key frame (the first frame
  /// after a reset) is queued behind replies and never dropped.
  void send_frame(std::shared_ptr<const std::string> frame, bool key) {
    if (key) {
      pending_frame_.reset();
      replies_.push_back(std::move(frame));
    } else {
      pending_frame_ = std::move(frame);
    }
    flush();
  }
  void close() {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void read();
  void flush() {
    if (writing_ || closed_) return;
    std::shared_ptr<const std::string> msg;
    if (!replies_.empty()) {
      msg = std::move(replies_.front());
      replies_.pop_front();
    } else if (pending_frame_) {
      msg = std::move(pending_frame_);
    } else {
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(*msg), [self = shared_from_this(), msg](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->flush();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  Hub& hub_;
  std::deque<std::shared_ptr<const std::string>> replies_;
  std::shared_ptr<const std::string> pending_frame_;
  bool writing_ = false;
  bool closed_ = false;
};

/// Network side: owns the io_context, the listener, and the session list.
/// Everything here runs on the io thread except `submit`/`post_*`, which only
/// hand work across.
class Hub {
 public:
  struct Command {
    std::string text;
    std::weak_ptr<WsSession> from;
  };

  explicit Hub(ServeConfig cfg) : cfg_(std::move(cfg)), acceptor_(ioc_) {}

  void listen() {
    beast::error_code ec;
    const auto addr = net::ip::make_address(cfg_.address, ec);
    if (ec) throw io_error("bad listen address '" + cfg_.address + "': " + ec.message());
    const tcp::endpoint ep{addr, cfg_.port};
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
      throw io_error("cannot bind " + cfg_.address + ":" + std::to_string(cfg_.port) + ": " + ec.message());
    }
    accept();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }
  net::io_context& context() { return ioc_; }

  // Called from the io thread.
  void join(const std::shared_ptr<WsSession>& s) {
    sessions_.push_back(s);
    if (latest_frame_) s->send_frame(latest_frame_, false);
  }
  void submit(std::string text, std::weak_ptr<WsSession> from) {
    {
      std::lock_guard lock(mu_);
      inbox_.push_back({std::move(text), std::move(from)});
    }
    cv_.notify_one();
  }

  // Called from the simulation thread.
  bool wait_command(Command& out, std::chrono::steady_clock::time_point until) {
    std::unique_lock lock(mu_);
    cv_.wait_until(lock, until, [&] { return !inbox_.empty() || stopping_; });
    if (inbox_.empty()) return false;
    out = std::move(inbox_.front());
    inbox_.pop_front();
    return true;
  }
  void post_reply(std::weak_ptr<WsSession> to, std::string msg) {
    auto p = std::make_shared<const std::string>(std::move(msg));
    net::post(ioc_, [to = std::move(to), p] {
      if (auto s = to.lock()) s->send_reply(p);
    });
  }
  void post_frame(std::string msg, long long step, bool key) {
    auto p = std::make_shared<const std::string>(std::move(msg));
    net::post(ioc_, [this, p, step, key] {
      latest_step_ = step;
      latest_frame_ = p;
      std::erase_if(sessions_, [](const auto& w) { return w.expired(); });
      for (auto& w : sessions_) {
        if (auto s = w.lock()) s->send_frame(p, key);
      }
    });
  }
  void post_step(long long step) {
    net::post(ioc_, [this, step] { latest_step_ = step; });
  }

  void stop() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      for (auto& w : sessions_) {
        if (auto s = w.lock()) s->close();
      }
      sessions_.clear();
      ioc_.stop();
    });
  }
  bool stopping() {
    std::lock_guard lock(mu_);
    return stopping_;
  }

  long long latest_step() const { return latest_step_; }
  const ServeConfig& config() const { return cfg_; }

 private:
  void accept();

  ServeConfig cfg_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::vector<std::weak_ptr<WsSession>> sessions_;
  long long latest_step_ = 0;
  std::shared_ptr<const std::string> latest_frame_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> inbox_;
  bool stopping_ = false;
};

inline void WsSession::start(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->hub_.join(self);
    self->read();
  });
}

inline void WsSession::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->closed_ = true;
      return;
    }
    self->hub_.submit(beast::buffers_to_string(self->buffer_.data()), self);
    self->buffer_.consume(self->buffer_.size());
    self->read();
  });
}

inline std::string_view mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, Hub& hub) : stream_(std::move(socket)), hub_(hub) {}

  void start() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->dispatch();
    });
  }

  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), hub_)->start(std::move(req_));
        return;
      }
      respond(http::status::not_found, "text/plain", "websocket endpoint is /ws\n");
      return;
    }
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      respond(http::status::method_not_allowed, "text/plain", "only GET is supported\n");
      return;
    }
    std::string target(req_.target());
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target == "/health") {
      const json body = {{"status", "ok"}, {"step", hub_.latest_step()}};
      respond(http::status::ok, "application/json", body.dump());
      return;
    }
    serve_static(target);
  }

  void serve_static(const std::string& target) {
    namespace fs = std::filesystem;
    const auto& root = hub_.config().static_dir;
    if (target.find("..") != std::string::npos) {
      respond(http::status::bad_request, "text/plain", "bad path\n");
      return;
    }
    fs::path p = root / fs::path(target == "/" ? "index.html" : target.substr(1));
    if (root.empty() || !fs::is_regular_file(p)) {
      respond(http::status::not_found, "text/plain",
              root.empty() || !fs::is_directory(root) ? "web-ui assets are not installed\n" : "not found\n");
      return;
    }
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    respond(http::status::ok, mime_type(p), ss.str());
  }

  void respond(http::status status, std::string_view type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "goalnca");
    res->set(http::field::content_type, std::string(type));
    res->keep_alive(req_.keep_alive());
    if (req_.method() != http::verb::head) res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  Hub& hub_;
};

inline void Hub::accept() {
  acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec == net::error::operation_aborted) return;
    } else {
      std::make_shared<HttpSession>(std::move(socket), *this)->start();
    }
    if (acceptor_.is_open()) accept();
  });
}

}  // namespace steer_detail

/// Steering server: one io thread for the network and one simulation thread
/// that owns the grid. They talk through the hub's inbox and posted frames.
class SteerServer {
 public:
  SteerServer(SteerModel model, ServeConfig cfg)
      : cfg_(cfg), sim_(std::move(model), cfg.grid_size, cfg.seed), hub_(cfg) {
    if (!(cfg_.sim_rate > 0) || !(cfg_.frame_rate > 0)) {
      throw config_error("sim_rate and frame_rate must be positive");
    }
    if (cfg_.grid_size < 3) throw config_error("grid size must be at least 3");
    sim_.state().steps_per_second = cfg_.sim_rate;
    hub_.listen();
  }

  ~SteerServer() { stop(); }

  unsigned short port() const { return hub_.port(); }

  /// Runs until stop(); call from one thread only.
  void run() {
    std::jthread sim([this] { simulate(); });
    hub_.context().run();
    hub_.stop();
  }

  /// Starts both loops on background threads.
  void start() {
    io_thread_ = std::jthread([this] { hub_.context().run(); });
    sim_thread_ = std::jthread([this] { simulate(); });
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    hub_.stop();
    if (sim_thread_.joinable()) sim_thread_.join();
    if (io_thread_.joinable()) io_thread_.join();
  }

 private:
  using clock = std::chrono::steady_clock;

  void publish_frame(bool key = false) {
    last_published_ = sim_.state().step;
    hub_.post_frame(sim_.frame().dump(), sim_.state().step, key);
  }

  void simulate() {
    const auto step_period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / cfg_.sim_rate));
    const auto frame_period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / cfg_.frame_rate));
    auto next_step = clock::now();
    auto next_frame = clock::now();
    publish_frame();
    while (!hub_.stopping()) {
      const auto now = clock::now();
      const auto wake = sim_.state().running ? std::min(next_step, next_frame) : next_frame;
      steer_detail::Hub::Command cmd;
      // Drain commands first; they apply at the next step boundary.
      if (hub_.wait_command(cmd, now < wake ? wake : now)) {
        const bool was_running = sim_.state().running;
        const auto tr = sim_.apply(cmd.text);
        hub_.post_reply(cmd.from, tr.reply.dump());
        if (tr.reset) {
          publish_frame(true);
          next_step = clock::now() + step_period;
        }
        if (!was_running && sim_.state().running) next_step = clock::now();
        continue;
      }
      const auto t = clock::now();
      if (sim_.state().running && t >= next_step) {
        sim_.advance();
        next_step += step_period;
        // Fall behind gracefully rather than bursting to catch up.
        if (next_step < t - step_period * 4) next_step = t;
        hub_.post_step(sim_.state().step);
      }
      if (t >= next_frame) {
        if (sim_.state().step != last_published_) publish_frame();
        next_frame += frame_period;
        if (next_frame < t) next_frame = t + frame_period;
      }
    }
  }

  ServeConfig cfg_;
  Simulation sim_;
  steer_detail::Hub hub_;
  std::jthread io_thread_;
  std::jthread sim_thread_;
  std::atomic<bool> stopped_{false};
  long long last_published_ = -1;
};

}  // namespace goalnca
