#pragma once

// WebSocket service for human play, agent spectating and metrics streaming.
//
// Endpoints: "/ws" (protocol "1", JSON messages with a "type" field),
// "/healthz" (plain "ok") and static files under "/".
// All session state lives on one io_context thread; publish_metrics() and
// stop() may be called from any thread.

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "birdhunt/demo.hpp"
#include "birdhunt/policy.hpp"
#include "json.hpp"

namespace birdhunt::gateway {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

inline constexpr const char* kProtocolVersion = "1";

struct GatewayConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  double tick_hz = 15.0;
  std::map<std::string, EnvConfig> envs;  // hello.env_config_id -> config
  std::filesystem::path static_dir;       // built UI; a placeholder page is served when absent
  std::filesystem::path demo_dir = "demos";
  std::uint64_t seed = 0;
  std::size_t max_sessions = 16;
  std::size_t max_queue = 1024;  // outbound messages per client before the oldest is dropped
  double spectate_epsilon = 0.0;
  std::optional<nn::Checkpoint> spectate_policy;
};

/// Desk-scale presets keyed by lower-case tier name.
inline std::map<std::string, EnvConfig> default_envs() {
  return {{"low", desk_env_config(Tier::Low)},
          {"medium", desk_env_config(Tier::Medium)},
          {"high", desk_env_config(Tier::High)}};
}

/// Raw RGB bytes of an observation; grayscale is replicated to three channels.
inline std::vector<unsigned char> observation_rgb(const Observation& obs, const EnvConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(cfg.width) * static_cast<std::size_t>(cfg.height);
  std::vector<unsigned char> out(n * 3);
  auto byte = [](float v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      out[i * 3 + c] = byte(cfg.channels == 1 ? obs[i] : obs[i * 3 + c]);
  return out;
}

inline nlohmann::json error_message(const std::string& code, const std::string& detail) {
  return {{"type", "error"}, {"code", code}, {"detail", detail}};
}

class Server;

class Session : public std::enable_shared_from_this<Session> {
 public:
  enum class Mode { None, Play, Spectate, Dashboard };

  Session(Server& server, tcp::socket socket, std::string id);

  void start(http::request<http::string_body> req);
  void send(const nlohmann::json& msg) { send_text(msg.dump()); }
  void send_text(std::string text);
  void shutdown();
  // Sends one last message, then closes the WebSocket once it is flushed.
  void reject(const nlohmann::json& msg);
  Mode mode() const { return mode_; }
  const std::string& id() const { return id_; }

 private:
  void read();
  void on_message(const std::string& text);
  void handle_hello(const nlohmann::json& msg);
  void handle_action(const nlohmann::json& msg);
  void handle_record(const nlohmann::json& msg);
  void start_env(std::uint64_t seed);
  void schedule_tick();
  void tick();
  void do_step(ActionPair a);
  void send_frame(const Observation& obs, double last_reward, bool done);
  void write_next();
  void finalize_recording();
  void close();

  Server& server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::string id_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool closed_ = false;
  bool closing_ = false;
  Mode mode_ = Mode::None;
  std::string env_id_;
  std::unique_ptr<BirdHunterEnv> env_;
  Observation obs_;
  double episode_return_ = 0.0;
  std::int64_t frame_step_ = 0;
  std::deque<ActionPair> actions_;
  std::unique_ptr<DemoWriter> writer_;
  int recordings_ = 0;
  asio::steady_timer timer_;
  Rng agent_rng_;
  std::chrono::steady_clock::time_point last_activity_;
};

class Server {
 public:
  explicit Server(GatewayConfig cfg) : cfg_(std::move(cfg)), acceptor_(ioc_) {
    if (cfg_.envs.empty()) cfg_.envs = default_envs();
    if (!(cfg_.tick_hz > 0.0)) fail(ErrorKind::InvalidConfig, "tick rate must be positive");
    if (cfg_.spectate_policy) {
      spectate_net_.emplace(cfg_.spectate_policy->spec);
    }
    beast::error_code ec;
    const auto addr = asio::ip::make_address(cfg_.address, ec);
    if (ec) fail(ErrorKind::InvalidConfig, "bad listen address '" + cfg_.address + "'");
    const tcp::endpoint ep(addr, cfg_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) fail(ErrorKind::Io, fmt::format("cannot listen on {}:{}: {}", cfg_.address, cfg_.port, ec.message()));
    accept();
  }

  const GatewayConfig& config() const { return cfg_; }
  unsigned short port() const { return acceptor_.local_endpoint().port(); }
  asio::io_context& io() { return ioc_; }

  void run() { ioc_.run(); }

  /// Finalizes open recordings, closes every connection and stops the loop.
  void stop() {
    asio::post(ioc_, [this] {
      stopping_ = true;
      beast::error_code ec;
      acceptor_.close(ec);
      for (const auto& w : sessions_)
        if (auto s = w.lock()) s->shutdown();
      sessions_.clear();
      ioc_.stop();
    });
  }

  /// Fans a metrics record out to every dashboard client (fire-and-forget).
  void publish_metrics(nlohmann::json msg) {
    msg["type"] = "metrics";
    asio::post(ioc_, [this, text = msg.dump()] {
      for (const auto& w : sessions_)
        if (auto s = w.lock(); s && s->mode() == Session::Mode::Dashboard) s->send_text(text);
    });
  }

  std::size_t session_count() const { return sessions_.size(); }

  // Internal: used by sessions.
  void remove(const Session* s) {
    for (auto it = sessions_.begin(); it != sessions_.end(); ++it)
      if (auto p = it->lock(); !p || p.get() == s) {
        sessions_.erase(it);
        return;
      }
  }
  std::uint64_t next_seed() { return derive_seed(cfg_.seed, seed_counter_++); }
  const nn::Net* spectate_net() const { return spectate_net_ ? &*spectate_net_ : nullptr; }

 private:
  friend class Session;

  void accept() {
    acceptor_.async_accept(asio::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      serve_http(std::make_shared<beast::tcp_stream>(std::move(socket)));
      accept();
    });
  }

  struct HttpState {
    std::shared_ptr<beast::tcp_stream> stream;
    beast::flat_buffer buffer;
    http::request<http::string_body> req;
  };

  void serve_http(std::shared_ptr<beast::tcp_stream> stream) {
    auto st = std::make_shared<HttpState>();
    st->stream = std::move(stream);
    st->stream->expires_after(std::chrono::seconds(30));
    http::async_read(*st->stream, st->buffer, st->req, [this, st](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (websocket::is_upgrade(st->req)) {
        if (st->req.target() != "/ws") {
          respond(st, http::status::not_found, "text/plain", "not found\n");
          return;
        }
        st->stream->expires_never();
        auto s = std::make_shared<Session>(*this, st->stream->release_socket(), fmt::format("s{}", ++session_counter_));
        const bool full = sessions_.size() >= cfg_.max_sessions || stopping_;
        if (!full) sessions_.push_back(s);
        s->start(std::move(st->req));
        if (full) s->reject(error_message("server_full", fmt::format("at most {} sessions", cfg_.max_sessions)));
        return;
      }
      handle_http(st);
    });
  }

  void respond(const std::shared_ptr<HttpState>& st, http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, st->req.version());
    res->set(http::field::server, "birdhunt");
    res->set(http::field::content_type, type);
    res->keep_alive(st->req.keep_alive());
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(*st->stream, *res, [this, st, res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        beast::error_code ignored;
        st->stream->socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      serve_http(st->stream);
    });
  }

  static std::string mime_type(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    if (ext == ".html") return "text/html";
    if (ext == ".js") return "application/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".png") return "image/png";
    return "application/octet-stream";
  }

  void handle_http(const std::shared_ptr<HttpState>& st) {
    const std::string target(st->req.target());
    if (st->req.method() != http::verb::get && st->req.method() != http::verb::head) {
      respond(st, http::status::bad_request, "text/plain", "unsupported method\n");
      return;
    }
    if (target == "/healthz") {
      respond(st, http::status::ok, "text/plain", "ok");
      return;
    }
    std::string rel = target.substr(0, target.find('?'));
    if (rel == "/" || rel.empty()) rel = "/index.html";
    if (rel.find("..") != std::string::npos) {
      respond(st, http::status::bad_request, "text/plain", "bad path\n");
      return;
    }
    if (!cfg_.static_dir.empty()) {
      const auto path = cfg_.static_dir / rel.substr(1);
      if (std::filesystem::is_regular_file(path)) {
        respond(st, http::status::ok, mime_type(path), detail::read_file(path));
        return;
      }
    }
    if (rel == "/index.html") {
      respond(st, http::status::ok, "text/html",
              "<!doctype html><title>birdhunt</title><p>birdhunt gateway is running. The browser UI is not "
              "installed; connect a client to <code>/ws</code> (protocol 1).</p>\n");
      return;
    }
    respond(st, http::status::not_found, "text/plain", "not found\n");
  }

  GatewayConfig cfg_;
  asio::io_context ioc_{1};
  tcp::acceptor acceptor_;
  std::vector<std::weak_ptr<Session>> sessions_;
  std::uint64_t session_counter_ = 0;
  std::uint64_t seed_counter_ = 0;
  bool stopping_ = false;
  std::optional<nn::Net> spectate_net_;
};

// ---------------------------------------------------------------------------

inline Session::Session(Server& server, tcp::socket socket, std::string id)
    : server_(server),
      ws_(std::move(socket)),
      id_(std::move(id)),
      timer_(ws_.get_executor()),
      agent_rng_(server.next_seed()),
      last_activity_(std::chrono::steady_clock::now()) {}

inline void Session::start(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.text(true);
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) {
      self->close();
      return;
    }
    self->read();
    self->write_next();
  });
  writing_ = true;  // hold writes until the handshake completes
}

inline void Session::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->close();
      return;
    }
    const std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    self->last_activity_ = std::chrono::steady_clock::now();
    self->on_message(text);
    if (!self->closed_) self->read();
  });
}

inline void Session::send_text(std::string text) {
  if (closed_) return;
  outbox_.push_back(std::move(text));
  // Bounded per-client buffer: drop the oldest message not already in flight.
  while (outbox_.size() > server_.config().max_queue) outbox_.erase(outbox_.begin() + (writing_ ? 1 : 0));
  if (!writing_) write_next();
}

inline void Session::reject(const nlohmann::json& msg) {
  send(msg);
  closing_ = true;
  if (!writing_) write_next();
}

inline void Session::write_next() {
  writing_ = false;
  if (closed_) return;
  if (outbox_.empty()) {
    if (closing_) {
      writing_ = true;
      ws_.async_close(websocket::close_code::try_again_later, [self = shared_from_this()](beast::error_code) { self->close(); });
    }
    return;
  }
  writing_ = true;
  ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    self->outbox_.pop_front();
    if (ec) {
      self->close();
      return;
    }
    self->write_next();
  });
}

inline void Session::on_message(const std::string& text) {
  if (closing_) return;
  nlohmann::json msg;
  try {
    msg = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    send(error_message("bad_message", "message is not valid JSON"));
    return;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    send(error_message("bad_message", "message needs a string 'type'"));
    return;
  }
  const std::string type = msg["type"];
  try {
    if (type == "hello") {
      handle_hello(msg);
    } else if (type == "ping") {
      send({{"type", "pong"}, {"nonce", msg.value("nonce", nlohmann::json(nullptr))}});
    } else if (type == "action") {
      handle_action(msg);
    } else if (type == "record") {
      handle_record(msg);
    } else {
      send(error_message("bad_message", "unknown message type '" + type + "'"));
    }
  } catch (const nlohmann::json::exception& e) {
    send(error_message("bad_message", e.what()));
  } catch (const Error& e) {
    send(error_message(e.kind() == ErrorKind::Io ? "io_error" : "bad_message", e.what()));
  }
}

inline void Session::handle_hello(const nlohmann::json& msg) {
  if (mode_ != Mode::None) {
    send(error_message("bad_message", "session already established"));
    return;
  }
  const std::string mode = msg.at("mode").get<std::string>();
  if (mode != "play" && mode != "spectate" && mode != "dashboard") {
    send(error_message("bad_message", "mode must be play, spectate or dashboard"));
    return;
  }
  nlohmann::json env_json = nullptr;
  if (mode != "dashboard" || msg.contains("env_config_id")) {
    const std::string id = msg.value("env_config_id", std::string("low"));
    const auto it = server_.config().envs.find(id);
    if (it == server_.config().envs.end()) {
      send(error_message("bad_message", "unknown env_config_id '" + id + "'"));
      return;
    }
    env_id_ = id;
    env_json = to_json(it->second);
  }
  mode_ = mode == "play" ? Mode::Play : mode == "spectate" ? Mode::Spectate : Mode::Dashboard;
  send({{"type", "welcome"}, {"session_id", id_}, {"env_config", env_json}, {"protocol_version", kProtocolVersion}});
  if (mode_ == Mode::Dashboard) return;
  start_env(server_.next_seed());
  if (mode_ == Mode::Spectate && server_.spectate_net()) require_policy_for(server_.spectate_net()->spec(), env_->config());
  send_frame(obs_, 0.0, false);
  schedule_tick();
}

inline void Session::start_env(std::uint64_t seed) {
  env_ = std::make_unique<BirdHunterEnv>(server_.config().envs.at(env_id_), seed);
  obs_ = env_->observe();
  episode_return_ = 0.0;
}

inline void Session::handle_action(const nlohmann::json& msg) {
  if (mode_ != Mode::Play) {
    send(error_message("no_session", "actions need a play session (send hello first)"));
    return;
  }
  const auto& x = msg.at("x");
  const auto& y = msg.at("y");
  if (!x.is_number_integer() || !y.is_number_integer()) {
    send(error_message("bad_action", "x and y must be integers"));
    return;
  }
  const auto& cfg = env_->config();
  const ActionPair a{x.get<int>(), y.get<int>()};
  if (a.x < 0 || a.x >= cfg.width || a.y < 0 || a.y >= cfg.height) {
    send(error_message("bad_action", fmt::format("action ({},{}) outside the {}x{} screen", a.x, a.y, cfg.width, cfg.height)));
    return;
  }
  if (actions_.size() >= server_.config().max_queue) {
    send(error_message("bad_action", "too many queued actions"));
    return;
  }
  actions_.push_back(a);
}

inline void Session::handle_record(const nlohmann::json& msg) {
  if (mode_ != Mode::Play) {
    send(error_message("no_session", "recording needs a play session"));
    return;
  }
  const std::string command = msg.at("command").get<std::string>();
  if (command == "start") {
    if (writer_) {
      send(error_message("bad_message", "already recording"));
      return;
    }
    std::string tag = msg.value("tag", std::string("human"));
    std::string safe;
    for (char c : tag) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
    if (safe.empty()) safe = "human";
    // A fresh env with a fresh seed makes the recording replayable from its header.
    const std::uint64_t seed = server_.next_seed();
    start_env(seed);
    actions_.clear();
    const auto path = server_.config().demo_dir / fmt::format("{}_{}_{}.demo.jsonl", safe, id_, ++recordings_);
    writer_ = std::make_unique<DemoWriter>(path, env_->config(), seed, tag, true);
    send_frame(obs_, 0.0, false);
  } else if (command == "stop") {
    if (!writer_) {
      send(error_message("bad_message", "not recording"));
      return;
    }
    const auto header = writer_->close();
    send({{"type", "recorded"}, {"file", writer_->path().string()}, {"episodes", header.episodes}});
    writer_.reset();
  } else {
    send(error_message("bad_message", "record command must be start or stop"));
  }
}

inline void Session::schedule_tick() {
  timer_.expires_after(std::chrono::microseconds(static_cast<std::int64_t>(1e6 / server_.config().tick_hz)));
  timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
    if (ec || self->closed_) return;
    self->tick();
    self->schedule_tick();
  });
}

inline void Session::tick() {
  if (mode_ == Mode::Play) {
    if (!actions_.empty()) {
      const ActionPair a = actions_.front();
      actions_.pop_front();
      do_step(a);
    } else if (env_->config().tier == Tier::High) {
      // The crosshair holds still and the engine keeps firing.
      const auto c = env_->state().crosshair;
      do_step({c.x, c.y});
    }
  } else if (mode_ == Mode::Spectate) {
    ActionPair a;
    if (const nn::Net* net = server_.spectate_net()) {
      PolicySnapshot snap{net, server_.config().spectate_policy->params, 1.0, true};
      a = act(snap, obs_, agent_rng_).action;
    } else {
      a = oracle_policy(env_->state(), env_->config(), server_.config().spectate_epsilon, agent_rng_);
    }
    do_step(a);
  }
}

inline void Session::do_step(ActionPair a) {
  const auto r = env_->step(a);
  episode_return_ += r.reward;
  if (writer_) writer_->append(env_->config(), obs_, a, r.reward, r.done);
  send_frame(r.observation, r.reward, r.done);
  if (r.done) {
    obs_ = env_->reset();
    episode_return_ = 0.0;
    send_frame(obs_, 0.0, false);
  } else {
    obs_ = r.observation;
  }
}

inline void Session::send_frame(const Observation& obs, double last_reward, bool done) {
  const auto& cfg = env_->config();
  const auto& st = env_->state();
  send({{"type", "frame"},
        {"step", ++frame_step_},
        {"pixels", base64_encode(observation_rgb(obs, cfg))},
        {"width", cfg.width},
        {"height", cfg.height},
        {"ammo", cfg.tier == Tier::High ? nlohmann::json(st.ammo) : nlohmann::json(nullptr)},
        {"last_reward", last_reward},
        {"episode_return", episode_return_},
        {"done", done},
        {"crosshair", {{"x", st.crosshair.x}, {"y", st.crosshair.y}}},
        {"recording", writer_ != nullptr}});
}

inline void Session::finalize_recording() {
  if (!writer_) return;
  try {
    writer_->close();
  } catch (const std::exception&) {
    // The .partial file stays behind and marks the recording as unfinished.
  }
  writer_.reset();
}

inline void Session::close() {
  if (closed_) return;
  closed_ = true;
  finalize_recording();
  beast::error_code ec;
  timer_.cancel(ec);
  server_.remove(this);
}

inline void Session::shutdown() {
  finalize_recording();
  if (closed_) return;
  // Flush what is queued (best effort), then close the socket.
  auto self = shared_from_this();
  closed_ = true;
  beast::error_code ec;
  timer_.cancel(ec);
  beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
  beast::get_lowest_layer(ws_).socket().close(ec);
}

}  // namespace birdhunt::gateway
