#pragma once

// Live demo endpoint. One TCP port serves:
//   GET /healthz   -> 200 application/json with a build/model summary
//   /stream        -> WebSocket. Client binary frames carry little-endian
//                     16-bit mono 16 kHz PCM; client text frames carry JSON
//                     control ({"cmd":"reset"}). The server pushes one text
//                     frame per inference: {"trajectory":[5],"latency_ms":x,"ts_ms":n}.
//
// No authentication or TLS: run it on a trusted network only.

#include <atomic>
#include <chrono>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "s2t/runtime.hpp"
#include "s2t/version.hpp"

namespace s2t::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct ServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  int period_ms = 200;
  std::size_t outbox_depth = 8;
};

/// Decodes a binary audio frame. Odd lengths are a protocol error.
inline std::vector<std::int16_t> decode_pcm_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 2 != 0) {
    throw Error(Errc::protocol_error, "audio frame length " + std::to_string(bytes.size()) + " is odd");
  }
  std::vector<std::int16_t> out(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::int16_t(std::uint16_t(bytes[2 * i]) | (std::uint16_t(bytes[2 * i + 1]) << 8));
  }
  return out;
}

inline std::string error_message(const std::string& what) { return nlohmann::json{{"error", what}}.dump(); }

class Server;

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket&& socket, const Engine& engine, const ServerConfig& cfg, std::atomic<std::size_t>& live)
      : ws_(std::move(socket)), engine_(engine), cfg_(cfg), live_(live) {
    ++live_;
  }

  ~Session() {
    if (loop_) loop_->stop();
    --live_;
  }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&Session::on_accept, shared_from_this()));
  }

  /// Initiates a close from another thread (server shutdown).
  void shutdown() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] { self->begin_close(); });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<Session> weak = shared_from_this();
    auto executor = ws_.get_executor();
    loop_ = std::make_unique<StreamLoop>(engine_, ring_, std::chrono::milliseconds(cfg_.period_ms),
                                         [weak, executor](const TrajectoryEvent& e) {
                                           auto msg = event_to_json(e).dump();
                                           net::post(executor, [weak, msg = std::move(msg)]() mutable {
                                             if (auto self = weak.lock()) self->enqueue(std::move(msg));
                                           });
                                         });
    loop_->start();
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&Session::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stop_loop();
      return;
    }
    const auto data = buffer_.data();
    std::span<const std::uint8_t> bytes(static_cast<const std::uint8_t*>(data.data()), data.size());
    try {
      if (ws_.got_binary()) {
        ring_.push(decode_pcm_frame(bytes));
      } else {
        handle_control(std::string(bytes.begin(), bytes.end()));
      }
    } catch (const std::exception& e) {
      buffer_.consume(buffer_.size());
      fail(e.what());
      return;
    }
    buffer_.consume(buffer_.size());
    do_read();
  }

  void handle_control(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::protocol_error, "control frame is not JSON");
    }
    if (!j.is_object() || !j.contains("cmd") || !j["cmd"].is_string()) {
      throw Error(Errc::protocol_error, "control frame needs a string \"cmd\"");
    }
    const auto cmd = j["cmd"].get<std::string>();
    if (cmd == "reset") {
      ring_.reset();
    } else {
      throw Error(Errc::protocol_error, "unknown command '" + cmd + "'");
    }
  }

  void fail(const std::string& what) {
    stop_loop();
    outbox_.clear();
    outbox_.push_back(error_message(what));
    close_after_write_ = true;
    if (!writing_) do_write();
  }

  void stop_loop() {
    if (loop_) loop_->stop();
  }

  void enqueue(std::string msg) {
    if (close_after_write_ || closing_) return;
    // Trajectory commands supersede each other: drop the oldest unsent one.
    const std::size_t queued = outbox_.size() - (writing_ ? 1 : 0);
    if (queued >= cfg_.outbox_depth) outbox_.erase(outbox_.begin() + (writing_ ? 1 : 0));
    outbox_.push_back(std::move(msg));
    if (!writing_) do_write();
  }

  void do_write() {
    if (outbox_.empty()) {
      if (close_after_write_) begin_close();
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), beast::bind_front_handler(&Session::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    writing_ = false;
    if (ec) {
      stop_loop();
      outbox_.clear();
      return;
    }
    outbox_.pop_front();
    do_write();
  }

  void begin_close() {
    if (closing_) return;
    closing_ = true;
    stop_loop();
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<beast::tcp_stream> ws_;
  const Engine& engine_;
  const ServerConfig& cfg_;
  std::atomic<std::size_t>& live_;
  beast::flat_buffer buffer_;
  RingBuffer ring_;
  std::unique_ptr<StreamLoop> loop_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool close_after_write_ = false;
  bool closing_ = false;
};

/// Reads one HTTP request, then either upgrades to a Session or answers it.
class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, Server& server) : stream_(std::move(socket)), server_(server) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t);
  void respond(http::status status, std::string body, bool keep_alive);

  beast::tcp_stream stream_;
  Server& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

class Server {
 public:
  Server(Engine engine, ServerConfig cfg) : engine_(std::move(engine)), cfg_(std::move(cfg)) {
    if (cfg_.period_ms < kMinPeriodMs) throw Error(Errc::invalid_config, "period must be >= 20 ms");
  }

  static Server from_checkpoint(const std::string& path, ServerConfig cfg) {
    return Server(Engine::from_checkpoint(path), std::move(cfg));
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  Server(Server&&) = delete;
  ~Server() { stop(); }

  /// Binds and starts serving on a background thread.
  void start() {
    beast::error_code ec;
    const auto addr = net::ip::make_address(cfg_.address, ec);
    if (ec) throw Error(Errc::bind_failure, "bad address " + cfg_.address + ": " + ec.message());
    const tcp::endpoint ep(addr, cfg_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw Error(Errc::bind_failure, cfg_.address + ":" + std::to_string(cfg_.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
    do_accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
  }

  /// Closes the acceptor, closes every session and joins the I/O thread.
  void stop() {
    if (!io_thread_.joinable()) return;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
    });
    {
      std::lock_guard lock(mutex_);
      for (auto& w : sessions_)
        if (auto s = w.lock()) s->shutdown();
      sessions_.clear();
    }
    const auto deadline = Clock::now() + std::chrono::seconds(2);
    while (live_sessions_.load() > 0 && Clock::now() < deadline) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    ioc_.stop();
    io_thread_.join();
  }

  unsigned short port() const { return port_; }
  std::size_t session_count() const { return live_sessions_.load(); }
  const Engine& engine() const { return engine_; }

  nlohmann::json health() const {
    const auto& net = engine_.network();
    return {{"status", "ok"},
            {"version", kVersion},
            {"model",
             {{"filters2", net.spec.filters2},
              {"trainable_params", net.trainable_count()},
              {"stored_params", net.stored_count()}}},
            {"period_ms", cfg_.period_ms},
            {"sessions", session_count()}};
  }

 private:
  friend class HttpConnection;

  void do_accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpConnection>(std::move(socket), *this)->run();
      do_accept();
    });
  }

  void start_session(tcp::socket&& socket, http::request<http::string_body> req) {
    auto s = std::make_shared<Session>(std::move(socket), engine_, cfg_, live_sessions_);
    {
      std::lock_guard lock(mutex_);
      for (auto it = sessions_.begin(); it != sessions_.end();) it = it->expired() ? sessions_.erase(it) : std::next(it);
      sessions_.push_back(s);
    }
    s->run(std::move(req));
  }

  Engine engine_;
  ServerConfig cfg_;
  net::io_context ioc_{1};
  tcp::acceptor acceptor_{ioc_};
  std::thread io_thread_;
  unsigned short port_ = 0;
  std::atomic<std::size_t> live_sessions_{0};
  std::mutex mutex_;
  std::vector<std::weak_ptr<Session>> sessions_;
};

inline void HttpConnection::on_read(beast::error_code ec, std::size_t) {
  if (ec) return;
  if (websocket::is_upgrade(req_)) {
    if (req_.target() != "/stream") {
      respond(http::status::not_found, error_message("websocket endpoint is /stream"), false);
      return;
    }
    stream_.expires_never();
    server_.start_session(stream_.release_socket(), std::move(req_));
    return;
  }
  if (req_.method() == http::verb::get && req_.target() == "/healthz") {
    respond(http::status::ok, server_.health().dump() + "\n", req_.keep_alive());
    return;
  }
  respond(http::status::not_found, error_message("not found"), false);
}

inline void HttpConnection::respond(http::status status, std::string body, bool keep_alive) {
  auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
  res->set(http::field::server, std::string("s2t/") + kVersion);
  res->set(http::field::content_type, "application/json");
  res->keep_alive(keep_alive);
  res->body() = std::move(body);
  res->prepare_payload();
  http::async_write(stream_, *res, [self = shared_from_this(), res, keep_alive](beast::error_code ec, std::size_t) {
    if (ec) return;
    if (keep_alive) {
      self->req_ = {};
      self->run();
    } else {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    }
  });
}

}  // namespace s2t::service
