#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "calm/errors.hpp"
#include "calm/io.hpp"
#include "calm/service.hpp"

namespace calm::service {
namespace {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct Inbound {
  std::uint64_t client = 0;
  std::string text;
};

class Hub;

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, Hub& hub, std::uint64_t id) : ws_(std::move(socket)), hub_(hub), id_(id) {}

  void run(http::request<http::string_body> req);
  /// Must run on the io thread.
  void send(std::shared_ptr<const std::string> msg);
  void close();
  std::uint64_t id() const { return id_; }

 private:
  void read();
  void write_next();

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  std::uint64_t id_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool open_ = false;
};

/// Registry of live connections plus the inbound mailbox.
class Hub {
 public:
  explicit Hub(net::io_context& ioc) : ioc_(ioc) {}

  std::uint64_t next_id() { return ++last_id_; }

  void add(const std::shared_ptr<WsConnection>& c) {
    std::lock_guard lock(mu_);
    clients_[c->id()] = c;
  }
  void remove(std::uint64_t id) {
    std::lock_guard lock(mu_);
    clients_.erase(id);
  }

  void post_inbound(Inbound msg) {
    std::lock_guard lock(mu_);
    mailbox_.push_back(std::move(msg));
  }
  std::vector<Inbound> drain() {
    std::lock_guard lock(mu_);
    std::vector<Inbound> out(std::make_move_iterator(mailbox_.begin()), std::make_move_iterator(mailbox_.end()));
    mailbox_.clear();
    return out;
  }

  void broadcast(std::string text) { deliver(std::nullopt, std::move(text)); }
  void send_to(std::uint64_t id, std::string text) { deliver(id, std::move(text)); }

  void close_all() {
    std::vector<std::shared_ptr<WsConnection>> live;
    {
      std::lock_guard lock(mu_);
      for (auto& [id, w] : clients_) {
        if (auto c = w.lock()) live.push_back(std::move(c));
      }
    }
    for (auto& c : live) net::post(ioc_, [c] { c->close(); });
  }

 private:
  void deliver(std::optional<std::uint64_t> only, std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    std::vector<std::shared_ptr<WsConnection>> targets;
    {
      std::lock_guard lock(mu_);
      for (auto& [id, w] : clients_) {
        if (only && *only != id) continue;
        if (auto c = w.lock()) targets.push_back(std::move(c));
      }
    }
    for (auto& c : targets) net::post(ioc_, [c, msg] { c->send(msg); });
  }

  net::io_context& ioc_;
  std::mutex mu_;
  std::map<std::uint64_t, std::weak_ptr<WsConnection>> clients_;
  std::vector<Inbound> mailbox_;
  std::atomic<std::uint64_t> last_id_{0};
};

void WsConnection::run(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->hub_.add(self);
    self->read();
  });
}

void WsConnection::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->open_ = false;
      self->hub_.remove(self->id_);
      return;
    }
    self->hub_.post_inbound({self->id_, beast::buffers_to_string(self->buffer_.data())});
    self->buffer_.consume(self->buffer_.size());
    self->read();
  });
}

void WsConnection::send(std::shared_ptr<const std::string> msg) {
  if (!open_) return;
  queue_.push_back(std::move(msg));
  if (queue_.size() == 1) write_next();
}

void WsConnection::write_next() {
  ws_.text(true);
  ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->open_ = false;
      self->queue_.clear();
      self->hub_.remove(self->id_);
      return;
    }
    self->queue_.pop_front();
    if (!self->queue_.empty()) self->write_next();
  });
}

void WsConnection::close() {
  if (!open_) return;
  open_ = false;
  ws_.async_close(websocket::close_code::going_away, [self = shared_from_this()](beast::error_code) {});
}

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, Hub& hub, std::shared_ptr<const std::string> model_json)
      : stream_(std::move(socket)), hub_(hub), model_json_(std::move(model_json)) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->handle();
    });
  }

  void handle() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      auto ws = std::make_shared<WsConnection>(stream_.release_socket(), hub_, hub_.next_id());
      ws->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(req_.keep_alive());
    res->set(http::field::access_control_allow_origin, "*");
    const auto target = std::string(req_.target());
    if (req_.method() != http::verb::get) {
      res->result(http::status::method_not_allowed);
      res->set(http::field::content_type, "text/plain");
      res->body() = "GET only\n";
    } else if (target == "/health") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "text/plain");
      res->body() = "ok\n";
    } else if (target == "/model") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/json");
      res->body() = *model_json_;
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  Hub& hub_;
  std::shared_ptr<const std::string> model_json_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct Server::Impl {
  Impl(ClusterModel m, SessionConfig s, ServerConfig c)
      : model_json(std::make_shared<const std::string>(io::model_to_json(m))),
        session(std::move(m), std::move(s)),
        cfg(std::move(c)),
        acceptor(ioc),
        hub(ioc) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpConnection>(std::move(socket), hub, model_json)->run();
      accept();
    });
  }

  void control_loop() {
    const auto period = std::chrono::milliseconds(cfg.tick_ms);
    auto next = std::chrono::steady_clock::now();
    std::unique_lock stop_lock(stop_mu);
    while (!stopping) {
      next += period;
      std::optional<Snapshot> snap;
      {
        std::lock_guard lock(session_mu);
        for (auto& in : hub.drain()) {
          try {
            session.apply(parse_command(in.text, session.model().dim()));
          } catch (const SchemaError& e) {
            hub.send_to(in.client, error_json(e.what(), e.field()));
          } catch (const DimensionError& e) {
            hub.send_to(in.client, error_json(e.what(), e.field()));
          } catch (const std::exception& e) {
            hub.send_to(in.client, error_json(e.what()));
          }
        }
        try {
          snap = session.tick();
        } catch (const std::exception& e) {
          hub.broadcast(error_json(std::string("control step failed: ") + e.what()));
          session.apply(Command{CommandKind::pause, {}, {}});
        }
      }
      if (snap) hub.broadcast(to_json(*snap));
      stop_cv.wait_until(stop_lock, next, [this] { return stopping; });
    }
  }

  std::shared_ptr<const std::string> model_json;
  mutable std::mutex session_mu;
  Session session;
  ServerConfig cfg;
  net::io_context ioc;
  tcp::acceptor acceptor;
  Hub hub;
  std::thread io_thread;
  std::thread control_thread;
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopping = false;
  bool started = false;
};

Server::Server(ClusterModel model, SessionConfig session, ServerConfig cfg) {
  if (cfg.tick_ms <= 0) throw InvalidArgument("tick_ms must be > 0");
  impl_ = std::make_unique<Impl>(std::move(model), std::move(session), std::move(cfg));
}

Server::~Server() { stop(); }

void Server::start() {
  auto& d = *impl_;
  if (d.started) return;
  const tcp::endpoint ep(net::ip::make_address(d.cfg.address), d.cfg.port);
  d.acceptor.open(ep.protocol());
  d.acceptor.set_option(net::socket_base::reuse_address(true));
  d.acceptor.bind(ep);
  d.acceptor.listen();
  d.accept();
  d.started = true;
  d.io_thread = std::thread([&d] { d.ioc.run(); });
  d.control_thread = std::thread([&d] { d.control_loop(); });
}

void Server::stop() {
  auto& d = *impl_;
  {
    std::lock_guard lock(d.stop_mu);
    if (d.stopping) return;
    d.stopping = true;
  }
  d.stop_cv.notify_all();
  if (d.control_thread.joinable()) d.control_thread.join();
  d.hub.close_all();
  net::post(d.ioc, [&d] {
    beast::error_code ignored;
    d.acceptor.close(ignored);
  });
  // Give close frames a moment before tearing down the loop.
  if (d.io_thread.joinable()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    d.ioc.stop();
    d.io_thread.join();
  }
}

void Server::wait() {
  auto& d = *impl_;
  std::unique_lock lock(d.stop_mu);
  d.stop_cv.wait(lock, [&d] { return d.stopping; });
}

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

Session Server::session() const {
  std::lock_guard lock(impl_->session_mu);
  return impl_->session;
}

}  // namespace calm::service
