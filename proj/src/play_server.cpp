#include "pasd/play_server.hpp"

#include <chrono>
#include <deque>
#include <iostream>
#include <set>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

namespace pasd {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class WsSession;

struct Registry {
  std::set<std::shared_ptr<WsSession>> live;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, PlayHub& hub, Registry& registry)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), hub_(hub), registry_(registry) {}

  void run(http::request<http::string_body> req) {
    registry_.live.insert(shared_from_this());
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->shutdown();
      self->read();
    });
  }

  // Ends the session, writes its log and closes the socket.
  void shutdown() {
    if (closed_) return;
    closed_ = true;
    timer_.cancel();
    try {
      hub_.close(channel_);
    } catch (const std::exception& e) {
      std::cerr << "session log failed: " << e.what() << "\n";
    }
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).socket().close(ec);
    registry_.live.erase(shared_from_this());
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->shutdown();
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      FrameReply r = self->hub_.handle(self->channel_, text);
      for (auto& f : r.frames) self->send(std::move(f));
      if (r.start_ticking) self->begin_ticks();
      if (r.close) {
        self->closing_ = true;
        self->timer_.cancel();
        if (self->queue_.empty()) self->close_socket();
        return;
      }
      self->read();
    });
  }

  void begin_ticks() {
    const double rate = channel_.session->options().tick_rate;
    period_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / rate));
    next_ = std::chrono::steady_clock::now() + period_;
    schedule();
  }

  void schedule() {
    timer_.expires_at(next_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_ || self->closing_) return;
      for (auto& f : self->hub_.tick(self->channel_)) self->send(std::move(f));
      if (self->channel_.session->status() != SessionStatus::kRunning) return;
      // Absolute deadlines keep the average rate exact.
      self->next_ += self->period_;
      self->schedule();
    });
  }

  void send(std::string frame) {
    queue_.push_back(std::move(frame));
    if (queue_.size() == 1) write_next();
  }

  void write_next() {
    ws_.async_write(asio::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) return self->shutdown();
                      self->queue_.pop_front();
                      if (!self->queue_.empty())
                        self->write_next();
                      else if (self->closing_)
                        self->close_socket();
                    });
  }

  void close_socket() {
    ws_.async_close(websocket::close_code::normal,
                    [self = shared_from_this()](beast::error_code) { self->shutdown(); });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  asio::steady_timer timer_;
  std::deque<std::string> queue_;
  PlayHub& hub_;
  Registry& registry_;
  ClientChannel channel_;
  std::chrono::steady_clock::duration period_{};
  std::chrono::steady_clock::time_point next_{};
  bool closing_ = false;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, PlayHub& hub, Registry& registry)
      : stream_(std::move(socket)), hub_(hub), registry_(registry) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       self->dispatch();
                     });
  }

  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() != "/ws/play") return respond(http::status::not_found, "not found");
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), hub_, registry_)->run(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get) return respond(http::status::bad_request, "GET only");
    if (req_.target() == "/layouts") return respond(http::status::ok, hub_.layouts().dump(), true);
    if (req_.target() == "/checkpoints")
      return respond(http::status::ok, hub_.checkpoints().dump(), true);
    respond(http::status::not_found, "not found");
  }

  void respond(http::status status, std::string body, bool json = false) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::content_type, json ? "application/json" : "text/plain");
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req_.keep_alive());
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res,
                      [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
                        if (ec || !res->keep_alive()) {
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
  PlayHub& hub_;
  Registry& registry_;
};

}  // namespace

struct PlayServer::Impl {
  explicit Impl(ServerOptions o) : options(std::move(o)), hub(options.hub), acceptor(ioc) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), hub, registry)->run();
      accept();
    });
  }

  void stop_now() {
    beast::error_code ec;
    acceptor.close(ec);
    if (signals) signals->cancel(ec);
    const auto live = registry.live;
    for (const auto& s : live) s->shutdown();
    ioc.stop();
  }

  ServerOptions options;
  PlayHub hub;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  Registry registry;
  std::unique_ptr<asio::signal_set> signals;
};

PlayServer::PlayServer(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  beast::error_code ec;
  const auto addr = asio::ip::make_address(impl_->options.address, ec);
  if (ec) throw ConfigError("bad listen address '" + impl_->options.address + "'");
  const tcp::endpoint ep(addr, impl_->options.port);
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec)
    throw IoError("cannot listen on " + impl_->options.address + ":" +
                  std::to_string(impl_->options.port) + ": " + ec.message());
  impl_->accept();
}

PlayServer::~PlayServer() = default;

unsigned short PlayServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void PlayServer::run() { impl_->ioc.run(); }

void PlayServer::stop() {
  asio::post(impl_->ioc, [impl = impl_.get()] { impl->stop_now(); });
}

void PlayServer::stop_on_signals() {
  impl_->signals = std::make_unique<asio::signal_set>(impl_->ioc, SIGINT, SIGTERM);
  impl_->signals->async_wait([impl = impl_.get()](beast::error_code ec, int) {
    if (!ec) impl->stop_now();
  });
}

}  // namespace pasd
