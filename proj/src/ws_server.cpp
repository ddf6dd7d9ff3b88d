#include "mglab/ws_server.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace mglab {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

std::int64_t unix_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

Role role_from_target(std::string_view target) {
  const auto q = target.find('?');
  if (q == std::string_view::npos) return Role::participant;
  std::string_view query = target.substr(q + 1);
  while (!query.empty()) {
    const auto amp = query.find('&');
    if (query.substr(0, amp) == "role=observer") return Role::observer;
    if (amp == std::string_view::npos) break;
    query.remove_prefix(amp + 1);
  }
  return Role::participant;
}

std::string_view mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

}  // namespace

struct WsServer::Impl {
  class WsConn;
  class HttpConn;

  Options opts;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread io_thread;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<Inbound> inbox;
  bool stopped = false;

  // Touched only on the I/O thread.
  std::map<ConnId, std::shared_ptr<WsConn>> conns;
  ConnId next_id = 1;
  std::atomic<int> pending_writes{0};

  void push(Inbound ev) {
    {
      std::lock_guard lock(mu);
      ev.ts_ms = unix_ms();
      inbox.push_back(std::move(ev));
    }
    cv.notify_all();
  }

  void do_accept();
  void serve_file(const http::request<http::string_body>& req, http::response<http::string_body>& res) const;
};

class WsServer::Impl::WsConn : public std::enable_shared_from_this<WsConn> {
 public:
  WsConn(Impl& server, tcp::socket socket, Role role)
      : server_(server), ws_(std::move(socket)), role_(role) {}

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->id_ = self->server_.next_id++;
      self->server_.conns[self->id_] = self;
      self->server_.push({Inbound::Kind::connected, self->id_, self->role_, {}, 0});
      self->do_read();
    });
  }

  void send(std::string text) {
    outq_.push_back(std::move(text));
    if (outq_.size() == 1) do_write();
  }

  void close() {
    if (closed_) return;
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

 private:
  void do_read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->finish();
      auto text = beast::buffers_to_string(self->buf_.data());
      self->buf_.consume(self->buf_.size());
      auto body = nlohmann::json::parse(text, nullptr, false);
      if (body.is_discarded()) body = std::move(text);
      self->server_.push({Inbound::Kind::message, self->id_, self->role_, std::move(body), 0});
      self->do_read();
    });
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(outq_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->outq_.pop_front();
      --self->server_.pending_writes;
      if (ec) {
        self->server_.pending_writes -= static_cast<int>(self->outq_.size());
        self->outq_.clear();
        return self->finish();
      }
      if (!self->outq_.empty()) self->do_write();
    });
  }

  void finish() {
    if (closed_) return;
    closed_ = true;
    server_.conns.erase(id_);
    server_.pending_writes -= static_cast<int>(outq_.size());
    outq_.clear();
    server_.push({Inbound::Kind::disconnected, id_, role_, {}, 0});
  }

  Impl& server_;
  websocket::stream<beast::tcp_stream> ws_;
  Role role_;
  ConnId id_ = 0;
  beast::flat_buffer buf_;
  std::deque<std::string> outq_;
  bool closed_ = false;
};

class WsServer::Impl::HttpConn : public std::enable_shared_from_this<HttpConn> {
 public:
  HttpConn(Impl& server, tcp::socket socket) : server_(server), stream_(std::move(socket)) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (websocket::is_upgrade(self->req_)) {
        const auto target = self->req_.target();
        const Role role = role_from_target(std::string_view(target.data(), target.size()));
        beast::get_lowest_layer(self->stream_).expires_never();
        std::make_shared<WsConn>(self->server_, self->stream_.release_socket(), role)
            ->start(std::move(self->req_));
        return;
      }
      self->res_.version(self->req_.version());
      self->res_.keep_alive(false);
      self->server_.serve_file(self->req_, self->res_);
      self->res_.prepare_payload();
      http::async_write(self->stream_, self->res_, [self](beast::error_code, std::size_t) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      });
    });
  }

 private:
  Impl& server_;
  beast::tcp_stream stream_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
  http::response<http::string_body> res_;
};

void WsServer::Impl::do_accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpConn>(*this, std::move(socket))->start();
    do_accept();
  });
}

void WsServer::Impl::serve_file(const http::request<http::string_body>& req,
                                http::response<http::string_body>& res) const {
  const auto fail = [&](http::status status, std::string_view text) {
    res.result(status);
    res.set(http::field::content_type, "text/plain");
    res.body() = std::string(text);
  };
  if (req.method() != http::verb::get) return fail(http::status::method_not_allowed, "GET only\n");
  if (opts.assets_dir.empty()) return fail(http::status::not_found, "no assets\n");
  const auto target = req.target();
  std::string path(target.data(), target.size());
  path = path.substr(0, path.find('?'));
  if (path.empty() || path[0] != '/' || path.find("..") != std::string::npos)
    return fail(http::status::bad_request, "bad path\n");
  if (path.back() == '/') path += "index.html";
  const auto file = opts.assets_dir / path.substr(1);
  std::ifstream in(file, std::ios::binary);
  if (!in) return fail(http::status::not_found, "not found\n");
  std::ostringstream body;
  body << in.rdbuf();
  res.result(http::status::ok);
  res.set(http::field::content_type, std::string(mime_type(file)));
  res.body() = body.str();
}

WsServer::WsServer(Options opts) : impl_(std::make_unique<Impl>()) {
  impl_->opts = std::move(opts);
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->opts.host, ec);
  if (ec) throw std::runtime_error("invalid listen address '" + impl_->opts.host + "'");
  const tcp::endpoint endpoint(address, impl_->opts.port);
  const auto where = impl_->opts.host + ":" + std::to_string(impl_->opts.port);
  auto& acc = impl_->acceptor;
  acc.open(endpoint.protocol(), ec);
  if (!ec) acc.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(endpoint, ec);
  if (!ec) acc.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw std::runtime_error("cannot listen on " + where + ": " + ec.message());
  impl_->do_accept();
  impl_->io_thread = std::thread([impl = impl_.get()] { impl->ioc.run(); });
}

WsServer::~WsServer() { shutdown(std::chrono::milliseconds(0)); }

std::uint16_t WsServer::port() const { return impl_->acceptor.local_endpoint().port(); }

std::int64_t WsServer::now_ms() { return unix_ms(); }

std::optional<Inbound> WsServer::poll(std::int64_t until_ms) {
  std::unique_lock lock(impl_->mu);
  while (true) {
    if (!impl_->inbox.empty() && impl_->inbox.front().ts_ms <= until_ms) {
      auto ev = std::move(impl_->inbox.front());
      impl_->inbox.pop_front();
      return ev;
    }
    if (impl_->stopped) return std::nullopt;
    if (until_ms == std::numeric_limits<std::int64_t>::max()) {
      impl_->cv.wait(lock);
      continue;
    }
    const auto now = unix_ms();
    if (now >= until_ms) return std::nullopt;
    impl_->cv.wait_for(lock, std::chrono::milliseconds(until_ms - now));
  }
}

void WsServer::send(ConnId conn, const nlohmann::json& msg) {
  ++impl_->pending_writes;
  net::post(impl_->ioc, [impl = impl_.get(), conn, text = msg.dump()]() mutable {
    auto it = impl->conns.find(conn);
    if (it == impl->conns.end()) {
      --impl->pending_writes;
      return;
    }
    it->second->send(std::move(text));
  });
}

void WsServer::shutdown(std::chrono::milliseconds drain) {
  if (!impl_->io_thread.joinable()) return;
  const auto until = std::chrono::steady_clock::now() + drain;
  while (impl_->pending_writes > 0 && std::chrono::steady_clock::now() < until)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  net::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ignored;
    impl->acceptor.close(ignored);
    for (auto& [id, conn] : impl->conns) conn->close();
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(drain.count() > 0 ? 100 : 0));
  impl_->ioc.stop();
  impl_->io_thread.join();
  impl_->conns.clear();
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopped = true;
  }
  impl_->cv.notify_all();
}

}  // namespace mglab
