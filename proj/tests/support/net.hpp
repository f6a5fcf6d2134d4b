#pragma once

// HTTP and WebSocket clients for exercising a running server.

#include <httplib.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <optional>
#include <string>

#include "agentloom/util.hpp"

namespace netx {

using agentloom::Json;

struct Reply {
  int status = 0;
  Json body;
  std::string raw;
};

inline Reply to_reply(const httplib::Result& res) {
  Reply r;
  if (!res) return r;
  r.status = res->status;
  r.raw = res->body;
  r.body = Json::parse(res->body, nullptr, false);
  return r;
}

class Http {
 public:
  explicit Http(unsigned short port) : client_("127.0.0.1", port) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(60);
  }
  Reply get(const std::string& path) { return to_reply(client_.Get(path)); }
  Reply post(const std::string& path, const Json& body) {
    return to_reply(client_.Post(path, body.dump(), "application/json"));
  }
  Reply post_raw(const std::string& path, const std::string& body) {
    return to_reply(client_.Post(path, body, "application/json"));
  }
  Reply del(const std::string& path) { return to_reply(client_.Delete(path)); }

 private:
  httplib::Client client_;
};

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace asio = boost::asio;

class WsClient {
 public:
  WsClient(unsigned short port, const std::string& path, const std::string& protocol = "agentloom.v1")
      : ws_(ioc_) {
    asio::ip::tcp::resolver resolver(ioc_);
    beast::get_lowest_layer(ws_).connect(resolver.resolve("127.0.0.1", std::to_string(port)));
    if (!protocol.empty()) {
      ws_.set_option(websocket::stream_base::decorator([protocol](websocket::request_type& req) {
        req.set(beast::http::field::sec_websocket_protocol, protocol);
      }));
    }
    websocket::response_type res;
    ws_.handshake(res, "127.0.0.1:" + std::to_string(port), path);
    protocol_ = std::string(res[beast::http::field::sec_websocket_protocol]);
  }

  const std::string& protocol() const { return protocol_; }

  // Next text frame, or nullopt on close/timeout (see close_code()).
  std::optional<std::string> read(std::chrono::milliseconds timeout = std::chrono::seconds(20)) {
    if (closed_) return std::nullopt;
    bool done = false;
    beast::error_code ec;
    buffer_.consume(buffer_.size());
    ws_.async_read(buffer_, [&](beast::error_code e, std::size_t) {
      done = true;
      ec = e;
    });
    ioc_.restart();
    ioc_.run_for(timeout);
    if (!done) {
      beast::get_lowest_layer(ws_).cancel();
      ioc_.restart();
      ioc_.run();
      closed_ = true;
      timed_out_ = true;
      return std::nullopt;
    }
    if (ec) {
      closed_ = true;
      if (ec == websocket::error::closed) close_code_ = ws_.reason().code;
      return std::nullopt;
    }
    return beast::buffers_to_string(buffer_.data());
  }

  void send(const std::string& text) {
    ws_.text(true);
    ws_.write(asio::buffer(text));
  }

  void close() {
    if (closed_) return;
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
    closed_ = true;
  }

  std::optional<int> close_code() const { return close_code_; }
  bool timed_out() const { return timed_out_; }

 private:
  asio::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::string protocol_;
  bool closed_ = false;
  bool timed_out_ = false;
  std::optional<int> close_code_;
};

}  // namespace netx
