#include "agentloom/server.hpp"

#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "agentloom/error.hpp"

namespace agentloom {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
namespace fs = std::filesystem;

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;
using Respond = std::function<void(Response)>;

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::syntax_error: return 400;
    case ErrorCode::schema_error:
    case ErrorCode::unsupported_version:
    case ErrorCode::validation_error:
    case ErrorCode::precondition_failed:
    case ErrorCode::instantiation_error: return 422;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::transport_error:
    case ErrorCode::malformed_response:
    case ErrorCode::script_exhausted: return 502;
    case ErrorCode::cancelled:
    case ErrorCode::io_error: return 500;
  }
  return 500;
}

namespace {

// --- small HTTP helpers ------------------------------------------------------

Json ok_envelope(Json data, std::string message = {}) {
  Json j;
  j["status"] = "ok";
  j["data"] = std::move(data);
  j["message"] = std::move(message);
  return j;
}

Json error_envelope(std::string_view code, const std::string& message, const std::string& path = {},
                    const std::vector<std::string>& details = {}) {
  Json j;
  j["status"] = "error";
  j["data"] = nullptr;
  j["message"] = message;
  j["code"] = code;
  if (!path.empty()) j["path"] = path;
  if (!details.empty()) j["details"] = details;
  return j;
}

Response make_response(unsigned version, bool keep_alive, int status, std::string body,
                       std::string_view content_type) {
  Response res{static_cast<http::status>(status), version};
  res.set(http::field::server, "agentloom");
  res.set(http::field::content_type, std::string(content_type));
  res.keep_alive(keep_alive);
  res.body() = std::move(body);
  res.prepare_payload();
  return res;
}

Response json_response(const Request& req, int status, const Json& body) {
  return make_response(req.version(), req.keep_alive(), status, body.dump(), "application/json");
}

Response error_response(const Request& req, const Error& e) {
  return json_response(req, http_status_for(e.code()),
                       error_envelope(to_string(e.code()), e.what(), e.path(), e.details()));
}

std::string url_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out.push_back(' ');
    } else if (s[i] == '%' && i + 2 < s.size()) {
      auto hex = std::string(s.substr(i + 1, 2));
      char* end = nullptr;
      long v = std::strtol(hex.c_str(), &end, 16);
      if (end == hex.c_str() + 2) {
        out.push_back(static_cast<char>(v));
        i += 2;
      } else {
        out.push_back('%');
      }
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::map<std::string, std::string> parse_query(std::string_view q) {
  std::map<std::string, std::string> out;
  while (!q.empty()) {
    auto amp = q.find('&');
    auto part = q.substr(0, amp);
    auto eq = part.find('=');
    if (eq == std::string_view::npos) {
      out[url_decode(part)] = "";
    } else {
      out[url_decode(part.substr(0, eq))] = url_decode(part.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  while (!path.empty()) {
    if (path.front() == '/') {
      path.remove_prefix(1);
      continue;
    }
    auto slash = path.find('/');
    out.push_back(url_decode(path.substr(0, slash)));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash);
  }
  return out;
}

Json parse_body(const Request& req) {
  if (req.body().empty()) {
    throw Error(ErrorCode::syntax_error, "request body must be a JSON object");
  }
  Json j = parse_json_text(req.body());
  if (!j.is_object()) throw Error(ErrorCode::schema_error, "request body must be a JSON object");
  return j;
}

std::string_view mime_type(const fs::path& p) {
  auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".woff2") return "font/woff2";
  if (ext == ".map" || ext == ".txt") return "text/plain";
  return "application/octet-stream";
}

constexpr std::string_view kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>agentloom</title></head>"
    "<body><h1>agentloom</h1><p>The API is available under <code>/api</code>. "
    "Start the server with <code>--static-dir</code> to serve the web UI here.</p></body></html>";

Json report_to_json(const ValidationReport& r) {
  Json j;
  j["ok"] = r.ok;
  j["issues"] = Json::array();
  for (const auto& i : r.issues) {
    Json issue;
    issue["severity"] = i.severity == Severity::error ? "error" : "warning";
    issue["path"] = i.path;
    issue["message"] = i.message;
    j["issues"].push_back(std::move(issue));
  }
  return j;
}

// --- event fan-out -----------------------------------------------------------

class Subscriber {
 public:
  virtual ~Subscriber() = default;
  virtual void deliver(std::shared_ptr<const std::string> frame) = 0;
};

// Per-session hub: subscribers plus the controls of the active run.
struct SessionBus {
  std::mutex mu;
  std::vector<std::weak_ptr<Subscriber>> subscribers;
  std::shared_ptr<QueuedHumanInput> input;
  std::shared_ptr<std::stop_source> stop;

  void subscribe(std::weak_ptr<Subscriber> s) {
    std::lock_guard lock(mu);
    subscribers.push_back(std::move(s));
  }

  void publish(const std::string& text) {
    auto frame = std::make_shared<const std::string>(text);
    std::lock_guard lock(mu);
    std::erase_if(subscribers, [](const auto& w) { return w.expired(); });
    for (const auto& w : subscribers) {
      if (auto s = w.lock()) s->deliver(frame);
    }
  }

  void push_input(std::string text) {
    std::lock_guard lock(mu);
    if (input) input->push(std::move(text));
  }

  void cancel() {
    std::lock_guard lock(mu);
    if (stop) stop->request_stop();
    if (input) input->close();
  }
};

}  // namespace

// ---------------------------------------------------------------------------

struct Server::Impl : std::enable_shared_from_this<Server::Impl> {
  Store* store = nullptr;
  std::optional<WorkflowSpec> workflow;
  ServerOptions opts;
  net::io_context ioc;
  std::optional<tcp::acceptor> acceptor;
  std::vector<std::thread> threads;
  unsigned short bound_port = 0;
  std::atomic<bool> running{false};

  std::mutex buses_mu;
  std::map<std::string, std::shared_ptr<SessionBus>, std::less<>> buses;

  std::mutex workers_mu;
  std::condition_variable workers_cv;
  int workers = 0;

  explicit Impl(ServerOptions o) : opts(std::move(o)), ioc(std::max(1, opts.io_threads)) {}

  std::shared_ptr<SessionBus> bus_for(std::string_view session_id) {
    std::lock_guard lock(buses_mu);
    auto it = buses.find(session_id);
    if (it == buses.end()) it = buses.emplace(std::string(session_id), std::make_shared<SessionBus>()).first;
    return it->second;
  }

  bool session_exists(std::string_view id) const {
    return store && store->find(EntityKind::session, id).has_value();
  }

  void spawn(std::function<void()> fn) {
    {
      std::lock_guard lock(workers_mu);
      ++workers;
    }
    std::thread([self = shared_from_this(), fn = std::move(fn)] {
      fn();
      std::lock_guard lock(self->workers_mu);
      --self->workers;
      self->workers_cv.notify_all();
    }).detach();
  }

  void do_accept();
  void handle(Request req, Respond respond);
  void handle_api(const Request& req, const std::vector<std::string>& parts,
                  const std::map<std::string, std::string>& query, Respond& respond);
  void handle_crud(const Request& req, EntityKind kind, const std::vector<std::string>& parts,
                   const std::map<std::string, std::string>& query, Respond& respond);
  void handle_run(const Request& req, const std::string& session_id, Respond& respond);
  void handle_predict(const Request& req, Respond& respond);
  Response serve_static(const Request& req, const std::string& path);
};

namespace {

class WsSession : public Subscriber, public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, std::shared_ptr<Server::Impl> server)
      : ws_(std::move(socket)), server_(std::move(server)) {}

  void run(Request req) {
    std::string target(req.target());
    auto parts = split_path(std::string_view(target).substr(0, target.find('?')));
    std::string session_id = parts.size() == 4 ? parts[3] : std::string();
    bool known = !session_id.empty() && server_->session_exists(session_id);
    if (known) {
      bus_ = server_->bus_for(session_id);
      bus_->subscribe(weak_from_this());
    }
    std::string offered(req[http::field::sec_websocket_protocol]);
    bool wants_proto = offered.find(kWsSubprotocol) != std::string::npos;
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.set_option(websocket::stream_base::decorator([wants_proto](websocket::response_type& res) {
      res.set(http::field::server, "agentloom");
      if (wants_proto) res.set(http::field::sec_websocket_protocol, std::string(kWsSubprotocol));
    }));
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this(), known](beast::error_code ec) {
      if (ec) return;
      self->accepted_ = true;
      if (!known) {
        self->close(websocket::close_code::protocol_error, "unknown session");
        return;
      }
      self->do_read();
      self->flush();
    });
  }

  void deliver(std::shared_ptr<const std::string> frame) override {
    net::post(ws_.get_executor(), [self = shared_from_this(), frame = std::move(frame)] {
      if (self->closing_) return;
      self->queue_.push_back(frame);
      if (self->queue_.size() > self->server_->opts.ws_queue_limit) {
        self->close(kWsOverflowClose, "event queue overflow");
        return;
      }
      self->flush();
    });
  }

 private:
  void flush() {
    if (!accepted_ || writing_ || closing_ || queue_.empty()) return;
    writing_ = true;
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec,
                                                                              std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->closing_ = true;
        return;
      }
      if (!self->queue_.empty()) self->queue_.pop_front();
      if (self->pending_close_) {
        self->send_close();
        return;
      }
      self->flush();
    });
  }

  void close(websocket::close_reason reason, const char* text) {
    closing_ = true;
    queue_.clear();
    reason.reason = text;
    close_reason_ = reason;
    if (writing_) {
      pending_close_ = true;
    } else {
      send_close();
    }
  }

  void close(std::uint16_t code, const char* text) { close(websocket::close_reason(code), text); }
  void close(websocket::close_code code, const char* text) { close(websocket::close_reason(code), text); }

  void send_close() {
    pending_close_ = false;
    ws_.async_close(close_reason_, [self = shared_from_this()](beast::error_code) {});
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closing_ = true;
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->on_inbound(text);
      self->do_read();
    });
  }

  void on_inbound(const std::string& text) {
    Json j = Json::parse(text, nullptr, false);
    if (!j.is_object() || !bus_) return;
    auto kind = j.value("kind", std::string());
    if (kind == "human_input") {
      bus_->push_input(j.value("content", std::string()));
    } else if (kind == "cancel") {
      bus_->cancel();
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Server::Impl> server_;
  std::shared_ptr<SessionBus> bus_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  websocket::close_reason close_reason_;
  bool accepted_ = false;
  bool writing_ = false;
  bool closing_ = false;
  bool pending_close_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<Server::Impl> server)
      : stream_(std::move(socket)), server_(std::move(server)) {}

  void run() {
    net::dispatch(stream_.get_executor(), [self = shared_from_this()] { self->do_read(); });
  }

 private:
  void do_read() {
    parser_.emplace();
    parser_->body_limit(64 * 1024 * 1024);
    http::async_read(stream_, buffer_, *parser_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (websocket::is_upgrade(parser_->get())) {
      auto target = std::string(parser_->get().target());
      if (target.rfind("/api/ws/sessions/", 0) == 0 && server_->store) {
        std::make_shared<WsSession>(stream_.release_socket(), server_)->run(parser_->release());
        return;
      }
    }
    Request req = parser_->release();
    unsigned version = req.version();
    bool keep_alive = req.keep_alive();
    auto executor = stream_.get_executor();
    server_->handle(std::move(req), [self = shared_from_this(), executor, version,
                                     keep_alive](Response res) {
      res.version(version);
      res.keep_alive(keep_alive);
      net::post(executor, [self, res = std::move(res)]() mutable { self->write(std::move(res)); });
    });
  }

  void write(Response res) {
    auto sp = std::make_shared<Response>(std::move(res));
    http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (sp->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  std::shared_ptr<Server::Impl> server_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Impl

void Server::Impl::do_accept() {
  acceptor->async_accept(net::make_strand(ioc), [self = shared_from_this()](beast::error_code ec,
                                                                          tcp::socket socket) {
    if (!self->running) return;
    if (!ec) std::make_shared<HttpSession>(std::move(socket), self)->run();
    self->do_accept();
  });
}

void Server::Impl::handle(Request req, Respond respond) {
  std::string target_text(req.target());
  std::string_view target(target_text);
  auto qpos = target.find('?');
  std::string path(target.substr(0, qpos));
  auto query = qpos == std::string_view::npos ? std::map<std::string, std::string>{}
                                              : parse_query(target.substr(qpos + 1));
  try {
    auto parts = split_path(path);
    if (!parts.empty() && parts[0] == "api") {
      handle_api(req, parts, query, respond);
      return;
    }
    if (path == "/predict") {
      if (!workflow) throw Error(ErrorCode::not_found, "/predict is only available in serve mode", path);
      if (req.method() != http::verb::post) {
        respond(json_response(req, 405, error_envelope("method_not_allowed", "use POST /predict")));
        return;
      }
      handle_predict(req, respond);
      return;
    }
    if (req.method() != http::verb::get && req.method() != http::verb::head) {
      respond(json_response(req, 405, error_envelope("method_not_allowed", "static files are read-only")));
      return;
    }
    respond(serve_static(req, path));
  } catch (const Error& e) {
    respond(error_response(req, e));
  } catch (const std::exception& e) {
    respond(json_response(req, 500, error_envelope("internal_error", e.what())));
  }
}

Response Server::Impl::serve_static(const Request& req, const std::string& path) {
  if (opts.static_dir.empty()) {
    if (path == "/" || path == "/index.html") {
      return make_response(req.version(), req.keep_alive(), 200, std::string(kPlaceholderPage),
                           "text/html; charset=utf-8");
    }
    throw Error(ErrorCode::not_found, "no such resource " + path, path);
  }
  fs::path rel;
  for (const auto& p : split_path(path)) {
    if (p == ".." || p == ".") throw Error(ErrorCode::not_found, "no such resource " + path, path);
    rel /= p;
  }
  fs::path file = opts.static_dir / rel;
  std::error_code ec;
  if (rel.empty() || fs::is_directory(file, ec)) file /= "index.html";
  if (!fs::is_regular_file(file, ec)) {
    // client-side routes fall back to the bundle entry point
    if (rel.has_extension()) throw Error(ErrorCode::not_found, "no such resource " + path, path);
    file = opts.static_dir / "index.html";
    if (!fs::is_regular_file(file, ec)) throw Error(ErrorCode::not_found, "no such resource " + path, path);
  }
  return make_response(req.version(), req.keep_alive(), 200, read_file(file), mime_type(file));
}

void Server::Impl::handle_api(const Request& req, const std::vector<std::string>& parts,
                              const std::map<std::string, std::string>& query, Respond& respond) {
  const auto method = req.method();
  if (parts.size() == 2 && parts[1] == "health") {
    Json data;
    data["mode"] = store ? "studio" : "serve";
    respond(json_response(req, 200, ok_envelope(std::move(data))));
    return;
  }
  if (!store) throw Error(ErrorCode::not_found, "no such endpoint " + std::string(req.target()));

  if (parts.size() >= 2 && parts[1] == "gallery") {
    // POST /api/gallery/import, GET /api/gallery/{kind}/{id}/export
    if (parts.size() == 3 && parts[2] == "import" && method == http::verb::post) {
      GalleryItem item = store->import_gallery(req.body());
      respond(json_response(req, 201, ok_envelope(to_json(item), "imported")));
      return;
    }
    if (parts.size() == 5 && parts[4] == "export" && method == http::verb::get) {
      auto kind = entity_kind_from(parts[2]);
      if (!kind) kind = entity_kind_from_plural(parts[2]);
      if (!kind) throw Error(ErrorCode::not_found, "unknown entity kind " + parts[2], parts[2]);
      Json doc = Json::parse(store->export_gallery(*kind, parts[3]));
      respond(json_response(req, 200, ok_envelope(std::move(doc))));
      return;
    }
    throw Error(ErrorCode::not_found, "no such endpoint " + std::string(req.target()));
  }

  if (parts.size() < 2) throw Error(ErrorCode::not_found, "no such endpoint " + std::string(req.target()));
  auto kind = entity_kind_from_plural(parts[1]);
  if (!kind) throw Error(ErrorCode::not_found, "no such endpoint " + std::string(req.target()));

  if (*kind == EntityKind::session && parts.size() == 4) {
    const std::string& id = parts[2];
    if (parts[3] == "run" && method == http::verb::post) {
      handle_run(req, id, respond);
      return;
    }
    if (parts[3] == "messages" && method == http::verb::get) {
      Json data = Json::array();
      for (const auto& m : store->load_history(id)) data.push_back(to_json(m));
      respond(json_response(req, 200, ok_envelope(std::move(data))));
      return;
    }
    if (parts[3] == "profile" && method == http::verb::get) {
      auto history = store->load_history(id);
      PricingTable pricing = opts.pricing;
      try {
        auto w = store->resolve_workflow(store->session(id).workflow_ref);
        pricing = merge_pricing(w.registry, opts.pricing);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::not_found) throw;
      }
      respond(json_response(req, 200, ok_envelope(to_json(profile(history, pricing)))));
      return;
    }
  }
  if (*kind == EntityKind::workflow && parts.size() == 4 && method == http::verb::get) {
    if (parts[3] == "export") {
      WorkflowSpec w = store->resolve_workflow(parts[2]);
      Json doc = Json::parse(export_workflow(w));
      respond(json_response(req, 200, ok_envelope(std::move(doc))));
      return;
    }
    if (parts[3] == "validate") {
      auto report = validate(store->resolve_workflow(parts[2]));
      respond(json_response(req, 200, ok_envelope(report_to_json(report))));
      return;
    }
  }
  handle_crud(req, *kind, parts, query, respond);
}

void Server::Impl::handle_crud(const Request& req, EntityKind kind, const std::vector<std::string>& parts,
                               const std::map<std::string, std::string>& query, Respond& respond) {
  const auto method = req.method();
  auto not_allowed = [&] {
    respond(json_response(req, 405,
                          error_envelope("method_not_allowed",
                                         std::string(req.method_string()) + " not supported here")));
  };
  if (parts.size() == 2) {
    if (method == http::verb::get) {
      ListFilter filter;
      if (auto it = query.find("tag"); it != query.end()) filter.tag = it->second;
      if (auto it = query.find("name"); it != query.end()) filter.name = it->second;
      Json data = Json::array();
      for (const auto& e : store->list(kind, filter)) data.push_back(to_json(e));
      respond(json_response(req, 200, ok_envelope(std::move(data))));
      return;
    }
    if (method == http::verb::post) {
      Json body = parse_body(req);
      std::optional<std::vector<std::string>> tags;
      if (body.contains("tags")) {
        if (!body["tags"].is_array()) throw Error(ErrorCode::schema_error, "tags: expected a list", "tags");
        tags = body["tags"].get<std::vector<std::string>>();
        body.erase("tags");
      }
      if (body.contains("id") && body["id"].is_string() && !body["id"].get<std::string>().empty()) {
        std::string id = body["id"].get<std::string>();
        Entity e = store->update(kind, id, body, tags);
        respond(json_response(req, 200, ok_envelope(to_json(e), "updated")));
      } else {
        body.erase("id");
        Entity e = store->create(kind, body, tags.value_or(std::vector<std::string>{}));
        respond(json_response(req, 201, ok_envelope(to_json(e), "created")));
      }
      return;
    }
    not_allowed();
    return;
  }
  if (parts.size() == 3) {
    const std::string& id = parts[2];
    if (method == http::verb::get) {
      respond(json_response(req, 200, ok_envelope(to_json(store->get(kind, id)))));
      return;
    }
    if (method == http::verb::post) {
      Json body = parse_body(req);
      std::optional<std::vector<std::string>> tags;
      if (body.contains("tags")) {
        tags = body["tags"].get<std::vector<std::string>>();
        body.erase("tags");
      }
      body.erase("id");
      Entity e = store->update(kind, id, body, tags);
      respond(json_response(req, 200, ok_envelope(to_json(e), "updated")));
      return;
    }
    if (method == http::verb::delete_) {
      auto it = query.find("force");
      bool force = it != query.end() && (it->second == "true" || it->second == "1");
      store->remove(kind, id, force);
      Json data;
      data["id"] = id;
      data["deleted"] = true;
      respond(json_response(req, 200, ok_envelope(std::move(data), "deleted")));
      return;
    }
    not_allowed();
    return;
  }
  throw Error(ErrorCode::not_found, "no such endpoint " + std::string(req.target()));
}

void Server::Impl::handle_run(const Request& req, const std::string& session_id, Respond& respond) {
  Json body = parse_body(req);
  std::string task = body.value("task", std::string());
  if (task.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::precondition_failed, "task must not be empty", "task");
  }
  SessionSpec session = store->session(session_id);
  WorkflowSpec spec;
  try {
    spec = store->resolve_workflow(session.workflow_ref);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::not_found) throw;
    throw Error(ErrorCode::not_found,
                "workflow " + session.workflow_ref + " of session " + session_id + " is unavailable: " +
                    e.what(),
                session.workflow_ref);
  }
  if (!store->try_begin_run(session_id)) {
    throw Error(ErrorCode::conflict, "session " + session_id + " already has an active run", session_id);
  }

  auto bus = bus_for(session_id);
  auto input = std::make_shared<QueuedHumanInput>(opts.human_input_timeout);
  auto stop = std::make_shared<std::stop_source>();
  {
    std::lock_guard lock(bus->mu);
    bus->input = input;
    bus->stop = stop;
  }
  spawn([this, req, session_id, session, spec = std::move(spec), task, bus, input, stop,
         respond = std::move(respond)]() mutable {
    auto clear_controls = [&] {
      std::lock_guard lock(bus->mu);
      if (bus->input == input) bus->input.reset();
      if (bus->stop == stop) bus->stop.reset();
    };
    try {
      auto history = store->load_history(session_id);
      Environment env;
      env.workdir = session.workdir;
      env.session_ref = session_id;
      env.env = opts.env;
      env.backend_factory = opts.backend_factory;
      env.sandbox = opts.sandbox;
      env.pricing = opts.pricing;
      WorkflowInstance instance = instantiate(spec, env);
      EventSink sink = [&](const RunEvent& e) {
        if (e.kind == EventKind::message) store->append_message(session_id, message_from_json(e.payload));
        bus->publish(canonical_dump(to_json(e)));
      };
      RunResult result = run_workflow(instance, task, history, sink, *input, stop->get_token());
      clear_controls();
      store->end_run(session_id, result.status == RunStatus::awaiting_human ? SessionStatus::awaiting_human
                                                                           : SessionStatus::idle);
      respond(json_response(req, 200, ok_envelope(to_json(result))));
    } catch (const Error& e) {
      clear_controls();
      store->end_run(session_id, SessionStatus::idle);
      respond(error_response(req, e));
    } catch (const std::exception& e) {
      clear_controls();
      store->end_run(session_id, SessionStatus::idle);
      respond(json_response(req, 500, error_envelope("internal_error", e.what())));
    }
  });
}

void Server::Impl::handle_predict(const Request& req, Respond& respond) {
  Json body = parse_body(req);
  std::string task = body.value("task", std::string());
  if (task.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::precondition_failed, "task must not be empty", "task");
  }
  spawn([this, req, task, respond = std::move(respond)] {
    std::error_code ec;
    fs::path root;
    try {
      Environment env;
      env.session_ref = new_id();
      root = fs::temp_directory_path() / ("agentloom-predict-" + env.session_ref);
      env.workdir = root / "scratch";
      env.env = opts.env;
      env.backend_factory = opts.backend_factory;
      env.sandbox = opts.sandbox;
      env.pricing = opts.pricing;
      WorkflowInstance instance = instantiate(*workflow, env);
      NonInteractiveInput input;
      RunResult result = run_workflow(instance, task, {}, {}, input);
      respond(json_response(req, 200, ok_envelope(to_json(result))));
    } catch (const Error& e) {
      respond(error_response(req, e));
    } catch (const std::exception& e) {
      respond(json_response(req, 500, error_envelope("internal_error", e.what())));
    }
    if (!root.empty()) fs::remove_all(root, ec);
  });
}

// ---------------------------------------------------------------------------
// Server

Server::Server(Store& store, ServerOptions options) : impl_(std::make_shared<Impl>(std::move(options))) {
  impl_->store = &store;
}

Server::Server(WorkflowSpec workflow, ServerOptions options)
    : impl_(std::make_shared<Impl>(std::move(options))) {
  throw_if_invalid(validate(workflow), "workflow " + workflow.id);
  impl_->workflow = std::move(workflow);
}

Server::~Server() { stop(); }

unsigned short Server::start() {
  auto& impl = *impl_;
  if (impl.running) return impl.bound_port;
  std::string where = impl.opts.host + ":" + std::to_string(impl.opts.port);
  try {
    auto address = net::ip::make_address(impl.opts.host == "localhost" ? "127.0.0.1" : impl.opts.host);
    tcp::endpoint endpoint(address, impl.opts.port);
    impl.acceptor.emplace(impl.ioc);
    impl.acceptor->open(endpoint.protocol());
    impl.acceptor->set_option(net::socket_base::reuse_address(true));
    impl.acceptor->bind(endpoint);
    impl.acceptor->listen(net::socket_base::max_listen_connections);
    impl.bound_port = impl.acceptor->local_endpoint().port();
  } catch (const boost::system::system_error& e) {
    impl.acceptor.reset();
    throw Error(ErrorCode::io_error, "cannot listen on " + where + ": " + e.code().message(), where);
  }
  if (impl.store) impl.store->recover_running();
  impl.running = true;
  impl.do_accept();
  for (int i = 0; i < std::max(1, impl.opts.io_threads); ++i) {
    impl.threads.emplace_back([this] { impl_->ioc.run(); });
  }
  return impl.bound_port;
}

void Server::stop() {
  auto& impl = *impl_;
  if (!impl.running.exchange(false)) return;
  net::post(impl.ioc, [&impl] {
    beast::error_code ec;
    if (impl.acceptor) impl.acceptor->close(ec);
  });
  {
    std::lock_guard lock(impl.buses_mu);
    for (auto& [id, bus] : impl.buses) bus->cancel();
  }
  {
    std::unique_lock lock(impl.workers_mu);
    impl.workers_cv.wait(lock, [&] { return impl.workers == 0; });
  }
  impl.ioc.stop();
  for (auto& t : impl.threads) {
    if (t.joinable()) t.join();
  }
  impl.threads.clear();
}

unsigned short Server::port() const noexcept { return impl_->bound_port; }

std::string Server::url() const {
  return "http://" + impl_->opts.host + ":" + std::to_string(impl_->bound_port);
}

}  // namespace agentloom
