#pragma once

// HTTP/1.1 + WebSocket front end.
//
// Studio mode exposes the REST API under /api, the event stream at
// /api/ws/sessions/{id} (subprotocol "agentloom.v1") and static files at /.
// Serve mode exposes a single workflow at POST /predict.

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>

#include "agentloom/engine.hpp"
#include "agentloom/error.hpp"
#include "agentloom/store.hpp"

namespace agentloom {

inline constexpr std::string_view kWsSubprotocol = "agentloom.v1";
// Close code sent when a subscriber falls more than ws_queue_limit frames behind.
inline constexpr std::uint16_t kWsOverflowClose = 4001;

struct ServerOptions {
  std::string host = "127.0.0.1";
  // 0 picks a free port; see Server::port().
  unsigned short port = 8081;
  // Built frontend bundle; a placeholder page is served at / when empty.
  std::filesystem::path static_dir;
  int io_threads = 4;
  PricingTable pricing;
  EnvLookup env = process_env();
  BackendFactory backend_factory = make_backend;
  SandboxOptions sandbox;
  std::size_t ws_queue_limit = 1024;
  // How long a run waits for a human_input frame before pausing with
  // status awaiting_human.
  std::chrono::milliseconds human_input_timeout = std::chrono::minutes(10);
};

// Maps an error code onto the HTTP status used in error envelopes.
int http_status_for(ErrorCode code) noexcept;

class Server {
 public:
  // Studio mode backed by `store`, which must outlive the server.
  Server(Store& store, ServerOptions options);
  // Serve mode for one workflow.
  Server(WorkflowSpec workflow, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts the io threads. Throws io_error naming host:port when
  // the address cannot be bound. Returns the bound port.
  unsigned short start();
  // Cancels active runs, closes connections and joins every thread.
  void stop();
  unsigned short port() const noexcept;
  std::string url() const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace agentloom
