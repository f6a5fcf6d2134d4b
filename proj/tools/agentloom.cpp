// agentloom command line: launch the studio server, serve an exported
// workflow at /predict, or run a workflow once against a task.

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <pthread.h>

#include "agentloom/engine.hpp"
#include "agentloom/error.hpp"
#include "agentloom/server.hpp"
#include "agentloom/store.hpp"

namespace fs = std::filesystem;
using namespace agentloom;

namespace {

constexpr int kExitRunError = 1;
constexpr int kExitSpecError = 2;

constexpr const char* kPrecedence =
    "Settings resolve as: command-line flags, then environment variables "
    "(AGENTLOOM_DB, AGENTLOOM_PRICING), then the --config file, then defaults.";

std::optional<std::string> env_var(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

fs::path default_db_path() {
  if (auto xdg = env_var("XDG_DATA_HOME")) return fs::path(*xdg) / "agentloom" / "agentloom.db";
  if (auto home = env_var("HOME")) return fs::path(*home) / ".local" / "share" / "agentloom" / "agentloom.db";
  return fs::path("agentloom.db");
}

// Optional JSON config file: {"db", "pricing", "host", "port", "static_dir"}.
struct ConfigFile {
  std::optional<std::string> db, pricing, host, static_dir;
  std::optional<int> port;
};

ConfigFile load_config(const std::string& path) {
  ConfigFile c;
  if (path.empty()) return c;
  Json j = parse_json_text(read_file(path));
  if (!j.is_object()) throw Error(ErrorCode::schema_error, path + ": expected a JSON object", path);
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key)) return std::nullopt;
    if (!j[key].is_string()) throw Error(ErrorCode::schema_error, path + ": " + key + " must be a string", key);
    return j[key].get<std::string>();
  };
  c.db = str("db");
  c.pricing = str("pricing");
  c.host = str("host");
  c.static_dir = str("static_dir");
  if (j.contains("port")) {
    if (!j["port"].is_number_integer()) throw Error(ErrorCode::schema_error, path + ": port must be an integer", "port");
    c.port = j["port"].get<int>();
  }
  return c;
}

template <typename T>
T resolve(const std::optional<T>& flag, const std::optional<T>& env, const std::optional<T>& config,
          T fallback) {
  if (flag) return *flag;
  if (env) return *env;
  if (config) return *config;
  return fallback;
}

PricingTable resolve_pricing(const std::optional<std::string>& flag, const ConfigFile& config) {
  auto path = resolve<std::string>(flag, env_var("AGENTLOOM_PRICING"), config.pricing, "");
  if (path.empty()) return {};
  return load_pricing(path);
}

void print_error(const Error& e) {
  std::cerr << "error: " << e.what() << '\n';
  for (const auto& d : e.details()) std::cerr << "  " << d << '\n';
}

// Blocks SIGINT/SIGTERM in every thread so the main thread can sigwait().
sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int wait_and_stop(Server& server, const sigset_t& signals) {
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down\n";
  server.stop();
  return 0;
}

struct UiArgs {
  std::optional<int> port;
  std::optional<std::string> host, db, static_dir, pricing;
  std::string config;
};

int cmd_ui(const UiArgs& a) {
  ConfigFile config;
  PricingTable pricing;
  try {
    config = load_config(a.config);
    pricing = resolve_pricing(a.pricing, config);
  } catch (const Error& e) {
    print_error(e);
    return kExitSpecError;
  }
  fs::path db = resolve<std::string>(a.db, env_var("AGENTLOOM_DB"), config.db, default_db_path().string());
  ServerOptions opts;
  opts.host = resolve<std::string>(a.host, std::nullopt, config.host, "127.0.0.1");
  opts.port = static_cast<unsigned short>(resolve<int>(a.port, std::nullopt, config.port, 8081));
  opts.static_dir = resolve<std::string>(a.static_dir, std::nullopt, config.static_dir, "");
  opts.pricing = std::move(pricing);

  auto signals = block_shutdown_signals();
  std::unique_ptr<Store> store;
  try {
    store = std::make_unique<Store>(db);
  } catch (const Error& e) {
    print_error(e);
    return 1;
  }
  Server server(*store, opts);
  try {
    server.start();
  } catch (const Error& e) {
    print_error(e);
    return 1;
  }
  std::cout << "agentloom studio running at " << server.url() << " (database " << db.string() << ")"
            << std::endl;
  return wait_and_stop(server, signals);
}

struct ServeArgs {
  std::string workflow;
  std::optional<int> port;
  std::optional<std::string> host, pricing;
  std::string config;
};

int cmd_serve(const ServeArgs& a) {
  ConfigFile config;
  ServerOptions opts;
  std::unique_ptr<Server> server;
  try {
    config = load_config(a.config);
    opts.pricing = resolve_pricing(a.pricing, config);
    opts.host = resolve<std::string>(a.host, std::nullopt, config.host, "127.0.0.1");
    opts.port = static_cast<unsigned short>(resolve<int>(a.port, std::nullopt, config.port, 8000));
    WorkflowSpec spec = parse_workflow(read_file(a.workflow));
    // Fail before binding when models cannot be set up (e.g. a missing key).
    Environment probe;
    probe.workdir = fs::temp_directory_path() / ("agentloom-probe-" + new_id());
    instantiate(spec, probe);
    std::error_code ec;
    fs::remove_all(probe.workdir, ec);
    server = std::make_unique<Server>(std::move(spec), opts);
  } catch (const Error& e) {
    print_error(e);
    return kExitSpecError;
  }
  auto signals = block_shutdown_signals();
  try {
    server->start();
  } catch (const Error& e) {
    print_error(e);
    return 1;
  }
  std::cout << "agentloom serving " << a.workflow << " at " << server->url() << "/predict" << std::endl;
  return wait_and_stop(*server, signals);
}

struct RunArgs {
  std::string workflow, task, format = "text";
  std::optional<std::string> pricing;
  std::string config;
};

int cmd_run(const RunArgs& a) {
  std::unique_ptr<WorkflowManager> manager;
  try {
    ConfigFile config = load_config(a.config);
    Environment env;
    env.pricing = resolve_pricing(a.pricing, config);
    manager = std::make_unique<WorkflowManager>(fs::path(a.workflow), env);
  } catch (const Error& e) {
    print_error(e);
    return kExitSpecError;
  }
  for (const auto& w : manager->warnings()) std::cerr << "warning: " << w << '\n';

  RunResult result;
  try {
    result = manager->run(a.task);
  } catch (const Error& e) {
    print_error(e);
    return kExitSpecError;
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  if (a.format == "structured") {
    std::cout << canonical_dump(to_json(result));
  } else {
    std::cout << result.final_message.content << '\n';
  }
  std::cout.flush();
  if (result.status == RunStatus::error) {
    std::cerr << "error: run failed: " << result.error << '\n';
    return kExitRunError;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"agentloom: multi-agent workflow studio"};
  app.footer(kPrecedence);
  app.require_subcommand(1);

  UiArgs ui;
  auto* ui_cmd = app.add_subcommand("ui", "Launch the studio API and web UI");
  ui_cmd->add_option("--port", ui.port, "Port to listen on (default 8081; 0 picks a free port)");
  ui_cmd->add_option("--host", ui.host, "Address to bind (default 127.0.0.1)");
  ui_cmd->add_option("--db", ui.db, "Database file (env AGENTLOOM_DB; default ~/.local/share/agentloom/agentloom.db)");
  ui_cmd->add_option("--static-dir", ui.static_dir, "Directory holding the built web UI");
  ui_cmd->add_option("--pricing", ui.pricing, "Pricing file (env AGENTLOOM_PRICING)");
  ui_cmd->add_option("--config", ui.config, "JSON config file");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve an exported workflow at POST /predict");
  serve_cmd->add_option("--workflow", serve.workflow, "Workflow document")->required();
  serve_cmd->add_option("--port", serve.port, "Port to listen on (default 8000; 0 picks a free port)");
  serve_cmd->add_option("--host", serve.host, "Address to bind (default 127.0.0.1)");
  serve_cmd->add_option("--pricing", serve.pricing, "Pricing file (env AGENTLOOM_PRICING)");
  serve_cmd->add_option("--config", serve.config, "JSON config file");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a workflow once and print the result");
  run_cmd->add_option("--workflow", run.workflow, "Workflow document")->required();
  run_cmd->add_option("--task", run.task, "Task sent by the initiator")->required();
  run_cmd->add_option("--format", run.format, "Output format")
      ->check(CLI::IsMember({"text", "structured"}));
  run_cmd->add_option("--pricing", run.pricing, "Pricing file (env AGENTLOOM_PRICING)");
  run_cmd->add_option("--config", run.config, "JSON config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitSpecError;
  }

  if (*ui_cmd) return cmd_ui(ui);
  if (*serve_cmd) return cmd_serve(serve);
  return cmd_run(run);
}
