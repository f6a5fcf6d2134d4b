#include "agentloom/tools.hpp"

#include <fcntl.h>
#include <linux/landlock.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <sstream>

#include "agentloom/error.hpp"
#include "agentloom/json_reader.hpp"

namespace fs = std::filesystem;

namespace agentloom {

std::string_view to_string(ToolStatus v) noexcept {
  return v == ToolStatus::success ? "success" : "failure";
}

std::string_view to_string(FailureKind v) noexcept {
  switch (v) {
    case FailureKind::nonzero_exit: return "nonzero_exit";
    case FailureKind::timeout: return "timeout";
    case FailureKind::spawn_error: return "spawn_error";
  }
  return "spawn_error";
}

std::string_view to_string(MediaKind v) noexcept {
  switch (v) {
    case MediaKind::image: return "image";
    case MediaKind::code: return "code";
    case MediaKind::document: return "document";
    case MediaKind::data: return "data";
    case MediaKind::other: return "other";
  }
  return "other";
}

MediaKind classify_artifact(const fs::path& path) {
  std::string ext = path.extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  static const std::map<std::string, MediaKind, std::less<>> table = {
      {"png", MediaKind::image},    {"jpg", MediaKind::image},    {"jpeg", MediaKind::image},
      {"svg", MediaKind::image},    {"gif", MediaKind::image},    {"py", MediaKind::code},
      {"js", MediaKind::code},      {"sh", MediaKind::code},      {"rs", MediaKind::code},
      {"md", MediaKind::document},  {"pdf", MediaKind::document}, {"txt", MediaKind::document},
      {"csv", MediaKind::data},     {"json", MediaKind::data},
  };
  auto it = table.find(ext);
  return it == table.end() ? MediaKind::other : it->second;
}

ToolInvocation make_invocation(const SkillSpec& skill, Json arguments, const fs::path& workdir) {
  ToolInvocation inv;
  inv.skill_ref = skill.name;
  inv.language = skill.language;
  inv.source = skill.source;
  inv.arguments = arguments.is_object() ? std::move(arguments) : Json::object();
  inv.env_allowlist = skill.env_allowlist;
  inv.session_workdir = workdir;
  inv.timeout_s = skill.timeout_s;
  return inv;
}

// ---------------------------------------------------------------------------
// Snapshots

Snapshot snapshot_workdir(const fs::path& workdir) {
  Snapshot snap;
  std::error_code ec;
  if (!fs::is_directory(workdir, ec)) return snap;
  for (auto it = fs::recursive_directory_iterator(workdir, fs::directory_options::skip_permission_denied, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    const auto rel = fs::relative(it->path(), workdir, ec);
    if (ec) break;
    if (!rel.empty() && *rel.begin() == kScriptDir) {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file(ec) || it->is_symlink(ec)) continue;
    auto mtime = fs::last_write_time(it->path(), ec);
    FileStamp stamp;
    stamp.mtime_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(mtime.time_since_epoch()).count();
    stamp.size = it->file_size(ec);
    snap.emplace(rel.generic_string(), stamp);
  }
  return snap;
}

std::vector<ArtifactRef> diff_snapshots(const Snapshot& before, const Snapshot& after) {
  std::vector<ArtifactRef> out;
  for (const auto& [path, stamp] : after) {
    auto it = before.find(path);
    if (it != before.end() && it->second == stamp) continue;
    out.push_back(ArtifactRef{path, stamp.size, classify_artifact(path)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Landlock

namespace {

constexpr std::uint64_t kFsRefer = 1ULL << 13;
constexpr std::uint64_t kFsTruncate = 1ULL << 14;

constexpr std::uint64_t kFsAbi1 =
    LANDLOCK_ACCESS_FS_EXECUTE | LANDLOCK_ACCESS_FS_WRITE_FILE | LANDLOCK_ACCESS_FS_READ_FILE |
    LANDLOCK_ACCESS_FS_READ_DIR | LANDLOCK_ACCESS_FS_REMOVE_DIR |
    LANDLOCK_ACCESS_FS_REMOVE_FILE | LANDLOCK_ACCESS_FS_MAKE_CHAR | LANDLOCK_ACCESS_FS_MAKE_DIR |
    LANDLOCK_ACCESS_FS_MAKE_REG | LANDLOCK_ACCESS_FS_MAKE_SOCK | LANDLOCK_ACCESS_FS_MAKE_FIFO |
    LANDLOCK_ACCESS_FS_MAKE_BLOCK | LANDLOCK_ACCESS_FS_MAKE_SYM;

constexpr std::uint64_t kFsReadOnly =
    LANDLOCK_ACCESS_FS_EXECUTE | LANDLOCK_ACCESS_FS_READ_FILE | LANDLOCK_ACCESS_FS_READ_DIR;

int landlock_abi() {
  static const int abi = [] {
    long v = syscall(SYS_landlock_create_ruleset, nullptr, 0, LANDLOCK_CREATE_RULESET_VERSION);
    return v < 0 ? 0 : static_cast<int>(v);
  }();
  return abi;
}

class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    reset(std::exchange(o.fd_, -1));
    return *this;
  }
  ~UniqueFd() { reset(); }
  int get() const noexcept { return fd_; }
  void reset(int fd = -1) noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

bool add_path_rule(int ruleset, const fs::path& path, std::uint64_t access) {
  int fd = ::open(path.c_str(), O_PATH | O_CLOEXEC);
  if (fd < 0) return errno == ENOENT;  // absent system dirs are fine
  landlock_path_beneath_attr attr{};
  attr.allowed_access = access;
  attr.parent_fd = fd;
  if (!fs::is_directory(path)) {
    // Non-directory rules may only carry file rights.
    attr.allowed_access &= LANDLOCK_ACCESS_FS_EXECUTE | LANDLOCK_ACCESS_FS_WRITE_FILE |
                           LANDLOCK_ACCESS_FS_READ_FILE | kFsTruncate;
  }
  long rc = syscall(SYS_landlock_add_rule, ruleset, LANDLOCK_RULE_PATH_BENEATH, &attr, 0);
  ::close(fd);
  return rc == 0;
}

// Ruleset letting the child read system locations and fully use the workdir.
UniqueFd build_ruleset(const fs::path& workdir, const SandboxOptions& opts) {
  int abi = landlock_abi();
  if (abi < 1) return {};
  std::uint64_t handled = kFsAbi1;
  if (abi >= 2) handled |= kFsRefer;
  if (abi >= 3) handled |= kFsTruncate;
  landlock_ruleset_attr attr{};
  attr.handled_access_fs = handled;
  UniqueFd ruleset(static_cast<int>(syscall(SYS_landlock_create_ruleset, &attr, sizeof(attr), 0)));
  if (ruleset.get() < 0) return {};
  for (const auto& p : opts.readable_paths) {
    if (!add_path_rule(ruleset.get(), p, kFsReadOnly & handled)) return {};
  }
  add_path_rule(ruleset.get(), "/dev/null",
                (kFsReadOnly | LANDLOCK_ACCESS_FS_WRITE_FILE | kFsTruncate) & handled);
  if (!add_path_rule(ruleset.get(), workdir, handled)) return {};
  return ruleset;
}

std::string argument_text(const Json& value) {
  return value.is_string() ? value.get<std::string>() : value.dump();
}

void append_capped(std::string& buf, const char* data, std::size_t n, std::size_t limit,
                   bool& truncated) {
  if (buf.size() < limit) {
    std::size_t take = std::min(n, limit - buf.size());
    buf.append(data, take);
    if (take < n) truncated = true;
  } else if (n > 0) {
    truncated = true;
  }
}

ToolResult spawn_failure(std::string message, std::chrono::steady_clock::time_point start) {
  ToolResult r;
  r.status = ToolStatus::failure;
  r.exit_code = -1;
  r.failure_kind = FailureKind::spawn_error;
  r.stderr_text = std::move(message);
  r.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Splits a "#!/usr/bin/env python3" line into argv words.
std::vector<std::string> shebang_words(const std::string& source) {
  std::vector<std::string> words;
  if (source.rfind("#!", 0) != 0) return words;
  std::istringstream line(source.substr(2, source.find('\n') - 2));
  std::string w;
  while (line >> w) words.push_back(w);
  return words;
}

std::string find_in_path(const std::string& program) {
  if (program.find('/') != std::string::npos) return program;
  for (const char* dir : {"/usr/local/bin", "/usr/bin", "/bin"}) {
    fs::path candidate = fs::path(dir) / program;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate.string();
  }
  return program;
}

}  // namespace

bool filesystem_confinement_available() { return landlock_abi() >= 1; }

// ---------------------------------------------------------------------------
// execute

ToolResult execute(const ToolInvocation& inv, const SandboxOptions& opts) {
  using SteadyClock = std::chrono::steady_clock;
  const auto start = SteadyClock::now();

  std::error_code ec;
  if (inv.session_workdir.empty() || !fs::is_directory(inv.session_workdir, ec)) {
    return spawn_failure("session workdir does not exist: " + inv.session_workdir.string(), start);
  }
  if (!(inv.timeout_s > 0)) return spawn_failure("timeout_s must be > 0", start);
  const fs::path workdir = fs::canonical(inv.session_workdir, ec);
  const fs::path script_dir = workdir / kScriptDir;
  fs::create_directories(script_dir, ec);
  const bool is_shell = inv.language == SkillLanguage::shell;
  const fs::path script = script_dir / ("skill-" + new_id() + (is_shell ? ".sh" : ".script"));
  try {
    write_file(script, inv.source);
  } catch (const Error& e) {
    return spawn_failure(e.what(), start);
  }

  // argv
  std::vector<std::string> args;
  if (is_shell) {
    args = {"/bin/sh", script.string()};
  } else {
    auto words = shebang_words(inv.source);
    if (words.empty()) words = {opts.interpreter};
    if (words.front() == "/usr/bin/env" && words.size() > 1) words.erase(words.begin());
    words.front() = find_in_path(words.front());
    args = std::move(words);
    args.push_back(script.string());
  }
  std::vector<std::string> keys;
  for (const auto& [key, value] : inv.arguments.items()) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  for (const auto& key : keys) args.push_back("--" + key + "=" + argument_text(inv.arguments[key]));

  // environment
  std::vector<std::string> env = {
      "PATH=/usr/local/bin:/usr/bin:/bin",
      "HOME=" + workdir.string(),
      "TMPDIR=" + script_dir.string(),
      "LANG=C.UTF-8",
      "AGENTLOOM_ARGS=" + inv.arguments.dump(),
  };
  for (const auto& name : inv.env_allowlist) {
    if (auto value = opts.env(name)) env.push_back(name + "=" + *value);
  }

  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (auto& e : env) envp.push_back(e.data());
  envp.push_back(nullptr);

  UniqueFd ruleset;
  if (opts.confine_filesystem) {
    ruleset = build_ruleset(workdir, opts);
    if (ruleset.get() < 0 && filesystem_confinement_available()) {
      return spawn_failure("could not build filesystem confinement ruleset", start);
    }
  }

  const Snapshot before = snapshot_workdir(workdir);

  std::array<int, 2> out_pipe{}, err_pipe{}, exec_pipe{};
  if (::pipe2(out_pipe.data(), O_CLOEXEC) != 0 || ::pipe2(err_pipe.data(), O_CLOEXEC) != 0 ||
      ::pipe2(exec_pipe.data(), O_CLOEXEC) != 0) {
    return spawn_failure(std::string("pipe: ") + std::strerror(errno), start);
  }
  UniqueFd out_r(out_pipe[0]), out_w(out_pipe[1]), err_r(err_pipe[0]), err_w(err_pipe[1]),
      exec_r(exec_pipe[0]), exec_w(exec_pipe[1]);

  const int ruleset_fd = ruleset.get();
  pid_t pid = ::fork();
  if (pid < 0) return spawn_failure(std::string("fork: ") + std::strerror(errno), start);
  if (pid == 0) {
    // Child: only async-signal-safe calls from here on.
    ::setpgid(0, 0);
    ::dup2(out_w.get(), STDOUT_FILENO);
    ::dup2(err_w.get(), STDERR_FILENO);
    int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    int err = 0;
    if (::chdir(workdir.c_str()) != 0) err = errno;
    if (!err && ruleset_fd >= 0) {
      if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0 ||
          syscall(SYS_landlock_restrict_self, ruleset_fd, 0) != 0) {
        err = errno;
      }
    }
    if (!err) {
      ::execve(argv[0], argv.data(), envp.data());
      err = errno;
    }
    [[maybe_unused]] auto n = ::write(exec_w.get(), &err, sizeof(err));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  out_w.reset();
  err_w.reset();
  exec_w.reset();

  int exec_errno = 0;
  ssize_t got = ::read(exec_r.get(), &exec_errno, sizeof(exec_errno));
  if (got == static_cast<ssize_t>(sizeof(exec_errno))) {
    ::waitpid(pid, nullptr, 0);
    std::error_code rm_ec;
    fs::remove(script, rm_ec);
    return spawn_failure("cannot start " + args.front() + ": " + std::strerror(exec_errno), start);
  }

  const auto deadline =
      start + std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(inv.timeout_s));
  ToolResult result;
  bool out_trunc = false, err_trunc = false, timed_out = false, exited = false;
  int wait_status = 0;
  std::array<char, 8192> buf{};
  ::fcntl(out_r.get(), F_SETFL, O_NONBLOCK);
  ::fcntl(err_r.get(), F_SETFL, O_NONBLOCK);
  bool out_open = true, err_open = true;

  auto drain = [&](UniqueFd& fd, bool& open, std::string& sink, bool& trunc) {
    while (open) {
      ssize_t n = ::read(fd.get(), buf.data(), buf.size());
      if (n > 0) {
        append_capped(sink, buf.data(), static_cast<std::size_t>(n), opts.output_limit, trunc);
      } else if (n == 0) {
        open = false;
      } else {
        if (errno == EINTR) continue;
        if (errno != EAGAIN && errno != EWOULDBLOCK) open = false;
        break;
      }
    }
  };

  while (true) {
    if (!exited) {
      pid_t w = ::waitpid(pid, &wait_status, WNOHANG);
      if (w == pid) {
        exited = true;
        ::kill(-pid, SIGKILL);  // stray grandchildren holding the pipes
      }
    }
    if (exited) {
      drain(out_r, out_open, result.stdout_text, out_trunc);
      drain(err_r, err_open, result.stderr_text, err_trunc);
      break;
    }
    auto now = SteadyClock::now();
    if (now >= deadline) {
      timed_out = true;
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &wait_status, 0);
      exited = true;
      drain(out_r, out_open, result.stdout_text, out_trunc);
      drain(err_r, err_open, result.stderr_text, err_trunc);
      break;
    }
    std::vector<pollfd> fds;
    if (out_open) fds.push_back({out_r.get(), POLLIN, 0});
    if (err_open) fds.push_back({err_r.get(), POLLIN, 0});
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    int wait_ms = static_cast<int>(std::clamp<long long>(remaining, 1, 20));
    if (fds.empty()) {
      ::usleep(static_cast<useconds_t>(wait_ms) * 1000);
    } else {
      ::poll(fds.data(), fds.size(), wait_ms);
      drain(out_r, out_open, result.stdout_text, out_trunc);
      drain(err_r, err_open, result.stderr_text, err_trunc);
    }
  }

  result.duration_s = std::chrono::duration<double>(SteadyClock::now() - start).count();
  if (out_trunc) result.stdout_text += "\n[output truncated at " + std::to_string(opts.output_limit) + " bytes]";
  if (err_trunc) result.stderr_text += "\n[output truncated at " + std::to_string(opts.output_limit) + " bytes]";

  std::error_code rm_ec;
  fs::remove(script, rm_ec);

  if (timed_out) {
    result.status = ToolStatus::failure;
    result.exit_code = 128 + SIGKILL;
    result.failure_kind = FailureKind::timeout;
  } else if (WIFEXITED(wait_status)) {
    result.exit_code = WEXITSTATUS(wait_status);
  } else if (WIFSIGNALED(wait_status)) {
    result.exit_code = 128 + WTERMSIG(wait_status);
  }
  if (!timed_out) {
    if (result.exit_code == 0) {
      result.status = ToolStatus::success;
    } else {
      result.status = ToolStatus::failure;
      result.failure_kind = FailureKind::nonzero_exit;
    }
  }
  result.artifacts = diff_snapshots(before, snapshot_workdir(workdir));
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const ArtifactRef& a) {
  Json j;
  j["path"] = a.path;
  j["bytes"] = a.bytes;
  j["media_kind"] = to_string(a.media_kind);
  return j;
}

Json to_json(const ToolResult& r) {
  Json j;
  j["status"] = to_string(r.status);
  j["exit_code"] = r.exit_code;
  j["stdout"] = r.stdout_text;
  j["stderr"] = r.stderr_text;
  j["duration_s"] = r.duration_s;
  j["artifacts"] = Json::array();
  for (const auto& a : r.artifacts) j["artifacts"].push_back(to_json(a));
  if (r.failure_kind) j["failure_kind"] = to_string(*r.failure_kind);
  return j;
}

ArtifactRef artifact_from_json(const Json& j, const std::string& path) {
  detail::ObjectReader r(j, path);
  ArtifactRef a;
  a.path = r.str("path");
  a.bytes = static_cast<std::uint64_t>(r.integer("bytes"));
  a.media_kind = r.enumeration("media_kind", MediaKind::other,
                               {{"image", MediaKind::image},
                                {"code", MediaKind::code},
                                {"document", MediaKind::document},
                                {"data", MediaKind::data},
                                {"other", MediaKind::other}});
  r.finish();
  return a;
}

ToolResult tool_result_from_json(const Json& j, const std::string& path) {
  detail::ObjectReader r(j, path);
  ToolResult t;
  t.status = r.enumeration("status", ToolStatus::failure,
                           {{"success", ToolStatus::success}, {"failure", ToolStatus::failure}});
  t.exit_code = static_cast<int>(r.integer("exit_code"));
  t.stdout_text = r.str_or("stdout", "");
  t.stderr_text = r.str_or("stderr", "");
  t.duration_s = r.number_or("duration_s", 0.0);
  if (const Json* arts = r.array("artifacts")) {
    for (std::size_t i = 0; i < arts->size(); ++i) {
      t.artifacts.push_back(artifact_from_json((*arts)[i], detail::index_path(r.field("artifacts"), i)));
    }
  }
  if (r.get("failure_kind")) {
    t.failure_kind = r.enumeration("failure_kind", FailureKind::spawn_error,
                                   {{"nonzero_exit", FailureKind::nonzero_exit},
                                    {"timeout", FailureKind::timeout},
                                    {"spawn_error", FailureKind::spawn_error}});
  }
  r.finish();
  return t;
}

}  // namespace agentloom
