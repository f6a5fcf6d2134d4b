#pragma once

// Skill execution in a time-limited, filesystem-confined child process.
//
// Calling convention for skill authors:
//   * the script runs with cwd = session workdir;
//   * AGENTLOOM_ARGS holds the arguments as a JSON object;
//   * argv carries one "--key=value" per argument, keys sorted, strings raw and
//     everything else as compact JSON;
//   * the environment holds only PATH, HOME (= workdir), LANG, AGENTLOOM_ARGS
//     and the variables named in the skill's env_allowlist.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agentloom/spec.hpp"

namespace agentloom {

enum class ToolStatus { success, failure };
enum class FailureKind { nonzero_exit, timeout, spawn_error };
enum class MediaKind { image, code, document, data, other };

std::string_view to_string(ToolStatus v) noexcept;
std::string_view to_string(FailureKind v) noexcept;
std::string_view to_string(MediaKind v) noexcept;

struct ArtifactRef {
  std::string path;  // relative to the session workdir
  std::uint64_t bytes = 0;
  MediaKind media_kind = MediaKind::other;
  bool operator==(const ArtifactRef&) const = default;
};

struct ToolResult {
  ToolStatus status = ToolStatus::failure;
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
  double duration_s = 0.0;
  std::vector<ArtifactRef> artifacts;
  std::optional<FailureKind> failure_kind;
  bool operator==(const ToolResult&) const = default;
};

struct ToolInvocation {
  std::string skill_ref;  // skill name, or "inline:<language>" for code blocks
  SkillLanguage language = SkillLanguage::shell;
  std::string source;
  Json arguments = Json::object();
  std::vector<std::string> env_allowlist;
  std::filesystem::path session_workdir;
  double timeout_s = 60.0;
};

ToolInvocation make_invocation(const SkillSpec& skill, Json arguments,
                               const std::filesystem::path& workdir);

struct SandboxOptions {
  double grace_s = 0.5;
  std::size_t output_limit = 64 * 1024;
  // Interpreter for interpreted-script sources without a shebang line.
  std::string interpreter = "python3";
  bool confine_filesystem = true;
  // Readable (never writable) locations the child needs to start.
  std::vector<std::filesystem::path> readable_paths = {"/usr", "/bin", "/lib", "/lib64",
                                                       "/etc", "/dev", "/proc", "/sbin"};
  EnvLookup env = process_env();
};

// Directory inside each workdir where scripts are materialized; excluded from
// artifact detection.
inline constexpr std::string_view kScriptDir = ".agentloom";

ToolResult execute(const ToolInvocation& invocation, const SandboxOptions& options = {});

MediaKind classify_artifact(const std::filesystem::path& path);

// Whether the kernel offers the Landlock ruleset used for confinement.
bool filesystem_confinement_available();

struct FileStamp {
  std::int64_t mtime_ns = 0;
  std::uint64_t size = 0;
  bool operator==(const FileStamp&) const = default;
};
using Snapshot = std::map<std::string, FileStamp>;

Snapshot snapshot_workdir(const std::filesystem::path& workdir);
std::vector<ArtifactRef> diff_snapshots(const Snapshot& before, const Snapshot& after);

Json to_json(const ArtifactRef& a);
Json to_json(const ToolResult& r);
ArtifactRef artifact_from_json(const Json& j, const std::string& path = "artifact");
ToolResult tool_result_from_json(const Json& j, const std::string& path = "result");

}  // namespace agentloom
