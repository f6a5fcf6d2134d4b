#pragma once

// Workflow execution: binds a WorkflowSpec to model backends, skills and
// memory, then runs tasks under the autonomous-chat or sequential-chat
// pattern while streaming RunEvents.

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "agentloom/backend.hpp"
#include "agentloom/message.hpp"
#include "agentloom/profiler.hpp"
#include "agentloom/tools.hpp"

namespace agentloom {

enum class RunStatus { completed, terminated_keyword, max_turns_reached, error, awaiting_human };
std::string_view to_string(RunStatus v) noexcept;

struct RunResult {
  RunStatus status = RunStatus::completed;
  std::string session_ref;
  Message final_message;
  std::vector<Message> transcript;
  ProfileReport profile;
  std::vector<std::string> warnings;
  std::string error;  // set when status == error
};

Json to_json(const RunResult& r);
RunResult run_result_from_json(const Json& j);

using EventSink = std::function<void(const RunEvent&)>;

// Supplies human replies when an agent's human_input_mode asks for them.
class HumanInputSource {
 public:
  virtual ~HumanInputSource() = default;
  // Non-interactive sources make human_input_mode degrade to `never`.
  virtual bool interactive() const = 0;
  // Blocks until input arrives. nullopt means no input is coming (the run
  // pauses with status awaiting_human).
  virtual std::optional<std::string> request(const std::string& agent, const std::string& prompt,
                                             std::stop_token stop) = 0;
};

class NonInteractiveInput final : public HumanInputSource {
 public:
  bool interactive() const override { return false; }
  std::optional<std::string> request(const std::string&, const std::string&,
                                     std::stop_token) override {
    return std::nullopt;
  }
};

// Thread-safe queue of human replies. request() waits up to `timeout` for a
// push(); it also returns nullopt on stop or close().
class QueuedHumanInput final : public HumanInputSource {
 public:
  explicit QueuedHumanInput(std::chrono::milliseconds timeout = std::chrono::minutes(10))
      : timeout_(timeout) {}

  bool interactive() const override { return true; }
  std::optional<std::string> request(const std::string& agent, const std::string& prompt,
                                     std::stop_token stop) override;

  void push(std::string text);
  void close();
  // Number of request() calls currently blocked.
  int waiting() const;

 private:
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::deque<std::string> queue_;
  bool closed_ = false;
  int waiting_ = 0;
};

using BackendFactory =
    std::function<std::shared_ptr<ModelBackend>(const ModelConfig&, const EnvLookup&)>;

struct Environment {
  // Session scratch directory; a fresh temporary directory when empty.
  std::filesystem::path workdir;
  std::string session_ref;
  EnvLookup env = process_env();
  BackendFactory backend_factory = make_backend;
  SandboxOptions sandbox;
  // Overrides for rates embedded in the workflow's model configs.
  PricingTable pricing;
  // Timeout for code blocks the user proxy executes.
  double code_timeout_s = 60.0;
};

// Name of the proxy that feeds each step of a sequential chat.
inline constexpr std::string_view kSequenceProxyName = "sequence_proxy";

// Default reply of a user proxy that has no model and nothing to execute.
inline constexpr std::string_view kProxyAutoReply = "Please continue.";

inline constexpr std::size_t kSummaryLimit = 4096;

class WorkflowInstance {
 public:
  struct BoundAgent {
    AgentSpec spec;
    std::shared_ptr<ModelBackend> backend;  // null for model-less user proxies
    std::optional<ModelConfig> model;
    std::vector<SkillSpec> skills;
    std::optional<MemorySpec> memory;
  };

  const WorkflowSpec& spec() const noexcept { return spec_; }
  const std::filesystem::path& workdir() const noexcept { return env_.workdir; }
  const Environment& environment() const noexcept { return env_; }
  const PricingTable& pricing() const noexcept { return pricing_; }

  // Participating agents (group containers excluded) in declared order.
  std::vector<const BoundAgent*> agents() const;
  const BoundAgent* group() const;
  const BoundAgent& agent(std::string_view id) const;
  const BoundAgent* agent_by_name(std::string_view name) const;
  // Backend shared by every agent bound to the given model id.
  std::shared_ptr<ModelBackend> backend_for_model(std::string_view model_id) const;

  // Next group member to speak (agent id).
  std::string select_next_speaker(std::string_view group_id,
                                  const std::vector<Message>& transcript) const;

  // Recency notes kept by naive-store memories.
  std::vector<std::string> recall(std::string_view memory_id) const;
  void remember(std::string_view memory_id, std::string note);

 private:
  friend WorkflowInstance instantiate(const WorkflowSpec&, Environment);

  WorkflowSpec spec_;
  Environment env_;
  PricingTable pricing_;
  std::vector<BoundAgent> bound_;
  std::map<std::string, std::shared_ptr<ModelBackend>> backends_;
  std::shared_ptr<std::mutex> memory_mu_ = std::make_shared<std::mutex>();
  std::map<std::string, std::deque<std::string>, std::less<>> memory_notes_;
};

// Throws validation_error when validate(spec) fails and instantiation_error
// (path = entity id) when a backend or workdir cannot be set up.
WorkflowInstance instantiate(const WorkflowSpec& spec, Environment env);

// Autonomous chat. Throws precondition_failed for an empty task; backend
// failures end the run with status=error after a run_error event.
RunResult run(WorkflowInstance& instance, std::string_view task,
              const std::vector<Message>& history, const EventSink& sink,
              HumanInputSource& input, std::stop_token stop = {});

RunResult run_sequential(WorkflowInstance& instance, std::string_view task,
                         const EventSink& sink, std::stop_token stop = {});

// Dispatches on the workflow pattern.
RunResult run_workflow(WorkflowInstance& instance, std::string_view task,
                       const std::vector<Message>& history, const EventSink& sink,
                       HumanInputSource& input, std::stop_token stop = {});

// Round-robin choice over `members` (names) given the transcript so far.
std::string round_robin_next(const std::vector<std::string>& members,
                             const std::vector<Message>& transcript);

// last_message: final content verbatim; truncated_concat: contents joined
// with "\n---\n", cut to the first kSummaryLimit characters.
std::string summarize(const std::vector<Message>& transcript, SummaryMethod method);

// Loads a workflow document and runs tasks against it without a server.
class WorkflowManager {
 public:
  explicit WorkflowManager(const std::filesystem::path& workflow_file, Environment env = {});
  WorkflowManager(const WorkflowSpec& spec, Environment env = {});

  RunResult run(std::string_view message, const EventSink& sink = {},
                HumanInputSource* input = nullptr);

  WorkflowInstance& instance() noexcept { return instance_; }
  std::vector<std::string> warnings() const;

 private:
  WorkflowInstance instance_;
};

}  // namespace agentloom
