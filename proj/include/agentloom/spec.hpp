#pragma once

// Declarative entity model: models, skills, memories, agents and workflows,
// together with the canonical document format used for export, gallery
// sharing and CLI input.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agentloom/util.hpp"

namespace agentloom {

inline constexpr std::string_view kSchemaVersion = "1.0";

enum class Provider { openai_compatible, mock };
enum class SkillLanguage { shell, interpreted_script };
enum class MemoryKind { short_term_transcript, naive_store };
enum class AgentType { user_proxy, assistant, group_chat };
enum class HumanInputMode { never, always, on_termination };
enum class SpeakerSelection { round_robin, model_selected };
enum class Pattern { autonomous_chat, sequential_chat };
enum class SummaryMethod { last_message, truncated_concat };
enum class ExhaustedBehavior { repeat_last, error };

std::string_view to_string(Provider v) noexcept;
std::string_view to_string(SkillLanguage v) noexcept;
std::string_view to_string(MemoryKind v) noexcept;
std::string_view to_string(AgentType v) noexcept;
std::string_view to_string(HumanInputMode v) noexcept;
std::string_view to_string(SpeakerSelection v) noexcept;
std::string_view to_string(Pattern v) noexcept;
std::string_view to_string(SummaryMethod v) noexcept;
std::string_view to_string(ExhaustedBehavior v) noexcept;

struct Pricing {
  double prompt_per_1k = 0.0;
  double completion_per_1k = 0.0;
  bool operator==(const Pricing&) const = default;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  bool estimated = false;
  bool operator==(const Usage&) const = default;
};

// A model-issued request to run a skill. Arguments stay opaque here; the
// tool runtime owns their interpretation.
struct ToolCall {
  std::string id;
  std::string name;
  Json arguments = Json::object();
  bool operator==(const ToolCall&) const = default;
};

// One scripted reply of the mock backend. With `echo_input` set the reply
// content is the last user-role message of the request instead of `content`.
struct MockStep {
  std::string content;
  std::vector<ToolCall> tool_calls;
  std::optional<Usage> usage;
  bool echo_input = false;
  bool operator==(const MockStep&) const = default;
};

struct MockScript {
  std::vector<MockStep> steps;
  ExhaustedBehavior exhausted_behavior = ExhaustedBehavior::repeat_last;
  bool operator==(const MockScript&) const = default;
};

struct ModelConfig {
  std::string id;
  std::string name;
  Provider provider = Provider::openai_compatible;
  std::optional<std::string> base_url;
  // Name of the environment variable holding the key, never the key.
  std::optional<std::string> api_key_ref;
  std::string model_name;
  double temperature = 0.0;
  std::int64_t max_tokens = 1024;
  std::optional<Pricing> pricing;
  std::optional<MockScript> mock_script;
  bool operator==(const ModelConfig&) const = default;
};

struct SkillSpec {
  std::string id;
  std::string name;
  std::string description;
  SkillLanguage language = SkillLanguage::shell;
  std::string source;
  double timeout_s = 60.0;
  std::vector<std::string> env_allowlist;
  bool operator==(const SkillSpec&) const = default;
};

struct MemorySpec {
  std::string id;
  MemoryKind kind = MemoryKind::short_term_transcript;
  std::optional<std::int64_t> capacity;
  bool operator==(const MemorySpec&) const = default;
};

struct AgentSpec {
  std::string id;
  AgentType type = AgentType::assistant;
  std::string name;
  std::string system_message;
  std::optional<std::string> model_ref;
  std::vector<std::string> skill_refs;
  std::optional<std::string> memory_ref;
  std::int64_t max_consecutive_replies = 10;
  HumanInputMode human_input_mode = HumanInputMode::never;
  bool code_execution = false;
  // group_chat only
  std::vector<std::string> members;
  SpeakerSelection speaker_selection = SpeakerSelection::round_robin;
  bool operator==(const AgentSpec&) const = default;
};

struct Termination {
  std::int64_t max_turns = 10;
  std::string termination_keyword = "TERMINATE";
  bool operator==(const Termination&) const = default;
};

// Every entity a workflow can reference. Kept sorted by id so that specs
// differing only in insertion order compare (and export) equal.
struct Registry {
  std::vector<AgentSpec> agents;
  std::vector<ModelConfig> models;
  std::vector<SkillSpec> skills;
  std::vector<MemorySpec> memories;

  const AgentSpec* find_agent(std::string_view id) const;
  const ModelConfig* find_model(std::string_view id) const;
  const SkillSpec* find_skill(std::string_view id) const;
  const MemorySpec* find_memory(std::string_view id) const;
  void sort();
  bool empty() const;
  bool operator==(const Registry&) const = default;
};

struct WorkflowSpec {
  std::string id;
  std::string name;
  Pattern pattern = Pattern::autonomous_chat;
  std::optional<std::string> initiator_ref;
  std::optional<std::string> receiver_ref;
  std::vector<std::string> sequence;
  Termination termination;
  SummaryMethod summary_method = SummaryMethod::last_message;
  std::string version{kSchemaVersion};
  // Layout metadata from the editor; carried through untouched.
  std::optional<Json> ui;
  Registry registry;
  bool operator==(const WorkflowSpec&) const = default;
};

enum class Severity { error, warning };

struct Issue {
  Severity severity = Severity::error;
  std::string path;
  std::string message;
  bool operator==(const Issue&) const = default;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Issue> issues;
  bool operator==(const ValidationReport&) const = default;
};

// --- parsing ---------------------------------------------------------------
// All parse functions reject unknown fields and report the field path of the
// first problem through Error{schema_error}.

ModelConfig parse_model(const Json& j, const std::string& path = "model");
SkillSpec parse_skill(const Json& j, const std::string& path = "skill");
MemorySpec parse_memory(const Json& j, const std::string& path = "memory");
AgentSpec parse_agent(const Json& j, const std::string& path = "agent");
MockScript parse_mock_script(const Json& j, const std::string& path = "mock_script");
Usage parse_usage(const Json& j, const std::string& path = "usage");
ToolCall parse_tool_call(const Json& j, const std::string& path = "tool_call");
Pricing parse_pricing_rates(const Json& j, const std::string& path = "pricing");

// Parses the `workflow` object alone (no registry, no version).
WorkflowSpec parse_workflow_object(const Json& j, const std::string& path = "workflow");

// Parses a full document {version, workflow, agents, models, skills, memories}.
WorkflowSpec workflow_from_json(const Json& doc);
WorkflowSpec parse_workflow(std::string_view text);

Json parse_json_text(std::string_view text);

// --- serialization ---------------------------------------------------------

Json to_json(const ModelConfig& m);
Json to_json(const SkillSpec& s);
Json to_json(const MemorySpec& m);
Json to_json(const AgentSpec& a);
Json to_json(const MockScript& s);
Json to_json(const Usage& u);
Json to_json(const ToolCall& c);
Json to_json(const Pricing& p);
Json workflow_object_to_json(const WorkflowSpec& w);
Json workflow_to_json(const WorkflowSpec& w);

// Canonical text of a valid spec. Throws Error{validation_error} carrying the
// error issues when validate(spec) fails.
std::string export_workflow(const WorkflowSpec& spec);

// --- validation ------------------------------------------------------------

// Field-level checks for a single entity, independent of references.
void check_model(const ModelConfig& m, const std::string& path, std::vector<Issue>& out);
void check_skill(const SkillSpec& s, const std::string& path, std::vector<Issue>& out);
void check_memory(const MemorySpec& m, const std::string& path, std::vector<Issue>& out);
void check_agent(const AgentSpec& a, const std::string& path, std::vector<Issue>& out);
void check_workflow_fields(const WorkflowSpec& w, const std::string& path,
                           std::vector<Issue>& out);

// Reference resolution against an arbitrary lookup, shared by the document
// validator and the store.
struct RefResolver {
  std::function<const AgentSpec*(std::string_view)> agent;
  std::function<bool(std::string_view)> model;
  std::function<bool(std::string_view)> skill;
  std::function<bool(std::string_view)> memory;
};

void check_agent_refs(const AgentSpec& a, const std::string& path, const RefResolver& refs,
                      std::vector<Issue>& out);
void check_workflow_refs(const WorkflowSpec& w, const std::string& path,
                         const RefResolver& refs, std::vector<Issue>& out);

RefResolver resolver_for(const Registry& registry);

ValidationReport make_report(std::vector<Issue> issues);
ValidationReport validate(const WorkflowSpec& spec);

// Collects every error issue into an Error{validation_error}; no-op when ok.
void throw_if_invalid(const ValidationReport& report, std::string_view what);

bool is_identifier(std::string_view name) noexcept;

}  // namespace agentloom
