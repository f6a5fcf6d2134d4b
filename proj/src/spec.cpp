#include "agentloom/spec.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "agentloom/error.hpp"
#include "agentloom/json_reader.hpp"

namespace agentloom {

using detail::index_path;
using detail::ObjectReader;

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::syntax_error: return "syntax_error";
    case ErrorCode::schema_error: return "schema_error";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::validation_error: return "validation_error";
    case ErrorCode::precondition_failed: return "precondition_failed";
    case ErrorCode::instantiation_error: return "instantiation_error";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::transport_error: return "transport_error";
    case ErrorCode::malformed_response: return "malformed_response";
    case ErrorCode::script_exhausted: return "script_exhausted";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::cancelled: return "cancelled";
  }
  return "unknown";
}

std::string_view to_string(Provider v) noexcept {
  return v == Provider::mock ? "mock" : "openai-compatible";
}
std::string_view to_string(SkillLanguage v) noexcept {
  return v == SkillLanguage::shell ? "shell" : "interpreted-script";
}
std::string_view to_string(MemoryKind v) noexcept {
  return v == MemoryKind::naive_store ? "naive-store" : "short-term-transcript";
}
std::string_view to_string(AgentType v) noexcept {
  switch (v) {
    case AgentType::user_proxy: return "user_proxy";
    case AgentType::assistant: return "assistant";
    case AgentType::group_chat: return "group_chat";
  }
  return "assistant";
}
std::string_view to_string(HumanInputMode v) noexcept {
  switch (v) {
    case HumanInputMode::never: return "never";
    case HumanInputMode::always: return "always";
    case HumanInputMode::on_termination: return "on_termination";
  }
  return "never";
}
std::string_view to_string(SpeakerSelection v) noexcept {
  return v == SpeakerSelection::model_selected ? "model_selected" : "round_robin";
}
std::string_view to_string(Pattern v) noexcept {
  return v == Pattern::sequential_chat ? "sequential_chat" : "autonomous_chat";
}
std::string_view to_string(SummaryMethod v) noexcept {
  return v == SummaryMethod::truncated_concat ? "truncated_concat" : "last_message";
}
std::string_view to_string(ExhaustedBehavior v) noexcept {
  return v == ExhaustedBehavior::error ? "error" : "repeat_last";
}

bool is_identifier(std::string_view name) noexcept {
  if (name.empty()) return false;
  auto head = static_cast<unsigned char>(name.front());
  if (!(std::isalpha(head) || head == '_')) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u == '_';
  });
}

// ---------------------------------------------------------------------------
// Registry

namespace {

template <typename T>
const T* find_by_id(const std::vector<T>& items, std::string_view id) {
  for (const auto& item : items) {
    if (item.id == id) return &item;
  }
  return nullptr;
}

template <typename T>
void sort_by_id(std::vector<T>& items) {
  std::stable_sort(items.begin(), items.end(),
                   [](const T& a, const T& b) { return a.id < b.id; });
}

}  // namespace

const AgentSpec* Registry::find_agent(std::string_view id) const { return find_by_id(agents, id); }
const ModelConfig* Registry::find_model(std::string_view id) const { return find_by_id(models, id); }
const SkillSpec* Registry::find_skill(std::string_view id) const { return find_by_id(skills, id); }
const MemorySpec* Registry::find_memory(std::string_view id) const {
  return find_by_id(memories, id);
}

void Registry::sort() {
  sort_by_id(agents);
  sort_by_id(models);
  sort_by_id(skills);
  sort_by_id(memories);
}

bool Registry::empty() const {
  return agents.empty() && models.empty() && skills.empty() && memories.empty();
}

// ---------------------------------------------------------------------------
// Parsing

Json parse_json_text(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::syntax_error, std::string("syntax error at byte ") +
                                             std::to_string(e.byte) + ": " + e.what(),
                std::to_string(e.byte));
  }
}

Pricing parse_pricing_rates(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  Pricing p;
  p.prompt_per_1k = r.number("prompt_per_1k");
  p.completion_per_1k = r.number("completion_per_1k");
  r.finish();
  return p;
}

Usage parse_usage(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  Usage u;
  u.prompt_tokens = r.int_or("prompt_tokens", 0);
  u.completion_tokens = r.int_or("completion_tokens", 0);
  u.estimated = r.boolean_or("usage_estimated", false);
  r.finish();
  return u;
}

ToolCall parse_tool_call(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  ToolCall c;
  c.id = r.str_or("id", "");
  c.name = r.str("name");
  if (const Json* args = r.object("arguments")) c.arguments = *args;
  r.finish();
  return c;
}

MockScript parse_mock_script(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  MockScript s;
  if (const Json* steps = r.array("steps")) {
    for (std::size_t i = 0; i < steps->size(); ++i) {
      auto sp = index_path(r.field("steps"), i);
      ObjectReader sr((*steps)[i], sp);
      MockStep step;
      step.content = sr.str_or("content", "");
      if (const Json* calls = sr.array("tool_calls")) {
        for (std::size_t k = 0; k < calls->size(); ++k) {
          step.tool_calls.push_back(
              parse_tool_call((*calls)[k], index_path(sr.field("tool_calls"), k)));
        }
      }
      if (const Json* usage = sr.get("usage")) step.usage = parse_usage(*usage, sr.field("usage"));
      step.echo_input = sr.boolean_or("echo_input", false);
      sr.finish();
      s.steps.push_back(std::move(step));
    }
  }
  s.exhausted_behavior = r.enumeration(
      "exhausted_behavior", ExhaustedBehavior::repeat_last,
      {{"repeat_last", ExhaustedBehavior::repeat_last}, {"error", ExhaustedBehavior::error}});
  r.finish();
  return s;
}

ModelConfig parse_model(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  ModelConfig m;
  m.id = r.str("id");
  m.name = r.str_or("name", m.id);
  m.provider = r.enumeration("provider", Provider::openai_compatible,
                             {{"openai-compatible", Provider::openai_compatible},
                              {"mock", Provider::mock}});
  m.base_url = r.opt_str("base_url");
  m.api_key_ref = r.opt_str("api_key_ref");
  m.model_name = r.str("model_name");
  m.temperature = r.number_or("temperature", 0.0);
  m.max_tokens = r.int_or("max_tokens", 1024);
  if (const Json* p = r.get("pricing")) m.pricing = parse_pricing_rates(*p, r.field("pricing"));
  if (const Json* s = r.get("mock_script")) m.mock_script = parse_mock_script(*s, r.field("mock_script"));
  r.finish();
  return m;
}

SkillSpec parse_skill(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  SkillSpec s;
  s.id = r.str("id");
  s.name = r.str("name");
  s.description = r.str_or("description", "");
  s.language = r.enumeration("language", SkillLanguage::shell,
                             {{"shell", SkillLanguage::shell},
                              {"interpreted-script", SkillLanguage::interpreted_script}});
  s.source = r.str("source");
  s.timeout_s = r.number_or("timeout_s", 60.0);
  s.env_allowlist = r.strings("env_allowlist");
  r.finish();
  return s;
}

MemorySpec parse_memory(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  MemorySpec m;
  m.id = r.str("id");
  m.kind = r.enumeration("kind", MemoryKind::short_term_transcript,
                         {{"short-term-transcript", MemoryKind::short_term_transcript},
                          {"naive-store", MemoryKind::naive_store}});
  m.capacity = r.opt_int("capacity");
  r.finish();
  return m;
}

AgentSpec parse_agent(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  AgentSpec a;
  a.id = r.str("id");
  a.type = r.enumeration("type", AgentType::assistant,
                         {{"user_proxy", AgentType::user_proxy},
                          {"assistant", AgentType::assistant},
                          {"group_chat", AgentType::group_chat}});
  a.name = r.str_or("name", a.id);
  a.system_message = r.str_or("system_message", "");
  a.model_ref = r.opt_str("model_ref");
  a.skill_refs = r.strings("skill_refs");
  a.memory_ref = r.opt_str("memory_ref");
  a.max_consecutive_replies = r.int_or("max_consecutive_replies", 10);
  a.human_input_mode = r.enumeration("human_input_mode", HumanInputMode::never,
                                     {{"never", HumanInputMode::never},
                                      {"always", HumanInputMode::always},
                                      {"on_termination", HumanInputMode::on_termination}});
  a.code_execution = r.boolean_or("code_execution", a.type == AgentType::user_proxy);
  a.members = r.strings("members");
  a.speaker_selection = r.enumeration("speaker_selection", SpeakerSelection::round_robin,
                                      {{"round_robin", SpeakerSelection::round_robin},
                                       {"model_selected", SpeakerSelection::model_selected}});
  r.finish();
  return a;
}

WorkflowSpec parse_workflow_object(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  WorkflowSpec w;
  w.id = r.str("id");
  w.name = r.str_or("name", w.id);
  w.pattern = r.enumeration("pattern", Pattern::autonomous_chat,
                            {{"autonomous_chat", Pattern::autonomous_chat},
                             {"sequential_chat", Pattern::sequential_chat}});
  w.initiator_ref = r.opt_str("initiator_ref");
  w.receiver_ref = r.opt_str("receiver_ref");
  w.sequence = r.strings("sequence");
  if (const Json* t = r.object("termination")) {
    ObjectReader tr(*t, r.field("termination"));
    w.termination.max_turns = tr.int_or("max_turns", 10);
    w.termination.termination_keyword = tr.str_or("termination_keyword", "TERMINATE");
    tr.finish();
  }
  w.summary_method = r.enumeration("summary_method", SummaryMethod::last_message,
                                   {{"last_message", SummaryMethod::last_message},
                                    {"truncated_concat", SummaryMethod::truncated_concat}});
  if (const Json* ui = r.object("ui")) w.ui = *ui;
  r.finish();
  return w;
}

namespace {

template <typename T, typename Fn>
void parse_list(const ObjectReader& r, std::string_view key, std::vector<T>& out, Fn parse) {
  if (const Json* arr = r.array(key)) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      out.push_back(parse((*arr)[i], index_path(r.field(key), i)));
    }
  }
}

}  // namespace

WorkflowSpec workflow_from_json(const Json& doc) {
  ObjectReader r(doc, "");
  auto version = r.str("version");
  if (version != kSchemaVersion) {
    throw Error(ErrorCode::unsupported_version,
                "unsupported schema version \"" + version + "\" (this build reads " +
                    std::string(kSchemaVersion) + ")",
                "version");
  }
  WorkflowSpec w = parse_workflow_object(r.required("workflow"), "workflow");
  w.version = version;
  parse_list(r, "agents", w.registry.agents,
             [](const Json& j, const std::string& p) { return parse_agent(j, p); });
  parse_list(r, "models", w.registry.models,
             [](const Json& j, const std::string& p) { return parse_model(j, p); });
  parse_list(r, "skills", w.registry.skills,
             [](const Json& j, const std::string& p) { return parse_skill(j, p); });
  parse_list(r, "memories", w.registry.memories,
             [](const Json& j, const std::string& p) { return parse_memory(j, p); });
  r.finish();
  w.registry.sort();
  return w;
}

WorkflowSpec parse_workflow(std::string_view text) { return workflow_from_json(parse_json_text(text)); }

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const Pricing& p) {
  Json j;
  j["prompt_per_1k"] = p.prompt_per_1k;
  j["completion_per_1k"] = p.completion_per_1k;
  return j;
}

Json to_json(const Usage& u) {
  Json j;
  j["prompt_tokens"] = u.prompt_tokens;
  j["completion_tokens"] = u.completion_tokens;
  j["usage_estimated"] = u.estimated;
  return j;
}

Json to_json(const ToolCall& c) {
  Json j;
  j["id"] = c.id;
  j["name"] = c.name;
  j["arguments"] = c.arguments;
  return j;
}

Json to_json(const MockScript& s) {
  Json steps = Json::array();
  for (const auto& step : s.steps) {
    Json sj;
    sj["content"] = step.content;
    sj["tool_calls"] = Json::array();
    for (const auto& c : step.tool_calls) sj["tool_calls"].push_back(to_json(c));
    if (step.usage) sj["usage"] = to_json(*step.usage);
    sj["echo_input"] = step.echo_input;
    steps.push_back(std::move(sj));
  }
  Json j;
  j["steps"] = std::move(steps);
  j["exhausted_behavior"] = to_string(s.exhausted_behavior);
  return j;
}

Json to_json(const ModelConfig& m) {
  Json j;
  j["id"] = m.id;
  j["name"] = m.name;
  j["provider"] = to_string(m.provider);
  if (m.base_url) j["base_url"] = *m.base_url;
  if (m.api_key_ref) j["api_key_ref"] = *m.api_key_ref;
  j["model_name"] = m.model_name;
  j["temperature"] = m.temperature;
  j["max_tokens"] = m.max_tokens;
  if (m.pricing) j["pricing"] = to_json(*m.pricing);
  if (m.mock_script) j["mock_script"] = to_json(*m.mock_script);
  return j;
}

Json to_json(const SkillSpec& s) {
  Json j;
  j["id"] = s.id;
  j["name"] = s.name;
  j["description"] = s.description;
  j["language"] = to_string(s.language);
  j["source"] = s.source;
  j["timeout_s"] = s.timeout_s;
  j["env_allowlist"] = s.env_allowlist;
  return j;
}

Json to_json(const MemorySpec& m) {
  Json j;
  j["id"] = m.id;
  j["kind"] = to_string(m.kind);
  if (m.capacity) j["capacity"] = *m.capacity;
  return j;
}

Json to_json(const AgentSpec& a) {
  Json j;
  j["id"] = a.id;
  j["type"] = to_string(a.type);
  j["name"] = a.name;
  j["system_message"] = a.system_message;
  if (a.model_ref) j["model_ref"] = *a.model_ref;
  j["skill_refs"] = a.skill_refs;
  if (a.memory_ref) j["memory_ref"] = *a.memory_ref;
  j["max_consecutive_replies"] = a.max_consecutive_replies;
  j["human_input_mode"] = to_string(a.human_input_mode);
  j["code_execution"] = a.code_execution;
  if (a.type == AgentType::group_chat) {
    j["members"] = a.members;
    j["speaker_selection"] = to_string(a.speaker_selection);
  }
  return j;
}

Json workflow_object_to_json(const WorkflowSpec& w) {
  Json j;
  j["id"] = w.id;
  j["name"] = w.name;
  j["pattern"] = to_string(w.pattern);
  if (w.initiator_ref) j["initiator_ref"] = *w.initiator_ref;
  if (w.receiver_ref) j["receiver_ref"] = *w.receiver_ref;
  if (!w.sequence.empty()) j["sequence"] = w.sequence;
  Json t;
  t["max_turns"] = w.termination.max_turns;
  t["termination_keyword"] = w.termination.termination_keyword;
  j["termination"] = std::move(t);
  j["summary_method"] = to_string(w.summary_method);
  if (w.ui) j["ui"] = *w.ui;
  return j;
}

Json workflow_to_json(const WorkflowSpec& w) {
  Registry reg = w.registry;
  reg.sort();
  Json j;
  j["version"] = w.version;
  j["workflow"] = workflow_object_to_json(w);
  auto list = [](const auto& items) {
    Json arr = Json::array();
    for (const auto& item : items) arr.push_back(to_json(item));
    return arr;
  };
  j["agents"] = list(reg.agents);
  j["models"] = list(reg.models);
  j["skills"] = list(reg.skills);
  j["memories"] = list(reg.memories);
  return j;
}

std::string export_workflow(const WorkflowSpec& spec) {
  throw_if_invalid(validate(spec), "workflow " + spec.id);
  return canonical_dump(workflow_to_json(spec));
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void add(std::vector<Issue>& out, std::string path, std::string message,
         Severity severity = Severity::error) {
  out.push_back(Issue{severity, std::move(path), std::move(message)});
}

void require_id(const std::string& id, const std::string& path, std::vector<Issue>& out) {
  if (id.empty()) add(out, path + ".id", "id must not be empty");
}

}  // namespace

void check_model(const ModelConfig& m, const std::string& path, std::vector<Issue>& out) {
  require_id(m.id, path, out);
  if (m.model_name.empty()) add(out, path + ".model_name", "model_name must not be empty");
  if (!(m.temperature >= 0.0 && m.temperature <= 2.0)) {
    add(out, path + ".temperature", "temperature must lie within [0, 2]");
  }
  if (m.max_tokens < 1) add(out, path + ".max_tokens", "max_tokens must be >= 1");
  if (m.api_key_ref && !is_identifier(*m.api_key_ref)) {
    add(out, path + ".api_key_ref",
        "api_key_ref must name an environment variable, not contain a key");
  }
  if (m.base_url && m.base_url->rfind("http://", 0) != 0 && m.base_url->rfind("https://", 0) != 0) {
    add(out, path + ".base_url", "base_url must be an http(s) URL");
  }
  if (m.pricing && (m.pricing->prompt_per_1k < 0 || m.pricing->completion_per_1k < 0)) {
    add(out, path + ".pricing", "pricing rates must be >= 0");
  }
  if (m.mock_script && m.mock_script->steps.empty()) {
    add(out, path + ".mock_script.steps", "mock script needs at least one step");
  }
  if (m.provider == Provider::mock && !m.mock_script) {
    add(out, path + ".mock_script", "mock model has no script", Severity::warning);
  }
}

void check_skill(const SkillSpec& s, const std::string& path, std::vector<Issue>& out) {
  require_id(s.id, path, out);
  if (!is_identifier(s.name)) add(out, path + ".name", "name must be a valid function identifier");
  if (s.source.empty()) add(out, path + ".source", "source must not be empty");
  if (!(s.timeout_s > 0)) add(out, path + ".timeout_s", "timeout_s must be > 0");
  for (std::size_t i = 0; i < s.env_allowlist.size(); ++i) {
    if (!is_identifier(s.env_allowlist[i])) {
      add(out, index_path(path + ".env_allowlist", i), "not an environment variable name");
    }
  }
}

void check_memory(const MemorySpec& m, const std::string& path, std::vector<Issue>& out) {
  require_id(m.id, path, out);
  if (m.capacity && *m.capacity < 1) add(out, path + ".capacity", "capacity must be >= 1");
}

void check_agent(const AgentSpec& a, const std::string& path, std::vector<Issue>& out) {
  require_id(a.id, path, out);
  if (a.name.empty()) add(out, path + ".name", "name must not be empty");
  if (a.max_consecutive_replies < 1) {
    add(out, path + ".max_consecutive_replies", "max_consecutive_replies must be >= 1");
  }
  if (a.type == AgentType::assistant && !a.model_ref) {
    add(out, path + ".model_ref", "assistant agents require a model_ref");
  }
  if (a.type == AgentType::group_chat) {
    if (a.members.size() < 2) add(out, path + ".members", "members length >= 2 required");
    if (a.speaker_selection == SpeakerSelection::model_selected && !a.model_ref) {
      add(out, path + ".model_ref", "model_selected speaker selection requires a model_ref");
    }
  } else {
    if (!a.members.empty()) add(out, path + ".members", "members are only valid for group_chat");
    if (a.speaker_selection != SpeakerSelection::round_robin) {
      add(out, path + ".speaker_selection", "speaker_selection is only valid for group_chat");
    }
  }
}

void check_workflow_fields(const WorkflowSpec& w, const std::string& path,
                           std::vector<Issue>& out) {
  require_id(w.id, path, out);
  if (w.termination.max_turns < 1) {
    add(out, path + ".termination.max_turns", "max_turns must be >= 1");
  }
  if (w.termination.termination_keyword.empty()) {
    add(out, path + ".termination.termination_keyword", "termination_keyword must not be empty");
  }
  if (w.pattern == Pattern::autonomous_chat) {
    if (!w.initiator_ref) add(out, path + ".initiator_ref", "autonomous_chat requires initiator_ref");
    if (!w.receiver_ref) add(out, path + ".receiver_ref", "autonomous_chat requires receiver_ref");
    if (w.initiator_ref && w.receiver_ref && *w.initiator_ref == *w.receiver_ref) {
      add(out, path + ".receiver_ref", "initiator_ref and receiver_ref must differ");
    }
    if (!w.sequence.empty()) add(out, path + ".sequence", "sequence is only valid for sequential_chat");
  } else {
    if (w.sequence.empty()) add(out, path + ".sequence", "sequential_chat requires a sequence of length >= 1");
    if (w.initiator_ref) add(out, path + ".initiator_ref", "initiator_ref is only valid for autonomous_chat");
    if (w.receiver_ref) add(out, path + ".receiver_ref", "receiver_ref is only valid for autonomous_chat");
  }
}

void check_agent_refs(const AgentSpec& a, const std::string& path, const RefResolver& refs,
                      std::vector<Issue>& out) {
  if (a.model_ref && !refs.model(*a.model_ref)) {
    add(out, path + ".model_ref", "unknown model \"" + *a.model_ref + "\"");
  }
  for (std::size_t i = 0; i < a.skill_refs.size(); ++i) {
    if (!refs.skill(a.skill_refs[i])) {
      add(out, index_path(path + ".skill_refs", i), "unknown skill \"" + a.skill_refs[i] + "\"");
    }
  }
  if (a.memory_ref && !refs.memory(*a.memory_ref)) {
    add(out, path + ".memory_ref", "unknown memory \"" + *a.memory_ref + "\"");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < a.members.size(); ++i) {
    const auto& id = a.members[i];
    auto p = index_path(path + ".members", i);
    const AgentSpec* member = refs.agent(id);
    if (!member) {
      add(out, p, "unknown agent \"" + id + "\"");
    } else if (member->type == AgentType::group_chat) {
      add(out, p, "group chats cannot be nested (\"" + id + "\" is a group_chat)");
    } else if (!seen.insert(id).second) {
      add(out, p, "duplicate member \"" + id + "\"");
    }
  }
}

void check_workflow_refs(const WorkflowSpec& w, const std::string& path,
                         const RefResolver& refs, std::vector<Issue>& out) {
  if (w.initiator_ref) {
    const AgentSpec* a = refs.agent(*w.initiator_ref);
    if (!a) {
      add(out, path + ".initiator_ref", "unknown agent \"" + *w.initiator_ref + "\"");
    } else if (a->type == AgentType::group_chat) {
      add(out, path + ".initiator_ref", "a group_chat cannot initiate a conversation");
    }
  }
  if (w.receiver_ref && !refs.agent(*w.receiver_ref)) {
    add(out, path + ".receiver_ref", "unknown agent \"" + *w.receiver_ref + "\"");
  }
  for (std::size_t i = 0; i < w.sequence.size(); ++i) {
    auto p = index_path(path + ".sequence", i);
    const AgentSpec* a = refs.agent(w.sequence[i]);
    if (!a) {
      add(out, p, "unknown agent \"" + w.sequence[i] + "\"");
    } else if (a->type == AgentType::group_chat) {
      add(out, p, "sequential_chat steps must be single agents");
    }
  }
}

RefResolver resolver_for(const Registry& registry) {
  return RefResolver{
      [&registry](std::string_view id) { return registry.find_agent(id); },
      [&registry](std::string_view id) { return registry.find_model(id) != nullptr; },
      [&registry](std::string_view id) { return registry.find_skill(id) != nullptr; },
      [&registry](std::string_view id) { return registry.find_memory(id) != nullptr; },
  };
}

ValidationReport make_report(std::vector<Issue> issues) {
  ValidationReport report;
  report.issues = std::move(issues);
  report.ok = std::none_of(report.issues.begin(), report.issues.end(),
                           [](const Issue& i) { return i.severity == Severity::error; });
  return report;
}

namespace {

template <typename T>
void check_unique_ids(const std::vector<T>& items, const std::string& key,
                      std::vector<Issue>& out) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].id.empty() && !seen.insert(items[i].id).second) {
      add(out, index_path(key, i) + ".id", "duplicate id \"" + items[i].id + "\"");
    }
  }
}

// Ids reachable from the workflow's own references.
std::set<std::string> reachable_ids(const WorkflowSpec& w) {
  std::set<std::string> out;
  std::vector<std::string> agents;
  if (w.initiator_ref) agents.push_back(*w.initiator_ref);
  if (w.receiver_ref) agents.push_back(*w.receiver_ref);
  agents.insert(agents.end(), w.sequence.begin(), w.sequence.end());
  while (!agents.empty()) {
    auto id = agents.back();
    agents.pop_back();
    if (!out.insert("agent:" + id).second) continue;
    const AgentSpec* a = w.registry.find_agent(id);
    if (!a) continue;
    if (a->model_ref) out.insert("model:" + *a->model_ref);
    if (a->memory_ref) out.insert("memory:" + *a->memory_ref);
    for (const auto& s : a->skill_refs) out.insert("skill:" + s);
    agents.insert(agents.end(), a->members.begin(), a->members.end());
  }
  return out;
}

}  // namespace

ValidationReport validate(const WorkflowSpec& spec) {
  std::vector<Issue> out;
  if (spec.version != kSchemaVersion) add(out, "version", "unsupported schema version");
  check_workflow_fields(spec, "workflow", out);

  const Registry& reg = spec.registry;
  check_unique_ids(reg.agents, "agents", out);
  check_unique_ids(reg.models, "models", out);
  check_unique_ids(reg.skills, "skills", out);
  check_unique_ids(reg.memories, "memories", out);

  auto refs = resolver_for(reg);
  std::set<std::string> agent_names;
  for (std::size_t i = 0; i < reg.agents.size(); ++i) {
    auto p = index_path("agents", i);
    check_agent(reg.agents[i], p, out);
    check_agent_refs(reg.agents[i], p, refs, out);
    if (!reg.agents[i].name.empty() && !agent_names.insert(reg.agents[i].name).second) {
      add(out, p + ".name", "duplicate agent name \"" + reg.agents[i].name + "\"");
    }
  }
  for (std::size_t i = 0; i < reg.models.size(); ++i) {
    check_model(reg.models[i], index_path("models", i), out);
  }
  std::set<std::string> skill_names;
  for (std::size_t i = 0; i < reg.skills.size(); ++i) {
    auto p = index_path("skills", i);
    check_skill(reg.skills[i], p, out);
    if (!skill_names.insert(reg.skills[i].name).second) {
      add(out, p + ".name", "duplicate skill name \"" + reg.skills[i].name + "\"");
    }
  }
  for (std::size_t i = 0; i < reg.memories.size(); ++i) {
    check_memory(reg.memories[i], index_path("memories", i), out);
  }
  check_workflow_refs(spec, "workflow", refs, out);

  auto reachable = reachable_ids(spec);
  auto warn_unused = [&](const auto& items, const std::string& kind, const std::string& key) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!reachable.count(kind + ":" + items[i].id)) {
        add(out, index_path(key, i), kind + " \"" + items[i].id + "\" is not referenced",
            Severity::warning);
      }
    }
  };
  warn_unused(reg.agents, "agent", "agents");
  warn_unused(reg.models, "model", "models");
  warn_unused(reg.skills, "skill", "skills");
  warn_unused(reg.memories, "memory", "memories");
  return make_report(std::move(out));
}

void throw_if_invalid(const ValidationReport& report, std::string_view what) {
  if (report.ok) return;
  std::vector<std::string> details;
  std::string first_path;
  for (const auto& issue : report.issues) {
    if (issue.severity != Severity::error) continue;
    if (first_path.empty()) first_path = issue.path;
    details.push_back(issue.path + ": " + issue.message);
  }
  std::string message = std::string(what) + " is invalid: " + details.front();
  if (details.size() > 1) message += " (+" + std::to_string(details.size() - 1) + " more)";
  throw Error(ErrorCode::validation_error, message, first_path, std::move(details));
}

}  // namespace agentloom
