#include "agentloom/message.hpp"

#include "agentloom/json_reader.hpp"

namespace agentloom {

using detail::index_path;
using detail::ObjectReader;

std::string_view to_string(MessageRole v) noexcept {
  switch (v) {
    case MessageRole::user: return "user";
    case MessageRole::assistant: return "assistant";
    case MessageRole::tool: return "tool";
  }
  return "user";
}

std::string_view to_string(EventKind v) noexcept {
  switch (v) {
    case EventKind::message: return "message";
    case EventKind::tool_started: return "tool_started";
    case EventKind::tool_finished: return "tool_finished";
    case EventKind::artifact: return "artifact";
    case EventKind::human_input_requested: return "human_input_requested";
    case EventKind::run_finished: return "run_finished";
    case EventKind::run_error: return "run_error";
  }
  return "message";
}

bool is_terminal(EventKind kind) noexcept {
  return kind == EventKind::run_finished || kind == EventKind::run_error;
}

const std::string& attributed_agent(const Message& m) noexcept {
  return m.role == MessageRole::tool ? m.recipient : m.sender;
}

Json to_json(const Message& m) {
  Json j;
  j["id"] = m.id;
  j["session_ref"] = m.session_ref;
  j["sender"] = m.sender;
  j["recipient"] = m.recipient;
  j["role"] = to_string(m.role);
  j["content"] = m.content;
  j["tool_calls"] = Json::array();
  for (const auto& c : m.tool_calls) j["tool_calls"].push_back(to_json(c));
  if (!m.tool_call_id.empty()) j["tool_call_id"] = m.tool_call_id;
  j["tool_results"] = Json::array();
  for (const auto& r : m.tool_results) j["tool_results"].push_back(to_json(r));
  j["usage"] = to_json(m.usage);
  if (!m.model.empty()) j["model"] = m.model;
  j["created_at"] = format_timestamp(m.created_at);
  j["turn_index"] = m.turn_index;
  return j;
}

Message message_from_json(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  Message m;
  m.id = r.str("id");
  m.session_ref = r.str_or("session_ref", "");
  m.sender = r.str("sender");
  m.recipient = r.str_or("recipient", "");
  m.role = r.enumeration("role", MessageRole::user,
                         {{"user", MessageRole::user},
                          {"assistant", MessageRole::assistant},
                          {"tool", MessageRole::tool}});
  m.content = r.str_or("content", "");
  if (const Json* calls = r.array("tool_calls")) {
    for (std::size_t i = 0; i < calls->size(); ++i) {
      m.tool_calls.push_back(parse_tool_call((*calls)[i], index_path(r.field("tool_calls"), i)));
    }
  }
  m.tool_call_id = r.str_or("tool_call_id", "");
  if (const Json* results = r.array("tool_results")) {
    for (std::size_t i = 0; i < results->size(); ++i) {
      m.tool_results.push_back(
          tool_result_from_json((*results)[i], index_path(r.field("tool_results"), i)));
    }
  }
  if (const Json* usage = r.get("usage")) m.usage = parse_usage(*usage, r.field("usage"));
  m.model = r.str_or("model", "");
  m.created_at = parse_timestamp(r.str("created_at"));
  m.turn_index = r.int_or("turn_index", 0);
  r.finish();
  return m;
}

Json to_json(const RunEvent& e) {
  Json j;
  j["kind"] = to_string(e.kind);
  j["payload"] = e.payload;
  j["sequence"] = e.sequence;
  return j;
}

RunEvent event_from_json(const Json& j) {
  ObjectReader r(j, "event");
  RunEvent e;
  e.kind = r.enumeration("kind", EventKind::message,
                         {{"message", EventKind::message},
                          {"tool_started", EventKind::tool_started},
                          {"tool_finished", EventKind::tool_finished},
                          {"artifact", EventKind::artifact},
                          {"human_input_requested", EventKind::human_input_requested},
                          {"run_finished", EventKind::run_finished},
                          {"run_error", EventKind::run_error}});
  if (const Json* p = r.object("payload")) e.payload = *p;
  e.sequence = static_cast<std::uint64_t>(r.integer("sequence"));
  r.finish();
  return e;
}

}  // namespace agentloom
