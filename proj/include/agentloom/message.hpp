#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agentloom/spec.hpp"
#include "agentloom/tools.hpp"

namespace agentloom {

enum class MessageRole { user, assistant, tool };
std::string_view to_string(MessageRole v) noexcept;

struct Message {
  std::string id;
  std::string session_ref;
  std::string sender;
  std::string recipient;
  MessageRole role = MessageRole::user;
  std::string content;
  std::vector<ToolCall> tool_calls;
  // Set on role=tool messages: the call this result answers.
  std::string tool_call_id;
  // Results of skills or code blocks executed for this message.
  std::vector<ToolResult> tool_results;
  Usage usage;
  // Provider model string of the producing model; empty when no model spoke.
  std::string model;
  TimePoint created_at{};
  std::int64_t turn_index = 0;
  bool operator==(const Message&) const = default;
};

Json to_json(const Message& m);
Message message_from_json(const Json& j, const std::string& path = "message");

// Agent a message is accounted to: tool results belong to the agent that
// issued the call (the recipient), everything else to its sender.
const std::string& attributed_agent(const Message& m) noexcept;

enum class EventKind {
  message,
  tool_started,
  tool_finished,
  artifact,
  human_input_requested,
  run_finished,
  run_error,
};
std::string_view to_string(EventKind v) noexcept;

struct RunEvent {
  EventKind kind = EventKind::message;
  Json payload = Json::object();
  std::uint64_t sequence = 0;
  bool operator==(const RunEvent&) const = default;
};

Json to_json(const RunEvent& e);
RunEvent event_from_json(const Json& j);

bool is_terminal(EventKind kind) noexcept;

}  // namespace agentloom
