#pragma once

// Uniform chat-completion interface over model providers.

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "agentloom/spec.hpp"

namespace agentloom {

enum class ChatRole { system, user, assistant, tool };
std::string_view to_string(ChatRole role) noexcept;

struct ChatMessage {
  ChatRole role = ChatRole::user;
  std::string content;
  std::string name;                 // speaker name, optional
  std::vector<ToolCall> tool_calls;  // assistant only
  std::string tool_call_id;          // tool only
  bool operator==(const ChatMessage&) const = default;
};

struct ToolSchema {
  std::string name;
  std::string description;
  Json parameters = Json::object();
  bool operator==(const ToolSchema&) const = default;
};

struct ChatRequest {
  ModelConfig model;
  std::vector<ChatMessage> messages;
  std::vector<ToolSchema> tool_schemas;
  bool operator==(const ChatRequest&) const = default;
};

struct Completion {
  std::string content;
  std::vector<ToolCall> tool_calls;
  Usage usage;
  bool operator==(const Completion&) const = default;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  // Returns exactly one completion with usage populated (real or estimated).
  virtual Completion complete(const ChatRequest& request) = 0;
};

// ceil(utf8 byte length / 4).
std::int64_t estimate_tokens(std::string_view text) noexcept;

// Sum of estimate_tokens over every message content of the request.
std::int64_t estimate_prompt_tokens(const ChatRequest& request) noexcept;

// Throws malformed_response when a tool call names a tool the request did not
// offer.
void check_tool_calls(const Completion& completion, const ChatRequest& request);

// Replays a MockScript. Step consumption is serialized, and every request is
// recorded so tests can inspect what each agent was shown.
class MockBackend final : public ModelBackend {
 public:
  explicit MockBackend(MockScript script);

  Completion complete(const ChatRequest& request) override;

  std::vector<ChatRequest> calls() const;
  std::size_t steps_consumed() const;

 private:
  MockScript script_;
  mutable std::mutex mu_;
  std::size_t cursor_ = 0;
  std::vector<ChatRequest> calls_;
};

struct RetryPolicy {
  int max_attempts = 2;
  std::chrono::milliseconds base_delay{500};
  double factor = 2.0;
};

// Talks the chat-completions wire format over HTTP(S). The API key is read
// from the environment variable named by api_key_ref on every call.
class OpenAICompatibleBackend final : public ModelBackend {
 public:
  static constexpr std::string_view kDefaultBaseUrl = "https://api.openai.com/v1";

  OpenAICompatibleBackend(ModelConfig model, EnvLookup env, RetryPolicy retry = {},
                          std::chrono::seconds read_timeout = std::chrono::seconds(120));

  Completion complete(const ChatRequest& request) override;

  const ModelConfig& model() const noexcept { return model_; }

 private:
  ModelConfig model_;
  EnvLookup env_;
  RetryPolicy retry_;
  std::chrono::seconds read_timeout_;
};

Json request_to_wire(const ChatRequest& request);
Completion completion_from_wire(std::string_view body, const ChatRequest& request);

// Builds the backend for a model config. Throws instantiation_error naming the
// model id when the backend cannot be constructed (e.g. unset API key).
std::shared_ptr<ModelBackend> make_backend(const ModelConfig& model, const EnvLookup& env);

}  // namespace agentloom
