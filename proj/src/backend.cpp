#include "agentloom/backend.hpp"

#include <algorithm>

#include "agentloom/error.hpp"

namespace agentloom {

std::string_view to_string(ChatRole role) noexcept {
  switch (role) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
    case ChatRole::tool: return "tool";
  }
  return "user";
}

std::int64_t estimate_tokens(std::string_view text) noexcept {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::int64_t estimate_prompt_tokens(const ChatRequest& request) noexcept {
  std::int64_t total = 0;
  for (const auto& m : request.messages) total += estimate_tokens(m.content);
  return total;
}

void check_tool_calls(const Completion& completion, const ChatRequest& request) {
  for (const auto& call : completion.tool_calls) {
    bool offered = std::any_of(request.tool_schemas.begin(), request.tool_schemas.end(),
                               [&](const ToolSchema& s) { return s.name == call.name; });
    if (!offered) {
      throw Error(ErrorCode::malformed_response,
                  "model " + request.model.id + " called unknown tool \"" + call.name + "\"",
                  request.model.id);
    }
  }
}

MockBackend::MockBackend(MockScript script) : script_(std::move(script)) {
  if (script_.steps.empty()) {
    throw Error(ErrorCode::instantiation_error, "mock script has no steps");
  }
}

Completion MockBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  calls_.push_back(request);
  std::size_t index = cursor_;
  if (index >= script_.steps.size()) {
    if (script_.exhausted_behavior == ExhaustedBehavior::error) {
      throw Error(ErrorCode::script_exhausted,
                  "mock script for model " + request.model.id + " exhausted after " +
                      std::to_string(script_.steps.size()) + " steps",
                  request.model.id);
    }
    index = script_.steps.size() - 1;
  }
  const MockStep& step = script_.steps[index];
  ++cursor_;

  Completion out;
  out.content = step.content;
  if (step.echo_input) {
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
      if (it->role == ChatRole::user) {
        out.content = it->content;
        break;
      }
    }
  }
  out.tool_calls = step.tool_calls;
  for (std::size_t i = 0; i < out.tool_calls.size(); ++i) {
    if (out.tool_calls[i].id.empty()) {
      out.tool_calls[i].id = "call_" + std::to_string(cursor_) + "_" + std::to_string(i);
    }
  }
  if (step.usage) {
    out.usage = *step.usage;
  } else {
    out.usage.prompt_tokens = estimate_prompt_tokens(request);
    out.usage.completion_tokens = estimate_tokens(out.content);
    out.usage.estimated = true;
  }
  check_tool_calls(out, request);
  return out;
}

std::vector<ChatRequest> MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::size_t MockBackend::steps_consumed() const {
  std::lock_guard lock(mu_);
  return cursor_;
}

std::shared_ptr<ModelBackend> make_backend(const ModelConfig& model, const EnvLookup& env) {
  switch (model.provider) {
    case Provider::mock:
      if (!model.mock_script) {
        throw Error(ErrorCode::instantiation_error,
                    "model " + model.id + ": mock provider requires a mock_script", model.id);
      }
      try {
        return std::make_shared<MockBackend>(*model.mock_script);
      } catch (const Error& e) {
        throw Error(ErrorCode::instantiation_error, "model " + model.id + ": " + e.what(),
                    model.id);
      }
    case Provider::openai_compatible:
      if (model.api_key_ref && !env(*model.api_key_ref)) {
        throw Error(ErrorCode::instantiation_error,
                    "model " + model.id + ": environment variable " + *model.api_key_ref +
                        " is not set",
                    model.id);
      }
      return std::make_shared<OpenAICompatibleBackend>(model, env);
  }
  throw Error(ErrorCode::instantiation_error, "model " + model.id + ": unknown provider",
              model.id);
}

}  // namespace agentloom
