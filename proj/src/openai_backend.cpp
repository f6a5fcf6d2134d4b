#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <thread>

#include "agentloom/backend.hpp"
#include "agentloom/error.hpp"

namespace agentloom {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // path prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::transport_error, "invalid base_url \"" + url + "\"");
  }
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  if (path_start == std::string::npos) {
    ep.origin = url;
  } else {
    ep.origin = url.substr(0, path_start);
    ep.path = url.substr(path_start);
  }
  while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
  return ep;
}

Json tool_call_to_wire(const ToolCall& call) {
  Json fn;
  fn["name"] = call.name;
  fn["arguments"] = call.arguments.dump();
  Json j;
  j["id"] = call.id;
  j["type"] = "function";
  j["function"] = std::move(fn);
  return j;
}

[[noreturn]] void malformed(const ChatRequest& request, const std::string& what) {
  throw Error(ErrorCode::malformed_response,
              "model " + request.model.id + ": malformed provider response: " + what,
              request.model.id);
}

}  // namespace

Json request_to_wire(const ChatRequest& request) {
  Json body;
  body["model"] = request.model.model_name;
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    Json wm;
    wm["role"] = to_string(m.role);
    wm["content"] = m.content;
    if (!m.name.empty() && m.role != ChatRole::tool) wm["name"] = m.name;
    if (!m.tool_calls.empty()) {
      wm["tool_calls"] = Json::array();
      for (const auto& c : m.tool_calls) wm["tool_calls"].push_back(tool_call_to_wire(c));
    }
    if (m.role == ChatRole::tool) wm["tool_call_id"] = m.tool_call_id;
    messages.push_back(std::move(wm));
  }
  body["messages"] = std::move(messages);
  body["temperature"] = request.model.temperature;
  body["max_tokens"] = request.model.max_tokens;
  if (!request.tool_schemas.empty()) {
    Json tools = Json::array();
    for (const auto& t : request.tool_schemas) {
      Json fn;
      fn["name"] = t.name;
      fn["description"] = t.description;
      fn["parameters"] = t.parameters;
      Json tj;
      tj["type"] = "function";
      tj["function"] = std::move(fn);
      tools.push_back(std::move(tj));
    }
    body["tools"] = std::move(tools);
  }
  return body;
}

Completion completion_from_wire(std::string_view body, const ChatRequest& request) {
  Json doc;
  try {
    doc = Json::parse(body.begin(), body.end());
  } catch (const nlohmann::json::parse_error&) {
    malformed(request, "body is not JSON");
  }
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() ||
      doc["choices"].empty()) {
    malformed(request, "missing choices");
  }
  const Json& message = doc["choices"][0].value("message", Json::object());
  if (!message.is_object()) malformed(request, "choices[0].message is not an object");

  Completion out;
  if (message.contains("content") && message["content"].is_string()) {
    out.content = message["content"].get<std::string>();
  }
  if (message.contains("tool_calls") && message["tool_calls"].is_array()) {
    for (const auto& tc : message["tool_calls"]) {
      if (!tc.is_object() || !tc.contains("function") || !tc["function"].is_object()) {
        malformed(request, "tool call without function");
      }
      const Json& fn = tc["function"];
      ToolCall call;
      call.id = tc.value("id", "");
      call.name = fn.value("name", "");
      if (call.name.empty()) malformed(request, "tool call without name");
      auto raw = fn.value("arguments", std::string("{}"));
      try {
        auto parsed = Json::parse(raw);
        call.arguments = parsed.is_object() ? parsed : Json{{"_raw", raw}};
      } catch (const nlohmann::json::parse_error&) {
        call.arguments = Json{{"_raw", raw}};
      }
      out.tool_calls.push_back(std::move(call));
    }
  }

  const Json* usage = doc.contains("usage") && doc["usage"].is_object() ? &doc["usage"] : nullptr;
  if (usage && (*usage)["prompt_tokens"].is_number_integer() &&
      (*usage)["completion_tokens"].is_number_integer()) {
    out.usage.prompt_tokens = (*usage)["prompt_tokens"].get<std::int64_t>();
    out.usage.completion_tokens = (*usage)["completion_tokens"].get<std::int64_t>();
    if (out.usage.prompt_tokens < 0 || out.usage.completion_tokens < 0) {
      malformed(request, "negative token counts");
    }
    out.usage.estimated = false;
  } else {
    out.usage.prompt_tokens = estimate_prompt_tokens(request);
    out.usage.completion_tokens = estimate_tokens(out.content);
    out.usage.estimated = true;
  }
  check_tool_calls(out, request);
  return out;
}

OpenAICompatibleBackend::OpenAICompatibleBackend(ModelConfig model, EnvLookup env,
                                                 RetryPolicy retry,
                                                 std::chrono::seconds read_timeout)
    : model_(std::move(model)), env_(std::move(env)), retry_(retry), read_timeout_(read_timeout) {}

Completion OpenAICompatibleBackend::complete(const ChatRequest& request) {
  auto ep = split_url(model_.base_url.value_or(std::string(kDefaultBaseUrl)));
  std::string key;
  if (model_.api_key_ref) {
    auto value = env_(*model_.api_key_ref);
    if (!value) {
      throw Error(ErrorCode::transport_error,
                  "model " + model_.id + ": environment variable " + *model_.api_key_ref +
                      " is not set",
                  model_.id);
    }
    key = *value;
  }
  const std::string body = request_to_wire(request).dump();
  const std::string target = ep.path + "/chat/completions";

  auto delay = retry_.base_delay;
  std::string last_error;
  int last_status = 0;
  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    httplib::Client client(ep.origin);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(static_cast<time_t>(read_timeout_.count()), 0);
    if (!key.empty()) client.set_bearer_token_auth(key);
    auto res = client.Post(target, body, "application/json");
    if (res) {
      last_status = res->status;
      if (res->status >= 200 && res->status < 300) return completion_from_wire(res->body, request);
      last_error = "provider returned HTTP " + std::to_string(res->status);
      if (res->status < 500) break;  // client errors are not retried
    } else {
      last_error = "transport failure: " + httplib::to_string(res.error());
    }
    if (attempt < retry_.max_attempts) {
      std::this_thread::sleep_for(delay);
      delay = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(delay.count()) * retry_.factor));
    }
  }
  throw Error(ErrorCode::transport_error, "model " + model_.id + ": " + last_error, model_.id, {},
              last_status);
}

}  // namespace agentloom
