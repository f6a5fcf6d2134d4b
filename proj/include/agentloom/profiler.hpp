#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "agentloom/message.hpp"

namespace agentloom {

struct AgentMetrics {
  std::int64_t messages = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double cost = 0.0;
  std::int64_t tool_calls = 0;
  std::int64_t tool_success = 0;
  std::int64_t tool_failure = 0;
  bool operator==(const AgentMetrics&) const = default;
};

struct ProfileReport {
  std::int64_t total_messages = 0;
  std::map<std::string, AgentMetrics> per_agent;
  double total_cost = 0.0;
  // True when any usage was estimated or a model had no pricing entry.
  bool estimated = false;
  double duration_s = 0.0;
  bool operator==(const ProfileReport&) const = default;
};

// model_name -> rates per 1000 tokens
using PricingTable = std::map<std::string, Pricing>;

// Single pass over the transcript. Cost per message is
//   prompt_tokens / 1000 * prompt_per_1k + completion_tokens / 1000 * completion_per_1k
// using the rates of the model that produced it.
ProfileReport profile(std::span<const Message> transcript, const PricingTable& pricing);

enum class ReportFormat { text, structured };

std::string render_report(const ProfileReport& report, ReportFormat format);

Json to_json(const ProfileReport& report);
ProfileReport report_from_json(const Json& j);

// Pricing file format:
//   {"models": {"<model_name>": {"prompt_per_1k": 0.01, "completion_per_1k": 0.03}}}
PricingTable parse_pricing(std::string_view text);
PricingTable load_pricing(const std::filesystem::path& path);

// Rates embedded in model configs, overridden by `overrides` entries.
PricingTable merge_pricing(const Registry& registry, const PricingTable& overrides);

}  // namespace agentloom
