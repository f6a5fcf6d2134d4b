#include "agentloom/profiler.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "agentloom/error.hpp"
#include "agentloom/json_reader.hpp"

namespace agentloom {

ProfileReport profile(std::span<const Message> transcript, const PricingTable& pricing) {
  ProfileReport report;
  std::optional<TimePoint> first, last;
  for (const auto& m : transcript) {
    AgentMetrics& agent = report.per_agent[attributed_agent(m)];
    ++agent.messages;
    ++report.total_messages;
    agent.prompt_tokens += m.usage.prompt_tokens;
    agent.completion_tokens += m.usage.completion_tokens;
    if (m.usage.estimated) report.estimated = true;
    if (!m.model.empty()) {
      auto it = pricing.find(m.model);
      if (it == pricing.end()) {
        report.estimated = true;
      } else {
        agent.cost += static_cast<double>(m.usage.prompt_tokens) / 1000.0 * it->second.prompt_per_1k +
                      static_cast<double>(m.usage.completion_tokens) / 1000.0 *
                          it->second.completion_per_1k;
      }
    }
    for (const auto& r : m.tool_results) {
      ++agent.tool_calls;
      if (r.status == ToolStatus::success) {
        ++agent.tool_success;
      } else {
        ++agent.tool_failure;
      }
    }
    if (!first || m.created_at < *first) first = m.created_at;
    if (!last || m.created_at > *last) last = m.created_at;
  }
  for (const auto& [name, agent] : report.per_agent) report.total_cost += agent.cost;
  if (first && last) report.duration_s = std::chrono::duration<double>(*last - *first).count();
  return report;
}

namespace {

std::string format_cost(double cost) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << cost;
  return out.str();
}

std::string render_text(const ProfileReport& report) {
  struct Row {
    std::string agent;
    AgentMetrics m;
  };
  std::vector<Row> rows;
  AgentMetrics total;
  for (const auto& [name, m] : report.per_agent) {
    rows.push_back({name, m});
    total.messages += m.messages;
    total.prompt_tokens += m.prompt_tokens;
    total.completion_tokens += m.completion_tokens;
    total.tool_calls += m.tool_calls;
    total.tool_success += m.tool_success;
    total.tool_failure += m.tool_failure;
  }
  total.cost = report.total_cost;

  const std::vector<std::string> headers = {"agent",     "messages",   "prompt_tokens",
                                            "completion_tokens", "cost", "tool_calls",
                                            "tool_success",      "tool_failure"};
  auto cells = [](const std::string& name, const AgentMetrics& m) {
    return std::vector<std::string>{name,
                                    std::to_string(m.messages),
                                    std::to_string(m.prompt_tokens),
                                    std::to_string(m.completion_tokens),
                                    format_cost(m.cost),
                                    std::to_string(m.tool_calls),
                                    std::to_string(m.tool_success),
                                    std::to_string(m.tool_failure)};
  };
  std::vector<std::vector<std::string>> table = {headers};
  for (const auto& row : rows) table.push_back(cells(row.agent, row.m));
  table.push_back(cells("TOTAL", total));

  std::vector<std::size_t> widths(headers.size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  }
  std::ostringstream out;
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(widths[c])) << line[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(widths[c])) << line[c];
      }
    }
    out << '\n';
  }
  out << "estimated: " << (report.estimated ? "yes" : "no") << "  duration_s: " << std::fixed
      << std::setprecision(3) << report.duration_s << '\n';
  return out.str();
}

}  // namespace

Json to_json(const ProfileReport& report) {
  Json j;
  j["total_messages"] = report.total_messages;
  Json agents = Json::object();
  for (const auto& [name, m] : report.per_agent) {
    Json a;
    a["messages"] = m.messages;
    a["prompt_tokens"] = m.prompt_tokens;
    a["completion_tokens"] = m.completion_tokens;
    a["cost"] = m.cost;
    a["tool_calls"] = m.tool_calls;
    a["tool_success"] = m.tool_success;
    a["tool_failure"] = m.tool_failure;
    agents[name] = std::move(a);
  }
  j["per_agent"] = std::move(agents);
  j["total_cost"] = report.total_cost;
  j["estimated"] = report.estimated;
  j["duration_s"] = report.duration_s;
  return j;
}

ProfileReport report_from_json(const Json& j) {
  detail::ObjectReader r(j, "profile");
  ProfileReport report;
  report.total_messages = r.integer("total_messages");
  if (const Json* agents = r.object("per_agent")) {
    for (const auto& [name, value] : agents->items()) {
      detail::ObjectReader ar(value, r.field("per_agent") + "." + name);
      AgentMetrics m;
      m.messages = ar.integer("messages");
      m.prompt_tokens = ar.integer("prompt_tokens");
      m.completion_tokens = ar.integer("completion_tokens");
      m.cost = ar.number("cost");
      m.tool_calls = ar.integer("tool_calls");
      m.tool_success = ar.integer("tool_success");
      m.tool_failure = ar.integer("tool_failure");
      ar.finish();
      report.per_agent.emplace(name, m);
    }
  }
  report.total_cost = r.number("total_cost");
  report.estimated = r.boolean_or("estimated", false);
  report.duration_s = r.number_or("duration_s", 0.0);
  r.finish();
  return report;
}

std::string render_report(const ProfileReport& report, ReportFormat format) {
  if (format == ReportFormat::structured) return canonical_dump(to_json(report));
  return render_text(report);
}

PricingTable parse_pricing(std::string_view text) {
  Json doc = parse_json_text(text);
  detail::ObjectReader r(doc, "");
  PricingTable table;
  if (const Json* models = r.object("models")) {
    for (const auto& [name, rates] : models->items()) {
      Pricing p = parse_pricing_rates(rates, "models." + name);
      if (p.prompt_per_1k < 0 || p.completion_per_1k < 0) {
        throw Error(ErrorCode::schema_error, "models." + name + ": rates must be >= 0",
                    "models." + name);
      }
      table[name] = p;
    }
  }
  r.finish();
  return table;
}

PricingTable load_pricing(const std::filesystem::path& path) { return parse_pricing(read_file(path)); }

PricingTable merge_pricing(const Registry& registry, const PricingTable& overrides) {
  PricingTable table;
  for (const auto& m : registry.models) {
    if (m.pricing) table[m.model_name] = *m.pricing;
  }
  for (const auto& [name, p] : overrides) table[name] = p;
  return table;
}

}  // namespace agentloom
