#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "agentloom/error.hpp"
#include "agentloom/profiler.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace agentloom;

namespace {

Message msg(std::string sender, std::string model, Usage usage) {
  Message m;
  m.sender = std::move(sender);
  m.recipient = "other";
  m.role = MessageRole::assistant;
  m.model = std::move(model);
  m.usage = usage;
  return m;
}

ToolResult ok_result() {
  ToolResult r;
  r.status = ToolStatus::success;
  r.exit_code = 0;
  return r;
}

}  // namespace

TEST(Profiler, EmptyTranscriptIsAllZero) {
  auto r = profile({}, {});
  EXPECT_EQ(r.total_messages, 0);
  EXPECT_TRUE(r.per_agent.empty());
  EXPECT_EQ(r.total_cost, 0.0);
  EXPECT_FALSE(r.estimated);
  EXPECT_EQ(r.duration_s, 0.0);
}

TEST(Profiler, CountsAndToolAttribution) {
  std::vector<Message> t;
  t.push_back(msg("a", "", {}));
  t.push_back(msg("b", "", {}));
  Message tool;
  tool.sender = "echo_skill";
  tool.recipient = "a";
  tool.role = MessageRole::tool;
  tool.tool_results.push_back(ok_result());
  t.push_back(tool);
  auto r = profile(t, {});
  EXPECT_EQ(r.total_messages, 3);
  ASSERT_EQ(r.per_agent.size(), 2u);
  EXPECT_EQ(r.per_agent.at("a").messages, 2);
  EXPECT_EQ(r.per_agent.at("a").tool_success, 1);
  EXPECT_EQ(r.per_agent.at("a").tool_calls, 1);
  EXPECT_EQ(r.per_agent.at("b").messages, 1);
  EXPECT_EQ(r.per_agent.count("echo_skill"), 0u);
}

TEST(Profiler, CostFromStatedFormula) {
  PricingTable pricing{{"gpt", Pricing{0.01, 0.03}}};
  auto r = profile(std::vector<Message>{msg("a", "gpt", Usage{1000, 500, false})}, pricing);
  EXPECT_NEAR(r.per_agent.at("a").cost, 0.025, 1e-12);
  EXPECT_NEAR(r.total_cost, 0.025, 1e-12);
  EXPECT_FALSE(r.estimated);
}

TEST(Profiler, UnpricedModelContributesZeroAndFlagsEstimate) {
  auto r = profile(std::vector<Message>{msg("a", "unknown-model", Usage{1000, 1000, false})}, {});
  EXPECT_EQ(r.total_cost, 0.0);
  EXPECT_TRUE(r.estimated);
}

TEST(Profiler, EstimatedUsageFlagsReport) {
  PricingTable pricing{{"gpt", Pricing{0.01, 0.03}}};
  auto r = profile(std::vector<Message>{msg("a", "gpt", Usage{10, 10, true})}, pricing);
  EXPECT_TRUE(r.estimated);
}

TEST(Profiler, DurationSpansFirstToLastMessage) {
  auto a = msg("a", "", {});
  auto b = msg("b", "", {});
  a.created_at = TimePoint(std::chrono::milliseconds(1000));
  b.created_at = TimePoint(std::chrono::milliseconds(3500));
  auto r = profile(std::vector<Message>{a, b}, {});
  EXPECT_DOUBLE_EQ(r.duration_s, 2.5);
}

TEST(Profiler, OrderIndependentAggregates) {
  std::mt19937 rng(5);
  PricingTable pricing{{"x", Pricing{0.5, 1.5}}};
  std::vector<Message> t;
  for (int i = 0; i < 30; ++i) {
    t.push_back(msg(i % 3 ? "a" : "b", "x",
                    Usage{static_cast<std::int64_t>(rng() % 100), static_cast<std::int64_t>(rng() % 100), false}));
  }
  auto base = profile(t, pricing);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(t.begin(), t.end(), rng);
    auto r = profile(t, pricing);
    EXPECT_EQ(r.total_messages, base.total_messages);
    for (const auto& [name, m] : base.per_agent) {
      EXPECT_EQ(r.per_agent.at(name).messages, m.messages);
      EXPECT_EQ(r.per_agent.at(name).prompt_tokens, m.prompt_tokens);
      EXPECT_NEAR(r.per_agent.at(name).cost, m.cost, 1e-9);
    }
  }
}

TEST(Profiler, CostIsMonotone) {
  PricingTable pricing{{"x", Pricing{0.002, 0.004}}};
  std::vector<Message> t;
  double prev = 0.0;
  for (int i = 0; i < 50; ++i) {
    t.push_back(msg("a", "x", Usage{i + 1, 2 * i + 1, false}));
    auto cost = profile(t, pricing).total_cost;
    EXPECT_GE(cost, prev);
    prev = cost;
  }
}

TEST(Profiler, MatchesNaiveRecountOnRandomTranscripts) {
  std::mt19937 rng(2024);
  PricingTable pricing{{"alpha", Pricing{0.0015, 0.002}}, {"beta", Pricing{0.03, 0.06}}};
  const std::vector<std::string> names = {"a", "b", "c", "d"};
  const std::vector<std::string> models = {"alpha", "beta", "", "gamma"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Message> t;
    int n = static_cast<int>(rng() % 51);
    for (int i = 0; i < n; ++i) {
      Message m;
      m.sender = names[rng() % names.size()];
      m.recipient = names[rng() % names.size()];
      m.role = static_cast<MessageRole>(rng() % 3);
      m.model = models[rng() % models.size()];
      m.usage = Usage{static_cast<std::int64_t>(rng() % 5000), static_cast<std::int64_t>(rng() % 2000),
                      rng() % 7 == 0};
      int calls = static_cast<int>(rng() % 3);
      for (int k = 0; k < calls; ++k) {
        ToolResult r = ok_result();
        if (rng() % 2) {
          r.status = ToolStatus::failure;
          r.exit_code = 1;
          r.failure_kind = FailureKind::nonzero_exit;
        }
        m.tool_results.push_back(r);
      }
      t.push_back(m);
    }
    auto got = profile(t, pricing);
    auto want = oracle::recount(t, pricing);
    EXPECT_EQ(got.total_messages, want.total_messages);
    EXPECT_EQ(got.estimated, want.estimated);
    EXPECT_NEAR(got.total_cost, want.total_cost, 1e-9);
    ASSERT_EQ(got.per_agent.size(), want.agents.size());
    for (const auto& [name, w] : want.agents) {
      const auto& g = got.per_agent.at(name);
      EXPECT_EQ(g.messages, w.messages);
      EXPECT_EQ(g.prompt_tokens, w.prompt);
      EXPECT_EQ(g.completion_tokens, w.completion);
      EXPECT_EQ(g.tool_calls, w.calls);
      EXPECT_EQ(g.tool_success, w.ok);
      EXPECT_EQ(g.tool_failure, w.failed);
      EXPECT_NEAR(g.cost, w.cost, 1e-9);
    }
  }
}

TEST(RenderReport, ZeroReportHasOnlyTotalsRow) {
  auto text = render_report(ProfileReport{}, ReportFormat::text);
  std::istringstream in(text);
  std::string header, totals;
  std::getline(in, header);
  std::getline(in, totals);
  EXPECT_EQ(header.rfind("agent", 0), 0u);
  EXPECT_EQ(totals.rfind("TOTAL", 0), 0u);
  EXPECT_NE(totals.find("0.000000"), std::string::npos);
}

TEST(RenderReport, TwoAgentsGiveTwoRowsPlusTotals) {
  std::vector<Message> t = {msg("alice", "", {}), msg("bob", "", {}), msg("alice", "", {})};
  auto text = render_report(profile(t, {}), ReportFormat::text);
  std::istringstream in(text);
  std::string line;
  int agent_rows = 0, total_rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("alice", 0) == 0 || line.rfind("bob", 0) == 0) ++agent_rows;
    if (line.rfind("TOTAL", 0) == 0) ++total_rows;
  }
  EXPECT_EQ(agent_rows, 2);
  EXPECT_EQ(total_rows, 1);
}

TEST(RenderReport, StructuredRoundTrips) {
  PricingTable pricing{{"gpt", Pricing{0.01, 0.03}}};
  std::vector<Message> t = {msg("a", "gpt", Usage{123, 45, false}), msg("b", "gpt", Usage{7, 1, true})};
  auto report = profile(t, pricing);
  auto text = render_report(report, ReportFormat::structured);
  EXPECT_EQ(report_from_json(parse_json_text(text)), report);
}

TEST(Pricing, ParseAndMerge) {
  auto table = parse_pricing(R"({"models": {"gpt-4": {"prompt_per_1k": 0.03, "completion_per_1k": 0.06}}})");
  ASSERT_EQ(table.size(), 1u);
  EXPECT_EQ(table.at("gpt-4"), (Pricing{0.03, 0.06}));
  EXPECT_THROW(parse_pricing(R"({"models": {"x": {"prompt_per_1k": -1, "completion_per_1k": 0}}})"), Error);
  EXPECT_THROW(parse_pricing(R"({"modles": {}})"), Error);

  auto w = fx::pair({fx::say("x")});
  auto merged = merge_pricing(w.registry, {{"mock-m", Pricing{1, 2}}, {"other", Pricing{3, 4}}});
  EXPECT_EQ(merged.at("mock-m"), (Pricing{1, 2}));
  EXPECT_EQ(merge_pricing(w.registry, {}).at("mock-m"), (Pricing{0.01, 0.03}));
}
