#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "agentloom/engine.hpp"
#include "agentloom/error.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace agentloom;

namespace {

struct Harness {
  fx::TempDir dir;
  fx::Recorder rec;
  NonInteractiveInput none;

  WorkflowInstance make(const WorkflowSpec& spec) { return instantiate(spec, fx::test_env(dir.path())); }

  RunResult go(const WorkflowSpec& spec, std::string_view task = "hi") {
    auto inst = make(spec);
    return run_workflow(inst, task, {}, rec.sink(), none);
  }
};

std::shared_ptr<MockBackend> mock_of(const WorkflowInstance& inst, const std::string& model_id) {
  return std::dynamic_pointer_cast<MockBackend>(inst.backend_for_model(model_id));
}

int count_role(const std::vector<Message>& t, MessageRole role) {
  return static_cast<int>(std::count_if(t.begin(), t.end(), [&](const Message& m) { return m.role == role; }));
}

// Checks the stream-level invariants every run must satisfy.
void expect_event_integrity(const std::vector<RunEvent>& events, const RunResult& r) {
  ASSERT_FALSE(events.empty());
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].sequence, i);
  int terminals = 0;
  for (const auto& e : events) terminals += is_terminal(e.kind) ? 1 : 0;
  EXPECT_EQ(terminals, 1);
  EXPECT_TRUE(is_terminal(events.back().kind));
  std::vector<Json> streamed;
  for (const auto& e : events) {
    if (e.kind == EventKind::message) streamed.push_back(e.payload);
  }
  ASSERT_EQ(streamed.size(), r.transcript.size());
  for (std::size_t i = 0; i < streamed.size(); ++i) EXPECT_EQ(streamed[i], to_json(r.transcript[i]));
  for (std::size_t i = 1; i < r.transcript.size(); ++i) {
    EXPECT_GT(r.transcript[i].turn_index, r.transcript[i - 1].turn_index);
  }
}

}  // namespace

TEST(Engine, KeywordTerminatesAfterOneAssistantMessage) {
  Harness h;
  auto r = h.go(fx::pair({fx::say("Done. TERMINATE")}));
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_EQ(count_role(r.transcript, MessageRole::assistant), 1);
  ASSERT_EQ(r.transcript.size(), 2u);
  EXPECT_EQ(r.transcript[0].sender, "user");
  EXPECT_EQ(r.transcript[0].content, "hi");
  EXPECT_EQ(r.final_message.content, "Done. TERMINATE");
  expect_event_integrity(h.rec.events, r);
  EXPECT_EQ(h.rec.events.back().kind, EventKind::run_finished);
  EXPECT_EQ(h.rec.events.back().payload["status"], "terminated_keyword");
  EXPECT_EQ(h.rec.events.back().payload["turns"], 1);
}

TEST(Engine, MaxTurnsCountsCompletions) {
  Harness h;
  auto r = h.go(fx::pair({fx::say("continue")}, 3));
  EXPECT_EQ(r.status, RunStatus::max_turns_reached);
  EXPECT_EQ(count_role(r.transcript, MessageRole::assistant), 3);
  // task, then assistant/proxy alternating, ending on the third completion
  EXPECT_EQ(r.transcript.size(), 6u);
  EXPECT_EQ(r.transcript[2].content, "Please continue.");
  expect_event_integrity(h.rec.events, r);
}

TEST(Engine, KeywordIsNotCheckedOnTheTask) {
  Harness h;
  auto r = h.go(fx::pair({fx::say("fine")}, 2), "please TERMINATE soon");
  EXPECT_EQ(r.status, RunStatus::max_turns_reached);
}

TEST(Engine, KeywordMatchesAsSubstring) {
  Harness h;
  auto r = h.go(fx::pair({fx::say("xxTERMINATEDxx")}));
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
}

TEST(Engine, ToolCallProducesEventsAndToolMessageBetweenAssistantMessages) {
  Harness h;
  auto spec = fx::pair({fx::call("calling", "echo_skill", Json{{"text", "ping"}}), fx::say("TERMINATE")}, 10,
                       {fx::shell_skill("echo", "echo_skill", "echo \"$1\"")});
  auto r = h.go(spec);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  ASSERT_EQ(r.transcript.size(), 4u);
  EXPECT_EQ(r.transcript[1].role, MessageRole::assistant);
  EXPECT_EQ(r.transcript[2].role, MessageRole::tool);
  EXPECT_EQ(r.transcript[3].role, MessageRole::assistant);
  const Message& tool = r.transcript[2];
  EXPECT_EQ(tool.sender, "echo_skill");
  EXPECT_EQ(tool.recipient, "assistant");
  EXPECT_EQ(tool.tool_call_id, r.transcript[1].tool_calls.at(0).id);
  ASSERT_EQ(tool.tool_results.size(), 1u);
  EXPECT_EQ(tool.tool_results[0].status, ToolStatus::success);
  EXPECT_EQ(tool.tool_results[0].stdout_text, "--text=ping\n");

  std::vector<EventKind> kinds;
  for (const auto& e : h.rec.events) kinds.push_back(e.kind);
  std::vector<EventKind> expected = {EventKind::message,      EventKind::message, EventKind::tool_started,
                                     EventKind::tool_finished, EventKind::message, EventKind::message,
                                     EventKind::run_finished};
  EXPECT_EQ(kinds, expected);
  expect_event_integrity(h.rec.events, r);
  EXPECT_EQ(h.rec.of(EventKind::tool_finished)[0].payload["result"]["status"], "success");
}

TEST(Engine, ToolResultIsShownToTheCallerAsToolRole) {
  Harness h;
  auto spec = fx::pair({fx::call("calling", "echo_skill"), fx::say("TERMINATE")}, 10,
                       {fx::shell_skill("echo", "echo_skill", "echo result-text")});
  auto inst = h.make(spec);
  run(inst, "hi", {}, h.rec.sink(), h.none);
  auto calls = mock_of(inst, "m")->calls();
  ASSERT_EQ(calls.size(), 2u);
  const auto& msgs = calls[1].messages;
  ASSERT_GE(msgs.size(), 4u);
  EXPECT_EQ(msgs[0].role, ChatRole::system);
  EXPECT_EQ(msgs[1].role, ChatRole::user);
  EXPECT_EQ(msgs[2].role, ChatRole::assistant);
  EXPECT_EQ(msgs[3].role, ChatRole::tool);
  EXPECT_NE(msgs[3].content.find("result-text"), std::string::npos);
  EXPECT_EQ(calls[1].tool_schemas.at(0).name, "echo_skill");
}

TEST(Engine, FailingToolIsNotARunError) {
  Harness h;
  auto spec = fx::pair({fx::call("calling", "bad_skill"), fx::say("recovered TERMINATE")}, 10,
                       {fx::shell_skill("bad", "bad_skill", "exit 4")});
  auto r = h.go(spec);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_EQ(r.transcript[2].tool_results.at(0).failure_kind, FailureKind::nonzero_exit);
  EXPECT_EQ(r.profile.per_agent.at("assistant").tool_failure, 1);
}

TEST(Engine, ArtifactEventsFollowToolFinished) {
  Harness h;
  auto spec = fx::pair({fx::call("drawing", "draw"), fx::say("TERMINATE")}, 10,
                       {fx::shell_skill("d", "draw", "echo '<svg/>' > pic.svg")});
  auto r = h.go(spec);
  auto arts = h.rec.of(EventKind::artifact);
  ASSERT_EQ(arts.size(), 1u);
  EXPECT_EQ(arts[0].payload["path"], "pic.svg");
  EXPECT_EQ(arts[0].payload["media_kind"], "image");
  EXPECT_TRUE(std::filesystem::exists(h.dir / "pic.svg"));
}

TEST(Engine, MaxConsecutiveRepliesBoundsAnEpisode) {
  Harness h;
  auto spec = fx::pair({fx::call("again", "echo_skill")}, 9, {fx::shell_skill("e", "echo_skill", "echo ok")});
  spec.registry.agents[0].max_consecutive_replies = 2;  // asst sorts before user
  ASSERT_EQ(spec.registry.agents[0].id, "asst");
  auto r = h.go(spec);
  EXPECT_EQ(r.status, RunStatus::max_turns_reached);
  int run = 0;
  for (const auto& m : r.transcript) {
    if (m.role == MessageRole::tool) continue;
    if (m.sender == "assistant") {
      ++run;
      EXPECT_LE(run, 2);
    } else {
      run = 0;
    }
  }
}

TEST(Engine, BackendFailureEmitsRunErrorAndErrorStatus) {
  Harness h;
  auto spec = fx::pair({fx::say("once")}, 10);
  spec.registry.models[0].mock_script->exhausted_behavior = ExhaustedBehavior::error;
  auto r = h.go(spec);
  EXPECT_EQ(r.status, RunStatus::error);
  EXPECT_FALSE(r.error.empty());
  EXPECT_EQ(h.rec.events.back().kind, EventKind::run_error);
  EXPECT_EQ(h.rec.events.back().payload["code"], "script_exhausted");
  expect_event_integrity(h.rec.events, r);
}

TEST(Engine, EmptyTaskIsRejectedBeforeAnyAgentRuns) {
  Harness h;
  auto inst = h.make(fx::pair({fx::say("x")}));
  try {
    run(inst, "   ", {}, h.rec.sink(), h.none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::precondition_failed);
  }
  EXPECT_TRUE(h.rec.events.empty());
  EXPECT_EQ(mock_of(inst, "m")->steps_consumed(), 0u);
}

TEST(Engine, DeterministicUnderMock) {
  auto spec = fx::persona_workflow();
  Harness a, b;
  auto ra = a.go(spec, "Write a book about the sun");
  auto rb = b.go(spec, "Write a book about the sun");
  EXPECT_EQ(fx::normalized_transcript(ra.transcript), fx::normalized_transcript(rb.transcript));
}

TEST(Engine, CancelEndsWithCancelledRunError) {
  Harness h;
  std::stop_source stop;
  stop.request_stop();
  auto inst = h.make(fx::pair({fx::say("x")}));
  auto r = run(inst, "hi", {}, h.rec.sink(), h.none, stop.get_token());
  EXPECT_EQ(r.status, RunStatus::error);
  EXPECT_EQ(h.rec.events.back().kind, EventKind::run_error);
  EXPECT_EQ(h.rec.events.back().payload["code"], "cancelled");
}

TEST(Engine, HistoryIsReplayedBeforeNewMessages) {
  Harness h;
  auto spec = fx::pair({fx::say("TERMINATE")});
  auto inst = h.make(spec);
  Message old;
  old.id = "old";
  old.sender = "user";
  old.recipient = "assistant";
  old.content = "earlier question";
  old.turn_index = 4;
  auto r = run(inst, "new question", {old}, h.rec.sink(), h.none);
  auto calls = mock_of(inst, "m")->calls();
  ASSERT_EQ(calls.size(), 1u);
  ASSERT_EQ(calls[0].messages.size(), 3u);
  EXPECT_EQ(calls[0].messages[1].content, "earlier question");
  EXPECT_EQ(calls[0].messages[2].content, "new question");
  EXPECT_EQ(r.transcript.front().turn_index, 5);
}

TEST(Engine, TranscriptCapacityDropsOldestMessages) {
  Harness h;
  auto spec = fx::pair({fx::say("reply")}, 4);
  spec.registry.memories.push_back(MemorySpec{"mem", MemoryKind::short_term_transcript, 2});
  spec.registry.agents[0].memory_ref = "mem";
  auto inst = h.make(spec);
  run(inst, "hi", {}, h.rec.sink(), h.none);
  for (const auto& call : mock_of(inst, "m")->calls()) {
    EXPECT_LE(call.messages.size(), 3u);  // system + 2
    EXPECT_EQ(call.messages[0].role, ChatRole::system);
  }
}

TEST(Engine, NaiveStoreNotesReachTheSystemMessage) {
  Harness h;
  auto spec = fx::pair({fx::say("remember the blue door")}, 2);
  spec.registry.memories.push_back(MemorySpec{"notes", MemoryKind::naive_store, 3});
  spec.registry.agents[0].memory_ref = "notes";
  auto inst = h.make(spec);
  run(inst, "hi", {}, h.rec.sink(), h.none);
  auto calls = mock_of(inst, "m")->calls();
  ASSERT_EQ(calls.size(), 2u);
  EXPECT_EQ(calls[0].messages[0].content.find("Notes from earlier runs"), std::string::npos);
  EXPECT_NE(calls[1].messages[0].content.find("- remember the blue door"), std::string::npos);
  EXPECT_LE(inst.recall("notes").size(), 3u);
}

TEST(Engine, UserProxyExecutesCodeBlocks) {
  Harness h;
  auto spec = fx::pair({fx::say("Run this:\n```sh\necho computed > result.txt\ncat result.txt\n```"),
                        fx::say("Thanks. TERMINATE")});
  spec.registry.agents[1].code_execution = true;
  ASSERT_EQ(spec.registry.agents[1].id, "user");
  auto r = h.go(spec);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  ASSERT_EQ(r.transcript.size(), 4u);
  const Message& reply = r.transcript[2];
  EXPECT_EQ(reply.sender, "user");
  ASSERT_EQ(reply.tool_results.size(), 1u);
  EXPECT_EQ(reply.tool_results[0].stdout_text, "computed\n");
  EXPECT_EQ(reply.tool_results[0].artifacts.at(0).path, "result.txt");
  EXPECT_EQ(h.rec.of(EventKind::tool_started).size(), 1u);
  EXPECT_EQ(r.profile.per_agent.at("user").tool_success, 1);
}

TEST(Engine, AlwaysModeDegradesWithWarningWhenNonInteractive) {
  Harness h;
  auto spec = fx::pair({fx::say("TERMINATE")});
  spec.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto r = h.go(spec);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_TRUE(h.rec.of(EventKind::human_input_requested).empty());
  // the proxy never spoke here, so no warning is due yet
  auto r2 = h.go(fx::pair({fx::say("go on")}, 2));
  EXPECT_TRUE(r2.warnings.empty());
  auto spec3 = fx::pair({fx::say("go on")}, 2);
  spec3.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto r3 = h.go(spec3);
  ASSERT_EQ(r3.warnings.size(), 1u);
  EXPECT_NE(r3.warnings[0].find("degraded to never"), std::string::npos);
}

TEST(Engine, AlwaysModeAsksAndResumesWithInput) {
  Harness h;
  auto spec = fx::pair({fx::echo()}, 10);
  spec.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto inst = h.make(spec);
  QueuedHumanInput input(std::chrono::seconds(5));
  input.push("first human line");
  input.push("stop now TERMINATE");
  auto r = run(inst, "hi", {}, h.rec.sink(), input);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_EQ(h.rec.of(EventKind::human_input_requested).size(), 2u);
  std::vector<std::string> contents;
  for (const auto& m : r.transcript) contents.push_back(m.content);
  EXPECT_EQ(contents, (std::vector<std::string>{"hi", "hi", "first human line", "first human line",
                                                "stop now TERMINATE"}));
}

TEST(Engine, AlwaysModePausesWhenNoInputArrives) {
  Harness h;
  auto spec = fx::pair({fx::say("question?")}, 10);
  spec.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto inst = h.make(spec);
  QueuedHumanInput input(std::chrono::milliseconds(50));
  auto r = run(inst, "hi", {}, h.rec.sink(), input);
  EXPECT_EQ(r.status, RunStatus::awaiting_human);
  EXPECT_EQ(h.rec.events.back().payload["status"], "awaiting_human");
}

TEST(Engine, AlwaysModeExitCompletes) {
  Harness h;
  auto spec = fx::pair({fx::say("question?")}, 10);
  spec.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto inst = h.make(spec);
  QueuedHumanInput input(std::chrono::seconds(5));
  input.push("exit");
  auto r = run(inst, "hi", {}, h.rec.sink(), input);
  EXPECT_EQ(r.status, RunStatus::completed);
}

TEST(Engine, AlwaysModeEmptyReplyFallsBackToAutoReply) {
  Harness h;
  auto spec = fx::pair({fx::say("question?"), fx::say("TERMINATE")}, 10);
  spec.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto inst = h.make(spec);
  QueuedHumanInput input(std::chrono::seconds(5));
  input.push("");
  auto r = run(inst, "hi", {}, h.rec.sink(), input);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_EQ(r.transcript[2].content, "Please continue.");
}

TEST(Engine, OnTerminationLetsTheHumanContinue) {
  Harness h;
  auto spec = fx::pair({fx::say("first TERMINATE"), fx::say("second TERMINATE")}, 10);
  spec.registry.agents[1].human_input_mode = HumanInputMode::on_termination;
  auto inst = h.make(spec);
  QueuedHumanInput input(std::chrono::seconds(5));
  input.push("one more thing");
  input.push("");
  auto r = run(inst, "hi", {}, h.rec.sink(), input);
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_EQ(count_role(r.transcript, MessageRole::assistant), 2);
  EXPECT_EQ(r.transcript[2].content, "one more thing");
  EXPECT_EQ(h.rec.of(EventKind::human_input_requested).size(), 2u);
}

TEST(Engine, InputWaitIsCancellable) {
  Harness h;
  auto spec = fx::pair({fx::say("question?")}, 10);
  spec.registry.agents[1].human_input_mode = HumanInputMode::always;
  auto inst = h.make(spec);
  QueuedHumanInput input(std::chrono::minutes(5));
  std::stop_source stop;
  std::thread canceller([&] {
    while (input.waiting() == 0) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    stop.request_stop();
  });
  auto r = run(inst, "hi", {}, h.rec.sink(), input, stop.get_token());
  canceller.join();
  EXPECT_EQ(r.status, RunStatus::error);
  EXPECT_EQ(h.rec.events.back().payload["code"], "cancelled");
}

TEST(Engine, GroupChatRoundRobin) {
  Harness h;
  Registry reg;
  reg.models.push_back(fx::mock_model("ma", {fx::say("from a")}));
  reg.models.push_back(fx::mock_model("mb", {fx::say("from b")}));
  reg.models.push_back(fx::mock_model("mc", {fx::say("from c")}));
  reg.agents.push_back(fx::user_proxy("u", "user", false));
  reg.agents.push_back(fx::assistant("a", "alice", "ma"));
  reg.agents.push_back(fx::assistant("b", "bob", "mb"));
  reg.agents.push_back(fx::assistant("c", "carol", "mc"));
  reg.agents.push_back(fx::group("g", "team", {"a", "b", "c"}));
  auto r = h.go(fx::autonomous("w", "u", "g", reg, 7));
  EXPECT_EQ(r.status, RunStatus::max_turns_reached);
  std::vector<std::string> speakers;
  for (const auto& m : r.transcript) speakers.push_back(m.sender);
  EXPECT_EQ(speakers, (std::vector<std::string>{"user", "alice", "bob", "carol", "alice", "bob", "carol", "alice"}));
  for (std::size_t i = 1; i < r.transcript.size(); ++i) EXPECT_EQ(r.transcript[i].recipient, "team");
}

TEST(Engine, RoundRobinNext) {
  std::vector<std::string> members = {"a", "b", "c"};
  Message m;
  m.sender = "a";
  EXPECT_EQ(round_robin_next(members, {m}), "b");
  std::vector<Message> t;
  std::vector<std::string> picks;
  std::vector<std::string> two = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    auto next = round_robin_next(two, t);
    picks.push_back(next);
    Message said;
    said.sender = next;
    t.push_back(said);
  }
  EXPECT_EQ(picks, (std::vector<std::string>{"a", "b", "a", "b"}));
}

TEST(Engine, ModelSelectedFallsBackToRoundRobin) {
  for (const std::string reply : {"zzz", "I pick bob.", "carol"}) {
    Harness h;
    Registry reg;
    reg.models.push_back(fx::mock_model("ma", {fx::say("x")}));
    reg.models.push_back(fx::mock_model("sel", {fx::say(reply)}));
    reg.agents.push_back(fx::user_proxy("u", "user", false));
    reg.agents.push_back(fx::assistant("a", "alice", "ma"));
    reg.agents.push_back(fx::assistant("b", "bob", "ma"));
    reg.agents.push_back(fx::assistant("c", "carol", "ma"));
    reg.agents.push_back(fx::group("g", "team", {"a", "b", "c"}, SpeakerSelection::model_selected, "sel"));
    auto inst = h.make(fx::autonomous("w", "u", "g", reg));
    Message last;
    last.sender = "alice";
    std::vector<Message> t = {last};
    std::string expected = reply == "zzz" ? "b" : reply == "carol" ? "c" : "b";
    // round-robin oracle for the "zzz" case: alice spoke last -> bob
    EXPECT_EQ(inst.select_next_speaker("g", t), expected) << reply;
  }
}

TEST(Engine, SequentialSingleStep) {
  Harness h;
  Registry reg;
  reg.models.push_back(fx::mock_model("ma", {fx::say("alpha TERMINATE")}));
  reg.agents.push_back(fx::assistant("a", "A", "ma"));
  auto r = h.go(fx::sequential("w", {"a"}, reg), "start");
  EXPECT_EQ(r.status, RunStatus::completed);
  EXPECT_NE(r.final_message.content.find("alpha"), std::string::npos);
  expect_event_integrity(h.rec.events, r);
}

TEST(Engine, SequentialPassesSummaryToNextAgent) {
  Harness h;
  Registry reg;
  reg.models.push_back(fx::mock_model("ma", {fx::say("alpha TERMINATE")}));
  reg.models.push_back(fx::mock_model("mb", {fx::echo()}));
  reg.agents.push_back(fx::assistant("a", "A", "ma"));
  reg.agents.push_back(fx::assistant("b", "B", "mb"));
  auto spec = fx::sequential("w", {"a", "b"}, reg);
  spec.termination.max_turns = 1;
  auto inst = h.make(spec);
  auto r = run_sequential(inst, "start", h.rec.sink());
  auto calls = mock_of(inst, "mb")->calls();
  ASSERT_FALSE(calls.empty());
  std::vector<Message> a_sub(r.transcript.begin(), r.transcript.begin() + 2);
  EXPECT_EQ(calls[0].messages.back().content, summarize(a_sub, SummaryMethod::last_message));
  EXPECT_EQ(calls[0].messages.back().content, "alpha TERMINATE");
  // A never sees B's traffic and B never sees A's
  EXPECT_EQ(calls[0].messages.size(), 2u);
  EXPECT_EQ(r.final_message.content, "alpha TERMINATE");
  std::vector<std::string> order;
  for (const auto& m : r.transcript) {
    if (m.role == MessageRole::assistant) order.push_back(m.sender);
  }
  EXPECT_EQ(order, (std::vector<std::string>{"A", "B"}));
}

TEST(Engine, SequentialTruncatedConcat) {
  Harness h;
  Registry reg;
  reg.models.push_back(fx::mock_model("ma", {fx::say("part one"), fx::say("part two TERMINATE")}));
  reg.models.push_back(fx::mock_model("mb", {fx::echo()}));
  reg.agents.push_back(fx::assistant("a", "A", "ma"));
  reg.agents.push_back(fx::assistant("b", "B", "mb"));
  auto spec = fx::sequential("w", {"a", "b"}, reg);
  spec.summary_method = SummaryMethod::truncated_concat;
  spec.termination.max_turns = 3;
  auto inst = h.make(spec);
  run_sequential(inst, "start", h.rec.sink());
  auto calls = mock_of(inst, "mb")->calls();
  ASSERT_FALSE(calls.empty());
  EXPECT_EQ(calls[0].messages.back().content,
            "start\n---\npart one\n---\nPlease continue.\n---\npart two TERMINATE");
}

TEST(Engine, SequentialRejectsEmptyTask) {
  Harness h;
  Registry reg;
  reg.models.push_back(fx::mock_model("ma", {fx::say("x")}));
  reg.agents.push_back(fx::assistant("a", "A", "ma"));
  auto inst = h.make(fx::sequential("w", {"a"}, reg));
  EXPECT_THROW(run_sequential(inst, "", h.rec.sink()), Error);
  EXPECT_EQ(mock_of(inst, "ma")->steps_consumed(), 0u);
}

TEST(Summarize, Rules) {
  std::vector<Message> t(2);
  t[0].content = "a";
  t[1].content = "b";
  EXPECT_EQ(summarize(t, SummaryMethod::truncated_concat), "a\n---\nb");
  t[1].content = "final answer";
  EXPECT_EQ(summarize(t, SummaryMethod::last_message), "final answer");
  EXPECT_THROW(summarize({}, SummaryMethod::last_message), Error);
}

TEST(Summarize, LongTranscriptIsHeadOfTheJoin) {
  std::vector<Message> t;
  std::string join;
  for (int i = 0; i < 40; ++i) {
    Message m;
    m.content = std::string(256, static_cast<char>('a' + i % 26));
    if (i) join += "\n---\n";
    join += m.content;
    t.push_back(m);
  }
  auto s = summarize(t, SummaryMethod::truncated_concat);
  EXPECT_EQ(s.size(), 4096u);
  EXPECT_EQ(s, join.substr(0, 4096));
}

TEST(Instantiate, BindsPersonaAgents) {
  fx::TempDir dir;
  auto inst = instantiate(fx::persona_workflow(), fx::test_env(dir.path()));
  EXPECT_EQ(inst.agents().size(), 4u);
  ASSERT_NE(inst.group(), nullptr);
  EXPECT_EQ(inst.group()->spec.members.size(), 3u);
  EXPECT_EQ(inst.agent("agent-images").skills.at(0).name, "generate_images");
  EXPECT_EQ(inst.agent("agent-user").backend, nullptr);
  EXPECT_NE(inst.agent("agent-content").backend, nullptr);
}

TEST(Instantiate, MissingKeyNamesModel) {
  auto spec = fx::pair({fx::say("x")});
  spec.registry.models[0].provider = Provider::openai_compatible;
  spec.registry.models[0].mock_script.reset();
  spec.registry.models[0].api_key_ref = "AGENTLOOM_TEST_UNSET_KEY";
  fx::TempDir dir;
  try {
    instantiate(spec, fx::test_env(dir.path()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::instantiation_error);
    EXPECT_EQ(e.path(), "m");
  }
}

TEST(Instantiate, RejectsInvalidSpec) {
  auto spec = fx::pair({fx::say("x")});
  spec.receiver_ref = "ghost";
  fx::TempDir dir;
  try {
    instantiate(spec, fx::test_env(dir.path()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::validation_error);
  }
}

TEST(Instantiate, SharesOneBackendPerModel) {
  fx::TempDir dir;
  Registry reg;
  reg.models.push_back(fx::mock_model("shared", {fx::say("x")}));
  reg.agents.push_back(fx::user_proxy("u", "user"));
  reg.agents.push_back(fx::assistant("a", "alice", "shared"));
  reg.agents.push_back(fx::assistant("b", "bob", "shared"));
  reg.agents.push_back(fx::group("g", "team", {"a", "b"}));
  auto inst = instantiate(fx::autonomous("w", "u", "g", reg), fx::test_env(dir.path()));
  EXPECT_EQ(inst.agent("a").backend, inst.agent("b").backend);
}

TEST(WorkflowManagerTest, RunsFromFile) {
  fx::TempDir dir;
  write_file(dir / "wf.json", export_workflow(fx::pair({fx::say("answer TERMINATE")})));
  WorkflowManager wm(dir / "wf.json", fx::test_env(dir / "scratch"));
  auto r = wm.run("What is the height of the Eiffel Tower?");
  EXPECT_EQ(r.status, RunStatus::terminated_keyword);
  EXPECT_EQ(r.final_message.content, "answer TERMINATE");
}

TEST(EngineProperty, TerminationMatchesLoopOracle) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    std::string keyword = trial % 2 ? "TERMINATE" : "FINISHED";
    int max_turns = 1 + static_cast<int>(rng() % 10);
    oracle::Party receiver;
    receiver.max_consecutive = 1 + static_cast<int>(rng() % 3);
    std::vector<MockStep> steps;
    int n = 1 + static_cast<int>(rng() % 6);
    int keyword_at = static_cast<int>(rng() % (n + 3));
    for (int i = 0; i < n; ++i) {
      std::string content = "step " + std::to_string(i);
      if (i == keyword_at) content = (rng() % 2 ? "prefix " : "") + keyword + (rng() % 2 ? " suffix" : "");
      bool tool = rng() % 4 == 0;
      steps.push_back(tool ? fx::call(content, "noop") : fx::say(content));
      receiver.script.push_back({content, tool});
    }
    auto spec = fx::pair(steps, max_turns, {fx::shell_skill("n", "noop", "true")});
    spec.termination.termination_keyword = keyword;
    spec.registry.agents[0].max_consecutive_replies = receiver.max_consecutive;
    auto expected = oracle::simulate_pair(oracle::Party{}, receiver, max_turns, keyword);
    Harness h;
    auto r = h.go(spec);
    EXPECT_EQ(std::string(to_string(r.status)), expected.status) << "trial " << trial;
    EXPECT_EQ(static_cast<int>(r.transcript.size()), expected.messages) << "trial " << trial;
    EXPECT_EQ(h.rec.events.back().payload["turns"], expected.completions) << "trial " << trial;
  }
}
