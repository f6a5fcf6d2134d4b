#pragma once

// Workflow builders and helpers shared by the unit and acceptance tests.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "agentloom/engine.hpp"
#include "agentloom/spec.hpp"

namespace fx {

using namespace agentloom;

inline MockStep say(std::string content, std::optional<Usage> usage = std::nullopt) {
  MockStep s;
  s.content = std::move(content);
  s.usage = usage;
  return s;
}

inline MockStep call(std::string content, std::string tool, Json args = Json::object(),
                     std::string id = {}) {
  MockStep s;
  s.content = std::move(content);
  s.tool_calls.push_back(ToolCall{std::move(id), std::move(tool), std::move(args)});
  return s;
}

inline MockStep echo() {
  MockStep s;
  s.echo_input = true;
  return s;
}

inline ModelConfig mock_model(std::string id, std::vector<MockStep> steps,
                              ExhaustedBehavior exhausted = ExhaustedBehavior::repeat_last,
                              std::optional<Pricing> pricing = std::nullopt) {
  ModelConfig m;
  m.id = id;
  m.name = id;
  m.provider = Provider::mock;
  m.model_name = "mock-" + id;
  m.pricing = pricing;
  m.mock_script = MockScript{std::move(steps), exhausted};
  return m;
}

inline AgentSpec assistant(std::string id, std::string name, std::string model_id,
                           std::vector<std::string> skills = {}) {
  AgentSpec a;
  a.id = std::move(id);
  a.type = AgentType::assistant;
  a.name = std::move(name);
  a.system_message = "You are " + a.name + ".";
  a.model_ref = std::move(model_id);
  a.skill_refs = std::move(skills);
  return a;
}

inline AgentSpec user_proxy(std::string id, std::string name, bool code_execution = false) {
  AgentSpec a;
  a.id = std::move(id);
  a.type = AgentType::user_proxy;
  a.name = std::move(name);
  a.code_execution = code_execution;
  return a;
}

inline AgentSpec group(std::string id, std::string name, std::vector<std::string> members,
                       SpeakerSelection selection = SpeakerSelection::round_robin,
                       std::optional<std::string> model = std::nullopt) {
  AgentSpec a;
  a.id = std::move(id);
  a.type = AgentType::group_chat;
  a.name = std::move(name);
  a.members = std::move(members);
  a.speaker_selection = selection;
  a.model_ref = std::move(model);
  return a;
}

inline SkillSpec shell_skill(std::string id, std::string name, std::string source,
                             double timeout_s = 60.0) {
  SkillSpec s;
  s.id = std::move(id);
  s.name = std::move(name);
  s.description = "test skill " + s.name;
  s.language = SkillLanguage::shell;
  s.source = std::move(source);
  s.timeout_s = timeout_s;
  return s;
}

inline WorkflowSpec autonomous(std::string id, std::string initiator, std::string receiver,
                               Registry registry, std::int64_t max_turns = 10) {
  WorkflowSpec w;
  w.id = std::move(id);
  w.name = w.id;
  w.pattern = Pattern::autonomous_chat;
  w.initiator_ref = std::move(initiator);
  w.receiver_ref = std::move(receiver);
  w.termination.max_turns = max_turns;
  w.registry = std::move(registry);
  w.registry.sort();
  return w;
}

inline WorkflowSpec sequential(std::string id, std::vector<std::string> sequence, Registry registry) {
  WorkflowSpec w;
  w.id = std::move(id);
  w.name = w.id;
  w.pattern = Pattern::sequential_chat;
  w.sequence = std::move(sequence);
  w.registry = std::move(registry);
  w.registry.sort();
  return w;
}

// user_proxy "user" -> assistant "assistant" on model "m".
inline WorkflowSpec pair(std::vector<MockStep> steps, std::int64_t max_turns = 10,
                         std::vector<SkillSpec> skills = {}) {
  Registry r;
  r.models.push_back(mock_model("m", std::move(steps), ExhaustedBehavior::repeat_last,
                                Pricing{0.01, 0.03}));
  std::vector<std::string> skill_ids;
  for (const auto& s : skills) skill_ids.push_back(s.id);
  r.skills = std::move(skills);
  r.agents.push_back(user_proxy("user", "user"));
  r.agents.push_back(assistant("asst", "assistant", "m", skill_ids));
  return autonomous("wf-pair", "user", "asst", std::move(r), max_turns);
}

// Book-writing team: a user proxy hands the task to a group chat of a
// content writer, a quality reviewer and an illustrator that calls the
// generate_images skill.
inline WorkflowSpec persona_workflow() {
  Registry r;
  r.models.push_back(mock_model(
      "content-model",
      {say("Page 1: The sun is a giant ball of hot gas. It gives us light and warmth every day.\n"
           "Page 2: Plants use sunlight to grow, and we feel its heat on a summer afternoon.",
           Usage{420, 96, false})},
      ExhaustedBehavior::repeat_last, Pricing{0.0015, 0.002}));
  r.models.push_back(mock_model("qa-model", {say("Both pages have enough sentences for readers aged 5 to 8.", Usage{510, 18, false})},
                                ExhaustedBehavior::repeat_last, Pricing{0.0015, 0.002}));
  r.models.push_back(mock_model(
      "image-model",
      {call("Drawing the illustrations now.", "generate_images",
            Json{{"prompt", "a smiling sun over a field"}, {"count", 2}}, "img-1"),
       say("Illustrations saved as page1.svg and page2.svg. TERMINATE", Usage{640, 21, false})},
      ExhaustedBehavior::repeat_last, Pricing{0.03, 0.06}));
  r.skills.push_back(shell_skill(
      "skill-images", "generate_images",
      "for i in 1 2; do\n"
      "  printf '<svg xmlns=\"http://www.w3.org/2000/svg\"><circle r=\"%s\"/></svg>\\n' \"$i\" > page$i.svg\n"
      "done\n"
      "echo \"generated 2 images\"\n"));
  r.skills.push_back(shell_skill("skill-pdfs", "generate_pdfs",
                                 "printf '%s\\n' \"$AGENTLOOM_ARGS\" > book.md\necho book.md\n"));
  r.agents.push_back(user_proxy("agent-user", "UserProxy", true));
  auto content = assistant("agent-content", "ContentAssistant", "content-model", {"skill-pdfs"});
  content.system_message = "Write two pages of a children's book, several sentences per page.";
  r.agents.push_back(content);
  auto qa = assistant("agent-qa", "QualityAssuranceAssistant", "qa-model");
  qa.system_message = "Check that every page meets the length requirement.";
  r.agents.push_back(qa);
  auto images = assistant("agent-images", "ImageGeneratorAssistant", "image-model", {"skill-images"});
  images.system_message = "Create one illustration per page with generate_images.";
  r.agents.push_back(images);
  r.agents.push_back(group("agent-group", "BookGroup", {"agent-content", "agent-qa", "agent-images"}));
  auto w = autonomous("wf-book", "agent-user", "agent-group", std::move(r), 12);
  w.name = "Children's book generator";
  return w;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("agentloom-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

// Strips run-specific values (ids, timestamps, durations, workdir-bound
// session refs) so transcripts from different runs can be compared.
inline Json normalized(Json j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "id" || k == "created_at" || k == "session_ref" || k == "duration_s" ||
          k == "updated_at") {
        it.value() = "*";
      } else {
        it.value() = normalized(it.value());
      }
    }
  } else if (j.is_array()) {
    for (auto& v : j) v = normalized(v);
  }
  return j;
}

inline Json normalized_transcript(const std::vector<Message>& msgs) {
  Json arr = Json::array();
  for (const auto& m : msgs) arr.push_back(normalized(to_json(m)));
  return arr;
}

// Event collector usable as an EventSink.
struct Recorder {
  std::vector<RunEvent> events;
  EventSink sink() {
    return [this](const RunEvent& e) { events.push_back(e); };
  }
  std::vector<RunEvent> of(EventKind kind) const {
    std::vector<RunEvent> out;
    for (const auto& e : events) {
      if (e.kind == kind) out.push_back(e);
    }
    return out;
  }
};

inline Environment test_env(const std::filesystem::path& workdir) {
  Environment env;
  env.workdir = workdir;
  env.session_ref = "test-session";
  env.env = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
  return env;
}

}  // namespace fx
