#include "agentloom/engine.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "agentloom/error.hpp"
#include "agentloom/json_reader.hpp"

namespace fs = std::filesystem;

namespace agentloom {

std::string_view to_string(RunStatus v) noexcept {
  switch (v) {
    case RunStatus::completed: return "completed";
    case RunStatus::terminated_keyword: return "terminated_keyword";
    case RunStatus::max_turns_reached: return "max_turns_reached";
    case RunStatus::error: return "error";
    case RunStatus::awaiting_human: return "awaiting_human";
  }
  return "error";
}

Json to_json(const RunResult& r) {
  Json j;
  j["status"] = to_string(r.status);
  j["session_ref"] = r.session_ref;
  j["final_message"] = to_json(r.final_message);
  j["transcript"] = Json::array();
  for (const auto& m : r.transcript) j["transcript"].push_back(to_json(m));
  j["profile"] = to_json(r.profile);
  j["warnings"] = r.warnings;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

RunResult run_result_from_json(const Json& j) {
  detail::ObjectReader r(j, "result");
  RunResult out;
  out.status = r.enumeration("status", RunStatus::error,
                             {{"completed", RunStatus::completed},
                              {"terminated_keyword", RunStatus::terminated_keyword},
                              {"max_turns_reached", RunStatus::max_turns_reached},
                              {"error", RunStatus::error},
                              {"awaiting_human", RunStatus::awaiting_human}});
  out.session_ref = r.str_or("session_ref", "");
  out.final_message = message_from_json(r.required("final_message"), "result.final_message");
  if (const Json* t = r.array("transcript")) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      out.transcript.push_back(
          message_from_json((*t)[i], detail::index_path("result.transcript", i)));
    }
  }
  out.profile = report_from_json(r.required("profile"));
  out.warnings = r.strings("warnings");
  out.error = r.str_or("error", "");
  r.finish();
  return out;
}

// ---------------------------------------------------------------------------
// QueuedHumanInput

std::optional<std::string> QueuedHumanInput::request(const std::string&, const std::string&,
                                                     std::stop_token stop) {
  std::unique_lock lock(mu_);
  ++waiting_;
  cv_.wait_for(lock, stop, timeout_, [this] { return !queue_.empty() || closed_; });
  --waiting_;
  if (queue_.empty()) return std::nullopt;
  std::string text = std::move(queue_.front());
  queue_.pop_front();
  return text;
}

void QueuedHumanInput::push(std::string text) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(text));
  }
  cv_.notify_all();
}

void QueuedHumanInput::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

int QueuedHumanInput::waiting() const {
  std::lock_guard lock(mu_);
  return waiting_;
}

// ---------------------------------------------------------------------------
// Helpers

std::string round_robin_next(const std::vector<std::string>& members,
                             const std::vector<Message>& transcript) {
  if (members.empty()) return {};
  for (auto it = transcript.rbegin(); it != transcript.rend(); ++it) {
    if (it->role == MessageRole::tool) continue;
    auto pos = std::find(members.begin(), members.end(), it->sender);
    if (pos == members.end()) continue;
    auto idx = static_cast<std::size_t>(pos - members.begin());
    return members[(idx + 1) % members.size()];
  }
  return members.front();
}

std::string summarize(const std::vector<Message>& transcript, SummaryMethod method) {
  if (transcript.empty()) {
    throw Error(ErrorCode::precondition_failed, "cannot summarize an empty transcript");
  }
  if (method == SummaryMethod::last_message) return transcript.back().content;
  std::string joined;
  for (std::size_t i = 0; i < transcript.size(); ++i) {
    if (i > 0) joined += "\n---\n";
    joined += transcript[i].content;
    if (joined.size() > kSummaryLimit) break;
  }
  if (joined.size() > kSummaryLimit) joined.resize(kSummaryLimit);
  return joined;
}

namespace {

std::string wire_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    auto u = static_cast<unsigned char>(c);
    out.push_back(std::isalnum(u) || c == '_' || c == '-' ? c : '_');
  }
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n\"'.`*");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n\"'.`*");
  return std::string(s.substr(b, e - b + 1));
}

struct CodeBlock {
  std::string language;
  std::string source;
};

std::vector<CodeBlock> extract_code_blocks(const std::string& text) {
  static const std::regex fence(R"(```([A-Za-z0-9_+-]*)[ \t]*\n([\s\S]*?)```)");
  std::vector<CodeBlock> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), fence); it != std::sregex_iterator();
       ++it) {
    out.push_back({(*it)[1].str(), (*it)[2].str()});
  }
  return out;
}

std::optional<SkillLanguage> language_of(std::string lang) {
  std::transform(lang.begin(), lang.end(), lang.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lang == "sh" || lang == "bash" || lang == "shell" || lang == "console") return SkillLanguage::shell;
  if (lang == "python" || lang == "py" || lang == "python3") return SkillLanguage::interpreted_script;
  return std::nullopt;
}

std::string describe_result(const ToolResult& r) {
  std::string out = "[" + std::string(to_string(r.status));
  if (r.failure_kind) out += ": " + std::string(to_string(*r.failure_kind));
  out += ", exit " + std::to_string(r.exit_code) + "]\n" + r.stdout_text;
  if (!r.stderr_text.empty()) out += "\n[stderr]\n" + r.stderr_text;
  return out;
}

Json tool_schema_parameters() {
  Json p;
  p["type"] = "object";
  p["additionalProperties"] = true;
  return p;
}

enum class Outcome { yielded, terminated, max_turns, awaiting_human, completed, error, cancelled };

using Bound = WorkflowInstance::BoundAgent;

class Runner {
 public:
  Runner(WorkflowInstance& inst, const EventSink& sink, HumanInputSource& input,
         std::stop_token stop, std::vector<Message> history)
      : inst_(inst), sink_(sink), input_(input), stop_(std::move(stop)), history_(std::move(history)) {
    for (const auto& m : history_) next_turn_index_ = std::max(next_turn_index_, m.turn_index + 1);
  }

  RunResult autonomous(std::string_view task) {
    const WorkflowSpec& spec = inst_.spec();
    const Bound& initiator = inst_.agent(*spec.initiator_ref);
    const Bound& receiver = inst_.agent(*spec.receiver_ref);
    initiator_ = &initiator;
    post(make_message(initiator.spec.name, receiver.spec.name, MessageRole::user, std::string(task)));
    Outcome outcome = receiver.spec.type == AgentType::group_chat ? group_loop(initiator, receiver)
                                                                 : pair_loop(receiver, initiator);
    return finish(outcome);
  }

  RunResult sequential(std::string_view task) {
    const WorkflowSpec& spec = inst_.spec();
    Bound proxy;
    proxy.spec.id = std::string(kSequenceProxyName);
    proxy.spec.type = AgentType::user_proxy;
    proxy.spec.name = std::string(kSequenceProxyName);
    proxy.spec.code_execution = false;
    include_history_ = false;

    std::string input(task);
    std::string last_agent;
    for (const auto& id : spec.sequence) {
      const Bound& agent = inst_.agent(id);
      scope_begin_ = transcript_.size();
      turns_ = 0;
      post(make_message(proxy.spec.name, agent.spec.name, MessageRole::user, input));
      Outcome outcome = pair_loop(agent, proxy);
      if (outcome == Outcome::error || outcome == Outcome::cancelled) return finish(outcome);
      std::vector<Message> sub(transcript_.begin() + static_cast<std::ptrdiff_t>(scope_begin_),
                               transcript_.end());
      input = summarize(sub, spec.summary_method);
      last_agent = agent.spec.name;
    }
    Message final_message = make_message(last_agent, proxy.spec.name, MessageRole::assistant, input);
    final_message.id = new_id();
    final_message.turn_index = next_turn_index_;
    return finish(Outcome::completed, std::move(final_message));
  }

 private:
  // --- messages & events ---------------------------------------------------

  void emit(EventKind kind, Json payload) {
    RunEvent e;
    e.kind = kind;
    e.payload = std::move(payload);
    e.sequence = sequence_++;
    if (sink_) sink_(e);
  }

  Message make_message(std::string sender, std::string recipient, MessageRole role,
                       std::string content) const {
    Message m;
    m.session_ref = inst_.environment().session_ref;
    m.sender = std::move(sender);
    m.recipient = std::move(recipient);
    m.role = role;
    m.content = std::move(content);
    return m;
  }

  const Message& post(Message m) {
    m.id = new_id();
    m.created_at = now_ms();
    m.turn_index = next_turn_index_++;
    transcript_.push_back(std::move(m));
    emit(EventKind::message, to_json(transcript_.back()));
    return transcript_.back();
  }

  bool has_keyword(const std::string& content) const {
    return content.find(inst_.spec().termination.termination_keyword) != std::string::npos;
  }

  std::vector<Message> scope() const {
    std::vector<Message> out;
    if (include_history_) out = history_;
    out.insert(out.end(), transcript_.begin() + static_cast<std::ptrdiff_t>(scope_begin_),
               transcript_.end());
    return out;
  }

  void warn(std::string text) {
    if (std::find(warnings_.begin(), warnings_.end(), text) == warnings_.end()) {
      warnings_.push_back(std::move(text));
    }
  }

  // --- requests ------------------------------------------------------------

  ChatRequest build_request(const Bound& agent) {
    ChatRequest req;
    req.model = *agent.model;
    std::string system = agent.spec.system_message;
    std::vector<Message> context = scope();
    if (agent.memory) {
      if (agent.memory->kind == MemoryKind::naive_store) {
        auto notes = inst_.recall(agent.memory->id);
        if (!notes.empty()) {
          if (!system.empty()) system += "\n\n";
          system += "Notes from earlier runs:";
          for (const auto& n : notes) system += "\n- " + n;
        }
      } else if (agent.memory->capacity &&
                 context.size() > static_cast<std::size_t>(*agent.memory->capacity)) {
        context.erase(context.begin(),
                      context.end() - static_cast<std::ptrdiff_t>(*agent.memory->capacity));
        while (!context.empty() && context.front().role == MessageRole::tool) {
          context.erase(context.begin());
        }
      }
    }
    if (!system.empty()) req.messages.push_back(ChatMessage{ChatRole::system, system, {}, {}, {}});
    for (const auto& m : context) {
      ChatMessage cm;
      if (m.role == MessageRole::tool) {
        if (m.recipient == agent.spec.name) {
          cm.role = ChatRole::tool;
          cm.content = m.content;
          cm.tool_call_id = m.tool_call_id;
        } else {
          cm.role = ChatRole::user;
          cm.name = wire_name(m.recipient);
          cm.content = "[" + m.sender + " result] " + m.content;
        }
      } else if (m.sender == agent.spec.name) {
        cm.role = ChatRole::assistant;
        cm.content = m.content;
        cm.tool_calls = m.tool_calls;
      } else {
        cm.role = ChatRole::user;
        cm.name = wire_name(m.sender);
        cm.content = m.content;
      }
      req.messages.push_back(std::move(cm));
    }
    for (const auto& skill : agent.skills) {
      req.tool_schemas.push_back(ToolSchema{skill.name, skill.description, tool_schema_parameters()});
    }
    return req;
  }

  // --- tools ---------------------------------------------------------------

  ToolResult run_tool(const std::string& agent, const std::string& call_id, const std::string& skill,
                      const ToolInvocation& inv) {
    Json started;
    started["call_id"] = call_id;
    started["skill"] = skill;
    started["agent"] = agent;
    started["arguments"] = inv.arguments;
    emit(EventKind::tool_started, std::move(started));
    ToolResult result = execute(inv, inst_.environment().sandbox);
    Json finished;
    finished["call_id"] = call_id;
    finished["skill"] = skill;
    finished["agent"] = agent;
    finished["result"] = to_json(result);
    emit(EventKind::tool_finished, std::move(finished));
    for (const auto& a : result.artifacts) {
      Json art;
      art["call_id"] = call_id;
      art["agent"] = agent;
      art["path"] = a.path;
      art["bytes"] = a.bytes;
      art["media_kind"] = to_string(a.media_kind);
      emit(EventKind::artifact, std::move(art));
    }
    return result;
  }

  void execute_tool_calls(const Bound& agent, const std::vector<ToolCall>& calls) {
    for (const auto& call : calls) {
      auto skill = std::find_if(agent.skills.begin(), agent.skills.end(),
                                [&](const SkillSpec& s) { return s.name == call.name; });
      ToolResult result;
      if (skill == agent.skills.end()) {
        result.status = ToolStatus::failure;
        result.failure_kind = FailureKind::spawn_error;
        result.stderr_text = "unknown skill \"" + call.name + "\"";
      } else {
        result = run_tool(agent.spec.name, call.id, call.name,
                          make_invocation(*skill, call.arguments, inst_.workdir()));
      }
      Message m = make_message(call.name, agent.spec.name, MessageRole::tool, describe_result(result));
      m.tool_call_id = call.id;
      m.tool_results.push_back(std::move(result));
      post(std::move(m));
    }
  }

  // --- turns ---------------------------------------------------------------

  std::optional<Outcome> ask_human(const Bound& agent, const std::string& recipient,
                                   const std::string& prompt, bool& replied) {
    replied = false;
    Json payload;
    payload["agent"] = agent.spec.name;
    payload["prompt"] = prompt;
    emit(EventKind::human_input_requested, std::move(payload));
    auto reply = input_.request(agent.spec.name, prompt, stop_);
    if (stop_.stop_requested()) return Outcome::cancelled;
    if (!reply) return Outcome::awaiting_human;
    if (*reply == "exit") return Outcome::completed;
    if (reply->empty()) return std::nullopt;
    const Message& m = post(make_message(agent.spec.name, recipient, MessageRole::user, *reply));
    replied = true;
    if (has_keyword(m.content)) return Outcome::terminated;
    return std::nullopt;
  }

  Outcome proxy_reply(const Bound& agent, const std::string& recipient) {
    std::vector<CodeBlock> blocks;
    if (agent.spec.code_execution) {
      auto ctx = scope();
      for (auto it = ctx.rbegin(); it != ctx.rend(); ++it) {
        if (it->sender == agent.spec.name || it->role == MessageRole::tool) continue;
        blocks = extract_code_blocks(it->content);
        break;
      }
    }
    if (blocks.empty()) {
      const Message& m =
          post(make_message(agent.spec.name, recipient, MessageRole::user, std::string(kProxyAutoReply)));
      return has_keyword(m.content) ? Outcome::terminated : Outcome::yielded;
    }
    Message reply = make_message(agent.spec.name, recipient, MessageRole::user, "");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto lang = language_of(blocks[i].language.empty() ? "sh" : blocks[i].language);
      if (i > 0) reply.content += "\n\n";
      if (!lang) {
        reply.content += "[skipped code block " + std::to_string(i) + ": unsupported language \"" +
                         blocks[i].language + "\"]";
        continue;
      }
      ToolInvocation inv;
      inv.skill_ref = "inline:" + std::string(to_string(*lang));
      inv.language = *lang;
      inv.source = blocks[i].source;
      inv.session_workdir = inst_.workdir();
      inv.timeout_s = inst_.environment().code_timeout_s;
      std::string call_id = "code_" + std::to_string(next_turn_index_) + "_" + std::to_string(i);
      ToolResult result = run_tool(agent.spec.name, call_id, inv.skill_ref, inv);
      reply.content += describe_result(result);
      bool failed = result.status == ToolStatus::failure;
      reply.tool_results.push_back(std::move(result));
      if (failed) break;
    }
    const Message& m = post(std::move(reply));
    return has_keyword(m.content) ? Outcome::terminated : Outcome::yielded;
  }

  Outcome take_turn(const Bound& agent, const std::string& recipient) {
    if (stop_.stop_requested()) return Outcome::cancelled;
    if (agent.spec.human_input_mode == HumanInputMode::always) {
      if (input_.interactive()) {
        bool replied = false;
        auto outcome = ask_human(agent, recipient, "Reply as " + agent.spec.name +
                                                       " (empty for auto-reply, \"exit\" to stop)",
                                 replied);
        if (outcome) return *outcome;
        if (replied) return Outcome::yielded;
      } else {
        warn("human_input_mode=always on agent " + agent.spec.name +
             " degraded to never (non-interactive run)");
      }
    }
    if (!agent.backend) return proxy_reply(agent, recipient);

    const auto& termination = inst_.spec().termination;
    std::int64_t episode = 0;
    while (true) {
      if (stop_.stop_requested()) return Outcome::cancelled;
      Completion completion;
      try {
        completion = agent.backend->complete(build_request(agent));
      } catch (const Error& e) {
        error_ = e.what();
        error_code_ = std::string(to_string(e.code()));
        return Outcome::error;
      } catch (const std::exception& e) {
        error_ = e.what();
        error_code_ = "internal_error";
        return Outcome::error;
      }
      ++turns_;
      ++episode;
      Message m = make_message(agent.spec.name, recipient, MessageRole::assistant, completion.content);
      m.tool_calls = completion.tool_calls;
      m.usage = completion.usage;
      m.model = agent.model->model_name;
      const Message& posted = post(std::move(m));
      if (agent.memory && agent.memory->kind == MemoryKind::naive_store && !completion.content.empty()) {
        inst_.remember(agent.memory->id, completion.content);
      }
      if (has_keyword(posted.content)) return Outcome::terminated;
      if (turns_ >= termination.max_turns) return Outcome::max_turns;
      if (completion.tool_calls.empty()) return Outcome::yielded;
      execute_tool_calls(agent, completion.tool_calls);
      if (episode >= agent.spec.max_consecutive_replies) return Outcome::yielded;
    }
  }

  // Gives `responder` the chance to keep a terminated conversation going.
  // Returns true when the human replied and the loop should continue.
  std::optional<Outcome> after_termination(const Bound& responder, const std::string& recipient) {
    if (responder.spec.human_input_mode != HumanInputMode::on_termination) return Outcome::terminated;
    if (!input_.interactive()) {
      warn("human_input_mode=on_termination on agent " + responder.spec.name +
           " degraded to never (non-interactive run)");
      return Outcome::terminated;
    }
    bool replied = false;
    auto outcome = ask_human(responder, recipient,
                             "The conversation is about to end. Reply to continue, or leave empty to stop.",
                             replied);
    if (outcome) return outcome;
    if (!replied) return Outcome::terminated;
    return std::nullopt;
  }

  Outcome pair_loop(const Bound& first, const Bound& second) {
    const Bound* current = &first;
    const Bound* other = &second;
    while (true) {
      Outcome outcome = take_turn(*current, other->spec.name);
      if (outcome == Outcome::yielded) {
        std::swap(current, other);
        continue;
      }
      if (outcome != Outcome::terminated) return outcome;
      auto next = after_termination(*other, current->spec.name);
      if (next) return *next;
      // the human spoke for `other`; `current` answers next
    }
  }

  Outcome group_loop(const Bound& initiator, const Bound& group) {
    while (true) {
      if (stop_.stop_requested()) return Outcome::cancelled;
      auto speaker_id = inst_.select_next_speaker(group.spec.id, scope());
      Outcome outcome = take_turn(inst_.agent(speaker_id), group.spec.name);
      if (outcome == Outcome::yielded) continue;
      if (outcome != Outcome::terminated) return outcome;
      auto next = after_termination(initiator, group.spec.name);
      if (next) return *next;
    }
  }

  // --- completion ----------------------------------------------------------

  RunResult finish(Outcome outcome, std::optional<Message> final_message = std::nullopt) {
    RunResult r;
    r.session_ref = inst_.environment().session_ref;
    switch (outcome) {
      case Outcome::terminated: r.status = RunStatus::terminated_keyword; break;
      case Outcome::max_turns: r.status = RunStatus::max_turns_reached; break;
      case Outcome::awaiting_human: r.status = RunStatus::awaiting_human; break;
      case Outcome::completed:
      case Outcome::yielded: r.status = RunStatus::completed; break;
      case Outcome::cancelled:
        r.status = RunStatus::error;
        error_ = "run cancelled";
        error_code_ = "cancelled";
        break;
      case Outcome::error: r.status = RunStatus::error; break;
    }
    if (final_message) {
      r.final_message = std::move(*final_message);
    } else if (!transcript_.empty()) {
      r.final_message = transcript_.back();
    }
    r.transcript = transcript_;
    r.profile = profile(r.transcript, inst_.pricing());
    r.warnings = warnings_;
    if (r.status == RunStatus::error) {
      r.error = error_;
      Json payload;
      payload["code"] = error_code_;
      payload["message"] = error_;
      emit(EventKind::run_error, std::move(payload));
    } else {
      Json payload;
      payload["status"] = to_string(r.status);
      payload["final_message"] = to_json(r.final_message);
      payload["turns"] = turns_;
      payload["warnings"] = warnings_;
      emit(EventKind::run_finished, std::move(payload));
    }
    return r;
  }

  WorkflowInstance& inst_;
  const EventSink& sink_;
  HumanInputSource& input_;
  std::stop_token stop_;
  std::vector<Message> history_;
  std::vector<Message> transcript_;
  std::size_t scope_begin_ = 0;
  bool include_history_ = true;
  const Bound* initiator_ = nullptr;
  std::uint64_t sequence_ = 0;
  std::int64_t turns_ = 0;
  std::int64_t next_turn_index_ = 0;
  std::vector<std::string> warnings_;
  std::string error_;
  std::string error_code_;
};

void require_task(std::string_view task) {
  if (task.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(ErrorCode::precondition_failed, "task must not be empty", "task");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// WorkflowInstance

std::vector<const WorkflowInstance::BoundAgent*> WorkflowInstance::agents() const {
  std::vector<const BoundAgent*> out;
  for (const auto& b : bound_) {
    if (b.spec.type != AgentType::group_chat) out.push_back(&b);
  }
  return out;
}

const WorkflowInstance::BoundAgent* WorkflowInstance::group() const {
  for (const auto& b : bound_) {
    if (b.spec.type == AgentType::group_chat) return &b;
  }
  return nullptr;
}

const WorkflowInstance::BoundAgent& WorkflowInstance::agent(std::string_view id) const {
  for (const auto& b : bound_) {
    if (b.spec.id == id) return b;
  }
  throw Error(ErrorCode::not_found, "agent " + std::string(id) + " is not part of this workflow",
              std::string(id));
}

const WorkflowInstance::BoundAgent* WorkflowInstance::agent_by_name(std::string_view name) const {
  for (const auto& b : bound_) {
    if (b.spec.name == name) return &b;
  }
  return nullptr;
}

std::shared_ptr<ModelBackend> WorkflowInstance::backend_for_model(std::string_view model_id) const {
  auto it = backends_.find(std::string(model_id));
  return it == backends_.end() ? nullptr : it->second;
}

std::vector<std::string> WorkflowInstance::recall(std::string_view memory_id) const {
  std::lock_guard lock(*memory_mu_);
  auto it = memory_notes_.find(memory_id);
  if (it == memory_notes_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

void WorkflowInstance::remember(std::string_view memory_id, std::string note) {
  const MemorySpec* spec = spec_.registry.find_memory(memory_id);
  std::size_t capacity = spec && spec->capacity ? static_cast<std::size_t>(*spec->capacity) : 20;
  std::lock_guard lock(*memory_mu_);
  auto& notes = memory_notes_[std::string(memory_id)];
  notes.push_back(std::move(note));
  while (notes.size() > capacity) notes.pop_front();
}

std::string WorkflowInstance::select_next_speaker(std::string_view group_id,
                                                  const std::vector<Message>& transcript) const {
  const BoundAgent& group = agent(group_id);
  std::vector<std::string> names;
  for (const auto& id : group.spec.members) names.push_back(agent(id).spec.name);
  auto id_of = [&](const std::string& name) {
    for (const auto& id : group.spec.members) {
      if (agent(id).spec.name == name) return id;
    }
    return group.spec.members.front();
  };
  std::string fallback = id_of(round_robin_next(names, transcript));
  if (group.spec.speaker_selection != SpeakerSelection::model_selected || !group.backend) {
    return fallback;
  }

  ChatRequest req;
  req.model = *group.model;
  std::string roster = "You coordinate a group chat. Members:";
  for (const auto& id : group.spec.members) {
    const auto& m = agent(id).spec;
    roster += "\n- " + m.name + (m.system_message.empty() ? "" : ": " + m.system_message);
  }
  roster += "\nReply with only the name of the member who should speak next.";
  req.messages.push_back(ChatMessage{ChatRole::system, roster, {}, {}, {}});
  for (const auto& m : transcript) {
    req.messages.push_back(ChatMessage{ChatRole::user, m.content, wire_name(m.sender), {}, {}});
  }
  std::string choices;
  for (const auto& n : names) choices += (choices.empty() ? "" : ", ") + n;
  req.messages.push_back(ChatMessage{ChatRole::user, "Who speaks next? Choose from: " + choices, {}, {}, {}});
  std::string reply;
  try {
    reply = group.backend->complete(req).content;
  } catch (const Error&) {
    return fallback;
  }
  std::string cleaned = trim(reply);
  for (const auto& n : names) {
    if (n == cleaned) return id_of(n);
  }
  std::size_t best = std::string::npos;
  std::string chosen;
  for (const auto& n : names) {
    auto pos = reply.find(n);
    if (pos != std::string::npos && pos < best) {
      best = pos;
      chosen = n;
    }
  }
  return chosen.empty() ? fallback : id_of(chosen);
}

WorkflowInstance instantiate(const WorkflowSpec& spec, Environment env) {
  throw_if_invalid(validate(spec), "workflow " + spec.id);

  WorkflowInstance inst;
  inst.spec_ = spec;
  std::error_code ec;
  if (env.workdir.empty()) {
    env.workdir = fs::temp_directory_path(ec) / ("agentloom-" + new_id()) / "scratch";
  }
  fs::create_directories(env.workdir, ec);
  if (!fs::is_directory(env.workdir)) {
    throw Error(ErrorCode::instantiation_error,
                "cannot create session workdir " + env.workdir.string(), env.workdir.string());
  }

  // Participants in conversational order: initiator, receiver (group members
  // follow their group), then sequence steps.
  std::vector<std::string> order;
  auto add = [&](const std::string& id) {
    if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
  };
  if (spec.initiator_ref) add(*spec.initiator_ref);
  if (spec.receiver_ref) {
    add(*spec.receiver_ref);
    const AgentSpec* receiver = spec.registry.find_agent(*spec.receiver_ref);
    for (const auto& m : receiver->members) add(m);
  }
  for (const auto& id : spec.sequence) add(id);

  for (const auto& id : order) {
    const AgentSpec* a = spec.registry.find_agent(id);
    WorkflowInstance::BoundAgent bound;
    bound.spec = *a;
    if (a->model_ref) {
      const ModelConfig* model = spec.registry.find_model(*a->model_ref);
      bound.model = *model;
      auto it = inst.backends_.find(model->id);
      if (it == inst.backends_.end()) {
        std::shared_ptr<ModelBackend> backend;
        try {
          backend = env.backend_factory(*model, env.env);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::instantiation_error) throw;
          throw Error(ErrorCode::instantiation_error, "model " + model->id + ": " + e.what(),
                      model->id);
        }
        it = inst.backends_.emplace(model->id, std::move(backend)).first;
      }
      bound.backend = it->second;
    }
    for (const auto& s : a->skill_refs) bound.skills.push_back(*spec.registry.find_skill(s));
    if (a->memory_ref) bound.memory = *spec.registry.find_memory(*a->memory_ref);
    inst.bound_.push_back(std::move(bound));
  }
  inst.pricing_ = merge_pricing(spec.registry, env.pricing);
  inst.env_ = std::move(env);
  return inst;
}

RunResult run(WorkflowInstance& instance, std::string_view task, const std::vector<Message>& history,
              const EventSink& sink, HumanInputSource& input, std::stop_token stop) {
  require_task(task);
  if (instance.spec().pattern != Pattern::autonomous_chat) {
    throw Error(ErrorCode::precondition_failed, "run() requires an autonomous_chat workflow",
                "workflow.pattern");
  }
  Runner runner(instance, sink, input, std::move(stop), history);
  return runner.autonomous(task);
}

RunResult run_sequential(WorkflowInstance& instance, std::string_view task, const EventSink& sink,
                         std::stop_token stop) {
  require_task(task);
  if (instance.spec().pattern != Pattern::sequential_chat) {
    throw Error(ErrorCode::precondition_failed, "run_sequential() requires a sequential_chat workflow",
                "workflow.pattern");
  }
  NonInteractiveInput input;
  Runner runner(instance, sink, input, std::move(stop), {});
  return runner.sequential(task);
}

RunResult run_workflow(WorkflowInstance& instance, std::string_view task,
                       const std::vector<Message>& history, const EventSink& sink,
                       HumanInputSource& input, std::stop_token stop) {
  if (instance.spec().pattern == Pattern::sequential_chat) {
    return run_sequential(instance, task, sink, std::move(stop));
  }
  return run(instance, task, history, sink, input, std::move(stop));
}

// ---------------------------------------------------------------------------
// WorkflowManager

WorkflowManager::WorkflowManager(const fs::path& workflow_file, Environment env)
    : WorkflowManager(parse_workflow(read_file(workflow_file)), std::move(env)) {}

WorkflowManager::WorkflowManager(const WorkflowSpec& spec, Environment env)
    : instance_(instantiate(spec, std::move(env))) {}

RunResult WorkflowManager::run(std::string_view message, const EventSink& sink,
                               HumanInputSource* input) {
  NonInteractiveInput fallback;
  return run_workflow(instance_, message, {}, sink, input ? *input : fallback);
}

std::vector<std::string> WorkflowManager::warnings() const {
  std::vector<std::string> out;
  for (const auto& issue : validate(instance_.spec()).issues) {
    if (issue.severity == Severity::warning) out.push_back(issue.path + ": " + issue.message);
  }
  return out;
}

}  // namespace agentloom
