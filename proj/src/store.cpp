#include "agentloom/store.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <deque>
#include <map>
#include <set>

#include "agentloom/error.hpp"
#include "agentloom/json_reader.hpp"

namespace fs = std::filesystem;

namespace agentloom {

using detail::ObjectReader;

std::string_view to_string(EntityKind v) noexcept {
  switch (v) {
    case EntityKind::model: return "model";
    case EntityKind::skill: return "skill";
    case EntityKind::memory: return "memory";
    case EntityKind::agent: return "agent";
    case EntityKind::workflow: return "workflow";
    case EntityKind::session: return "session";
  }
  return "model";
}

std::optional<EntityKind> entity_kind_from(std::string_view text) noexcept {
  for (auto k : {EntityKind::model, EntityKind::skill, EntityKind::memory, EntityKind::agent,
                 EntityKind::workflow, EntityKind::session}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::optional<EntityKind> entity_kind_from_plural(std::string_view text) noexcept {
  if (text == "memories") return EntityKind::memory;
  if (text.size() < 2 || text.back() != 's') return std::nullopt;
  auto k = entity_kind_from(text.substr(0, text.size() - 1));
  if (k == EntityKind::memory) return std::nullopt;
  return k;
}

std::string_view to_string(SessionStatus v) noexcept {
  switch (v) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::running: return "running";
    case SessionStatus::awaiting_human: return "awaiting_human";
  }
  return "idle";
}

Json to_json(const SessionSpec& s) {
  Json j;
  j["id"] = s.id;
  j["workflow_ref"] = s.workflow_ref;
  j["name"] = s.name;
  j["status"] = to_string(s.status);
  j["workdir"] = s.workdir;
  j["notes"] = s.notes;
  return j;
}

SessionSpec parse_session(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  SessionSpec s;
  s.id = r.str("id");
  s.workflow_ref = r.str("workflow_ref");
  s.name = r.str_or("name", "");
  s.status = r.enumeration("status", SessionStatus::idle,
                           {{"idle", SessionStatus::idle},
                            {"running", SessionStatus::running},
                            {"awaiting_human", SessionStatus::awaiting_human}});
  s.workdir = r.str_or("workdir", "");
  s.notes = r.strings("notes");
  r.finish();
  return s;
}

Json to_json(const Entity& e) {
  Json j;
  j["kind"] = to_string(e.kind);
  j["id"] = e.id;
  j["payload"] = e.payload;
  j["tags"] = e.tags;
  j["created_at"] = format_timestamp(e.created_at);
  j["updated_at"] = format_timestamp(e.updated_at);
  return j;
}

Json to_json(const GalleryItem& g) {
  Json j;
  j["kind"] = to_string(g.kind);
  j["title"] = g.title;
  j["description"] = g.description;
  j["version"] = g.version;
  j["payload"] = g.payload;
  if (!g.id.empty()) j["id"] = g.id;
  return j;
}

Json normalize_payload(EntityKind kind, const Json& payload, const std::string& id) {
  if (!payload.is_object()) {
    throw Error(ErrorCode::schema_error, std::string(to_string(kind)) + ": expected an object",
                std::string(to_string(kind)));
  }
  Json j = payload;
  j["id"] = id;
  const std::string path(to_string(kind));
  std::vector<Issue> issues;
  Json out;
  switch (kind) {
    case EntityKind::model: {
      auto m = parse_model(j, path);
      check_model(m, path, issues);
      out = to_json(m);
      break;
    }
    case EntityKind::skill: {
      auto s = parse_skill(j, path);
      check_skill(s, path, issues);
      out = to_json(s);
      break;
    }
    case EntityKind::memory: {
      auto m = parse_memory(j, path);
      check_memory(m, path, issues);
      out = to_json(m);
      break;
    }
    case EntityKind::agent: {
      auto a = parse_agent(j, path);
      check_agent(a, path, issues);
      out = to_json(a);
      break;
    }
    case EntityKind::workflow: {
      auto w = parse_workflow_object(j, path);
      check_workflow_fields(w, path, issues);
      out = workflow_object_to_json(w);
      break;
    }
    case EntityKind::session: {
      auto s = parse_session(j, path);
      if (s.workflow_ref.empty()) {
        issues.push_back({Severity::error, path + ".workflow_ref", "workflow_ref must not be empty"});
      }
      out = to_json(s);
      break;
    }
  }
  throw_if_invalid(make_report(std::move(issues)), path);
  return out;
}

// ---------------------------------------------------------------------------
// SQLite helpers

namespace {

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw Error(ErrorCode::io_error, std::string("database: ") + sqlite3_errmsg(db));
    }
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, std::string_view text) {
    sqlite3_bind_text(stmt_, i, text.data(), static_cast<int>(text.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(stmt_, i, v);
    return *this;
  }
  // True while rows are available.
  bool step() {
    int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(ErrorCode::io_error, std::string("database: ") + sqlite3_errmsg(db_));
  }
  std::string text(int col) const {
    auto p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col))) : std::string();
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { run("BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    run("COMMIT");
    done_ = true;
  }

 private:
  void run(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw Error(ErrorCode::io_error, "database: " + msg);
    }
  }
  sqlite3* db_;
  bool done_ = false;
};

std::int64_t to_ms(TimePoint tp) { return tp.time_since_epoch().count(); }
TimePoint from_ms(std::int64_t v) { return TimePoint(std::chrono::milliseconds(v)); }

Entity row_to_entity(EntityKind kind, const Stmt& s) {
  Entity e;
  e.kind = kind;
  e.id = s.text(0);
  e.payload = Json::parse(s.text(1));
  e.tags = Json::parse(s.text(2)).get<std::vector<std::string>>();
  e.created_at = from_ms(s.integer(3));
  e.updated_at = from_ms(s.integer(4));
  return e;
}

Error not_found(EntityKind kind, std::string_view id) {
  return Error(ErrorCode::not_found, std::string(to_string(kind)) + " " + std::string(id) + " not found",
               std::string(id));
}

// References held by one stored payload, as (kind, id) pairs.
std::vector<std::pair<EntityKind, std::string>> outbound_refs(EntityKind kind, const Json& p) {
  std::vector<std::pair<EntityKind, std::string>> out;
  auto add_str = [&](EntityKind k, const char* key) {
    if (p.contains(key) && p[key].is_string()) out.emplace_back(k, p[key].get<std::string>());
  };
  auto add_list = [&](EntityKind k, const char* key) {
    if (p.contains(key) && p[key].is_array()) {
      for (const auto& v : p[key]) out.emplace_back(k, v.get<std::string>());
    }
  };
  if (kind == EntityKind::agent) {
    add_str(EntityKind::model, "model_ref");
    add_list(EntityKind::skill, "skill_refs");
    add_str(EntityKind::memory, "memory_ref");
    add_list(EntityKind::agent, "members");
  } else if (kind == EntityKind::workflow) {
    add_str(EntityKind::agent, "initiator_ref");
    add_str(EntityKind::agent, "receiver_ref");
    add_list(EntityKind::agent, "sequence");
  }
  return out;
}

const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS entities(
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  kind TEXT NOT NULL,
  id TEXT NOT NULL,
  payload TEXT NOT NULL,
  tags TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  updated_at INTEGER NOT NULL,
  UNIQUE(kind, id)
);
CREATE TABLE IF NOT EXISTS messages(
  session_id TEXT NOT NULL,
  position INTEGER NOT NULL,
  id TEXT NOT NULL,
  payload TEXT NOT NULL,
  PRIMARY KEY(session_id, position)
);
)sql";

}  // namespace

// ---------------------------------------------------------------------------
// Store

Store::Store(const fs::path& db_path) : path_(db_path) {
  const bool in_memory = db_path == ":memory:";
  auto fail = [&](const std::string& why) {
    if (db_) sqlite3_close(db_);
    db_ = nullptr;
    throw Error(ErrorCode::io_error, "cannot open database " + path_.string() + ": " + why,
                path_.string());
  };
  if (!in_memory && db_path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(db_path.parent_path(), ec);
    if (ec) fail(ec.message());
  }
  int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
  if (sqlite3_open_v2(path_.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
    fail(db_ ? sqlite3_errmsg(db_) : "out of memory");
  }
  sqlite3_busy_timeout(db_, 5000);
  try {
    if (!in_memory) exec("PRAGMA journal_mode=WAL");
    exec(kSchema);
  } catch (const Error& e) {
    fail(e.what());
  }
  if (in_memory) {
    session_root_ = fs::temp_directory_path() / ("agentloom-sessions-" + new_id());
  } else {
    session_root_ = fs::absolute(db_path).parent_path() / "sessions";
  }
}

Store::~Store() {
  if (db_) sqlite3_close(db_);
}

void Store::exec(const char* sql) const {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw Error(ErrorCode::io_error, "database: " + msg);
  }
}

std::optional<Entity> Store::find_locked(EntityKind kind, std::string_view id) const {
  Stmt s(db_, "SELECT id, payload, tags, created_at, updated_at FROM entities WHERE kind=?1 AND id=?2");
  s.bind(1, to_string(kind)).bind(2, id);
  if (!s.step()) return std::nullopt;
  return row_to_entity(kind, s);
}

Entity Store::load_row(EntityKind kind, std::string_view id) const {
  auto e = find_locked(kind, id);
  if (!e) throw not_found(kind, id);
  return *e;
}

std::optional<Entity> Store::find(EntityKind kind, std::string_view id) const {
  std::lock_guard lock(mu_);
  return find_locked(kind, id);
}

Entity Store::get(EntityKind kind, std::string_view id) const {
  std::lock_guard lock(mu_);
  return load_row(kind, id);
}

std::vector<Entity> Store::list(EntityKind kind, const ListFilter& filter) const {
  std::lock_guard lock(mu_);
  Stmt s(db_,
         "SELECT id, payload, tags, created_at, updated_at FROM entities WHERE kind=?1 "
         "ORDER BY created_at DESC, seq DESC");
  s.bind(1, to_string(kind));
  std::vector<Entity> out;
  while (s.step()) {
    Entity e = row_to_entity(kind, s);
    if (filter.tag && std::find(e.tags.begin(), e.tags.end(), *filter.tag) == e.tags.end()) continue;
    if (filter.name && e.payload.value("name", std::string()) != *filter.name) continue;
    out.push_back(std::move(e));
  }
  return out;
}

void Store::check_refs_locked(EntityKind kind, const Json& payload) const {
  if (kind == EntityKind::session) {
    auto ref = payload.value("workflow_ref", std::string());
    if (!find_locked(EntityKind::workflow, ref)) {
      throw Error(ErrorCode::validation_error,
                  "session.workflow_ref: unknown workflow \"" + ref + "\"", "session.workflow_ref",
                  {"session.workflow_ref: unknown workflow \"" + ref + "\""});
    }
    return;
  }
  if (kind != EntityKind::agent && kind != EntityKind::workflow) return;

  std::deque<AgentSpec> agents;
  RefResolver refs;
  refs.agent = [&](std::string_view id) -> const AgentSpec* {
    auto e = find_locked(EntityKind::agent, id);
    if (!e) return nullptr;
    agents.push_back(parse_agent(e->payload));
    return &agents.back();
  };
  refs.model = [&](std::string_view id) { return find_locked(EntityKind::model, id).has_value(); };
  refs.skill = [&](std::string_view id) { return find_locked(EntityKind::skill, id).has_value(); };
  refs.memory = [&](std::string_view id) { return find_locked(EntityKind::memory, id).has_value(); };

  std::vector<Issue> issues;
  if (kind == EntityKind::agent) {
    check_agent_refs(parse_agent(payload), "agent", refs, issues);
  } else {
    check_workflow_refs(parse_workflow_object(payload), "workflow", refs, issues);
  }
  throw_if_invalid(make_report(std::move(issues)), to_string(kind));
}

Entity Store::insert_locked(EntityKind kind, const std::string& id, Json payload,
                            const std::vector<std::string>& tags) {
  if (kind == EntityKind::session) {
    SessionSpec s = parse_session(payload);
    s.status = SessionStatus::idle;
    s.notes.clear();
    fs::path workdir = session_root_ / id / "scratch";
    std::error_code ec;
    fs::create_directories(workdir, ec);
    if (ec) {
      throw Error(ErrorCode::io_error, "cannot create session workdir " + workdir.string(),
                  workdir.string());
    }
    s.workdir = workdir.string();
    payload = to_json(s);
  }
  check_refs_locked(kind, payload);
  auto now = to_ms(now_ms());
  Stmt s(db_,
         "INSERT INTO entities(kind, id, payload, tags, created_at, updated_at) "
         "VALUES(?1, ?2, ?3, ?4, ?5, ?5)");
  s.bind(1, to_string(kind)).bind(2, id).bind(3, payload.dump()).bind(4, Json(tags).dump()).bind(5, now);
  s.step();
  return load_row(kind, id);
}

Entity Store::create(EntityKind kind, const Json& payload, std::vector<std::string> tags) {
  std::string id = new_id();
  Json normalized = normalize_payload(kind, payload, id);
  std::lock_guard lock(mu_);
  Transaction txn(db_);
  Entity e = insert_locked(kind, id, std::move(normalized), tags);
  txn.commit();
  return e;
}

Entity Store::update(EntityKind kind, std::string_view id, const Json& payload,
                     std::optional<std::vector<std::string>> tags) {
  Json normalized = normalize_payload(kind, payload, std::string(id));
  std::lock_guard lock(mu_);
  Transaction txn(db_);
  Entity current = load_row(kind, id);
  if (kind == EntityKind::session) {
    // status, workdir and notes are managed by the server
    SessionSpec prev = parse_session(current.payload);
    SessionSpec next = parse_session(normalized);
    next.status = prev.status;
    next.workdir = prev.workdir;
    next.notes = prev.notes;
    normalized = to_json(next);
  }
  check_refs_locked(kind, normalized);
  if (kind == EntityKind::agent) {
    // an agent may not become its own (indirect) group member
    auto a = parse_agent(normalized);
    if (std::find(a.members.begin(), a.members.end(), a.id) != a.members.end()) {
      throw Error(ErrorCode::validation_error, "agent.members: a group cannot contain itself",
                  "agent.members", {"agent.members: a group cannot contain itself"});
    }
  }
  auto updated = std::max(to_ms(now_ms()), to_ms(current.updated_at) + 1);
  Stmt s(db_, "UPDATE entities SET payload=?1, tags=?2, updated_at=?3 WHERE kind=?4 AND id=?5");
  s.bind(1, normalized.dump())
      .bind(2, Json(tags ? *tags : current.tags).dump())
      .bind(3, updated)
      .bind(4, to_string(kind))
      .bind(5, id);
  s.step();
  Entity e = load_row(kind, id);
  txn.commit();
  return e;
}

std::vector<std::pair<EntityKind, std::string>> Store::referrers_locked(EntityKind kind,
                                                                        std::string_view id) const {
  std::vector<std::pair<EntityKind, std::string>> out;
  // Sessions point at workflows only weakly: a session whose workflow is gone
  // stays readable and fails to run with not_found.
  for (EntityKind holder : {EntityKind::agent, EntityKind::workflow}) {
    Stmt s(db_, "SELECT id, payload FROM entities WHERE kind=?1 ORDER BY seq");
    s.bind(1, to_string(holder));
    while (s.step()) {
      Json p = Json::parse(s.text(1));
      for (const auto& [k, ref] : outbound_refs(holder, p)) {
        if (k == kind && ref == id) {
          out.emplace_back(holder, s.text(0));
          break;
        }
      }
    }
  }
  return out;
}

std::vector<std::pair<EntityKind, std::string>> Store::referrers(EntityKind kind,
                                                                 std::string_view id) const {
  std::lock_guard lock(mu_);
  return referrers_locked(kind, id);
}

void Store::delete_locked(EntityKind kind, std::string_view id, bool force) {
  if (!find_locked(kind, id)) return;
  auto refs = referrers_locked(kind, id);
  if (!refs.empty()) {
    if (!force) {
      std::vector<std::string> ids;
      std::string list;
      for (const auto& [k, rid] : refs) {
        ids.push_back(rid);
        list += (list.empty() ? "" : ", ") + std::string(to_string(k)) + " " + rid;
      }
      throw Error(ErrorCode::conflict,
                  std::string(to_string(kind)) + " " + std::string(id) + " is referenced by " + list,
                  std::string(id), std::move(ids));
    }
    for (const auto& [k, rid] : refs) delete_locked(k, rid, true);
  }
  Stmt s(db_, "DELETE FROM entities WHERE kind=?1 AND id=?2");
  s.bind(1, to_string(kind)).bind(2, id);
  s.step();
  if (kind == EntityKind::session) {
    Stmt m(db_, "DELETE FROM messages WHERE session_id=?1");
    m.bind(1, id);
    m.step();
  }
}

void Store::remove(EntityKind kind, std::string_view id, bool force) {
  std::lock_guard lock(mu_);
  Transaction txn(db_);
  if (!find_locked(kind, id)) throw not_found(kind, id);
  delete_locked(kind, id, force);
  txn.commit();
}

// ---------------------------------------------------------------------------
// Sessions

SessionSpec Store::session(std::string_view id) const {
  return parse_session(get(EntityKind::session, id).payload);
}

void Store::append_message(std::string_view session_id, const Message& m) {
  std::lock_guard lock(mu_);
  Transaction txn(db_);
  load_row(EntityKind::session, session_id);
  std::int64_t position = 0;
  {
    Stmt c(db_, "SELECT COALESCE(MAX(position) + 1, 0) FROM messages WHERE session_id=?1");
    c.bind(1, session_id);
    if (c.step()) position = c.integer(0);
  }
  Stmt s(db_, "INSERT INTO messages(session_id, position, id, payload) VALUES(?1, ?2, ?3, ?4)");
  s.bind(1, session_id).bind(2, position).bind(3, m.id).bind(4, to_json(m).dump());
  s.step();
  txn.commit();
}

std::vector<Message> Store::load_history(std::string_view session_id) const {
  std::lock_guard lock(mu_);
  load_row(EntityKind::session, session_id);
  Stmt s(db_, "SELECT payload FROM messages WHERE session_id=?1 ORDER BY position");
  s.bind(1, session_id);
  std::vector<Message> out;
  while (s.step()) out.push_back(message_from_json(Json::parse(s.text(0))));
  return out;
}

bool Store::try_begin_run(std::string_view session_id) {
  std::lock_guard lock(mu_);
  SessionSpec s = parse_session(load_row(EntityKind::session, session_id).payload);
  if (s.status == SessionStatus::running) return false;
  s.status = SessionStatus::running;
  Stmt u(db_, "UPDATE entities SET payload=?1 WHERE kind='session' AND id=?2");
  u.bind(1, to_json(s).dump()).bind(2, session_id);
  u.step();
  return true;
}

void Store::end_run(std::string_view session_id, SessionStatus next) {
  std::lock_guard lock(mu_);
  auto e = find_locked(EntityKind::session, session_id);
  if (!e) return;  // deleted while running
  SessionSpec s = parse_session(e->payload);
  s.status = next;
  Stmt u(db_, "UPDATE entities SET payload=?1 WHERE kind='session' AND id=?2");
  u.bind(1, to_json(s).dump()).bind(2, session_id);
  u.step();
}

std::vector<std::string> Store::recover_running() {
  std::lock_guard lock(mu_);
  Transaction txn(db_);
  std::vector<std::string> recovered;
  for (const auto& e : list(EntityKind::session)) {
    SessionSpec s = parse_session(e.payload);
    if (s.status != SessionStatus::running) continue;
    s.status = SessionStatus::idle;
    s.notes.push_back("run interrupted by server restart; recovered at " + format_timestamp(now_ms()));
    Stmt u(db_, "UPDATE entities SET payload=?1 WHERE kind='session' AND id=?2");
    u.bind(1, to_json(s).dump()).bind(2, s.id);
    u.step();
    recovered.push_back(s.id);
  }
  txn.commit();
  return recovered;
}

// ---------------------------------------------------------------------------
// Workflow resolution & audit

Registry Store::collect_registry_locked(const std::vector<std::string>& agent_ids) const {
  Registry reg;
  std::set<std::string> seen_agents, seen_models, seen_skills, seen_memories;
  std::vector<std::string> pending = agent_ids;
  while (!pending.empty()) {
    std::string id = pending.back();
    pending.pop_back();
    if (!seen_agents.insert(id).second) continue;
    AgentSpec a = parse_agent(load_row(EntityKind::agent, id).payload);
    for (const auto& m : a.members) pending.push_back(m);
    if (a.model_ref && seen_models.insert(*a.model_ref).second) {
      reg.models.push_back(parse_model(load_row(EntityKind::model, *a.model_ref).payload));
    }
    for (const auto& s : a.skill_refs) {
      if (seen_skills.insert(s).second) {
        reg.skills.push_back(parse_skill(load_row(EntityKind::skill, s).payload));
      }
    }
    if (a.memory_ref && seen_memories.insert(*a.memory_ref).second) {
      reg.memories.push_back(parse_memory(load_row(EntityKind::memory, *a.memory_ref).payload));
    }
    reg.agents.push_back(std::move(a));
  }
  reg.sort();
  return reg;
}

WorkflowSpec Store::resolve_workflow(std::string_view workflow_id) const {
  std::lock_guard lock(mu_);
  WorkflowSpec w = parse_workflow_object(load_row(EntityKind::workflow, workflow_id).payload);
  std::vector<std::string> roots;
  if (w.initiator_ref) roots.push_back(*w.initiator_ref);
  if (w.receiver_ref) roots.push_back(*w.receiver_ref);
  for (const auto& s : w.sequence) roots.push_back(s);
  w.registry = collect_registry_locked(roots);
  return w;
}

std::vector<AuditFinding> Store::audit() const {
  std::lock_guard lock(mu_);
  std::vector<AuditFinding> out;
  for (EntityKind holder : {EntityKind::agent, EntityKind::workflow}) {
    Stmt s(db_, "SELECT id, payload FROM entities WHERE kind=?1 ORDER BY seq");
    s.bind(1, to_string(holder));
    while (s.step()) {
      Json p = Json::parse(s.text(1));
      for (const auto& [k, ref] : outbound_refs(holder, p)) {
        if (!find_locked(k, ref)) {
          out.push_back({holder, s.text(0),
                         "dangling reference to " + std::string(to_string(k)) + " " + ref});
        }
      }
    }
  }
  Stmt m(db_,
         "SELECT DISTINCT session_id FROM messages WHERE session_id NOT IN "
         "(SELECT id FROM entities WHERE kind='session')");
  while (m.step()) out.push_back({EntityKind::session, m.text(0), "messages of a missing session"});
  return out;
}

// ---------------------------------------------------------------------------
// Gallery

namespace {

Json bundle_to_json(const std::string& root, const Registry& reg) {
  Json j;
  j["version"] = std::string(kSchemaVersion);
  j["root"] = root;
  j["agents"] = Json::array();
  for (const auto& a : reg.agents) j["agents"].push_back(to_json(a));
  j["models"] = Json::array();
  for (const auto& m : reg.models) j["models"].push_back(to_json(m));
  j["skills"] = Json::array();
  for (const auto& s : reg.skills) j["skills"].push_back(to_json(s));
  j["memories"] = Json::array();
  for (const auto& m : reg.memories) j["memories"].push_back(to_json(m));
  return j;
}

struct Bundle {
  std::string root;
  Registry registry;
};

Bundle parse_bundle(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  auto version = r.str("version");
  if (version != kSchemaVersion) {
    throw Error(ErrorCode::unsupported_version,
                r.field("version") + ": unsupported version \"" + version + "\"", r.field("version"));
  }
  Bundle b;
  b.root = r.str("root");
  auto each = [&](const char* key, auto&& fn) {
    if (const Json* arr = r.array(key)) {
      for (std::size_t i = 0; i < arr->size(); ++i) fn((*arr)[i], detail::index_path(r.field(key), i));
    }
  };
  each("agents", [&](const Json& v, const std::string& p) { b.registry.agents.push_back(parse_agent(v, p)); });
  each("models", [&](const Json& v, const std::string& p) { b.registry.models.push_back(parse_model(v, p)); });
  each("skills", [&](const Json& v, const std::string& p) { b.registry.skills.push_back(parse_skill(v, p)); });
  each("memories",
       [&](const Json& v, const std::string& p) { b.registry.memories.push_back(parse_memory(v, p)); });
  r.finish();
  return b;
}

void validate_bundle(const Bundle& b, EntityKind kind) {
  std::vector<Issue> issues;
  const Registry& reg = b.registry;
  for (std::size_t i = 0; i < reg.models.size(); ++i) check_model(reg.models[i], detail::index_path("models", i), issues);
  for (std::size_t i = 0; i < reg.skills.size(); ++i) check_skill(reg.skills[i], detail::index_path("skills", i), issues);
  for (std::size_t i = 0; i < reg.memories.size(); ++i) {
    check_memory(reg.memories[i], detail::index_path("memories", i), issues);
  }
  auto refs = resolver_for(reg);
  for (std::size_t i = 0; i < reg.agents.size(); ++i) {
    auto p = detail::index_path("agents", i);
    check_agent(reg.agents[i], p, issues);
    check_agent_refs(reg.agents[i], p, refs, issues);
  }
  bool root_found = false;
  switch (kind) {
    case EntityKind::agent: root_found = reg.find_agent(b.root) != nullptr; break;
    case EntityKind::model: root_found = reg.find_model(b.root) != nullptr; break;
    case EntityKind::skill: root_found = reg.find_skill(b.root) != nullptr; break;
    case EntityKind::memory: root_found = reg.find_memory(b.root) != nullptr; break;
    default: break;
  }
  if (!root_found) {
    issues.push_back({Severity::error, "root",
                      "root " + b.root + " is not a " + std::string(to_string(kind)) + " of this bundle"});
  }
  throw_if_invalid(make_report(std::move(issues)), "gallery item");
}

}  // namespace

std::string Store::export_gallery(EntityKind kind, std::string_view id) const {
  std::lock_guard lock(mu_);
  Entity e = load_row(kind, id);
  Json env;
  env["kind"] = to_string(kind);
  env["title"] = e.payload.value("name", std::string(id));
  env["description"] = "";
  env["version"] = std::string(kSchemaVersion);
  switch (kind) {
    case EntityKind::workflow: {
      WorkflowSpec w = resolve_workflow(id);
      throw_if_invalid(validate(w), "workflow " + w.id);
      env["payload"] = workflow_to_json(w);
      break;
    }
    case EntityKind::agent:
      env["payload"] = bundle_to_json(std::string(id), collect_registry_locked({std::string(id)}));
      break;
    case EntityKind::model: {
      Registry reg;
      reg.models.push_back(parse_model(e.payload));
      env["payload"] = bundle_to_json(std::string(id), reg);
      break;
    }
    case EntityKind::skill: {
      Registry reg;
      reg.skills.push_back(parse_skill(e.payload));
      env["payload"] = bundle_to_json(std::string(id), reg);
      break;
    }
    case EntityKind::memory: {
      Registry reg;
      reg.memories.push_back(parse_memory(e.payload));
      env["payload"] = bundle_to_json(std::string(id), reg);
      break;
    }
    case EntityKind::session:
      throw Error(ErrorCode::precondition_failed, "sessions are not gallery items", std::string(id));
  }
  return canonical_dump(env);
}

GalleryItem Store::import_gallery(std::string_view doc) {
  Json j = parse_json_text(doc);
  GalleryItem item;
  Json payload;
  if (j.is_object() && j.contains("workflow") && !j.contains("kind")) {
    item.kind = EntityKind::workflow;
    payload = j;
  } else {
    ObjectReader r(j, "");
    item.kind = r.enumeration("kind", EntityKind::workflow,
                              {{"model", EntityKind::model},
                               {"skill", EntityKind::skill},
                               {"memory", EntityKind::memory},
                               {"agent", EntityKind::agent},
                               {"workflow", EntityKind::workflow}});
    item.title = r.str_or("title", "");
    item.description = r.str_or("description", "");
    item.version = r.str_or("version", "");
    payload = r.required("payload");
    r.finish();
  }

  Registry reg;
  std::optional<WorkflowSpec> workflow;
  std::string root;
  if (item.kind == EntityKind::workflow) {
    workflow = workflow_from_json(payload);
    throw_if_invalid(validate(*workflow), "workflow " + workflow->id);
    reg = workflow->registry;
    if (item.title.empty()) item.title = workflow->name;
  } else {
    Bundle b = parse_bundle(payload, "payload");
    validate_bundle(b, item.kind);
    reg = std::move(b.registry);
    root = b.root;
  }

  // Fresh ids for everything, then rewrite references.
  std::map<std::string, std::string> agent_ids, model_ids, skill_ids, memory_ids;
  for (const auto& a : reg.agents) agent_ids[a.id] = new_id();
  for (const auto& m : reg.models) model_ids[m.id] = new_id();
  for (const auto& s : reg.skills) skill_ids[s.id] = new_id();
  for (const auto& m : reg.memories) memory_ids[m.id] = new_id();

  std::lock_guard lock(mu_);
  Transaction txn(db_);
  for (auto m : reg.models) {
    m.id = model_ids[m.id];
    insert_locked(EntityKind::model, m.id, to_json(m), {});
  }
  for (auto s : reg.skills) {
    s.id = skill_ids[s.id];
    insert_locked(EntityKind::skill, s.id, to_json(s), {});
  }
  for (auto m : reg.memories) {
    m.id = memory_ids[m.id];
    insert_locked(EntityKind::memory, m.id, to_json(m), {});
  }
  // groups last so their members already exist
  std::vector<AgentSpec> agents = reg.agents;
  std::stable_partition(agents.begin(), agents.end(),
                        [](const AgentSpec& a) { return a.type != AgentType::group_chat; });
  for (auto a : agents) {
    a.id = agent_ids[a.id];
    if (a.model_ref) a.model_ref = model_ids[*a.model_ref];
    for (auto& s : a.skill_refs) s = skill_ids[s];
    if (a.memory_ref) a.memory_ref = memory_ids[*a.memory_ref];
    for (auto& m : a.members) m = agent_ids[m];
    insert_locked(EntityKind::agent, a.id, to_json(a), {});
  }
  if (workflow) {
    WorkflowSpec w = *workflow;
    w.id = new_id();
    if (w.initiator_ref) w.initiator_ref = agent_ids[*w.initiator_ref];
    if (w.receiver_ref) w.receiver_ref = agent_ids[*w.receiver_ref];
    for (auto& s : w.sequence) s = agent_ids[s];
    w.registry = {};
    insert_locked(EntityKind::workflow, w.id, workflow_object_to_json(w), {});
    item.id = w.id;
  } else {
    switch (item.kind) {
      case EntityKind::agent: item.id = agent_ids[root]; break;
      case EntityKind::model: item.id = model_ids[root]; break;
      case EntityKind::skill: item.id = skill_ids[root]; break;
      case EntityKind::memory: item.id = memory_ids[root]; break;
      default: break;
    }
  }
  txn.commit();
  item.payload = load_row(item.kind, item.id).payload;
  if (item.version.empty()) item.version = std::string(kSchemaVersion);
  return item;
}

}  // namespace agentloom
