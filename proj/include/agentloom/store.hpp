#pragma once

// Durable storage for models, skills, memories, agents, workflows, sessions
// and session transcripts, plus gallery import/export.

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agentloom/message.hpp"
#include "agentloom/spec.hpp"

struct sqlite3;

namespace agentloom {

enum class EntityKind { model, skill, memory, agent, workflow, session };
std::string_view to_string(EntityKind v) noexcept;
std::optional<EntityKind> entity_kind_from(std::string_view text) noexcept;
// "models" -> model, as used in REST paths.
std::optional<EntityKind> entity_kind_from_plural(std::string_view text) noexcept;

enum class SessionStatus { idle, running, awaiting_human };
std::string_view to_string(SessionStatus v) noexcept;

struct SessionSpec {
  std::string id;
  std::string workflow_ref;
  std::string name;
  SessionStatus status = SessionStatus::idle;
  std::string workdir;
  std::vector<std::string> notes;
  bool operator==(const SessionSpec&) const = default;
};

Json to_json(const SessionSpec& s);
SessionSpec parse_session(const Json& j, const std::string& path = "session");

// Stored form of one entity. `payload` is the canonical JSON of the entity
// (the workflow object alone for workflows) and always carries `id`.
struct Entity {
  EntityKind kind = EntityKind::model;
  std::string id;
  Json payload;
  std::vector<std::string> tags;
  TimePoint created_at{};
  TimePoint updated_at{};
};

Json to_json(const Entity& e);

// Validates `payload` for `kind` (field checks only, references are checked
// against the store) and returns it in canonical form.
Json normalize_payload(EntityKind kind, const Json& payload, const std::string& id);

struct ListFilter {
  std::optional<std::string> tag;
  std::optional<std::string> name;
};

struct AuditFinding {
  EntityKind kind;
  std::string id;
  std::string message;
};

struct GalleryItem {
  EntityKind kind = EntityKind::workflow;
  std::string title;
  std::string description;
  std::string version;
  Json payload;
  // Id of the entity created by import.
  std::string id;
};

Json to_json(const GalleryItem& g);

class Store {
 public:
  // Opens (creating if needed) the database file. ":memory:" gives a private
  // in-memory database. Throws io_error naming the path on failure.
  explicit Store(const std::filesystem::path& db_path);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }

  // A fresh UUID is assigned; an `id` inside payload is ignored.
  Entity create(EntityKind kind, const Json& payload, std::vector<std::string> tags = {});
  Entity get(EntityKind kind, std::string_view id) const;
  std::optional<Entity> find(EntityKind kind, std::string_view id) const;
  // Newest first.
  std::vector<Entity> list(EntityKind kind, const ListFilter& filter = {}) const;
  Entity update(EntityKind kind, std::string_view id, const Json& payload,
                std::optional<std::vector<std::string>> tags = std::nullopt);
  // Refuses with conflict (details list the referrer ids) unless `force`,
  // which also deletes the referrers transitively.
  void remove(EntityKind kind, std::string_view id, bool force = false);

  // Ids of entities holding a reference to (kind, id).
  std::vector<std::pair<EntityKind, std::string>> referrers(EntityKind kind,
                                                            std::string_view id) const;

  // Sessions ---------------------------------------------------------------

  // Root under which session scratch directories are created; defaults to
  // <db dir>/sessions.
  void set_session_root(std::filesystem::path root) { session_root_ = std::move(root); }
  SessionSpec session(std::string_view id) const;
  void append_message(std::string_view session_id, const Message& m);
  std::vector<Message> load_history(std::string_view session_id) const;
  // Atomically moves an idle (or awaiting_human) session to running; false
  // when the session is already running.
  bool try_begin_run(std::string_view session_id);
  void end_run(std::string_view session_id, SessionStatus next);
  // Resets sessions left running by a previous process. Returns their ids.
  std::vector<std::string> recover_running();

  // Assembles a runnable WorkflowSpec (registry included) from stored
  // entities. not_found names the missing workflow or entity id.
  WorkflowSpec resolve_workflow(std::string_view workflow_id) const;

  // Full-scan referential integrity check; empty when clean.
  std::vector<AuditFinding> audit() const;

  // Gallery ----------------------------------------------------------------

  // Accepts a gallery envelope {kind,title,description,version,payload} or a
  // bare workflow document. Every imported entity gets a fresh id.
  GalleryItem import_gallery(std::string_view doc);
  std::string export_gallery(EntityKind kind, std::string_view id) const;

 private:
  Entity load_row(EntityKind kind, std::string_view id) const;
  std::optional<Entity> find_locked(EntityKind kind, std::string_view id) const;
  std::vector<std::pair<EntityKind, std::string>> referrers_locked(EntityKind kind,
                                                                   std::string_view id) const;
  void check_refs_locked(EntityKind kind, const Json& payload) const;
  Entity insert_locked(EntityKind kind, const std::string& id, Json payload,
                       const std::vector<std::string>& tags);
  void delete_locked(EntityKind kind, std::string_view id, bool force);
  void exec(const char* sql) const;
  Registry collect_registry_locked(const std::vector<std::string>& agent_ids) const;

  std::filesystem::path path_;
  std::filesystem::path session_root_;
  sqlite3* db_ = nullptr;
  mutable std::recursive_mutex mu_;
};

}  // namespace agentloom
