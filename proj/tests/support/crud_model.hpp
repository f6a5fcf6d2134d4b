#pragma once

// Random create/update/delete driver for Store, checked against an in-memory
// model of the expected contents and reference graph.

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "agentloom/error.hpp"
#include "agentloom/store.hpp"

namespace crud {

using agentloom::EntityKind;
using agentloom::Json;

struct Expected {
  std::map<EntityKind, std::map<std::string, Json>> entities;

  std::vector<std::string> ids(EntityKind k) const {
    std::vector<std::string> out;
    auto it = entities.find(k);
    if (it == entities.end()) return out;
    for (const auto& [id, _] : it->second) out.push_back(id);
    return out;
  }

  // Direct outbound references, independent of the store's own bookkeeping.
  static std::vector<std::pair<EntityKind, std::string>> refs_of(EntityKind k, const Json& p) {
    std::vector<std::pair<EntityKind, std::string>> out;
    if (k == EntityKind::agent) {
      if (p.contains("model_ref")) out.push_back({EntityKind::model, p["model_ref"]});
      if (p.contains("memory_ref")) out.push_back({EntityKind::memory, p["memory_ref"]});
      if (p.contains("skill_refs")) {
        for (const auto& s : p["skill_refs"]) out.push_back({EntityKind::skill, s});
      }
      if (p.contains("members")) {
        for (const auto& m : p["members"]) out.push_back({EntityKind::agent, m});
      }
    } else if (k == EntityKind::workflow) {
      if (p.contains("initiator_ref")) out.push_back({EntityKind::agent, p["initiator_ref"]});
      if (p.contains("receiver_ref")) out.push_back({EntityKind::agent, p["receiver_ref"]});
      if (p.contains("sequence")) {
        for (const auto& s : p["sequence"]) out.push_back({EntityKind::agent, s});
      }
    }
    return out;
  }

  std::set<std::pair<EntityKind, std::string>> referrers(EntityKind k, const std::string& id) const {
    std::set<std::pair<EntityKind, std::string>> out;
    for (const auto& [hk, items] : entities) {
      for (const auto& [hid, p] : items) {
        for (const auto& r : refs_of(hk, p)) {
          if (r.first == k && r.second == id) out.insert({hk, hid});
        }
      }
    }
    return out;
  }

  void cascade_delete(EntityKind k, const std::string& id) {
    if (!entities[k].count(id)) return;
    auto refs = referrers(k, id);
    entities[k].erase(id);
    for (const auto& [rk, rid] : refs) cascade_delete(rk, rid);
  }

  bool dangling_free() const {
    for (const auto& [hk, items] : entities) {
      for (const auto& [hid, p] : items) {
        for (const auto& [rk, rid] : refs_of(hk, p)) {
          auto it = entities.find(rk);
          if (it == entities.end() || !it->second.count(rid)) return false;
        }
      }
    }
    return true;
  }
};

inline const std::vector<EntityKind> kKinds = {EntityKind::model, EntityKind::skill, EntityKind::memory,
                                               EntityKind::agent, EntityKind::workflow};

class Driver {
 public:
  explicit Driver(unsigned seed) : rng_(seed) {}

  Expected& expected() { return expected_; }
  int conflicts() const { return conflicts_; }
  int rejected() const { return rejected_; }

  // Applies one random operation, returning a short description of it.
  std::string step(agentloom::Store& store) {
    switch (rng_() % 10) {
      case 0: return create(store, EntityKind::model, model_payload());
      case 1: return create(store, EntityKind::skill, skill_payload());
      case 2: return create(store, EntityKind::memory, memory_payload());
      case 3:
      case 4: return create_agent(store);
      case 5: return create_workflow(store);
      case 6:
      case 7: return update(store);
      default: return remove(store);
    }
  }

  // Compares the store with the model; returns an empty string when equal.
  std::string diff(const agentloom::Store& store) const {
    for (auto k : kKinds) {
      auto listed = store.list(k);
      auto want = expected_.ids(k);
      if (listed.size() != want.size()) {
        return std::string(agentloom::to_string(k)) + ": list has " + std::to_string(listed.size()) +
               ", expected " + std::to_string(want.size());
      }
      auto it = expected_.entities.find(k);
      if (it == expected_.entities.end()) continue;
      for (const auto& [id, payload] : it->second) {
        auto e = store.find(k, id);
        if (!e) return std::string(agentloom::to_string(k)) + " " + id + " missing";
        if (e->payload != payload) return std::string(agentloom::to_string(k)) + " " + id + " payload differs";
        if (e->updated_at < e->created_at) return id + ": updated_at < created_at";
      }
    }
    return {};
  }

 private:
  std::string pick(EntityKind k) {
    auto ids = expected_.ids(k);
    if (ids.empty()) return {};
    return ids[rng_() % ids.size()];
  }

  std::string token() { return std::to_string(rng_() % 100000); }

  Json model_payload() {
    return Json{{"name", "model " + token()},
                {"provider", "mock"},
                {"model_name", "mock-" + token()},
                {"temperature", (rng_() % 21) / 10.0},
                {"pricing", {{"prompt_per_1k", 0.001 * (rng_() % 10)}, {"completion_per_1k", 0.002}}},
                {"mock_script", {{"steps", Json::array({Json{{"content", "reply " + token()}}})}}}};
  }
  Json skill_payload() {
    return Json{{"name", "skill_" + token()}, {"description", "does things"}, {"source", "echo " + token()}};
  }
  Json memory_payload() {
    return Json{{"kind", rng_() % 2 ? "naive-store" : "short-term-transcript"},
                {"capacity", 1 + static_cast<int>(rng_() % 50)}};
  }

  std::vector<std::string> plain_agents() const {
    std::vector<std::string> out;
    auto it = expected_.entities.find(EntityKind::agent);
    if (it == expected_.entities.end()) return out;
    for (const auto& [id, p] : it->second) {
      if (p.value("type", "") != "group_chat") out.push_back(id);
    }
    return out;
  }

  std::string create(agentloom::Store& store, EntityKind k, const Json& payload, bool expect_ok = true) {
    try {
      auto e = store.create(k, payload);
      if (!expect_ok) return "UNEXPECTED create success";
      expected_.entities[k][e.id] = e.payload;
      return "create " + std::string(agentloom::to_string(k)) + " " + e.id;
    } catch (const agentloom::Error& err) {
      ++rejected_;
      if (expect_ok) return std::string("UNEXPECTED create failure: ") + err.what();
      return "create rejected";
    }
  }

  std::string create_agent(agentloom::Store& store) {
    auto plain = plain_agents();
    if (plain.size() >= 2 && rng_() % 4 == 0) {
      std::vector<std::string> members = {plain[rng_() % plain.size()]};
      for (int tries = 0; tries < 5 && members.size() < 2; ++tries) {
        auto m = plain[rng_() % plain.size()];
        if (m != members[0]) members.push_back(m);
      }
      if (members.size() < 2) return "skip";
      return create(store, EntityKind::agent,
                    Json{{"type", "group_chat"}, {"name", "group " + token()}, {"members", members}});
    }
    bool dangling = rng_() % 8 == 0;
    std::string model = dangling ? "no-such-model" : pick(EntityKind::model);
    if (rng_() % 3 == 0 || model.empty()) {
      return create(store, EntityKind::agent, Json{{"type", "user_proxy"}, {"name", "proxy " + token()}});
    }
    Json p = {{"type", "assistant"}, {"name", "assistant " + token()}, {"model_ref", model}};
    auto skill = pick(EntityKind::skill);
    if (!skill.empty() && rng_() % 2) p["skill_refs"] = Json::array({skill});
    auto memory = pick(EntityKind::memory);
    if (!memory.empty() && rng_() % 2) p["memory_ref"] = memory;
    return create(store, EntityKind::agent, p, !dangling);
  }

  std::string create_workflow(agentloom::Store& store) {
    auto plain = plain_agents();
    auto all = expected_.ids(EntityKind::agent);
    if (plain.empty() || all.size() < 2) return "skip";
    auto initiator = plain[rng_() % plain.size()];
    auto receiver = all[rng_() % all.size()];
    if (receiver == initiator) return "skip";
    return create(store, EntityKind::workflow,
                  Json{{"name", "workflow " + token()},
                       {"pattern", "autonomous_chat"},
                       {"initiator_ref", initiator},
                       {"receiver_ref", receiver},
                       {"termination", {{"max_turns", 1 + static_cast<int>(rng_() % 10)}}}});
  }

  std::string update(agentloom::Store& store) {
    auto k = kKinds[rng_() % kKinds.size()];
    auto id = pick(k);
    if (id.empty()) return "skip";
    Json p = expected_.entities[k][id];
    if (k == EntityKind::memory) {
      p["capacity"] = 1 + static_cast<int>(rng_() % 50);
    } else {
      p["name"] = k == EntityKind::skill ? "renamed_" + token() : "renamed " + token();
    }
    if (k == EntityKind::agent && p.value("type", "") == "assistant" && rng_() % 2) {
      auto model = pick(EntityKind::model);
      if (!model.empty()) p["model_ref"] = model;
    }
    try {
      auto e = store.update(k, id, p);
      expected_.entities[k][id] = e.payload;
      return "update " + id;
    } catch (const agentloom::Error& err) {
      return std::string("UNEXPECTED update failure: ") + err.what();
    }
  }

  std::string remove(agentloom::Store& store) {
    auto k = kKinds[rng_() % kKinds.size()];
    auto id = pick(k);
    if (id.empty()) return "skip";
    bool force = rng_() % 3 == 0;
    auto refs = expected_.referrers(k, id);
    try {
      store.remove(k, id, force);
      if (!refs.empty() && !force) return "UNEXPECTED delete success with referrers";
      expected_.cascade_delete(k, id);
      return "delete " + id + (force ? " (force)" : "");
    } catch (const agentloom::Error& err) {
      if (err.code() != agentloom::ErrorCode::conflict || refs.empty() || force) {
        return std::string("UNEXPECTED delete failure: ") + err.what();
      }
      std::set<std::string> reported(err.details().begin(), err.details().end());
      std::set<std::string> want;
      for (const auto& r : refs) want.insert(r.second);
      if (reported != want) return "UNEXPECTED referrer list";
      ++conflicts_;
      return "delete refused";
    }
  }

  std::mt19937 rng_;
  Expected expected_;
  int conflicts_ = 0;
  int rejected_ = 0;
};

}  // namespace crud
