#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualfb/errors.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

using AttributeValue = std::pair<std::string, std::string>;

/// One knowledge-base record: an id plus an ordered list of attribute-value
/// pairs. Attribute order is data and is preserved exactly as loaded.
struct Entity {
  std::string id;
  std::vector<AttributeValue> attributes;

  bool same_attributes(const Entity& other) const {
    return attributes == other.attributes;
  }
};

enum class KbLevel { session, dataset };

inline std::string to_string(KbLevel level) {
  return level == KbLevel::session ? "session" : "dataset";
}

struct KnowledgeBase {
  std::vector<Entity> entities;
  KbLevel level = KbLevel::session;

  const Entity* find(const std::string& id) const {
    for (const auto& e : entities) {
      if (e.id == id) return &e;
    }
    return nullptr;
  }

  bool contains(const std::string& id) const { return find(id) != nullptr; }
  std::size_t size() const { return entities.size(); }
};

struct Turn {
  std::string user;
  std::string system;
  std::optional<std::vector<std::string>> gold_entity_ids;
};

struct Dialogue {
  std::string id;
  std::string domain;
  std::vector<Turn> turns;
  std::vector<std::string> session_entity_ids;
};

enum class Role { user, sys };

struct ContextSegment {
  Role role;
  std::string text;
};

/// Role-tagged concatenation of everything said up to (and including) the
/// turn's user utterance. Segments alternate user/sys and both start and end
/// with a user segment.
struct DialogueContext {
  std::vector<ContextSegment> segments;
  int turn_index = 1;

  static std::string tag(Role role) {
    return role == Role::user ? "[user]:" : "[sys]:";
  }

  /// Single-line rendering, "[user]: ... [sys]: ..." joined by single spaces.
  std::string flat_text() const {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (i > 0) out.push_back(' ');
      out += tag(segments[i].role);
      out.push_back(' ');
      out += segments[i].text;
    }
    return out;
  }

  /// What the retriever encodes: the utterances joined by single spaces,
  /// without role tags. Tag tokens would be shared by every query, and with a
  /// bag-of-words encoder any token common to all queries feeds a
  /// context-independent component of the ranking.
  std::string query_text() const {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (i > 0) out.push_back(' ');
      out += segments[i].text;
    }
    return out;
  }

  /// All segments before the final user utterance, one "[role]: text" line
  /// each. Empty for the first turn.
  std::vector<std::string> history_lines() const {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
      lines.push_back(tag(segments[i].role) + " " + segments[i].text);
    }
    return lines;
  }

  std::string user_input_line() const {
    if (segments.empty()) return {};
    return tag(segments.back().role) + " " + segments.back().text;
  }
};

/// The (attribute, value) pairs a reference response is expected to cover,
/// stored in normalized form.
struct GoldValueSet {
  std::set<AttributeValue> values;

  bool empty() const { return values.empty(); }
  std::size_t size() const { return values.size(); }
};

// ---------------------------------------------------------------------------
// Linearization and context construction
// ---------------------------------------------------------------------------

/// "a1 v1, a2 v2, ..., aN vN": lowercased, single-spaced, comma-separated,
/// in stored attribute order.
inline std::string linearize_entity(const Entity& e) {
  std::string out;
  for (std::size_t i = 0; i < e.attributes.size(); ++i) {
    if (i > 0) out += ", ";
    out += normalize_join(e.attributes[i].first);
    std::string value = normalize_join(e.attributes[i].second);
    if (!value.empty()) {
      out.push_back(' ');
      out += value;
    }
  }
  return out;
}

/// Context of turn t (1-based): u_1, y_1, ..., u_{t-1}, y_{t-1}, u_t.
inline DialogueContext build_context(const Dialogue& d, int t) {
  if (t < 1 || static_cast<std::size_t>(t) > d.turns.size()) {
    throw DataError("build_context: turn index " + std::to_string(t) +
                    " out of range for dialogue '" + d.id + "' with " +
                    std::to_string(d.turns.size()) + " turns");
  }
  DialogueContext ctx;
  ctx.turn_index = t;
  for (int i = 0; i + 1 < t; ++i) {
    ctx.segments.push_back({Role::user, d.turns[i].user});
    ctx.segments.push_back({Role::sys, d.turns[i].system});
  }
  ctx.segments.push_back({Role::user, d.turns[t - 1].user});
  return ctx;
}

// ---------------------------------------------------------------------------
// Validation and loading
// ---------------------------------------------------------------------------

inline void validate_kb(const KnowledgeBase& kb) {
  std::map<std::string, int> id_counts;
  for (const auto& e : kb.entities) {
    if (e.id.empty()) throw DataError("knowledge base: entity with empty id");
    ++id_counts[e.id];
    if (e.attributes.empty()) {
      throw DataError("knowledge base: entity '" + e.id + "' has no attributes");
    }
    std::set<std::string> names;
    for (const auto& [attr, value] : e.attributes) {
      (void)value;
      if (!names.insert(attr).second) {
        throw DataError("knowledge base: entity '" + e.id +
                        "' repeats attribute '" + attr + "'");
      }
    }
  }
  std::string dups;
  for (const auto& [id, count] : id_counts) {
    if (count > 1) dups += (dups.empty() ? "" : ", ") + id;
  }
  if (!dups.empty()) {
    throw DataError("knowledge base: duplicate entity ids: " + dups);
  }
}

inline KnowledgeBase kb_from_json(const nlohmann::json& doc, KbLevel level) {
  KnowledgeBase kb;
  kb.level = level;
  if (doc.contains("level")) {
    const std::string file_level = doc.at("level").get<std::string>();
    if (file_level != to_string(level)) {
      throw DataError("knowledge base: file declares level '" + file_level +
                      "' but '" + to_string(level) + "' was requested");
    }
  }
  for (const auto& je : doc.at("entities")) {
    Entity e;
    e.id = je.at("id").get<std::string>();
    for (const auto& pair : je.at("attributes")) {
      if (!pair.is_array() || pair.size() != 2) {
        throw DataError("knowledge base: entity '" + e.id +
                        "' has a malformed attribute pair");
      }
      e.attributes.emplace_back(pair[0].get<std::string>(),
                                pair[1].get<std::string>());
    }
    kb.entities.push_back(std::move(e));
  }
  validate_kb(kb);
  return kb;
}

inline nlohmann::json kb_to_json(const KnowledgeBase& kb) {
  nlohmann::json doc;
  doc["level"] = to_string(kb.level);
  doc["entities"] = nlohmann::json::array();
  for (const auto& e : kb.entities) {
    nlohmann::json je;
    je["id"] = e.id;
    je["attributes"] = nlohmann::json::array();
    for (const auto& [a, v] : e.attributes) {
      je["attributes"].push_back(nlohmann::json::array({a, v}));
    }
    doc["entities"].push_back(std::move(je));
  }
  return doc;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("cannot parse " + path + ": " + ex.what());
  }
  return doc;
}

inline KnowledgeBase load_kb(const std::string& path, KbLevel level) {
  return kb_from_json(read_json_file(path), level);
}

inline void validate_dialogue(const Dialogue& d, const KnowledgeBase& kb) {
  if (d.turns.empty()) {
    throw DataError("dialogue '" + d.id + "' has no turns");
  }
  for (const auto& id : d.session_entity_ids) {
    if (!kb.contains(id)) {
      throw DataError("dialogue '" + d.id + "' references unknown entity '" +
                      id + "'");
    }
  }
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const Turn& turn = d.turns[t];
    if (turn.user.empty()) {
      throw DataError("dialogue '" + d.id + "' turn " + std::to_string(t + 1) +
                      ": empty user utterance");
    }
    // Only the final turn may lack a system response (an in-progress turn).
    if (turn.system.empty() && t + 1 < d.turns.size()) {
      throw DataError("dialogue '" + d.id + "' turn " + std::to_string(t + 1) +
                      ": empty system response before the final turn");
    }
    if (turn.gold_entity_ids) {
      for (const auto& id : *turn.gold_entity_ids) {
        if (!kb.contains(id)) {
          throw DataError("dialogue '" + d.id + "' turn " +
                          std::to_string(t + 1) +
                          " references unknown entity '" + id + "'");
        }
      }
    }
  }
}

inline std::vector<Dialogue> dialogues_from_json(const nlohmann::json& doc,
                                                 const KnowledgeBase& kb) {
  std::vector<Dialogue> out;
  for (const auto& jd : doc.at("dialogues")) {
    Dialogue d;
    d.id = jd.at("id").get<std::string>();
    d.domain = jd.value("domain", std::string{});
    if (jd.contains("session_entity_ids")) {
      d.session_entity_ids =
          jd.at("session_entity_ids").get<std::vector<std::string>>();
    }
    for (const auto& jt : jd.at("turns")) {
      Turn turn;
      turn.user = jt.at("user").get<std::string>();
      turn.system = jt.value("system", std::string{});
      if (jt.contains("gold_entity_ids")) {
        turn.gold_entity_ids =
            jt.at("gold_entity_ids").get<std::vector<std::string>>();
      }
      d.turns.push_back(std::move(turn));
    }
    validate_dialogue(d, kb);
    out.push_back(std::move(d));
  }
  return out;
}

inline nlohmann::json dialogues_to_json(const std::vector<Dialogue>& dialogues) {
  nlohmann::json doc;
  doc["dialogues"] = nlohmann::json::array();
  for (const auto& d : dialogues) {
    nlohmann::json jd;
    jd["id"] = d.id;
    jd["domain"] = d.domain;
    jd["session_entity_ids"] = d.session_entity_ids;
    jd["turns"] = nlohmann::json::array();
    for (const auto& t : d.turns) {
      nlohmann::json jt;
      jt["user"] = t.user;
      jt["system"] = t.system;
      if (t.gold_entity_ids) jt["gold_entity_ids"] = *t.gold_entity_ids;
      jd["turns"].push_back(std::move(jt));
    }
    doc["dialogues"].push_back(std::move(jd));
  }
  return doc;
}

inline std::vector<Dialogue> load_dialogues(const std::string& path,
                                            const KnowledgeBase& kb) {
  return dialogues_from_json(read_json_file(path), kb);
}

// ---------------------------------------------------------------------------
// Session-level to dataset-level merge
// ---------------------------------------------------------------------------

/// Deduplicated union of session KBs in first-occurrence order. Entities are
/// identical iff their full attribute-value lists are equal; two distinct
/// entities sharing an id is an error.
inline KnowledgeBase merge_session_kbs(
    const std::vector<KnowledgeBase>& session_kbs) {
  KnowledgeBase merged;
  merged.level = KbLevel::dataset;
  std::map<std::vector<AttributeValue>, std::size_t> seen;
  std::map<std::string, std::size_t> by_id;
  for (const auto& kb : session_kbs) {
    for (const auto& e : kb.entities) {
      auto it = seen.find(e.attributes);
      if (it != seen.end()) continue;
      auto id_it = by_id.find(e.id);
      if (id_it != by_id.end()) {
        throw DataError("merge: entities with id '" + e.id +
                        "' have differing attributes across sessions");
      }
      seen.emplace(e.attributes, merged.entities.size());
      by_id.emplace(e.id, merged.entities.size());
      merged.entities.push_back(e);
    }
  }
  validate_kb(merged);
  return merged;
}

inline KnowledgeBase merge_session_kbs(
    const std::vector<Dialogue>& dialogues,
    const std::vector<KnowledgeBase>& session_kbs) {
  if (dialogues.size() != session_kbs.size()) {
    throw DataError("merge: " + std::to_string(dialogues.size()) +
                    " dialogues but " + std::to_string(session_kbs.size()) +
                    " session KBs");
  }
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    validate_dialogue(dialogues[i], session_kbs[i]);
  }
  return merge_session_kbs(session_kbs);
}

// ---------------------------------------------------------------------------
// Gold values
// ---------------------------------------------------------------------------

/// Gold values for a turn: the (attribute, value) pairs, drawn from the given
/// candidate entities, whose normalized value occurs token-aligned in the
/// reference response. Pairs are stored normalized.
inline GoldValueSet extract_gold_values(
    const Turn& turn, const std::vector<const Entity*>& candidates) {
  GoldValueSet gold;
  const auto response_tokens = normalize_tokens(turn.system);
  for (const Entity* e : candidates) {
    for (const auto& [attr, value] : e->attributes) {
      const auto value_tokens = normalize_tokens(value);
      if (value_tokens.empty()) continue;
      if (contains_tokens(response_tokens, value_tokens)) {
        gold.values.emplace(normalize_join(attr), join_tokens(value_tokens));
      }
    }
  }
  return gold;
}

/// Candidate universe: the turn's gold entities when annotated, otherwise the
/// whole KB.
inline GoldValueSet extract_gold_values(const Turn& turn,
                                        const KnowledgeBase& kb) {
  std::vector<const Entity*> candidates;
  if (turn.gold_entity_ids) {
    for (const auto& id : *turn.gold_entity_ids) {
      const Entity* e = kb.find(id);
      if (e == nullptr) {
        throw DataError("extract_gold_values: unknown entity '" + id + "'");
      }
      candidates.push_back(e);
    }
  } else {
    for (const auto& e : kb.entities) candidates.push_back(&e);
  }
  return extract_gold_values(turn, candidates);
}

}  // namespace dualfb
