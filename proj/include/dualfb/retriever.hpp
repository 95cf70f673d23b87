#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dualfb/corpus.hpp"
#include "dualfb/encoder.hpp"
#include "dualfb/errors.hpp"

namespace dualfb {

// Precomputed entity embeddings plus the params.version they were encoded
// under. Retrieval refuses to run against params with a different version;
// callers re-encode (refresh_index) after every optimizer step burst.
struct EntityIndex {
  std::vector<std::string> entity_ids;
  std::vector<Embedding> embeddings;
  std::int64_t params_version = -1;

  std::size_t size() const { return entity_ids.size(); }
};

struct ScoredEntity {
  std::string entity_id;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<ScoredEntity> entries;  // descending score, ties by ascending id
  bool truncated = false;             // true when k > index size
};

inline double dot(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw DataError("dot: dimension mismatch (" + std::to_string(a.size()) +
                    " vs " + std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline EntityIndex build_index(const KnowledgeBase& kb,
                               const EncoderParams& params) {
  if (kb.entities.empty()) throw DataError("build_index: knowledge base is empty");
  EntityIndex index;
  index.entity_ids.reserve(kb.size());
  index.embeddings.reserve(kb.size());
  for (const Entity& e : kb.entities) {
    index.entity_ids.push_back(e.id);
    index.embeddings.push_back(encode_text(linearize_entity(e), params));
  }
  index.params_version = params.version;
  return index;
}

// Re-encodes the listed rows (all rows when `ids` is empty) and stamps the
// index with the current params version.
inline void refresh_index(EntityIndex& index, const KnowledgeBase& kb,
                          const EncoderParams& params,
                          const std::vector<std::string>& ids = {}) {
  if (ids.empty()) {
    index = build_index(kb, params);
    return;
  }
  for (const std::string& id : ids) {
    const auto row = std::find(index.entity_ids.begin(), index.entity_ids.end(), id);
    if (row == index.entity_ids.end()) {
      throw DataError("refresh_index: id '" + id + "' not in index");
    }
    const Entity* e = kb.find(id);
    if (e == nullptr) {
      throw DataError("refresh_index: id '" + id + "' not in knowledge base");
    }
    index.embeddings[static_cast<std::size_t>(row - index.entity_ids.begin())] =
        encode_text(linearize_entity(*e), params);
  }
  index.params_version = params.version;
}

// Top-k by query.entity dot product. Ties break toward the lexicographically
// smaller entity id so results are stable across embedding reorderings.
inline RetrievalResult retrieve(const Embedding& query, const EntityIndex& index,
                                const EncoderParams& params, int k) {
  if (index.params_version != params.version) {
    throw StaleIndexError(
        "retrieve: index built at params version " +
        std::to_string(index.params_version) + " but params are at version " +
        std::to_string(params.version) + "; refresh the index first");
  }
  if (k <= 0) throw DataError("retrieve: k must be positive");

  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    scores[i] = dot(query, index.embeddings[i]);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (scores[a] != scores[b]) return scores[a] > scores[b];
                     return index.entity_ids[a] < index.entity_ids[b];
                   });

  RetrievalResult result;
  result.truncated = static_cast<std::size_t>(k) > index.size();
  const std::size_t take = std::min<std::size_t>(k, index.size());
  result.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    result.entries.push_back(
        {index.entity_ids[order[i]], scores[order[i]]});
  }
  return result;
}

inline RetrievalResult retrieve_for_context(const DialogueContext& ctx,
                                            const EntityIndex& index,
                                            const EncoderParams& params,
                                            int k) {
  return retrieve(encode_text(ctx.query_text(), params), index, params, k);
}

}  // namespace dualfb
