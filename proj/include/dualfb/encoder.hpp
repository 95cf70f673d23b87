#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dualfb/errors.hpp"
#include "dualfb/rng.hpp"
#include "dualfb/text.hpp"

namespace dualfb {

struct TokenizerConfig {
  int hash_vocab_size = 32768;
  int max_length = 128;
};

struct EncoderConfig {
  TokenizerConfig tokenizer;
  int embed_dim = 128;   // d_e
  int hidden_dim = 256;  // d_h
  int output_dim = 128;  // d

  bool operator==(const EncoderConfig& o) const {
    return tokenizer.hash_vocab_size == o.tokenizer.hash_vocab_size &&
           tokenizer.max_length == o.tokenizer.max_length &&
           embed_dim == o.embed_dim && hidden_dim == o.hidden_dim &&
           output_dim == o.output_dim;
  }
};

using Embedding = std::vector<double>;

/// Hashing bag-of-embeddings encoder: mean-pooled embedding rows followed by
/// an affine+tanh layer and an affine output layer. Parameters are stored as
/// f32 (the checkpoint wire type); all arithmetic runs in double.
struct EncoderParams {
  EncoderConfig cfg;
  std::vector<float> table;  // hash_vocab_size x embed_dim, row-major
  std::vector<float> w1;     // hidden_dim x embed_dim
  std::vector<float> b1;     // hidden_dim
  std::vector<float> w2;     // output_dim x hidden_dim
  std::vector<float> b2;     // output_dim
  std::int64_t version = 0;  // bumped on every parameter update
  std::uint64_t seed = 0;

  static constexpr std::array<const char*, 5> tensor_names = {
      "embedding_table", "w1", "b1", "w2", "b2"};

  std::array<std::vector<float>*, 5> tensors() {
    return {&table, &w1, &b1, &w2, &b2};
  }
  std::array<const std::vector<float>*, 5> tensors() const {
    return {&table, &w1, &b1, &w2, &b2};
  }

  std::array<std::size_t, 5> tensor_sizes() const {
    const auto& t = cfg.tokenizer;
    return {static_cast<std::size_t>(t.hash_vocab_size) * cfg.embed_dim,
            static_cast<std::size_t>(cfg.hidden_dim) * cfg.embed_dim,
            static_cast<std::size_t>(cfg.hidden_dim),
            static_cast<std::size_t>(cfg.output_dim) * cfg.hidden_dim,
            static_cast<std::size_t>(cfg.output_dim)};
  }

  void validate() const {
    auto sizes = tensor_sizes();
    auto ts = tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i]->size() != sizes[i]) {
        throw DataError(std::string("encoder params: tensor '") +
                        tensor_names[i] + "' has size " +
                        std::to_string(ts[i]->size()) + ", expected " +
                        std::to_string(sizes[i]));
      }
      for (float x : *ts[i]) {
        if (!std::isfinite(x)) {
          throw DataError(std::string("encoder params: non-finite entry in '") +
                          tensor_names[i] + "'");
        }
      }
    }
  }
};

/// Gradient accumulator, shape-matched to EncoderParams but in double.
struct ParamGradients {
  std::vector<double> table, w1, b1, w2, b2;
  std::int64_t examples = 0;

  explicit ParamGradients(const EncoderConfig& cfg) {
    const auto& t = cfg.tokenizer;
    table.assign(static_cast<std::size_t>(t.hash_vocab_size) * cfg.embed_dim, 0.0);
    w1.assign(static_cast<std::size_t>(cfg.hidden_dim) * cfg.embed_dim, 0.0);
    b1.assign(cfg.hidden_dim, 0.0);
    w2.assign(static_cast<std::size_t>(cfg.output_dim) * cfg.hidden_dim, 0.0);
    b2.assign(cfg.output_dim, 0.0);
  }

  std::array<std::vector<double>*, 5> tensors() {
    return {&table, &w1, &b1, &w2, &b2};
  }
  std::array<const std::vector<double>*, 5> tensors() const {
    return {&table, &w1, &b1, &w2, &b2};
  }

  void reset() {
    for (auto* t : tensors()) std::fill(t->begin(), t->end(), 0.0);
    examples = 0;
  }

  void scale(double s) {
    for (auto* t : tensors()) {
      for (double& x : *t) x *= s;
    }
  }

  void add(const ParamGradients& other) {
    auto a = tensors();
    auto b = other.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < a[i]->size(); ++j) (*a[i])[j] += (*b[i])[j];
    }
    examples += other.examples;
  }
};

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

inline int hash_token(std::string_view token, int vocab_size) {
  return static_cast<int>(fnv1a(token) % static_cast<std::uint64_t>(vocab_size));
}

/// Normalize, hash each token into [0, vocab), keep the most recent
/// max_length ids (truncation drops the oldest tokens).
inline std::vector<int> tokenize(const std::string& text,
                                 const TokenizerConfig& cfg) {
  const auto tokens = normalize_tokens(text);
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) {
    ids.push_back(hash_token(tok, cfg.hash_vocab_size));
  }
  if (ids.size() > static_cast<std::size_t>(cfg.max_length)) {
    ids.erase(ids.begin(), ids.end() - cfg.max_length);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Activations recorded during encode, consumed by backward.
struct ForwardCache {
  std::vector<double> pooled;  // embed_dim
  std::vector<double> hidden;  // hidden_dim, post-tanh
};

inline Embedding encode(std::span<const int> ids, const EncoderParams& params,
                        ForwardCache* cache = nullptr) {
  const auto& cfg = params.cfg;
  const int de = cfg.embed_dim;
  const int dh = cfg.hidden_dim;
  const int d = cfg.output_dim;

  std::vector<double> pooled(de, 0.0);
  if (!ids.empty()) {
    for (int id : ids) {
      const float* row = params.table.data() + static_cast<std::size_t>(id) * de;
      for (int i = 0; i < de; ++i) pooled[i] += row[i];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (int i = 0; i < de; ++i) pooled[i] *= inv;
  }
  for (double x : pooled) {
    if (!std::isfinite(x)) {
      throw DataError("encode: non-finite pooled activation (non-finite parameter?)");
    }
  }

  std::vector<double> hidden(dh);
  for (int j = 0; j < dh; ++j) {
    const float* row = params.w1.data() + static_cast<std::size_t>(j) * de;
    double acc = params.b1[j];
    for (int i = 0; i < de; ++i) acc += static_cast<double>(row[i]) * pooled[i];
    if (!std::isfinite(acc)) {
      throw DataError("encode: non-finite hidden pre-activation (non-finite parameter?)");
    }
    hidden[j] = std::tanh(acc);
  }

  Embedding out(d);
  for (int o = 0; o < d; ++o) {
    const float* row = params.w2.data() + static_cast<std::size_t>(o) * dh;
    double acc = params.b2[o];
    for (int j = 0; j < dh; ++j) acc += static_cast<double>(row[j]) * hidden[j];
    if (!std::isfinite(acc)) {
      throw DataError("encode: non-finite output (non-finite parameter?)");
    }
    out[o] = acc;
  }

  if (cache != nullptr) {
    cache->pooled = std::move(pooled);
    cache->hidden = std::move(hidden);
  }
  return out;
}

/// Reverse-mode gradients for one example, accumulated into `grads`.
/// `cache` must come from encode() on the same ids and params.
inline void backward_one(std::span<const int> ids,
                         std::span<const double> upstream,
                         const EncoderParams& params, const ForwardCache& cache,
                         ParamGradients& grads) {
  const auto& cfg = params.cfg;
  const int de = cfg.embed_dim;
  const int dh = cfg.hidden_dim;
  const int d = cfg.output_dim;
  if (upstream.size() != static_cast<std::size_t>(d)) {
    throw DataError("backward: upstream gradient has length " +
                    std::to_string(upstream.size()) + ", expected " +
                    std::to_string(d));
  }

  // Output layer.
  std::vector<double> dhidden(dh, 0.0);
  for (int o = 0; o < d; ++o) {
    const double u = upstream[o];
    grads.b2[o] += u;
    const float* w2_row = params.w2.data() + static_cast<std::size_t>(o) * dh;
    double* g2_row = grads.w2.data() + static_cast<std::size_t>(o) * dh;
    for (int j = 0; j < dh; ++j) {
      g2_row[j] += u * cache.hidden[j];
      dhidden[j] += u * static_cast<double>(w2_row[j]);
    }
  }

  // tanh layer.
  std::vector<double> dpooled(de, 0.0);
  for (int j = 0; j < dh; ++j) {
    const double dpre = dhidden[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
    grads.b1[j] += dpre;
    const float* w1_row = params.w1.data() + static_cast<std::size_t>(j) * de;
    double* g1_row = grads.w1.data() + static_cast<std::size_t>(j) * de;
    for (int i = 0; i < de; ++i) {
      g1_row[i] += dpre * cache.pooled[i];
      dpooled[i] += dpre * static_cast<double>(w1_row[i]);
    }
  }

  // Mean pool: each occurrence of a row receives dpooled / n.
  if (!ids.empty()) {
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (int id : ids) {
      double* row = grads.table.data() + static_cast<std::size_t>(id) * de;
      for (int i = 0; i < de; ++i) row[i] += dpooled[i] * inv;
    }
  }
  ++grads.examples;
}

/// Batch backward: contributions summed over examples in order.
inline ParamGradients backward(
    const std::vector<std::pair<std::vector<int>, Embedding>>& batch,
    const EncoderParams& params) {
  ParamGradients grads(params.cfg);
  for (const auto& [ids, upstream] : batch) {
    ForwardCache cache;
    encode(ids, params, &cache);
    backward_one(ids, upstream, params, cache, grads);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero. Draw
/// order is fixed (table, w1, w2) so a seed fully determines the parameters.
inline EncoderParams init_encoder(std::uint64_t seed,
                                  const EncoderConfig& cfg = {}) {
  EncoderParams params;
  params.cfg = cfg;
  params.seed = seed;
  params.version = 0;
  Rng rng(seed);

  auto fill_uniform = [&rng](std::vector<float>& dst, std::size_t n, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    dst.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
  };

  // The table is a linear map from one-hot token ids, so its fan-in is the
  // vocabulary size.
  const auto& t = cfg.tokenizer;
  fill_uniform(params.table,
               static_cast<std::size_t>(t.hash_vocab_size) * cfg.embed_dim,
               t.hash_vocab_size);
  fill_uniform(params.w1,
               static_cast<std::size_t>(cfg.hidden_dim) * cfg.embed_dim,
               cfg.embed_dim);
  params.b1.assign(cfg.hidden_dim, 0.0f);
  fill_uniform(params.w2,
               static_cast<std::size_t>(cfg.output_dim) * cfg.hidden_dim,
               cfg.hidden_dim);
  params.b2.assign(cfg.output_dim, 0.0f);
  return params;
}

inline Embedding encode_text(const std::string& text,
                             const EncoderParams& params) {
  return encode(tokenize(text, params.cfg.tokenizer), params);
}

}  // namespace dualfb
