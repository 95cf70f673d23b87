#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualfb/encoder.hpp"
#include "dualfb/errors.hpp"

namespace dualfb {

// Checkpoint container: 12-byte magic + u32 format version (16 bytes total),
// a length-prefixed JSON header, then raw little-endian f32 arrays in header
// order.
inline constexpr char kCheckpointMagic[12] = {'D', 'U', 'A', 'L', 'F', 'B',
                                             '.', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

namespace detail {

inline void write_exact(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw CheckpointError("checkpoint: write failed");
}

inline void read_exact(std::ifstream& in, void* data, std::size_t n,
                       const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw CheckpointError(std::string("checkpoint: truncated while reading ") +
                          what);
  }
}

inline void open_container(std::ifstream& in, const std::string& path,
                           nlohmann::json& header) {
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[12];
  read_exact(in, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + path);
  }
  std::uint32_t format = 0;
  read_exact(in, &format, sizeof(format), "format version");
  if (format != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint: format version " +
                          std::to_string(format) + " != supported " +
                          std::to_string(kCheckpointFormatVersion));
  }
  std::uint64_t header_len = 0;
  read_exact(in, &header_len, sizeof(header_len), "header length");
  if (header_len > (1ull << 30)) {
    throw CheckpointError("checkpoint: implausible header length");
  }
  std::string header_text(header_len, '\0');
  read_exact(in, header_text.data(), header_len, "header");
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") +
                          ex.what());
  }
}

inline void write_container(std::ofstream& out, const nlohmann::json& header,
                            const std::vector<const std::vector<float>*>& arrays) {
  write_exact(out, kCheckpointMagic, sizeof(kCheckpointMagic));
  write_exact(out, &kCheckpointFormatVersion, sizeof(kCheckpointFormatVersion));
  const std::string header_text = header.dump();
  const std::uint64_t header_len = header_text.size();
  write_exact(out, &header_len, sizeof(header_len));
  write_exact(out, header_text.data(), header_text.size());
  for (const auto* arr : arrays) {
    write_exact(out, arr->data(), arr->size() * sizeof(float));
  }
}

}  // namespace detail

inline void save_checkpoint(const EncoderParams& params,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");

  nlohmann::json header;
  header["kind"] = "encoder";
  header["hash_vocab_size"] = params.cfg.tokenizer.hash_vocab_size;
  header["max_length"] = params.cfg.tokenizer.max_length;
  header["embed_dim"] = params.cfg.embed_dim;
  header["hidden_dim"] = params.cfg.hidden_dim;
  header["output_dim"] = params.cfg.output_dim;
  header["seed"] = params.seed;
  header["params_version"] = params.version;
  header["tensors"] = nlohmann::json::array();
  auto tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    header["tensors"].push_back({{"name", EncoderParams::tensor_names[i]},
                                 {"size", tensors[i]->size()}});
  }
  detail::write_container(
      out, header,
      {&params.table, &params.w1, &params.b1, &params.w2, &params.b2});
}

inline EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  nlohmann::json header;
  detail::open_container(in, path, header);
  if (header.value("kind", std::string{}) != "encoder") {
    throw CheckpointError("checkpoint: " + path + " is not an encoder checkpoint");
  }

  EncoderParams params;
  try {
    params.cfg.tokenizer.hash_vocab_size = header.at("hash_vocab_size").get<int>();
    params.cfg.tokenizer.max_length = header.at("max_length").get<int>();
    params.cfg.embed_dim = header.at("embed_dim").get<int>();
    params.cfg.hidden_dim = header.at("hidden_dim").get<int>();
    params.cfg.output_dim = header.at("output_dim").get<int>();
    params.seed = header.at("seed").get<std::uint64_t>();
    params.version = header.at("params_version").get<std::int64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") + ex.what());
  }

  const auto sizes = params.tensor_sizes();
  const auto& jtensors = header.at("tensors");
  if (jtensors.size() != sizes.size()) {
    throw CheckpointError("checkpoint: tensor list has " +
                          std::to_string(jtensors.size()) + " entries, expected " +
                          std::to_string(sizes.size()));
  }
  auto tensors = params.tensors();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const std::string name = jtensors[i].at("name").get<std::string>();
    const std::size_t size = jtensors[i].at("size").get<std::size_t>();
    if (name != EncoderParams::tensor_names[i] || size != sizes[i]) {
      throw CheckpointError("checkpoint: tensor '" + name + "' of size " +
                            std::to_string(size) + " does not match config (" +
                            EncoderParams::tensor_names[i] + ", " +
                            std::to_string(sizes[i]) + ")");
    }
    tensors[i]->resize(size);
    detail::read_exact(in, tensors[i]->data(), size * sizeof(float),
                       name.c_str());
  }
  params.validate();
  return params;
}

// Offline-inspection dump of an entity index: same container layout, one f32
// matrix row per entity. Values are narrowed to f32 on save.
struct IndexDump {
  std::vector<std::string> entity_ids;
  std::vector<std::vector<float>> rows;
  std::int64_t params_version = -1;
};

inline void save_index_dump(const std::vector<std::string>& entity_ids,
                            const std::vector<std::vector<double>>& rows,
                            std::int64_t params_version,
                            const std::string& path) {
  if (entity_ids.size() != rows.size()) {
    throw CheckpointError("index dump: id/row count mismatch");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("index dump: cannot open " + path + " for writing");

  const std::size_t dim = rows.empty() ? 0 : rows.front().size();
  std::vector<float> matrix;
  matrix.reserve(rows.size() * dim);
  for (const auto& row : rows) {
    if (row.size() != dim) throw CheckpointError("index dump: ragged rows");
    for (double v : row) matrix.push_back(static_cast<float>(v));
  }

  nlohmann::json header;
  header["kind"] = "entity_index";
  header["entity_ids"] = entity_ids;
  header["dim"] = dim;
  header["params_version"] = params_version;
  detail::write_container(out, header, {&matrix});
}

inline IndexDump load_index_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  nlohmann::json header;
  detail::open_container(in, path, header);
  if (header.value("kind", std::string{}) != "entity_index") {
    throw CheckpointError("index dump: " + path + " is not an entity index dump");
  }
  IndexDump dump;
  std::size_t dim = 0;
  try {
    dump.entity_ids = header.at("entity_ids").get<std::vector<std::string>>();
    dim = header.at("dim").get<std::size_t>();
    dump.params_version = header.at("params_version").get<std::int64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("index dump: corrupt header: ") + ex.what());
  }
  dump.rows.resize(dump.entity_ids.size());
  for (auto& row : dump.rows) {
    row.resize(dim);
    detail::read_exact(in, row.data(), dim * sizeof(float), "index row");
  }
  return dump;
}

/// Load and reject checkpoints whose encoder shape differs from `expected`.
inline EncoderParams load_checkpoint(const std::string& path,
                                     const EncoderConfig& expected) {
  EncoderParams params = load_checkpoint(path);
  if (!(params.cfg == expected)) {
    throw CheckpointError(
        "checkpoint: " + path + " has shape (vocab " +
        std::to_string(params.cfg.tokenizer.hash_vocab_size) + ", d_e " +
        std::to_string(params.cfg.embed_dim) + ", d_h " +
        std::to_string(params.cfg.hidden_dim) + ", d " +
        std::to_string(params.cfg.output_dim) + "), expected (vocab " +
        std::to_string(expected.tokenizer.hash_vocab_size) + ", d_e " +
        std::to_string(expected.embed_dim) + ", d_h " +
        std::to_string(expected.hidden_dim) + ", d " +
        std::to_string(expected.output_dim) + ")");
  }
  return params;
}

}  // namespace dualfb
