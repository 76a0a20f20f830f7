// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint directory:
//   manifest.json  format version, config echo, tensor table, checksums
//   tensors.bin    every tensor as little-endian f32, in table order
//
// The frozen encoder is not stored; it is rebuilt from the config seed and
// checked against the recorded fingerprint.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "afa/config.hpp"
#include "afa/data.hpp"
#include "afa/error.hpp"
#include "afa/model.hpp"

namespace afa {

inline constexpr int kCheckpointVersion = 1;

inline std::uint32_t crc32_of(const void* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::uint32_t crc32_of(const std::string& s) { return crc32_of(s.data(), s.size()); }

namespace detail {

struct TensorRef {
  std::string name;
  const Matrix* value;
  bool frozen;
};

inline std::string prototype_name(std::size_t task) {
  return "dds.task" + std::to_string(task) + ".prototypes";
}

inline Matrix stack_rows(const std::vector<Vector>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// The checksum covers the manifest with its own checksum field removed.
inline std::uint32_t manifest_checksum(nlohmann::json manifest) {
  manifest.erase("manifest_crc32");
  return crc32_of(manifest.dump());
}

}  // namespace detail

inline void save_checkpoint(ModelState& state, const std::filesystem::path& dir) {
  require(state.abfa.task_count() == state.trained_tasks,
          "save_checkpoint: a task is mid-training (router count differs from trained tasks)");
  std::vector<Matrix> prototypes;
  for (std::size_t t = 0; t < state.bank.task_count(); ++t) {
    prototypes.push_back(detail::stack_rows(state.bank.prototypes(t)));
  }
  std::vector<detail::TensorRef> tensors;
  for_each_param(state, [&](Param& p) { tensors.push_back({p.name(), &p.value(), p.frozen()}); });
  for (std::size_t t = 0; t < prototypes.size(); ++t) {
    tensors.push_back({detail::prototype_name(t), &prototypes[t], true});
  }

  std::vector<std::uint8_t> payload;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : tensors) {
    const std::size_t offset = payload.size();
    for (double x : t.value->data()) {
      const float f = static_cast<float>(x);
      if (static_cast<double>(f) != x) {
        throw ContractError("save_checkpoint: tensor '" + t.name +
                            "' holds a value that is not exactly representable as f32");
      }
      detail::put_f32(payload, f);
    }
    table.push_back({{"name", t.name},
                     {"shape", {t.value->rows(), t.value->cols()}},
                     {"dtype", "f32"},
                     {"offset", offset},
                     {"length", payload.size() - offset},
                     {"frozen", t.frozen}});
  }

  nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                             {"config", state.config},
                             {"trained_tasks", state.trained_tasks},
                             {"encoder_fingerprint", detail::hex64(state.encoder.fingerprint())},
                             {"tensors", table},
                             {"payload_crc32", crc32_of(payload.data(), payload.size())}};
  manifest["manifest_crc32"] = detail::manifest_checksum(manifest);

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());
  detail::write_file(dir / "tensors.bin", payload.data(), payload.size());
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline ModelState load_checkpoint(const std::filesystem::path& dir) {
  const std::string text = detail::read_text(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_object() || !manifest.contains("format_version")) {
    throw FormatError("checkpoint manifest has no format_version");
  }
  if (manifest["format_version"] != kCheckpointVersion) {
    throw VersionError("checkpoint format_version " + manifest["format_version"].dump() +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (!manifest.contains("manifest_crc32") ||
      manifest["manifest_crc32"] != detail::manifest_checksum(manifest)) {
    throw ChecksumError("checkpoint manifest checksum mismatch in '" + dir.string() + "'");
  }
  const std::vector<std::uint8_t> payload = detail::read_file(dir / "tensors.bin");

  try {
    if (manifest.at("payload_crc32").get<std::uint32_t>() != crc32_of(payload.data(), payload.size())) {
      throw ChecksumError("checkpoint payload checksum mismatch in '" + dir.string() + "'");
    }
    TrainConfig cfg = manifest.at("config").get<TrainConfig>();
    ModelState state = build_model(cfg);
    if (manifest.at("encoder_fingerprint").get<std::string>() !=
        detail::hex64(state.encoder.fingerprint())) {
      throw FormatError("checkpoint encoder fingerprint does not match the rebuilt encoder");
    }
    const std::size_t trained = manifest.at("trained_tasks").get<std::size_t>();
    if (trained > state.task_count()) {
      throw FormatError("checkpoint trained_tasks exceeds the configured task count");
    }
    state.abfa.restore_routers(trained);
    state.trained_tasks = trained;

    const auto& table = manifest.at("tensors");
    std::size_t next = 0;
    auto read_entry = [&](const std::string& name, std::size_t rows, std::size_t cols,
                          bool* frozen) {
      if (next >= table.size()) throw FormatError("checkpoint is missing tensor '" + name + "'");
      const auto& e = table[next++];
      if (e.at("name").get<std::string>() != name) {
        throw FormatError("checkpoint tensor " + std::to_string(next - 1) + " is '" +
                          e.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape != std::vector<std::size_t>{rows, cols} || e.at("dtype") != "f32") {
        throw FormatError("checkpoint tensor '" + name + "' has the wrong shape or dtype");
      }
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t length = e.at("length").get<std::size_t>();
      if (length != rows * cols * 4 || offset + length > payload.size()) {
        throw FormatError("checkpoint tensor '" + name + "' lies outside tensors.bin");
      }
      Matrix m(rows, cols);
      for (std::size_t i = 0; i < rows * cols; ++i) {
        m.data()[i] = static_cast<double>(detail::get_f32(payload.data() + offset + 4 * i));
      }
      *frozen = e.at("frozen").get<bool>();
      return m;
    };

    for_each_param(state, [&](Param& p) {
      bool frozen = false;
      Matrix m = read_entry(p.name(), p.value().rows(), p.value().cols(), &frozen);
      p.set_frozen(false);
      p.mutable_value() = std::move(m);
      p.set_frozen(frozen);
    });
    std::vector<std::vector<Vector>> protos;
    for (std::size_t t = 0; t < trained; ++t) {
      bool frozen = false;
      Matrix m = read_entry(detail::prototype_name(t), cfg.prototypes, cfg.d, &frozen);
      std::vector<Vector> rows;
      for (std::size_t i = 0; i < m.rows(); ++i) rows.emplace_back(m.row(i).begin(), m.row(i).end());
      protos.push_back(std::move(rows));
    }
    if (next != table.size()) throw FormatError("checkpoint has unexpected extra tensors");
    state.bank.restore(std::move(protos));
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest is malformed: " + std::string(e.what()));
  } catch (const ContractError& e) {
    throw FormatError("checkpoint describes an invalid model: " + std::string(e.what()));
  }
}

}  // namespace afa
