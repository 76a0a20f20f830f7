// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Embedding dataset files and the synthetic multi-domain task generator.
//
// File layout (all little-endian):
//   bytes 0..7   "MTILDS1\0"
//   u32          d_in
//   u32          n
//   n records of { u16 task_id, u16 label, d_in x f32 }

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "afa/error.hpp"
#include "afa/linalg.hpp"

namespace afa {

struct Sample {
  std::uint16_t task_id = 0;
  std::uint16_t label = 0;
  Vector x;
};

struct EmbeddingDataset {
  std::uint32_t d_in = 0;
  std::vector<Sample> samples;
};

inline constexpr std::array<char, 8> kDatasetMagic = {'M', 'T', 'I', 'L', 'D', 'S', '1', '\0'};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const std::uint8_t* p) {
  const std::uint32_t bits = get_u32(p);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& ds) {
  require(ds.samples.size() <= std::numeric_limits<std::uint32_t>::max(), "dataset too large");
  std::vector<std::uint8_t> out(kDatasetMagic.begin(), kDatasetMagic.end());
  detail::put_u32(out, ds.d_in);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.samples.size()));
  for (const auto& s : ds.samples) {
    require(s.x.size() == ds.d_in, "dataset record has " + std::to_string(s.x.size()) +
                                       " features, header says " + std::to_string(ds.d_in));
    detail::put_u16(out, s.task_id);
    detail::put_u16(out, s.label);
    for (double v : s.x) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline EmbeddingDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || !std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), bytes.begin())) {
    throw FormatError("not an embedding dataset file (bad magic)");
  }
  EmbeddingDataset ds;
  ds.d_in = detail::get_u32(bytes.data() + 8);
  const std::uint32_t n = detail::get_u32(bytes.data() + 12);
  const std::size_t record = 4 + 4 * static_cast<std::size_t>(ds.d_in);
  const std::size_t expected = 16 + record * n;
  if (bytes.size() != expected) {
    throw FormatError("dataset size mismatch: header declares " + std::to_string(n) +
                      " records of d_in=" + std::to_string(ds.d_in) + " (" +
                      std::to_string(expected) + " bytes), file has " +
                      std::to_string(bytes.size()));
  }
  ds.samples.resize(n);
  const std::uint8_t* p = bytes.data() + 16;
  for (auto& s : ds.samples) {
    s.task_id = detail::get_u16(p);
    s.label = detail::get_u16(p + 2);
    s.x.resize(ds.d_in);
    for (std::uint32_t i = 0; i < ds.d_in; ++i) s.x[i] = detail::get_f32(p + 4 + 4 * i);
    p += record;
  }
  return ds;
}

inline void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(ds);
  detail::write_file(path, bytes.data(), bytes.size());
}

inline EmbeddingDataset read_dataset(const std::filesystem::path& path) {
  return decode_dataset(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Per-task views
// ---------------------------------------------------------------------------

struct TaskData {
  std::size_t task_id = 0;
  std::size_t num_classes = 0;
  std::string name;
  std::vector<Vector> train_x;
  std::vector<std::size_t> train_y;
  std::vector<Vector> test_x;
  std::vector<std::size_t> test_y;
};

// Groups train/test records by task id. Task ids must be 0..T-1 and each
// task's labels must be exactly 0..C_t-1 across its train records.
inline std::vector<TaskData> split_by_task(const EmbeddingDataset& train,
                                           const EmbeddingDataset& test) {
  if (!test.samples.empty() && train.d_in != test.d_in) {
    throw FormatError("train d_in " + std::to_string(train.d_in) + " != test d_in " +
                      std::to_string(test.d_in));
  }
  std::size_t n_tasks = 0;
  for (const auto& s : train.samples) n_tasks = std::max<std::size_t>(n_tasks, s.task_id + 1u);
  std::vector<TaskData> tasks(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    tasks[t].task_id = t;
    tasks[t].name = "task" + std::to_string(t);
  }
  for (const auto& s : train.samples) {
    tasks[s.task_id].train_x.push_back(s.x);
    tasks[s.task_id].train_y.push_back(s.label);
    tasks[s.task_id].num_classes = std::max<std::size_t>(tasks[s.task_id].num_classes, s.label + 1u);
  }
  for (auto& t : tasks) {
    if (t.train_x.empty()) {
      throw FormatError("task " + std::to_string(t.task_id) + " has no training records");
    }
    std::vector<bool> present(t.num_classes, false);
    for (std::size_t y : t.train_y) present[y] = true;
    if (std::find(present.begin(), present.end(), false) != present.end()) {
      throw FormatError("task " + std::to_string(t.task_id) +
                        " labels are not contiguous from 0");
    }
  }
  for (const auto& s : test.samples) {
    if (s.task_id >= n_tasks) {
      throw FormatError("test record for task " + std::to_string(s.task_id) +
                        " which has no training data");
    }
    if (s.label >= tasks[s.task_id].num_classes) {
      throw FormatError("test label " + std::to_string(s.label) + " outside task " +
                        std::to_string(s.task_id) + "'s label set");
    }
    tasks[s.task_id].test_x.push_back(s.x);
    tasks[s.task_id].test_y.push_back(s.label);
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Synthetic multi-domain stream
//
// A shared set of class directions z_c (norm class_scale) is moved into each
// task's domain by a seeded orthogonal rotation Q_t and offset o_t (norm
// task_offset): x = Q_t (z_c + sigma * eps) + o_t, eps ~ N(0, I).
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t tasks = 4;
  std::size_t classes_per_task = 5;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 20;
  std::size_t d_in = 32;
  double sigma = 0.1;
  double task_offset = 5.0;
  double class_scale = 1.0;
  std::uint64_t seed = 7;
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"tasks", s.tasks},
                     {"classes_per_task", s.classes_per_task},
                     {"train_per_class", s.train_per_class},
                     {"test_per_class", s.test_per_class},
                     {"d_in", s.d_in},
                     {"sigma", s.sigma},
                     {"task_offset", s.task_offset},
                     {"class_scale", s.class_scale},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  s.tasks = j.value("tasks", s.tasks);
  s.classes_per_task = j.value("classes_per_task", s.classes_per_task);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  s.d_in = j.value("d_in", s.d_in);
  s.sigma = j.value("sigma", s.sigma);
  s.task_offset = j.value("task_offset", s.task_offset);
  s.class_scale = j.value("class_scale", s.class_scale);
  s.seed = j.value("seed", s.seed);
}

struct SyntheticData {
  EmbeddingDataset train;
  EmbeddingDataset test;
  double min_mean_separation = 0.0;  // smallest distance between any two class means
  double required_separation = 0.0;  // 6 sigma
};

inline Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q = gaussian_matrix(n, n, 1.0, rng);
  // Modified Gram-Schmidt over rows.
  for (std::size_t i = 0; i < n; ++i) {
    auto ri = q.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      auto rj = q.row(j);
      const double p = dot(ri, rj);
      for (std::size_t c = 0; c < n; ++c) ri[c] -= p * rj[c];
    }
    const double nr = norm(ri);
    for (double& x : ri) x /= nr;
  }
  return q;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  require(spec.tasks >= 1 && spec.tasks <= 65535, "synthetic spec: tasks must be in [1, 65535]");
  require(spec.classes_per_task >= 1 && spec.classes_per_task <= 65535,
          "synthetic spec: classes_per_task must be in [1, 65535]");
  require(spec.train_per_class >= 1, "synthetic spec: train_per_class must be positive");
  require(spec.d_in >= 1, "synthetic spec: d_in must be positive");
  require(spec.sigma >= 0.0, "synthetic spec: sigma must be non-negative");

  Rng root(spec.seed);
  Rng class_rng = root.split(1);
  std::vector<Vector> class_dirs;
  for (std::size_t c = 0; c < spec.classes_per_task; ++c) {
    Vector z(spec.d_in);
    for (double& v : z) v = class_rng.normal();
    class_dirs.push_back(scaled(normalize(z), spec.class_scale));
  }

  SyntheticData out;
  out.train.d_in = out.test.d_in = static_cast<std::uint32_t>(spec.d_in);
  std::vector<Vector> means;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    Rng domain_rng = root.split(100 + t);
    const Matrix q = random_orthogonal(spec.d_in, domain_rng);
    Vector offset(spec.d_in);
    for (double& v : offset) v = domain_rng.normal();
    offset = scaled(normalize(offset), spec.task_offset);

    Rng sample_rng = root.split(1000 + t);
    for (std::size_t c = 0; c < spec.classes_per_task; ++c) {
      Vector mean = matvec(q, class_dirs[c]);
      axpy(1.0, offset, mean);
      means.push_back(mean);
      auto draw = [&](std::size_t count, EmbeddingDataset& ds) {
        for (std::size_t i = 0; i < count; ++i) {
          Vector local = class_dirs[c];
          for (double& v : local) v += spec.sigma * sample_rng.normal();
          Vector x = matvec(q, local);
          axpy(1.0, offset, x);
          for (double& v : x) v = static_cast<double>(static_cast<float>(v));
          ds.samples.push_back({static_cast<std::uint16_t>(t), static_cast<std::uint16_t>(c),
                                std::move(x)});
        }
      };
      draw(spec.train_per_class, out.train);
      draw(spec.test_per_class, out.test);
    }
  }

  out.required_separation = 6.0 * spec.sigma;
  out.min_mean_separation = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      Vector diff = means[a];
      axpy(-1.0, means[b], diff);
      out.min_mean_separation = std::min(out.min_mean_separation, norm(diff));
    }
  }
  if (means.size() > 1 && out.min_mean_separation < out.required_separation) {
    throw ContractError("synthetic spec rejected: closest class means are " +
                        std::to_string(out.min_mean_separation) + " apart, need >= 6 sigma = " +
                        std::to_string(out.required_separation));
  }
  return out;
}

inline nlohmann::json class_names_json(const EmbeddingDataset& ds) {
  std::map<std::pair<std::uint16_t, std::uint16_t>, bool> seen;
  for (const auto& s : ds.samples) seen[{s.task_id, s.label}] = true;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [key, _] : seen) {
    arr.push_back({{"task_id", key.first},
                   {"label", key.second},
                   {"name", "task" + std::to_string(key.first) + "_class" + std::to_string(key.second)}});
  }
  return arr;
}

}  // namespace afa
