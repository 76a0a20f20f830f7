// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afa/afa.hpp"

namespace afa::test {

inline Vector random_vector(Rng& rng, std::size_t n, double stddev = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.normal(0.0, stddev);
  return v;
}

// The synthetic stream every end-to-end test uses.
inline const std::vector<TaskData>& fixture_tasks() {
  static const std::vector<TaskData> tasks = [] {
    const SyntheticData data = generate_synthetic(SyntheticSpec{});
    return split_by_task(data.train, data.test);
  }();
  return tasks;
}

// Fixture preset with short phases, for tests that check mechanics rather
// than accuracy.
inline TrainConfig quick_config() {
  TrainConfig cfg = TrainConfig::fixture();
  cfg.iterations_abfa = 30;
  cfg.iterations_affa = 10;
  return cfg;
}

inline std::vector<TaskData> first_tasks(std::size_t n) {
  const auto& all = fixture_tasks();
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("afa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(AFA_FIXTURE_DIR) / name;
}

}  // namespace afa::test
