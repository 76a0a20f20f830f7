// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "afa/adapters.hpp"
#include "afa/backbone.hpp"
#include "afa/config.hpp"
#include "afa/dds.hpp"
#include "afa/error.hpp"

namespace afa {

// Stream names for the seed tree rooted at TrainConfig::seed.
namespace seeds {
inline constexpr std::uint64_t kEncoder = 1;
inline constexpr std::uint64_t kAffa = 2;
inline constexpr std::uint64_t kExperts = 3;
inline constexpr std::uint64_t kBank = 4;
inline constexpr std::uint64_t kRouterBase = 1000;
inline constexpr std::uint64_t kAbfaBatchBase = 2000;
inline constexpr std::uint64_t kAffaBatchBase = 3000;
inline constexpr std::uint64_t kShotsBase = 4000;
}  // namespace seeds

struct ModelState {
  TrainConfig config;
  FrozenDualEncoder encoder;
  AffaState affa;
  MoEAdapterState abfa;
  TaskPrototypeBank bank;
  std::size_t trained_tasks = 0;

  std::size_t task_count() const { return config.class_counts.size(); }

  std::size_t class_offset(std::size_t task) const {
    require(task < config.class_counts.size(), "unknown task " + std::to_string(task));
    return std::accumulate(config.class_counts.begin(),
                           config.class_counts.begin() + static_cast<std::ptrdiff_t>(task),
                           std::size_t{0});
  }

  // Global text-table ids of a task's classes.
  std::vector<std::size_t> class_ids(std::size_t task) const {
    const std::size_t off = class_offset(task);
    std::vector<std::size_t> ids(config.class_counts[task]);
    std::iota(ids.begin(), ids.end(), off);
    return ids;
  }

  AdapterSet adapters() const { return {&affa, &abfa}; }
};

// The config must be fully resolved: d_in and class_counts set.
inline ModelState build_model(const TrainConfig& config) {
  config.validate();
  require(config.d_in >= 1, "build_model: d_in is unresolved");
  require(!config.class_counts.empty(), "build_model: class_counts is unresolved");
  const std::size_t total_classes =
      std::accumulate(config.class_counts.begin(), config.class_counts.end(), std::size_t{0});
  ModelState m;
  m.config = config;
  m.encoder = build_encoder(config.d_in, config.d, config.layers, total_classes,
                            Rng::derive_seed(config.seed, seeds::kEncoder));
  m.affa = AffaState(config.d, config.rank, config.affa_sites(),
                     Rng(Rng::derive_seed(config.seed, seeds::kAffa)));
  MoEConfig moe;
  moe.dim = config.d;
  moe.n_experts = config.n_experts;
  moe.n_heads = config.n_heads;
  moe.rank = config.rank;
  moe.top_k = config.top_k;
  m.abfa = MoEAdapterState(moe, config.abfa_sites(),
                           Rng(Rng::derive_seed(config.seed, seeds::kExperts)));
  m.bank = TaskPrototypeBank(config.prototypes, config.threshold,
                             Rng::derive_seed(config.seed, seeds::kBank), config.kmeans_max_iters);
  return m;
}

// Every parameter tensor in checkpoint order.
template <typename F>
void for_each_param(ModelState& m, F&& f) {
  for (auto& s : m.affa.sites()) {
    f(s.adapter.down);
    f(s.adapter.up);
  }
  for (auto& s : m.abfa.sites()) {
    for (auto& ex : s.experts) ex.for_each_param(f);
    for (auto& r : s.routers) f(r.weights);
  }
}

}  // namespace afa
