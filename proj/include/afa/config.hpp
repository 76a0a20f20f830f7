// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "afa/adapters.hpp"
#include "afa/error.hpp"

namespace afa {

// Training configuration. Defaults follow the published setup (full-shot);
// see fixture() and few_shot() for the other presets.
struct TrainConfig {
  std::uint64_t seed = 0;

  // Backbone. d_in = 0 means "take it from the data".
  std::size_t d_in = 0;
  std::size_t d = 64;
  std::size_t layers = 4;

  // Per-task class counts; empty means "take them from the data".
  std::vector<std::size_t> class_counts;

  // ABFA
  std::size_t n_experts = 22;
  std::size_t top_k = 2;
  std::size_t n_heads = 4;
  std::size_t rank = 16;
  bool freeze_experts_after_task = false;

  // DDS
  std::size_t prototypes = 5;
  double threshold = 0.75;
  std::size_t kmeans_max_iters = 100;

  // Objectives and optimization
  double tau = 0.07;
  double tau_ce = 0.01;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t iterations_abfa = 1000;
  std::size_t iterations_affa = 1000;
  std::size_t n_shots = 0;  // 0 = use every training sample

  // Injection sites. Empty layer lists resolve to {L-1} for AFFA and all
  // layers for ABFA.
  std::vector<std::string> affa_branches = {"image", "text"};
  std::vector<std::string> abfa_branches = {"image", "text"};
  std::vector<std::size_t> affa_layers;
  std::vector<std::size_t> abfa_layers;

  static TrainConfig few_shot() {
    TrainConfig c;
    c.lr = 5e-4;
    c.batch_size = 32;
    c.iterations_abfa = 300;
    c.iterations_affa = 300;
    c.n_shots = 5;
    return c;
  }

  // Desk-scale preset used by the synthetic stream.
  static TrainConfig fixture() {
    TrainConfig c;
    c.d = 16;
    c.layers = 2;
    c.n_experts = 8;
    c.rank = 8;
    return c;
  }

  std::vector<std::size_t> resolved_affa_layers() const {
    if (!affa_layers.empty()) return affa_layers;
    if (layers == 0) return {};
    return {layers - 1};
  }

  std::vector<std::size_t> resolved_abfa_layers() const {
    if (!abfa_layers.empty()) return abfa_layers;
    std::vector<std::size_t> all(layers);
    for (std::size_t l = 0; l < layers; ++l) all[l] = l;
    return all;
  }

  static std::vector<SiteKey> sites(const std::vector<std::string>& branches,
                                    const std::vector<std::size_t>& layer_list) {
    std::vector<SiteKey> out;
    for (const auto& b : branches) {
      for (std::size_t l : layer_list) out.push_back({l, parse_branch(b)});
    }
    return out;
  }

  std::vector<SiteKey> affa_sites() const { return sites(affa_branches, resolved_affa_layers()); }
  std::vector<SiteKey> abfa_sites() const { return sites(abfa_branches, resolved_abfa_layers()); }

  void validate() const {
    require(d >= 1, "config: d must be positive");
    require(n_experts >= 1, "config: n_experts must be positive");
    require(top_k >= 1 && top_k <= n_experts, "config: top_k must be in [1, n_experts]");
    require(n_heads >= 1, "config: n_heads must be positive");
    require(rank >= 1, "config: rank must be positive");
    require(prototypes >= 1, "config: prototypes must be positive");
    require(threshold >= -1.0 && threshold <= 1.0, "config: threshold must be in [-1, 1]");
    require(tau > 0.0 && tau_ce > 0.0, "config: temperatures must be positive");
    require(lr > 0.0, "config: lr must be positive");
    require(batch_size >= 1, "config: batch_size must be positive");
    for (std::size_t l : resolved_affa_layers()) require(l < layers, "config: affa layer out of range");
    for (std::size_t l : resolved_abfa_layers()) require(l < layers, "config: abfa layer out of range");
    for (const auto& b : affa_branches) parse_branch(b);
    for (const auto& b : abfa_branches) parse_branch(b);
    for (std::size_t c : class_counts) require(c >= 1, "config: every task needs at least one class");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"d_in", c.d_in},
                     {"d", c.d},
                     {"layers", c.layers},
                     {"class_counts", c.class_counts},
                     {"n_experts", c.n_experts},
                     {"top_k", c.top_k},
                     {"n_heads", c.n_heads},
                     {"rank", c.rank},
                     {"freeze_experts_after_task", c.freeze_experts_after_task},
                     {"prototypes", c.prototypes},
                     {"threshold", c.threshold},
                     {"kmeans_max_iters", c.kmeans_max_iters},
                     {"tau", c.tau},
                     {"tau_ce", c.tau_ce},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"iterations_abfa", c.iterations_abfa},
                     {"iterations_affa", c.iterations_affa},
                     {"n_shots", c.n_shots},
                     {"affa_branches", c.affa_branches},
                     {"abfa_branches", c.abfa_branches},
                     {"affa_layers", c.resolved_affa_layers()},
                     {"abfa_layers", c.resolved_abfa_layers()}};
}

// Unknown keys are rejected so typos do not silently fall back to defaults.
// A "preset" key ("default", "few_shot", "fixture") selects the base values.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ContractError("config: expected a JSON object");
  const std::string preset = j.value("preset", std::string("default"));
  if (preset == "default") {
    c = TrainConfig{};
  } else if (preset == "few_shot") {
    c = TrainConfig::few_shot();
  } else if (preset == "fixture") {
    c = TrainConfig::fixture();
  } else {
    throw ContractError("config: unknown preset '" + preset + "'");
  }
  static const std::vector<std::string> known = {
      "preset", "seed", "d_in", "d", "layers", "class_counts", "n_experts", "top_k", "n_heads",
      "rank", "freeze_experts_after_task", "prototypes", "threshold", "kmeans_max_iters", "tau",
      "tau_ce", "lr", "batch_size", "iterations_abfa", "iterations_affa", "n_shots",
      "affa_branches", "abfa_branches", "affa_layers", "abfa_layers"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ContractError("config: unknown key '" + key + "'");
    }
  }
  try {
#define AFA_READ(field) if (j.contains(#field)) j.at(#field).get_to(c.field)
    AFA_READ(seed);
    AFA_READ(d_in);
    AFA_READ(d);
    AFA_READ(layers);
    AFA_READ(class_counts);
    AFA_READ(n_experts);
    AFA_READ(top_k);
    AFA_READ(n_heads);
    AFA_READ(rank);
    AFA_READ(freeze_experts_after_task);
    AFA_READ(prototypes);
    AFA_READ(threshold);
    AFA_READ(kmeans_max_iters);
    AFA_READ(tau);
    AFA_READ(tau_ce);
    AFA_READ(lr);
    AFA_READ(batch_size);
    AFA_READ(iterations_abfa);
    AFA_READ(iterations_affa);
    AFA_READ(n_shots);
    AFA_READ(affa_branches);
    AFA_READ(abfa_branches);
    AFA_READ(affa_layers);
    AFA_READ(abfa_layers);
#undef AFA_READ
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
}

}  // namespace afa
