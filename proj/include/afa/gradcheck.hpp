// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "afa/adapters.hpp"
#include "afa/backbone.hpp"
#include "afa/engine.hpp"

namespace afa {

// A tiny but complete model: ABFA at every layer of both branches, AFFA at
// the last layer of both branches, a frozen router for task 0 and a trainable
// router for task 1. Up-projections are randomized so no gradient is
// trivially zero.
struct GradcheckProblem {
  FrozenDualEncoder encoder;
  AffaState affa;
  MoEAdapterState abfa;
  Batch batch;
  std::vector<std::size_t> class_ids;
  std::size_t active_task = 1;
  double tau = 1.0;
  double tau_ce = 1.0;

  AdapterSet adapters() const { return {&affa, &abfa}; }

  static GradcheckProblem tiny(std::uint64_t seed) {
    constexpr std::size_t d_in = 6, d = 8, layers = 2, n_experts = 3, heads = 2, rank = 2, k = 2;
    constexpr std::size_t n_classes = 3, n = 4;
    Rng rng(seed);
    GradcheckProblem p;
    p.encoder = build_encoder(d_in, d, layers, n_classes, rng.split(1).next_u64());
    std::vector<SiteKey> all_sites, last_sites;
    for (Branch b : {Branch::Image, Branch::Text}) {
      for (std::size_t l = 0; l < layers; ++l) all_sites.push_back({l, b});
      last_sites.push_back({layers - 1, b});
    }
    p.affa = AffaState(d, rank, last_sites, rng.split(2));
    p.abfa = MoEAdapterState({d, n_experts, heads, rank, k}, all_sites, rng.split(3));
    p.abfa.expand_router(rng.split(4).next_u64());
    p.abfa.freeze_router(0);
    p.abfa.expand_router(rng.split(5).next_u64());

    Rng fill = rng.split(6);
    for (auto& s : p.affa.sites()) {
      for (double& x : s.adapter.up.mutable_value().data()) x = fill.normal(0.0, 0.5);
    }
    for (auto& s : p.abfa.sites()) {
      for (auto& ex : s.experts) {
        for (auto& h : ex.heads) {
          for (double& x : h.mutable_value().data()) x = fill.normal(0.0, 0.5);
        }
      }
      for (double& x : s.routers[1].weights.mutable_value().data()) x = fill.normal(0.0, 1.0);
    }

    Rng data = rng.split(7);
    for (std::size_t i = 0; i < n; ++i) {
      Vector x(d_in);
      for (double& v : x) v = data.normal();
      p.batch.images.push_back(std::move(x));
      p.batch.labels.push_back(i % n_classes);
    }
    p.batch.task_id = p.active_task;
    p.class_ids = {0, 1, 2};
    return p;
  }
};

// Checks every trainable group: the ABFA groups (expert A, B_i, head gate,
// active router) through the cross-entropy objective on the Abfa path, and
// the AFFA groups through the contrastive objective on the Affa path.
// Frozen parameters are never perturbed and never reported.
inline GradcheckReport gradcheck(GradcheckProblem& p, double step = 1e-3, double tol = 1e-4) {
  std::vector<Param*> abfa_params;
  for (auto& s : p.abfa.sites()) {
    for (auto& ex : s.experts) {
      ex.for_each_param([&](Param& q) {
        if (!q.frozen()) abfa_params.push_back(&q);
      });
    }
    for (auto& r : s.routers) {
      if (!r.frozen()) abfa_params.push_back(&r.weights);
    }
  }
  std::vector<Param*> affa_params;
  for (auto& s : p.affa.sites()) {
    affa_params.push_back(&s.adapter.down);
    affa_params.push_back(&s.adapter.up);
  }

  LossFn abfa = [&](GradientTape* tape, std::vector<std::size_t>* routing) {
    return abfa_batch_loss(p.encoder, p.adapters(), p.batch, p.class_ids, p.active_task,
                           p.tau_ce, tape, routing);
  };
  LossFn affa = [&](GradientTape* tape, std::vector<std::size_t>*) {
    return affa_batch_loss(p.encoder, p.adapters(), p.batch, p.class_ids, p.tau, tape);
  };

  GradcheckReport report = gradcheck_params(affa_params, affa, step, tol);
  GradcheckReport abfa_report = gradcheck_params(abfa_params, abfa, step, tol);
  report.groups.insert(report.groups.end(), abfa_report.groups.begin(), abfa_report.groups.end());
  return report;
}

}  // namespace afa
