// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// The sequential protocol. Per task: fit the selector's prototypes on frozen
// features, expand a router, train the MoE adapter with cross-entropy, freeze
// the router, then train the shared LoRA with the contrastive objective.

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "afa/config.hpp"
#include "afa/data.hpp"
#include "afa/dds.hpp"
#include "afa/engine.hpp"
#include "afa/error.hpp"
#include "afa/eval.hpp"
#include "afa/model.hpp"
#include "afa/objectives.hpp"

namespace afa {

struct LogRecord {
  std::string phase;  // "abfa" or "affa"
  std::size_t task = 0;
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<LogRecord> records;

  void append(const TrainLog& other) {
    records.insert(records.end(), other.records.begin(), other.records.end());
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : records) {
      out += nlohmann::json{{"phase", r.phase}, {"task", r.task}, {"step", r.step}, {"loss", r.loss}}
                 .dump();
      out += "\n";
    }
    return out;
  }
};

namespace detail {

// A step may differentiate into one adapter family only.
inline void check_single_family(const GradientTape& tape, const std::string& family) {
  for (const auto& e : tape.entries()) {
    if (e.param->name().rfind(family + ".", 0) != 0) {
      throw ContractError("training step for '" + family + "' would also update '" +
                          e.param->name() + "'");
    }
  }
}

inline void round_tracked(GradientTape& tape) {
  for (auto& e : tape.entries()) round_to_f32(e.param->mutable_value());
}

inline Batch sample_batch(Rng& rng, const std::vector<Vector>& xs,
                          const std::vector<std::size_t>& ys, std::size_t batch_size,
                          std::size_t task_id) {
  Batch b;
  b.task_id = task_id;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t n = rng.index(xs.size());
    b.images.push_back(xs[n]);
    b.labels.push_back(ys[n]);
  }
  return b;
}

}  // namespace detail

// Keeps n_shots samples per class (all of them if the class is smaller),
// chosen by a seeded partial shuffle; original order is preserved.
inline void subsample_shots(std::vector<Vector>& xs, std::vector<std::size_t>& ys,
                            std::size_t num_classes, std::size_t n_shots, std::uint64_t seed) {
  if (n_shots == 0) return;
  Rng rng(seed);
  std::vector<bool> keep(xs.size(), false);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (ys[i] == c) idx.push_back(i);
    }
    const std::size_t take = std::min(n_shots, idx.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
      keep[idx[i]] = true;
    }
  }
  std::vector<Vector> kx;
  std::vector<std::size_t> ky;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!keep[i]) continue;
    kx.push_back(std::move(xs[i]));
    ky.push_back(ys[i]);
  }
  xs = std::move(kx);
  ys = std::move(ky);
}

// Trainable ABFA tensors for the task whose router is currently open.
inline void track_abfa(ModelState& state, std::size_t task, GradientTape& tape) {
  for (auto& s : state.abfa.sites()) {
    for (auto& ex : s.experts) {
      ex.for_each_param([&](Param& p) {
        if (!p.frozen()) tape.track(p);
      });
    }
    tape.track(s.routers.at(task).weights);
  }
}

inline void track_affa(ModelState& state, GradientTape& tape) {
  for (auto& s : state.affa.sites()) {
    tape.track(s.adapter.down);
    tape.track(s.adapter.up);
  }
}

inline TrainLog train_task(ModelState& state, const TaskData& data) {
  const TrainConfig& cfg = state.config;
  const std::size_t t = state.trained_tasks;
  require(data.task_id == t, "train_task: expected task " + std::to_string(t) + ", got task " +
                                 std::to_string(data.task_id));
  require(t < state.task_count(), "train_task: task " + std::to_string(t) +
                                      " is beyond the configured " +
                                      std::to_string(state.task_count()) + " tasks");
  require(data.num_classes == cfg.class_counts[t],
          "train_task: task " + std::to_string(t) + " has " + std::to_string(data.num_classes) +
              " classes, config says " + std::to_string(cfg.class_counts[t]));
  require(!data.train_x.empty(), "train_task: empty training set");

  std::vector<Vector> xs = data.train_x;
  std::vector<std::size_t> ys = data.train_y;
  subsample_shots(xs, ys, data.num_classes, cfg.n_shots,
                  Rng::derive_seed(cfg.seed, seeds::kShotsBase + t));
  const std::vector<std::size_t> class_ids = state.class_ids(t);
  TrainLog log;

  fit_task_prototypes(state.bank, t, xs, state.encoder);

  const std::size_t router = state.abfa.expand_router(Rng::derive_seed(cfg.seed, seeds::kRouterBase + t));
  require(router == t, "train_task: router stack is out of step with the task stream");

  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  {
    AdamWState opt(opt_cfg);
    GradientTape tape;
    track_abfa(state, t, tape);
    detail::check_single_family(tape, "abfa");
    Rng rng(Rng::derive_seed(cfg.seed, seeds::kAbfaBatchBase + t));
    for (std::size_t step = 0; step < cfg.iterations_abfa; ++step) {
      const Batch b = detail::sample_batch(rng, xs, ys, cfg.batch_size, t);
      tape.zero();
      const double loss =
          abfa_batch_loss(state.encoder, state.adapters(), b, class_ids, t, cfg.tau_ce, &tape);
      opt.step(tape);
      detail::round_tracked(tape);
      log.records.push_back({"abfa", t, step, loss});
    }
  }

  state.abfa.freeze_router(t);
  if (cfg.freeze_experts_after_task) state.abfa.freeze_experts();

  {
    AdamWState opt(opt_cfg);
    GradientTape tape;
    track_affa(state, tape);
    detail::check_single_family(tape, "affa");
    Rng rng(Rng::derive_seed(cfg.seed, seeds::kAffaBatchBase + t));
    for (std::size_t step = 0; step < cfg.iterations_affa; ++step) {
      const Batch b = detail::sample_batch(rng, xs, ys, cfg.batch_size, t);
      tape.zero();
      const double loss =
          affa_batch_loss(state.encoder, state.adapters(), b, class_ids, cfg.tau, &tape);
      opt.step(tape);
      detail::round_tracked(tape);
      log.records.push_back({"affa", t, step, loss});
    }
  }

  ++state.trained_tasks;
  return log;
}

// Fills d_in and class_counts from the data when unset; checks them otherwise.
inline TrainConfig resolve_config(TrainConfig cfg, const std::vector<TaskData>& tasks) {
  require(!tasks.empty(), "resolve_config: no tasks");
  const std::size_t d_in = tasks.front().train_x.front().size();
  if (cfg.d_in == 0) cfg.d_in = d_in;
  require(cfg.d_in == d_in, "config: d_in " + std::to_string(cfg.d_in) + " but data has " +
                                std::to_string(d_in));
  std::vector<std::size_t> counts;
  for (const auto& t : tasks) counts.push_back(t.num_classes);
  if (cfg.class_counts.empty()) cfg.class_counts = counts;
  require(cfg.class_counts == counts, "config: class_counts disagree with the data");
  cfg.validate();
  return cfg;
}

struct StreamResult {
  ModelState state;
  AccuracyMatrix matrix;
  TrainLog log;
};

// Called after each task has been trained and its matrix row filled.
using TaskHook = std::function<void(const ModelState&, std::size_t task)>;

inline StreamResult run_stream(const TrainConfig& config, const std::vector<TaskData>& tasks,
                               std::size_t threads = 1, const TaskHook& hook = {}) {
  const TrainConfig cfg = resolve_config(config, tasks);
  for (const auto& t : tasks) {
    require(!t.test_x.empty(), "run_stream: task " + std::to_string(t.task_id) +
                                   " has no test samples");
  }
  StreamResult out{build_model(cfg), AccuracyMatrix(), TrainLog()};
  std::vector<std::string> names;
  for (const auto& t : tasks) names.push_back(t.name);
  out.matrix = AccuracyMatrix(names);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.log.append(train_task(out.state, tasks[i]));
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      out.matrix.set(i, j, evaluate_task(out.state, tasks[j].test_x, tasks[j].test_y,
                                         out.state.class_ids(j), threads));
    }
    if (hook) hook(out.state, i);
  }
  return out;
}

}  // namespace afa
