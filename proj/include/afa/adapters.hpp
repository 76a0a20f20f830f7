// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Trainable adapter machinery.
//
//  * LoraAdapter: the task-shared low-rank adapter, y = B A e.
//  * MultiHeadExpert: one down-projection A, M up-projections B_i blended by a
//    softmax head gate, y = sum_i b_i B_i A e with b = softmax(G e).
//  * TaskRouter: bias-free linear gate over N_E experts, one per task, frozen
//    once its task is done.
//  * MoEAdapterState: per injection site, a shared expert pool plus the
//    growing router stack. Only the top-k experts chosen by the router are
//    evaluated; masked weights are not renormalized.
//
// Every forward has a matching *_backward that recomputes the forward
// intermediates from the same input, writes parameter gradients into the
// tape for tracked parameters, and returns the gradient with respect to the
// input embedding.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "afa/error.hpp"
#include "afa/linalg.hpp"
#include "afa/tape.hpp"

namespace afa {

enum class Branch : std::uint8_t { Image = 0, Text = 1 };

inline const char* branch_name(Branch b) { return b == Branch::Image ? "image" : "text"; }

inline Branch parse_branch(const std::string& s) {
  if (s == "image") return Branch::Image;
  if (s == "text") return Branch::Text;
  throw ContractError("unknown branch '" + s + "' (expected image or text)");
}

struct SiteKey {
  std::size_t layer = 0;
  Branch branch = Branch::Image;

  std::string prefix() const { return std::string(branch_name(branch)) + ".l" + std::to_string(layer); }
  friend bool operator==(const SiteKey&, const SiteKey&) = default;
};

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

struct LoraAdapter {
  Param down;  // A: r x d
  Param up;    // B: d x r

  static LoraAdapter create(const std::string& prefix, std::size_t dim, std::size_t rank,
                            Rng& rng) {
    require(dim >= 1 && rank >= 1, "LoraAdapter: dim and rank must be positive");
    Matrix a = gaussian_matrix(rank, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    round_to_f32(a);
    return {Param(prefix + ".A", std::move(a)), Param(prefix + ".B", Matrix(dim, rank))};
  }

  std::size_t rank() const { return down.value().rows(); }
  std::size_t dim() const { return down.value().cols(); }
};

inline Vector lora_forward(const LoraAdapter& ad, std::span<const double> e) {
  require(e.size() == ad.dim(), "lora_forward: input dim " + std::to_string(e.size()) +
                                    " != adapter dim " + std::to_string(ad.dim()));
  return matvec(ad.up.value(), matvec(ad.down.value(), e));
}

inline Vector lora_backward(const LoraAdapter& ad, std::span<const double> e,
                            std::span<const double> grad_out, GradientTape* tape) {
  const Vector z = matvec(ad.down.value(), e);
  const Vector dz = matvec_transposed(ad.up.value(), grad_out);
  if (tape) {
    if (Matrix* gb = tape->grad_for(ad.up)) add_outer(*gb, grad_out, z);
    if (Matrix* ga = tape->grad_for(ad.down)) add_outer(*ga, dz, e);
  }
  return matvec_transposed(ad.down.value(), dz);
}

// ---------------------------------------------------------------------------
// Multi-head LoRA expert
// ---------------------------------------------------------------------------

struct MultiHeadExpert {
  Param down;               // A: r x d
  std::vector<Param> heads; // B_i: d x r
  Param gate;               // G: M x d

  static MultiHeadExpert create(const std::string& prefix, std::size_t dim, std::size_t rank,
                                std::size_t n_heads, Rng& rng) {
    require(dim >= 1 && rank >= 1 && n_heads >= 1,
            "MultiHeadExpert: dim, rank and head count must be positive");
    const double std_in = 1.0 / std::sqrt(static_cast<double>(dim));
    MultiHeadExpert ex;
    Matrix a = gaussian_matrix(rank, dim, std_in, rng);
    round_to_f32(a);
    ex.down = Param(prefix + ".A", std::move(a));
    for (std::size_t i = 0; i < n_heads; ++i) {
      ex.heads.emplace_back(prefix + ".B" + std::to_string(i), Matrix(dim, rank));
    }
    // Zero heads start identical; a random gate breaks the symmetry between them.
    Matrix g = gaussian_matrix(n_heads, dim, std_in, rng);
    round_to_f32(g);
    ex.gate = Param(prefix + ".gate", std::move(g));
    return ex;
  }

  std::size_t dim() const { return down.value().cols(); }
  std::size_t rank() const { return down.value().rows(); }
  std::size_t head_count() const { return heads.size(); }

  template <typename F>
  void for_each_param(F&& f) {
    f(down);
    for (auto& h : heads) f(h);
    f(gate);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    f(down);
    for (const auto& h : heads) f(h);
    f(gate);
  }
};

inline Vector head_weights(const MultiHeadExpert& ex, std::span<const double> e) {
  return softmax(matvec(ex.gate.value(), e));
}

inline Vector expert_forward(const MultiHeadExpert& ex, std::span<const double> e) {
  require(e.size() == ex.dim(), "expert_forward: input dim " + std::to_string(e.size()) +
                                    " != expert dim " + std::to_string(ex.dim()));
  const Vector z = matvec(ex.down.value(), e);
  const Vector b = head_weights(ex, e);
  Vector out(ex.dim(), 0.0);
  for (std::size_t i = 0; i < ex.heads.size(); ++i) {
    axpy(b[i], matvec(ex.heads[i].value(), z), out);
  }
  return out;
}

inline Vector expert_backward(const MultiHeadExpert& ex, std::span<const double> e,
                              std::span<const double> grad_out, GradientTape* tape) {
  const Vector z = matvec(ex.down.value(), e);
  const Vector b = head_weights(ex, e);
  const std::size_t m = ex.heads.size();

  Vector db(m, 0.0);
  Vector dz(z.size(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix& bi = ex.heads[i].value();
    db[i] = dot(grad_out, matvec(bi, z));
    axpy(b[i], matvec_transposed(bi, grad_out), dz);
    if (tape) {
      if (Matrix* g = tape->grad_for(ex.heads[i])) add_outer(*g, grad_out, z, b[i]);
    }
  }
  const double mean_db = dot(b, db);
  Vector dlogits(m);
  for (std::size_t i = 0; i < m; ++i) dlogits[i] = b[i] * (db[i] - mean_db);

  if (tape) {
    if (Matrix* g = tape->grad_for(ex.gate)) add_outer(*g, dlogits, e);
    if (Matrix* g = tape->grad_for(ex.down)) add_outer(*g, dz, e);
  }
  Vector de = matvec_transposed(ex.down.value(), dz);
  axpy(1.0, matvec_transposed(ex.gate.value(), dlogits), de);
  return de;
}

// ---------------------------------------------------------------------------
// Routers and the MoE adapter
// ---------------------------------------------------------------------------

struct TaskRouter {
  Param weights;  // N_E x d
  std::size_t task_id = 0;

  bool frozen() const { return weights.frozen(); }
};

// Sparse gate weights: top-k of softmax(R e), not renormalized.
inline Vector route(const TaskRouter& router, std::span<const double> e, std::size_t k) {
  const Matrix& w = router.weights.value();
  require(e.size() == w.cols(), "route: input dim " + std::to_string(e.size()) +
                                    " != router dim " + std::to_string(w.cols()));
  require(k >= 1 && k <= w.rows(), "route: k=" + std::to_string(k) + " outside [1, " +
                                       std::to_string(w.rows()) + "]");
  return topk_mask(softmax(matvec(w, e)), k);
}

struct MoESite {
  SiteKey key;
  std::vector<MultiHeadExpert> experts;
  std::deque<TaskRouter> routers;
};

struct MoEConfig {
  std::size_t dim = 0;
  std::size_t n_experts = 22;
  std::size_t n_heads = 4;
  std::size_t rank = 16;
  std::size_t top_k = 2;
};

class MoEAdapterState {
 public:
  MoEAdapterState() = default;

  MoEAdapterState(const MoEConfig& cfg, const std::vector<SiteKey>& sites, Rng rng) : cfg_(cfg) {
    require(cfg.dim >= 1, "MoEAdapterState: dim must be positive");
    require(cfg.n_experts >= 1, "MoEAdapterState: need at least one expert");
    require(cfg.top_k >= 1 && cfg.top_k <= cfg.n_experts,
            "MoEAdapterState: k=" + std::to_string(cfg.top_k) + " outside [1, N_E=" +
                std::to_string(cfg.n_experts) + "]");
    for (std::size_t s = 0; s < sites.size(); ++s) {
      Rng site_rng = rng.split(s);
      MoESite site;
      site.key = sites[s];
      for (std::size_t j = 0; j < cfg.n_experts; ++j) {
        site.experts.push_back(MultiHeadExpert::create(
            "abfa." + sites[s].prefix() + ".e" + std::to_string(j), cfg.dim, cfg.rank,
            cfg.n_heads, site_rng));
      }
      sites_.push_back(std::move(site));
    }
  }

  const MoEConfig& config() const { return cfg_; }
  std::size_t top_k() const { return cfg_.top_k; }

  std::vector<MoESite>& sites() { return sites_; }
  const std::vector<MoESite>& sites() const { return sites_; }

  const MoESite* find(std::size_t layer, Branch branch) const {
    for (const auto& s : sites_) {
      if (s.key.layer == layer && s.key.branch == branch) return &s;
    }
    return nullptr;
  }

  std::size_t task_count() const { return task_count_; }

  // Appends a fresh, trainable router for a new task at every site.
  std::size_t expand_router(std::uint64_t seed) {
    for (const auto& s : sites_) {
      for (const auto& r : s.routers) {
        if (!r.frozen()) {
          throw ContractError("expand_router: router for task " + std::to_string(r.task_id) +
                              " at " + s.key.prefix() + " is not frozen");
        }
      }
    }
    const std::size_t task = task_count_;
    Rng rng(seed);
    const double std_in = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      Rng site_rng = rng.split(i);
      Matrix w = gaussian_matrix(cfg_.n_experts, cfg_.dim, std_in, site_rng);
      round_to_f32(w);
      sites_[i].routers.push_back(
          {Param("abfa." + sites_[i].key.prefix() + ".router" + std::to_string(task), std::move(w)),
           task});
    }
    ++task_count_;
    return task;
  }

  void freeze_router(std::size_t task_id) {
    require(task_id < task_count_, "freeze_router: unknown task " + std::to_string(task_id));
    for (auto& s : sites_) {
      TaskRouter& r = s.routers[task_id];
      if (r.frozen()) {
        throw ContractError("freeze_router: router for task " + std::to_string(task_id) +
                            " is already frozen");
      }
    }
    for (auto& s : sites_) s.routers[task_id].weights.freeze();
  }

  bool router_frozen(std::size_t task_id) const {
    require(task_id < task_count_, "router_frozen: unknown task " + std::to_string(task_id));
    return std::all_of(sites_.begin(), sites_.end(),
                       [&](const MoESite& s) { return s.routers[task_id].frozen(); });
  }

  void freeze_experts() {
    for (auto& s : sites_) {
      for (auto& ex : s.experts) ex.for_each_param([](Param& p) { p.freeze(); });
    }
  }

  // Checkpoint restore: rebuilds the router stack without the freeze protocol.
  void restore_routers(std::size_t count) {
    for (auto& s : sites_) {
      s.routers.clear();
      for (std::size_t t = 0; t < count; ++t) {
        s.routers.push_back(
            {Param("abfa." + s.key.prefix() + ".router" + std::to_string(t),
                   Matrix(cfg_.n_experts, cfg_.dim)),
             t});
      }
    }
    task_count_ = count;
  }

 private:
  MoEConfig cfg_;
  std::vector<MoESite> sites_;
  std::size_t task_count_ = 0;
};

// Top-k active experts for one routing decision, ascending expert index, with
// their (unrenormalized) softmax weights.
struct Gate {
  Vector probs;                      // full softmax over N_E
  std::vector<std::size_t> active;   // ascending
};

inline Gate compute_gate(const TaskRouter& router, std::span<const double> e, std::size_t k) {
  const Matrix& w = router.weights.value();
  require(e.size() == w.cols(), "route: input dim " + std::to_string(e.size()) +
                                    " != router dim " + std::to_string(w.cols()));
  Gate g;
  g.probs = softmax(matvec(w, e));
  g.active = topk_indices(g.probs, k);
  std::sort(g.active.begin(), g.active.end());
  return g;
}

inline const TaskRouter& site_router(const MoESite& site, std::size_t task_id) {
  if (task_id >= site.routers.size()) {
    throw ContractError("no router for task " + std::to_string(task_id) + " at " +
                        site.key.prefix() + " (" + std::to_string(site.routers.size()) +
                        " trained)");
  }
  return site.routers[task_id];
}

// Sum over the active experts only; masked experts are never evaluated.
inline Vector moe_forward_site(const MoESite& site, std::size_t k, std::size_t task_id,
                               std::span<const double> e,
                               std::vector<std::size_t>* active_out = nullptr) {
  const Gate g = compute_gate(site_router(site, task_id), e, k);
  Vector out(e.size(), 0.0);
  for (std::size_t j : g.active) axpy(g.probs[j], expert_forward(site.experts[j], e), out);
  if (active_out) active_out->insert(active_out->end(), g.active.begin(), g.active.end());
  return out;
}

inline Vector moe_forward(const MoEAdapterState& state, std::size_t layer, Branch branch,
                          std::size_t task_id, std::span<const double> e) {
  const MoESite* site = state.find(layer, branch);
  if (!site) {
    throw ContractError("moe_forward: no ABFA site at layer " + std::to_string(layer) + " (" +
                        branch_name(branch) + ")");
  }
  return moe_forward_site(*site, state.top_k(), task_id, e);
}

inline Vector moe_backward_site(const MoESite& site, std::size_t k, std::size_t task_id,
                                std::span<const double> e, std::span<const double> grad_out,
                                GradientTape* tape) {
  const TaskRouter& router = site_router(site, task_id);
  const Gate g = compute_gate(router, e, k);
  const std::size_t n = g.probs.size();

  Vector de(e.size(), 0.0);
  Vector dw(n, 0.0);
  for (std::size_t j : g.active) {
    dw[j] = dot(grad_out, expert_forward(site.experts[j], e));
    const Vector scaled_grad = scaled(grad_out, g.probs[j]);
    axpy(1.0, expert_backward(site.experts[j], e, scaled_grad, tape), de);
  }
  // The mask is held fixed: inactive experts pass no gradient to the logits
  // through their (zeroed) gate weights.
  const double mean_dw = dot(g.probs, dw);
  Vector dlogits(n);
  for (std::size_t j = 0; j < n; ++j) dlogits[j] = g.probs[j] * (dw[j] - mean_dw);
  if (tape) {
    if (Matrix* gr = tape->grad_for(router.weights)) add_outer(*gr, dlogits, e);
  }
  axpy(1.0, matvec_transposed(router.weights.value(), dlogits), de);
  return de;
}

// ---------------------------------------------------------------------------
// Task-shared LoRA state
// ---------------------------------------------------------------------------

struct AffaSite {
  SiteKey key;
  LoraAdapter adapter;
};

class AffaState {
 public:
  AffaState() = default;

  AffaState(std::size_t dim, std::size_t rank, const std::vector<SiteKey>& sites, Rng rng) {
    for (std::size_t s = 0; s < sites.size(); ++s) {
      Rng site_rng = rng.split(s);
      sites_.push_back({sites[s], LoraAdapter::create("affa." + sites[s].prefix(), dim, rank,
                                                      site_rng)});
    }
  }

  const LoraAdapter* find(std::size_t layer, Branch branch) const {
    for (const auto& s : sites_) {
      if (s.key.layer == layer && s.key.branch == branch) return &s.adapter;
    }
    return nullptr;
  }

  std::vector<AffaSite>& sites() { return sites_; }
  const std::vector<AffaSite>& sites() const { return sites_; }

 private:
  std::vector<AffaSite> sites_;
};

}  // namespace afa
