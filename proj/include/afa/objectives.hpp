// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Losses and the optimizer.
//
// The bidirectional supervised contrastive loss over a similarity matrix l:
//
//   L_ti = - sum_i 1/|P(i)| sum_{j in P(i)} log softmax_k(l[i][k])[j]
//   L_it = - sum_i 1/|P(i)| sum_{j in P(i)} log softmax_k(l[k][i])[j]
//   L    = L_ti + L_it
//
// with P(i) every index sharing i's label, i itself included.

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "afa/error.hpp"
#include "afa/linalg.hpp"
#include "afa/tape.hpp"

namespace afa {

// l[i][j] = cosine(v_i, w_j) / tau
inline Matrix similarity_matrix(const std::vector<Vector>& v, const std::vector<Vector>& w,
                                double tau) {
  require(!v.empty(), "similarity_matrix: empty batch");
  require(v.size() == w.size(), "similarity_matrix: " + std::to_string(v.size()) +
                                    " visual vs " + std::to_string(w.size()) + " text features");
  require(tau > 0.0, "similarity_matrix: tau must be positive");
  Matrix l(v.size(), w.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) l(i, j) = cosine(v[i], w[j]) / tau;
  }
  return l;
}

struct LossWithGrad {
  double loss = 0.0;
  Matrix grad;  // dL / dl
};

inline LossWithGrad supcon_loss_with_grad(const Matrix& l, std::span<const std::size_t> labels) {
  const std::size_t n = l.rows();
  require(n >= 1 && l.cols() == n, "supcon_loss: similarity matrix must be square, got " +
                                       l.shape_string());
  require(labels.size() == n, "supcon_loss: " + std::to_string(labels.size()) +
                                  " labels for a batch of " + std::to_string(n));
  std::vector<double> inv_pos(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += labels[j] == labels[i];
    inv_pos[i] = 1.0 / static_cast<double>(count);
  }

  LossWithGrad out;
  out.grad = Matrix(n, n);
  Vector buf(n);
  // Rows: L_ti. d/dl[i][k] = softmax_row_i(k) - [k in P(i)] / |P(i)|
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) buf[k] = l(i, k);
    const double lse = log_sum_exp(buf);
    for (std::size_t k = 0; k < n; ++k) {
      const bool pos = labels[k] == labels[i];
      if (pos) out.loss -= inv_pos[i] * (l(i, k) - lse);
      out.grad(i, k) += std::exp(l(i, k) - lse) - (pos ? inv_pos[i] : 0.0);
    }
  }
  // Columns: L_it. d/dl[k][i] = softmax_col_i(k) - [k in P(i)] / |P(i)|
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) buf[k] = l(k, i);
    const double lse = log_sum_exp(buf);
    for (std::size_t k = 0; k < n; ++k) {
      const bool pos = labels[k] == labels[i];
      if (pos) out.loss -= inv_pos[i] * (l(k, i) - lse);
      out.grad(k, i) += std::exp(l(k, i) - lse) - (pos ? inv_pos[i] : 0.0);
    }
  }
  return out;
}

inline double supcon_loss(const Matrix& l, std::span<const std::size_t> labels) {
  return supcon_loss_with_grad(l, labels).loss;
}

struct CeResult {
  double loss = 0.0;
  Vector grad_logits;  // softmax - onehot
};

// Cross-entropy over cosine logits scaled by 1/tau_ce.
inline CeResult ce_from_logits(std::span<const double> logits, std::size_t label) {
  require(label < logits.size(), "ce_class_loss: label " + std::to_string(label) +
                                     " out of range for " + std::to_string(logits.size()) +
                                     " classes");
  CeResult r;
  r.grad_logits = softmax(logits);
  r.loss = log_sum_exp(logits) - logits[label];
  if (r.loss < 0.0) r.loss = 0.0;  // rounding when the label dominates
  r.grad_logits[label] -= 1.0;
  return r;
}

inline double ce_class_loss(std::span<const double> v, const std::vector<Vector>& text_feats,
                            std::size_t label, double tau_ce) {
  require(tau_ce > 0.0, "ce_class_loss: tau_ce must be positive");
  require(label < text_feats.size(), "ce_class_loss: label " + std::to_string(label) +
                                         " out of range for " +
                                         std::to_string(text_feats.size()) + " classes");
  Vector logits(text_feats.size());
  for (std::size_t c = 0; c < text_feats.size(); ++c) logits[c] = cosine(v, text_feats[c]) / tau_ce;
  return ce_from_logits(logits, label).loss;
}

// d cos(a, b) / da, ignoring the [-1, 1] clamp.
inline Vector cosine_grad_first(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  const double c = dot(a, b) / (na * nb);
  Vector g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - c * a[i] / (na * na);
  return g;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and bias-corrected moments.
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamWState {
 public:
  explicit AdamWState(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }

  void step(GradientTape& tape) {
    for (const auto& e : tape.entries()) {
      if (e.param->frozen()) {
        throw ContractError("adamw_step: parameter '" + e.param->name() + "' is frozen");
      }
      require(e.grad.same_shape(e.param->value()),
              "adamw_step: gradient shape " + e.grad.shape_string() + " != parameter shape " +
                  e.param->value().shape_string() + " for '" + e.param->name() + "'");
      auto it = moments_.find(e.param);
      if (it != moments_.end()) {
        require(it->second.m.same_shape(e.grad),
                "adamw_step: moment shape mismatch for '" + e.param->name() + "'");
      }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (auto& e : tape.entries()) {
      auto [it, inserted] = moments_.try_emplace(
          e.param, Moments{Matrix(e.grad.rows(), e.grad.cols()), Matrix(e.grad.rows(), e.grad.cols())});
      Moments& mo = it->second;
      auto& theta = e.param->mutable_value().data();
      const auto& g = e.grad.data();
      auto& m = mo.m.data();
      auto& v = mo.v.data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
        theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamWConfig cfg_;
  std::size_t step_ = 0;
  std::unordered_map<const Param*, Moments> moments_;
};

inline void adamw_step(AdamWState& state, GradientTape& tape) { state.step(tape); }

}  // namespace afa
