// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Batch objectives wired through the encoder, with their analytic backward
// passes, and the central-difference gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "afa/adapters.hpp"
#include "afa/backbone.hpp"
#include "afa/error.hpp"
#include "afa/linalg.hpp"
#include "afa/objectives.hpp"
#include "afa/tape.hpp"

namespace afa {

struct Batch {
  std::vector<Vector> images;
  std::vector<std::size_t> labels;  // task-local labels
  std::size_t task_id = 0;

  void validate(std::size_t num_classes) const {
    require(!images.empty(), "batch: empty");
    require(images.size() == labels.size(), "batch: " + std::to_string(images.size()) +
                                                " images vs " + std::to_string(labels.size()) +
                                                " labels");
    for (std::size_t y : labels) {
      require(y < num_classes, "batch: label " + std::to_string(y) + " outside the task's " +
                                   std::to_string(num_classes) + " classes");
    }
  }
};

// Mean cross-entropy of cosine logits against every class of the task, with
// image and text features both taken through the Abfa(router_task) path.
// When a tape is given, gradients for its tracked parameters are accumulated.
inline double abfa_batch_loss(const FrozenDualEncoder& enc, const AdapterSet& adapters,
                              const Batch& batch, std::span<const std::size_t> class_ids,
                              std::size_t router_task, double tau_ce, GradientTape* tape,
                              std::vector<std::size_t>* routing = nullptr) {
  batch.validate(class_ids.size());
  require(tau_ce > 0.0, "abfa loss: tau_ce must be positive");
  const EncoderPath path = EncoderPath::abfa(router_task);
  std::vector<EncodeTrace> text;
  for (std::size_t c : class_ids) text.push_back(encode_text_traced(enc, c, path, adapters));
  std::vector<EncodeTrace> img;
  for (const auto& x : batch.images) img.push_back(encode_image_traced(enc, x, path, adapters));

  const std::size_t n = img.size();
  const std::size_t nc = text.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  std::vector<Vector> dtext(nc, Vector(enc.dim(), 0.0));
  std::vector<Vector> dimg(n, Vector(enc.dim(), 0.0));
  Vector logits(nc);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) logits[c] = cosine(img[i].output, text[c].output) / tau_ce;
    const CeResult ce = ce_from_logits(logits, batch.labels[i]);
    loss += ce.loss * inv_n;
    if (!tape) continue;
    for (std::size_t c = 0; c < nc; ++c) {
      const double g = ce.grad_logits[c] * inv_n / tau_ce;
      if (g == 0.0) continue;
      axpy(g, cosine_grad_first(img[i].output, text[c].output), dimg[i]);
      axpy(g, cosine_grad_first(text[c].output, img[i].output), dtext[c]);
    }
  }
  if (tape) {
    for (std::size_t i = 0; i < n; ++i) backward_encode(enc, img[i], dimg[i], adapters, *tape);
    for (std::size_t c = 0; c < nc; ++c) backward_encode(enc, text[c], dtext[c], adapters, *tape);
  }
  if (routing) {
    for (const auto& t : text) routing->insert(routing->end(), t.routing.begin(), t.routing.end());
    for (const auto& t : img) routing->insert(routing->end(), t.routing.begin(), t.routing.end());
  }
  return loss;
}

// Bidirectional supervised contrastive loss on the Affa path: image i is
// paired with the text feature of its own class.
inline double affa_batch_loss(const FrozenDualEncoder& enc, const AdapterSet& adapters,
                              const Batch& batch, std::span<const std::size_t> class_ids,
                              double tau, GradientTape* tape) {
  batch.validate(class_ids.size());
  const EncoderPath path = EncoderPath::affa();
  std::map<std::size_t, EncodeTrace> text;
  for (std::size_t y : batch.labels) {
    if (!text.count(y)) text.emplace(y, encode_text_traced(enc, class_ids[y], path, adapters));
  }
  std::vector<EncodeTrace> img;
  for (const auto& x : batch.images) img.push_back(encode_image_traced(enc, x, path, adapters));

  const std::size_t n = img.size();
  std::vector<Vector> v(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = img[i].output;
    w[i] = text.at(batch.labels[i]).output;
  }
  const Matrix l = similarity_matrix(v, w, tau);
  const LossWithGrad lg = supcon_loss_with_grad(l, batch.labels);
  if (tape) {
    std::vector<Vector> dv(n, Vector(enc.dim(), 0.0));
    std::map<std::size_t, Vector> dw;
    for (auto& [y, _] : text) dw.emplace(y, Vector(enc.dim(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = lg.grad(i, j) / tau;
        if (g == 0.0) continue;
        axpy(g, cosine_grad_first(v[i], w[j]), dv[i]);
        axpy(g, cosine_grad_first(w[j], v[i]), dw.at(batch.labels[j]));
      }
    }
    for (std::size_t i = 0; i < n; ++i) backward_encode(enc, img[i], dv[i], adapters, *tape);
    for (auto& [y, tr] : text) backward_encode(enc, tr, dw.at(y), adapters, *tape);
  }
  return lg.loss;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradcheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t resampled = 0;  // elements re-probed with a smaller step after a routing flip
  std::size_t skipped = 0;    // elements whose every probe flipped the routing
  bool pass = true;
};

struct GradcheckReport {
  double step = 1e-3;
  double tolerance = 1e-4;
  std::vector<GradcheckGroup> groups;

  bool pass() const {
    return !groups.empty() &&
           std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.pass; });
  }

  const GradcheckGroup* find(const std::string& name) const {
    for (const auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json groups_json = nlohmann::json::array();
    for (const auto& g : groups) {
      groups_json.push_back({{"name", g.name},
                             {"max_rel_error", g.max_rel_error},
                             {"max_abs_error", g.max_abs_error},
                             {"checked", g.checked},
                             {"resampled", g.resampled},
                             {"skipped", g.skipped},
                             {"pass", g.pass}});
    }
    return {{"step", step}, {"tolerance", tolerance}, {"pass", pass()}, {"groups", groups_json}};
  }
};

// Loss closure: evaluates the loss, accumulating into the tape when non-null
// and appending the routing decisions it made when `routing` is non-null.
using LossFn = std::function<double(GradientTape*, std::vector<std::size_t>*)>;

// Parameter-name -> report-group mapping, e.g. "abfa.image.l0.e2.B1" -> "abfa.expert.B".
inline std::string param_group(const std::string& name) {
  auto last = name.substr(name.rfind('.') + 1);
  if (name.rfind("affa.", 0) == 0) return "affa." + last;
  if (name.rfind("abfa.", 0) == 0) {
    if (last.rfind("router", 0) == 0) return "abfa.router.task" + last.substr(6);
    if (last == "A") return "abfa.expert.A";
    if (last == "gate") return "abfa.expert.head_gate";
    if (last[0] == 'B') return "abfa.expert.B";
  }
  return name;
}

// Central differences for every element of every parameter in `params`.
// The error of an element is |analytic - numeric| measured against the
// gradient scale of its tensor, max(|analytic|_inf, |numeric|_inf), so the
// reported figure is the normwise (infinity-norm) relative error per tensor,
// maximized over the group. Central-difference truncation error does not
// shrink with an element's own gradient, which is why elements are not
// normalized individually.
// A probe whose perturbation changes any top-k routing decision is retried
// with a quarter of the step (up to four times) and skipped if it still flips.
inline GradcheckReport gradcheck_params(const std::vector<Param*>& params, const LossFn& loss,
                                        double step, double tol,
                                        const std::function<std::string(const std::string&)>&
                                            group_of = param_group) {
  require(step > 0.0, "gradcheck: step must be positive");
  GradcheckReport report;
  report.step = step;
  report.tolerance = tol;

  GradientTape tape;
  for (Param* p : params) tape.track(*p);
  std::vector<std::size_t> base_routing;
  loss(&tape, &base_routing);

  std::map<std::string, GradcheckGroup> groups;
  std::vector<std::string> order;
  for (const auto& e : tape.entries()) {
    const std::string gname = group_of(e.param->name());
    if (!groups.count(gname)) {
      groups[gname].name = gname;
      order.push_back(gname);
    }
    GradcheckGroup& grp = groups[gname];
    auto& theta = e.param->mutable_value().data();
    std::vector<double> numeric(theta.size(), 0.0);
    std::vector<bool> valid(theta.size(), false);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double orig = theta[i];
      double h = step;
      for (int attempt = 0; attempt < 5; ++attempt) {
        std::vector<std::size_t> rp, rm;
        theta[i] = orig + h;
        const double fp = loss(nullptr, &rp);
        theta[i] = orig - h;
        const double fm = loss(nullptr, &rm);
        theta[i] = orig;
        if (rp == base_routing && rm == base_routing) {
          numeric[i] = (fp - fm) / (2.0 * h);
          valid[i] = true;
          break;
        }
        if (attempt == 0) ++grp.resampled;
        h *= 0.25;
      }
      if (!valid[i]) ++grp.skipped;
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!valid[i]) continue;
      scale = std::max({scale, std::abs(e.grad.data()[i]), std::abs(numeric[i])});
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!valid[i]) continue;
      const double err = std::abs(e.grad.data()[i] - numeric[i]);
      grp.max_abs_error = std::max(grp.max_abs_error, err);
      grp.max_rel_error = std::max(grp.max_rel_error, scale > 0.0 ? err / scale : 0.0);
      ++grp.checked;
    }
  }
  for (const auto& name : order) {
    GradcheckGroup g = groups[name];
    g.pass = g.checked > 0 && g.max_rel_error <= tol;
    report.groups.push_back(g);
  }
  return report;
}

}  // namespace afa
