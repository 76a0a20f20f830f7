// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Domain distribution selector: K prototypes per task from k-means over
// frozen-encoder features, scored by mean cosine similarity. A sample whose
// best task score falls below the threshold is treated as coming from an
// unseen domain.

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "afa/backbone.hpp"
#include "afa/error.hpp"
#include "afa/linalg.hpp"

namespace afa {

struct KMeansResult {
  std::vector<Vector> centroids;          // raw cluster means
  std::vector<std::size_t> assignment;
  std::vector<double> objective_trace;    // after each assignment step
  std::size_t iterations = 0;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t nearest(const std::vector<Vector>& centroids, std::span<const double> x,
                           double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(centroids[c], x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

// Gives every empty cluster the point farthest from its current centroid,
// taken from a cluster that can spare it.
inline void repair_empty_clusters(const std::vector<Vector>& points, std::vector<Vector>& centroids,
                                  std::vector<std::size_t>& assignment) {
  const std::size_t k = centroids.size();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t a : assignment) ++counts[a];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = points.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (counts[assignment[i]] < 2) continue;
      const double d = squared_distance(points[i], centroids[assignment[i]]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far == points.size()) continue;  // unreachable while |points| >= K
    --counts[assignment[far]];
    assignment[far] = c;
    counts[c] = 1;
    centroids[c] = points[far];
  }
}

inline double objective(const std::vector<Vector>& points, const std::vector<Vector>& centroids,
                        const std::vector<std::size_t>& assignment) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    s += squared_distance(points[i], centroids[assignment[i]]);
  }
  return s;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding.
inline KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100) {
  require(k >= 1, "kmeans: K must be at least 1");
  require(points.size() >= k, "kmeans: " + std::to_string(points.size()) +
                                  " points is fewer than K=" + std::to_string(k));
  const std::size_t dim = points.front().size();
  for (const auto& p : points) require(p.size() == dim, "kmeans: inconsistent point dimensions");

  Rng rng(seed);
  KMeansResult res;
  std::vector<bool> chosen(points.size(), false);
  std::size_t first = rng.index(points.size());
  res.centroids.push_back(points[first]);
  chosen[first] = true;
  std::vector<double> d2(points.size());
  while (res.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      detail::nearest(res.centroids, points[i], &d2[i]);
      total += d2[i];
    }
    std::size_t pick = points.size();
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && r < acc) {
          pick = i;
          break;
        }
      }
      if (pick == points.size()) {  // r landed on the rounding tail
        for (std::size_t i = points.size(); i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    res.centroids.push_back(points[pick]);
  }

  res.assignment.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    res.assignment[i] = detail::nearest(res.centroids, points[i]);
  }
  detail::repair_empty_clusters(points, res.centroids, res.assignment);
  res.objective_trace.push_back(detail::objective(points, res.centroids, res.assignment));

  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<Vector> sums(k, Vector(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      axpy(1.0, points[i], sums[res.assignment[i]]);
      ++counts[res.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& x : sums[c]) x /= static_cast<double>(counts[c]);
      res.centroids[c] = std::move(sums[c]);
    }
    std::vector<std::size_t> next(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      next[i] = detail::nearest(res.centroids, points[i]);
    }
    detail::repair_empty_clusters(points, res.centroids, next);
    res.objective_trace.push_back(detail::objective(points, res.centroids, next));
    res.iterations = it + 1;
    const bool fixpoint = next == res.assignment;
    res.assignment = std::move(next);
    if (fixpoint) break;
  }
  return res;
}

struct Selection {
  bool seen = false;
  std::size_t task_id = 0;  // best-scoring task (meaningful as a route only when seen)
  double score = 0.0;

  static Selection make_seen(std::size_t t, double s) { return {true, t, s}; }
  static Selection make_unseen(std::size_t best, double s) { return {false, best, s}; }
};

class TaskPrototypeBank {
 public:
  TaskPrototypeBank() = default;
  TaskPrototypeBank(std::size_t k, double threshold, std::uint64_t seed, std::size_t max_iters = 100)
      : k_(k), threshold_(threshold), seed_(seed), max_iters_(max_iters) {
    require(k >= 1, "TaskPrototypeBank: K must be at least 1");
    require(threshold >= -1.0 && threshold <= 1.0, "TaskPrototypeBank: threshold outside [-1, 1]");
  }

  std::size_t k() const { return k_; }
  double threshold() const { return threshold_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t task_count() const { return prototypes_.size(); }

  const std::vector<Vector>& prototypes(std::size_t task_id) const {
    require(task_id < prototypes_.size(), "prototype bank: task " + std::to_string(task_id) +
                                              " has not been fitted");
    return prototypes_[task_id];
  }

  // Fits the next task from already-extracted features.
  void fit_features(std::size_t task_id, const std::vector<Vector>& features) {
    require(task_id == prototypes_.size(),
            "fit_task_prototypes: expected task " + std::to_string(prototypes_.size()) + ", got " +
                std::to_string(task_id));
    require(!features.empty(), "fit_task_prototypes: empty dataset");
    KMeansResult km = kmeans(features, k_, Rng::derive_seed(seed_, task_id), max_iters_);
    std::vector<Vector> protos;
    for (auto& c : km.centroids) {
      Vector p = normalize(c);
      for (double& x : p) x = static_cast<double>(static_cast<float>(x));
      protos.push_back(std::move(p));
    }
    prototypes_.push_back(std::move(protos));
  }

  // The bank as it stood after its first n tasks were fitted.
  TaskPrototypeBank prefix(std::size_t n) const {
    require(n <= prototypes_.size(), "prototype bank: prefix longer than fitted tasks");
    TaskPrototypeBank out(k_, threshold_, seed_, max_iters_);
    out.prototypes_.assign(prototypes_.begin(), prototypes_.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }

  // Checkpoint restore.
  void restore(std::vector<std::vector<Vector>> prototypes) {
    for (const auto& t : prototypes) {
      require(t.size() == k_, "prototype bank: restored task has wrong prototype count");
    }
    prototypes_ = std::move(prototypes);
  }

 private:
  std::size_t k_ = 5;
  double threshold_ = 0.75;
  std::uint64_t seed_ = 0;
  std::size_t max_iters_ = 100;
  std::vector<std::vector<Vector>> prototypes_;
};

// Features come from the Frozen path; adapters never influence routing.
inline void fit_task_prototypes(TaskPrototypeBank& bank, std::size_t task_id,
                                const std::vector<Vector>& inputs, const FrozenDualEncoder& enc) {
  require(!inputs.empty(), "fit_task_prototypes: empty dataset");
  std::vector<Vector> feats;
  feats.reserve(inputs.size());
  for (const auto& x : inputs) feats.push_back(encode_image(enc, x, EncoderPath::frozen()));
  bank.fit_features(task_id, feats);
}

// Mean cosine similarity to the task's prototypes.
inline double task_score(const TaskPrototypeBank& bank, std::size_t task_id,
                         std::span<const double> feature) {
  const auto& protos = bank.prototypes(task_id);
  double s = 0.0;
  for (const auto& p : protos) s += cosine(feature, p);
  return s / static_cast<double>(protos.size());
}

inline Selection select(const TaskPrototypeBank& bank, std::span<const double> feature) {
  require(bank.task_count() > 0, "select: no task has been fitted");
  std::size_t best = 0;
  double best_score = task_score(bank, 0, feature);
  for (std::size_t t = 1; t < bank.task_count(); ++t) {
    const double s = task_score(bank, t, feature);
    if (s > best_score) {
      best_score = s;
      best = t;
    }
  }
  return best_score >= bank.threshold() ? Selection::make_seen(best, best_score)
                                        : Selection::make_unseen(best, best_score);
}

}  // namespace afa
