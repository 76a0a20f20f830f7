// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "afa/afa.hpp"
#include "afa/testing/oracles.hpp"
#include "cli.hpp"

namespace afa::cli {
namespace {

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

bool near_all(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!near(a[i], b[i], tol)) return false;
  }
  return true;
}

template <typename F>
bool throws_contract(F&& f) {
  try {
    f();
  } catch (const ContractError&) {
    return true;
  }
  return false;
}

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

struct Check {
  std::string name;
  std::function<bool()> fn;
};

std::vector<Check> checks() {
  std::vector<Check> c;
  c.push_back({"matmul matches triple-loop oracle", [] {
                 Rng rng(11);
                 const Matrix a = gaussian_matrix(3, 4, 1.0, rng);
                 const Matrix b = gaussian_matrix(4, 2, 1.0, rng);
                 const Matrix p = matmul(a, b);
                 const auto o = oracle::matmul(oracle::to_grid(a), oracle::to_grid(b));
                 for (std::size_t i = 0; i < 3; ++i) {
                   for (std::size_t j = 0; j < 2; ++j) {
                     if (!near(p(i, j), o[i][j], 1e-12)) return false;
                   }
                 }
                 return matmul(Matrix::identity(3), Matrix(3, 2)) == Matrix(3, 2);
               }});
  c.push_back({"softmax of [1,2,3]", [] {
                 return near_all(softmax(Vector{1, 2, 3}), {0.09003, 0.24473, 0.66524}, 1e-5);
               }});
  c.push_back({"top-k keeps the largest, lowest index on ties", [] {
                 return topk_mask(Vector{0.5, 0.3, 0.2}, 2) == Vector{0.5, 0.3, 0.0} &&
                        topk_mask(Vector{0.4, 0.4, 0.2}, 1) == Vector{0.4, 0.0, 0.0} &&
                        throws_contract([] { topk_mask(Vector{1.0}, 0); });
               }});
  c.push_back({"cosine and normalize", [] {
                 return cosine(Vector{1, 0}, Vector{0, 1}) == 0.0 &&
                        near_all(normalize(Vector{3, 4}), {0.6, 0.8}, 1e-15);
               }});
  c.push_back({"zero adapters reproduce the frozen encoder", [] {
                 const FrozenDualEncoder enc = build_encoder(5, 6, 2, 3, 3);
                 Rng rng(4);
                 const std::vector<SiteKey> sites = {{0, Branch::Image}, {1, Branch::Image},
                                                     {0, Branch::Text}, {1, Branch::Text}};
                 AffaState affa(6, 2, {{1, Branch::Image}, {1, Branch::Text}}, rng.split(1));
                 MoEAdapterState abfa({6, 3, 2, 2, 2}, sites, rng.split(2));
                 abfa.expand_router(9);
                 const AdapterSet ad{&affa, &abfa};
                 const Vector x = random_vector(rng, 5);
                 const Vector f = encode_image(enc, x, EncoderPath::frozen());
                 return encode_image(enc, x, EncoderPath::affa(), ad) == f &&
                        encode_image(enc, x, EncoderPath::abfa(0), ad) == f &&
                        encode_text(enc, 2, EncoderPath::abfa(0), ad) ==
                            encode_text(enc, 2, EncoderPath::frozen());
               }});
  c.push_back({"LoRA and multi-head expert match dense oracles", [] {
                 Rng rng(5);
                 LoraAdapter ad = LoraAdapter::create("t", 4, 2, rng);
                 ad.up.mutable_value() = gaussian_matrix(4, 2, 1.0, rng);
                 const Vector e = random_vector(rng, 4);
                 MultiHeadExpert one = MultiHeadExpert::create("x", 4, 2, 1, rng);
                 one.down.mutable_value() = ad.down.value();
                 one.heads[0].mutable_value() = ad.up.value();
                 return near_all(lora_forward(ad, e), oracle::lora(ad, e), 1e-12) &&
                        expert_forward(one, e) == lora_forward(ad, e);
               }});
  c.push_back({"route of logits [1,2,3] with k=2", [] {
                 TaskRouter r{Param("r", Matrix(3, 1)), 0};
                 r.weights.mutable_value()(0, 0) = 1;
                 r.weights.mutable_value()(1, 0) = 2;
                 r.weights.mutable_value()(2, 0) = 3;
                 return near_all(route(r, Vector{1.0}, 2), {0.0, 0.24473, 0.66524}, 1e-5);
               }});
  c.push_back({"sparse MoE matches the dense masked sum", [] {
                 Rng rng(6);
                 MoEAdapterState s({6, 5, 3, 2, 2}, {{0, Branch::Image}}, rng.split(1));
                 s.expand_router(3);
                 Rng fill(7);
                 for (auto& ex : s.sites()[0].experts) {
                   for (auto& h : ex.heads) h.mutable_value() = gaussian_matrix(6, 2, 1.0, fill);
                 }
                 for (int trial = 0; trial < 50; ++trial) {
                   const Vector e = random_vector(fill, 6);
                   if (!near_all(moe_forward(s, 0, Branch::Image, 0, e),
                                 oracle::dense_moe(s.sites()[0], 2, 0, e), 1e-12)) {
                     return false;
                   }
                 }
                 return true;
               }});
  c.push_back({"contrastive loss matches the brute-force oracle", [] {
                 if (supcon_loss(Matrix(1, 1), std::vector<std::size_t>{0}) != 0.0) return false;
                 if (!near(supcon_loss(Matrix::identity(2), std::vector<std::size_t>{0, 1}),
                           4.0 * std::log(1.0 + std::exp(-1.0)), 1e-12)) {
                   return false;
                 }
                 Rng rng(8);
                 const Matrix l = gaussian_matrix(8, 8, 2.0, rng);
                 std::vector<std::size_t> labels;
                 for (int i = 0; i < 8; ++i) labels.push_back(rng.index(3));
                 return near(supcon_loss(l, labels), oracle::supcon(oracle::to_grid(l), labels),
                             1e-10);
               }});
  c.push_back({"cross-entropy bounds", [] {
                 const std::vector<Vector> same(4, Vector{1, 0, 0});
                 const std::vector<Vector> basis = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
                 return near(ce_class_loss(Vector{0, 1, 0}, same, 2, 0.5), std::log(4.0), 1e-12) &&
                        ce_class_loss(Vector{0, 1, 0}, basis, 1, 0.01) < 1e-9;
               }});
  c.push_back({"AdamW first step", [] {
                 Param theta("theta", Matrix(1, 1));
                 GradientTape tape;
                 tape.track(theta);
                 tape.grad_for(theta)->data()[0] = 1.0;
                 AdamWConfig cfg;
                 cfg.weight_decay = 0.0;
                 AdamWState opt(cfg);
                 opt.step(tape);
                 return std::abs(theta.value()(0, 0) + 1e-3) <= 1e-3 * 1e-6;
               }});
  c.push_back({"gradient check on the tiny model", [] {
                 GradcheckProblem p = GradcheckProblem::tiny(0);
                 return gradcheck(p).pass();
               }});
  c.push_back({"k-means objective is non-increasing", [] {
                 Rng rng(9);
                 std::vector<Vector> pts;
                 for (int i = 0; i < 60; ++i) pts.push_back(random_vector(rng, 3));
                 const KMeansResult r = kmeans(pts, 4, 1);
                 for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
                   if (r.objective_trace[i] > r.objective_trace[i - 1]) return false;
                 }
                 return kmeans(pts, pts.size(), 2).objective_trace.back() == 0.0;
               }});
  c.push_back({"task score is the mean prototype cosine", [] {
                 TaskPrototypeBank bank(2, 0.75, 0);
                 bank.restore({{{1, 0}, {0.6, 0.8}}});
                 const double s = task_score(bank, 0, Vector{1, 0});
                 return near(s, 0.8, 1e-12) && select(bank, Vector{1, 0}).seen;
               }});
  c.push_back({"metrics of a 3x3 matrix", [] {
                 AccuracyMatrix m({"a", "b", "c"});
                 const double v[3][3] = {{.9, .5, .4}, {.8, .9, .4}, {.7, .8, .9}};
                 for (int i = 0; i < 3; ++i) {
                   for (int j = 0; j < 3; ++j) m.set(i, j, v[i][j]);
                 }
                 const MetricsReport r = metrics(m);
                 return !r.transfer[0] && near(*r.transfer[1], .5, 1e-12) &&
                        near(*r.transfer[2], .4, 1e-12) && near(r.average[0], .8, 1e-12) &&
                        r.last == std::vector<double>{.7, .8, .9};
               }});
  c.push_back({"dataset file round-trip", [] {
                 EmbeddingDataset ds;
                 ds.d_in = 2;
                 ds.samples.push_back({0, 0, {0.5, -1.25}});
                 ds.samples.push_back({1, 3, {2.0, 0.125}});
                 const auto bytes = encode_dataset(ds);
                 return encode_dataset(decode_dataset(bytes)) == bytes;
               }});
  return c;
}

}  // namespace

bool selftest(std::ostream& out) {
  bool all = true;
  for (const auto& check : checks()) {
    bool ok = false;
    try {
      ok = check.fn();
    } catch (const std::exception& e) {
      out << "  (" << e.what() << ")\n";
    }
    out << (ok ? "ok    " : "FAIL  ") << check.name << "\n";
    all = all && ok;
  }
  out << (all ? "selftest passed" : "selftest FAILED") << "\n";
  return all;
}

}  // namespace afa::cli
