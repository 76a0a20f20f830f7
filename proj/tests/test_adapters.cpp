// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "afa/adapters.hpp"
#include "afa/testing/oracles.hpp"
#include "support.hpp"

namespace afa {
namespace {

void expect_near_all(const Vector& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

void randomize_heads(MoEAdapterState& s, Rng& rng) {
  for (auto& site : s.sites()) {
    for (auto& ex : site.experts) {
      for (auto& h : ex.heads) h.mutable_value() = gaussian_matrix(h.value().rows(), h.value().cols(), 1.0, rng);
    }
  }
}

TEST(Lora, CreateIsZeroInitializedUp) {
  Rng rng(1);
  const LoraAdapter ad = LoraAdapter::create("t", 6, 3, rng);
  EXPECT_EQ(ad.rank(), 3u);
  EXPECT_EQ(ad.dim(), 6u);
  EXPECT_EQ(ad.up.value(), Matrix(6, 3));
  EXPECT_EQ(lora_forward(ad, test::random_vector(rng, 6)), Vector(6, 0.0));
}

TEST(Lora, MatchesProductOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    LoraAdapter ad = LoraAdapter::create("t", 7, 3, rng);
    ad.up.mutable_value() = gaussian_matrix(7, 3, 1.0, rng);
    const Vector e = test::random_vector(rng, 7);
    expect_near_all(lora_forward(ad, e), oracle::lora(ad, e), 1e-12);
  }
}

TEST(Lora, DimensionMismatchThrows) {
  Rng rng(3);
  const LoraAdapter ad = LoraAdapter::create("t", 4, 2, rng);
  EXPECT_THROW(lora_forward(ad, Vector(5, 0.0)), ContractError);
}

TEST(MultiHeadExpert, MatchesOracle) {
  Rng rng(4);
  MultiHeadExpert ex = MultiHeadExpert::create("x", 6, 2, 4, rng);
  for (auto& h : ex.heads) h.mutable_value() = gaussian_matrix(6, 2, 1.0, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector e = test::random_vector(rng, 6);
    expect_near_all(expert_forward(ex, e), oracle::expert(ex, e), 1e-12);
  }
}

TEST(MultiHeadExpert, SingleHeadReducesToLora) {
  Rng rng(5);
  LoraAdapter ad = LoraAdapter::create("t", 5, 2, rng);
  ad.up.mutable_value() = gaussian_matrix(5, 2, 1.0, rng);
  MultiHeadExpert ex = MultiHeadExpert::create("x", 5, 2, 1, rng);
  ex.down.mutable_value() = ad.down.value();
  ex.heads[0].mutable_value() = ad.up.value();
  for (int trial = 0; trial < 20; ++trial) {
    const Vector e = test::random_vector(rng, 5);
    EXPECT_EQ(expert_forward(ex, e), lora_forward(ad, e));
  }
}

TEST(MultiHeadExpert, OneHotGateSelectsThatHead) {
  Rng rng(6);
  MultiHeadExpert ex = MultiHeadExpert::create("x", 4, 2, 3, rng);
  for (auto& h : ex.heads) h.mutable_value() = gaussian_matrix(4, 2, 1.0, rng);
  const Vector e{1.0, 0.0, 0.0, 0.0};
  Matrix g(3, 4);
  g(0, 0) = -50.0;
  g(1, 0) = 50.0;
  g(2, 0) = -50.0;
  ex.gate.mutable_value() = g;
  const Vector expected = matvec(ex.heads[1].value(), matvec(ex.down.value(), e));
  const Vector got = expert_forward(ex, e);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], expected[i], 1e-9);
}

TEST(MultiHeadExpert, HeadWeightsSumToOne) {
  Rng rng(7);
  const MultiHeadExpert ex = MultiHeadExpert::create("x", 8, 2, 5, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector b = head_weights(ex, test::random_vector(rng, 8, 3.0));
    double s = 0.0;
    for (double x : b) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Route, WorkedExample) {
  TaskRouter r{Param("r", Matrix(3, 1)), 0};
  r.weights.mutable_value()(0, 0) = 1.0;
  r.weights.mutable_value()(1, 0) = 2.0;
  r.weights.mutable_value()(2, 0) = 3.0;
  const Vector w = route(r, Vector{1.0}, 2);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_NEAR(w[1], 0.24473, 1e-5);
  EXPECT_NEAR(w[2], 0.66524, 1e-5);
}

TEST(Route, TiesKeepLowerIndex) {
  TaskRouter r{Param("r", Matrix(4, 1)), 0};
  const Vector w = route(r, Vector{1.0}, 2);
  EXPECT_EQ(w, (Vector{0.25, 0.25, 0.0, 0.0}));
}

TEST(Route, KOutOfRangeThrows) {
  TaskRouter r{Param("r", Matrix(3, 2)), 0};
  EXPECT_THROW(route(r, Vector{1.0, 0.0}, 0), ContractError);
  EXPECT_THROW(route(r, Vector{1.0, 0.0}, 4), ContractError);
  EXPECT_THROW(route(r, Vector{1.0}, 1), ContractError);
}

TEST(MoE, SparseMatchesDenseMaskedSum) {
  Rng rng(8);
  MoEAdapterState s({6, 5, 3, 2, 2}, {{0, Branch::Image}, {0, Branch::Text}}, rng.split(1));
  s.expand_router(11);
  s.freeze_router(0);
  s.expand_router(12);
  Rng fill(9);
  randomize_heads(s, fill);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector e = test::random_vector(fill, 6, 2.0);
    const std::size_t task = static_cast<std::size_t>(trial % 2);
    const Branch b = trial % 3 == 0 ? Branch::Text : Branch::Image;
    expect_near_all(moe_forward(s, 0, b, task, e), oracle::dense_moe(*s.find(0, b), 2, task, e), 1e-12);
  }
}

TEST(MoE, OnlyTopKExpertsAreEvaluated) {
  Rng rng(10);
  MoEAdapterState s({6, 5, 2, 2, 2}, {{0, Branch::Image}}, rng.split(1));
  s.expand_router(3);
  Rng fill(11);
  randomize_heads(s, fill);
  const Vector e = test::random_vector(fill, 6);
  std::vector<std::size_t> active;
  const Vector before = moe_forward_site(s.sites()[0], 2, 0, e, &active);
  ASSERT_EQ(active.size(), 2u);
  // Poisoning the inactive experts must not change the output.
  const std::set<std::size_t> keep(active.begin(), active.end());
  for (std::size_t j = 0; j < 5; ++j) {
    if (keep.count(j)) continue;
    for (auto& h : s.sites()[0].experts[j].heads) h.mutable_value().fill(std::nan(""));
  }
  EXPECT_EQ(moe_forward_site(s.sites()[0], 2, 0, e), before);
}

TEST(MoE, ExpandRequiresPreviousRouterFrozen) {
  Rng rng(12);
  MoEAdapterState s({4, 3, 2, 2, 1}, {{0, Branch::Image}}, rng.split(1));
  EXPECT_EQ(s.expand_router(1), 0u);
  EXPECT_THROW(s.expand_router(2), ContractError);
  s.freeze_router(0);
  EXPECT_TRUE(s.router_frozen(0));
  EXPECT_THROW(s.freeze_router(0), ContractError);
  EXPECT_EQ(s.expand_router(2), 1u);
  EXPECT_FALSE(s.router_frozen(1));
  EXPECT_EQ(s.task_count(), 2u);
}

TEST(MoE, FrozenRouterCannotBeMutated) {
  Rng rng(13);
  MoEAdapterState s({4, 3, 2, 2, 1}, {{0, Branch::Image}}, rng.split(1));
  s.expand_router(1);
  s.freeze_router(0);
  EXPECT_THROW(s.sites()[0].routers[0].weights.mutable_value(), ContractError);
  GradientTape tape;
  EXPECT_THROW(tape.track(s.sites()[0].routers[0].weights), ContractError);
}

TEST(MoE, RouterForUntrainedTaskThrows) {
  Rng rng(14);
  MoEAdapterState s({4, 3, 2, 2, 1}, {{0, Branch::Image}}, rng.split(1));
  s.expand_router(1);
  EXPECT_THROW(moe_forward(s, 0, Branch::Image, 1, Vector(4, 0.0)), ContractError);
  EXPECT_THROW(moe_forward(s, 1, Branch::Image, 0, Vector(4, 0.0)), ContractError);
}

TEST(MoE, InvalidConfigThrows) {
  EXPECT_THROW(MoEAdapterState({4, 3, 2, 2, 4}, {{0, Branch::Image}}, Rng(1)), ContractError);
  EXPECT_THROW(MoEAdapterState({4, 3, 2, 2, 0}, {{0, Branch::Image}}, Rng(1)), ContractError);
  EXPECT_THROW(MoEAdapterState({0, 3, 2, 2, 1}, {{0, Branch::Image}}, Rng(1)), ContractError);
}

TEST(MoE, FreshExpertsAddNothing) {
  Rng rng(15);
  MoEAdapterState s({6, 4, 3, 2, 2}, {{0, Branch::Image}}, rng.split(1));
  s.expand_router(5);
  for (int trial = 0; trial < 20; ++trial) {
    EXPECT_EQ(moe_forward(s, 0, Branch::Image, 0, test::random_vector(rng, 6)), Vector(6, 0.0));
  }
}

TEST(MoE, FreezeExpertsFreezesEveryExpertTensor) {
  Rng rng(16);
  MoEAdapterState s({4, 3, 2, 2, 1}, {{0, Branch::Image}, {1, Branch::Text}}, rng.split(1));
  s.freeze_experts();
  for (const auto& site : s.sites()) {
    for (const auto& ex : site.experts) ex.for_each_param([](const Param& p) { EXPECT_TRUE(p.frozen()); });
  }
}

TEST(MoE, ParameterNamesAreUnique) {
  Rng rng(17);
  MoEAdapterState s({4, 3, 2, 2, 1}, {{0, Branch::Image}, {0, Branch::Text}}, rng.split(1));
  s.expand_router(1);
  std::set<std::string> names;
  std::size_t count = 0;
  for (const auto& site : s.sites()) {
    for (const auto& ex : site.experts) {
      ex.for_each_param([&](const Param& p) {
        names.insert(p.name());
        ++count;
      });
    }
    for (const auto& r : site.routers) {
      names.insert(r.weights.name());
      ++count;
    }
  }
  EXPECT_EQ(names.size(), count);
  EXPECT_TRUE(names.count("abfa.image.l0.e2.B1"));
  EXPECT_TRUE(names.count("abfa.text.l0.router0"));
}

TEST(SiteKey, BranchNamesRoundTrip) {
  EXPECT_EQ(parse_branch(branch_name(Branch::Image)), Branch::Image);
  EXPECT_EQ(parse_branch(branch_name(Branch::Text)), Branch::Text);
  EXPECT_THROW(parse_branch("audio"), ContractError);
}

}  // namespace
}  // namespace afa
