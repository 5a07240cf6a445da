// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "recover/trainer.hpp"
#include "recover/walkthrough.hpp"

using namespace recover;

namespace {

TrainerConfig small(ModelKind model, StreamKind stream) {
  TrainerConfig c;
  c.w_init = 4;
  c.g_init = 2;
  c.buckets = 3;
  c.dim = 5;
  c.model = model;
  c.stream = stream;
  c.seed = 13;
  return c;
}

FailureEntry death(std::uint64_t step, ReplicaId r, InjectionPoint at) { return {step, r, 0, at}; }

void expect_replicas_agree(const Trainer& t) {
  for (ReplicaId id : t.comm().members()) EXPECT_EQ(t.params(id), t.params());
}

}  // namespace

TEST(Trainer, ConstantGradientStepIsTheSharedGradient) {
  Trainer t(small(ModelKind::ConstantGradient, StreamKind::Identical));
  const auto g0 = t.stream().at(0).examples[0].x;
  const auto o = t.run_iteration();
  EXPECT_EQ(o.contrib_total, 8u);
  EXPECT_EQ(o.divisor, 8.0);
  for (std::size_t j = 0; j < g0.size(); ++j) EXPECT_EQ(t.params()[j], -0.0625 * g0[j]);
  expect_replicas_agree(t);
}

TEST(Trainer, LinearStepMatchesADirectComputation) {
  const auto cfg = small(ModelKind::Linear, StreamKind::Synthetic);
  Trainer t(cfg);
  DataStream s({cfg.seed, cfg.w_init, cfg.dim, cfg.microbatch_size, cfg.noise, cfg.stream});
  ToyModel m{ModelKind::Linear, std::vector<double>(cfg.dim, 0.0)};
  std::vector<double> sum(cfg.dim, 0.0);
  for (std::uint64_t i = 0; i < 8; ++i) {
    const auto g = evaluate(m, s.at(i)).grad;
    for (std::size_t j = 0; j < cfg.dim; ++j) sum[j] += g[j];
  }
  const auto o = t.run_iteration();
  EXPECT_EQ(o.indices, (std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  for (std::size_t j = 0; j < cfg.dim; ++j) EXPECT_NEAR(t.params()[j], -cfg.learning_rate * sum[j] / 8.0, 1e-12);
}

TEST(Trainer, WalkthroughChecksAllHold) {
  const auto rep = run_walkthrough();
  for (const auto& c : rep.checks) EXPECT_TRUE(c.ok()) << c.name << ": expected " << c.expected << ", got " << c.actual;
  EXPECT_GE(rep.checks.size(), 30u);
}

TEST(Trainer, BoundaryIterationKeepsTheBatch) {
  Trainer t(walkthrough_config());
  t.run_iteration();
  const std::vector<FailureEntry> f{death(1, 31, InjectionPoint::during_sync(2))};
  const auto o = t.run_iteration(f);
  EXPECT_TRUE(o.crossed_boundary);
  EXPECT_EQ(o.contrib_total, 256u);
  EXPECT_EQ(o.distinct_indices, 256u);
  EXPECT_EQ(o.major_bound, 9u);
  EXPECT_EQ(o.w_after, 31u);
  EXPECT_TRUE(o.epoch_pure);
  std::uint64_t eights = 0, nines = 0;
  for (const auto& [id, n] : o.contributions) {
    eights += n == 8;
    nines += n == 9;
  }
  EXPECT_EQ(eights, 23u);
  EXPECT_EQ(nines, 8u);
  // The next iteration runs the advanced layout.
  const auto n = t.run_iteration();
  EXPECT_EQ(n.g_start, 9u);
  EXPECT_EQ(n.r_start, 4u);
  EXPECT_EQ(n.contrib_total, 256u);
  expect_replicas_agree(t);
}

TEST(Trainer, LateDeathAfterCleanSyncCommitsUnchanged) {
  const auto cfg = small(ModelKind::Linear, StreamKind::Synthetic);
  Trainer a(cfg), b(cfg);
  const std::vector<FailureEntry> f{death(0, 3, InjectionPoint::after_sync())};
  const auto o = a.run_iteration(f);
  b.run_iteration();
  ASSERT_EQ(o.failures.size(), 1u);
  EXPECT_TRUE(o.failures[0].deferred);
  EXPECT_EQ(o.contrib_total, 8u);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_EQ(a.comm().size(), 3u);
  EXPECT_FALSE(a.comm().members().contains(3));
}

TEST(Trainer, SparesDoNotInfluenceTheUpdate) {
  Trainer t(walkthrough_config());
  t.run_iteration();
  const std::vector<FailureEntry> f{death(1, 31, InjectionPoint::during_sync(2))};
  t.run_iteration(f);
  std::vector<ReplicaId> spares;
  for (ReplicaId id : t.comm().members()) {
    const auto r = t.comm().role(id);
    if (r == ReplicaRole::MajorSpare || r == ReplicaRole::MinorSpare) spares.push_back(id);
  }
  ASSERT_FALSE(spares.empty());
  Trainer salted = t;
  for (ReplicaId id : spares) salted.stream().salt_slice(id, 0xdead);
  t.run_iteration();
  salted.run_iteration();
  EXPECT_EQ(t.params(), salted.params());
}

TEST(Trainer, StaticDivisorNeverChanges) {
  Trainer t(walkthrough_config());
  const auto failures = walkthrough_failures();
  for (std::uint64_t step = 0; step < 5; ++step) {
    std::vector<FailureEntry> now;
    for (const auto& e : failures) {
      if (e.step == step) now.push_back(e);
    }
    const auto o = t.run_iteration(now);
    EXPECT_EQ(o.divisor, 256.0);
    EXPECT_EQ(o.contrib_total, 256u);
    expect_replicas_agree(t);
  }
}

TEST(Trainer, AdaptiveShrinksTheBatch) {
  auto cfg = walkthrough_config();
  cfg.policy = PolicyKind::Adaptive;
  Trainer t(cfg);
  const std::vector<FailureEntry> f0{death(0, 31, InjectionPoint::during_sync(0))};
  const std::vector<FailureEntry> f1{death(1, 30, InjectionPoint::during_sync(0))};
  EXPECT_EQ(t.run_iteration(f0).contrib_total, 248u);
  const auto o = t.run_iteration(f1);
  EXPECT_EQ(o.contrib_total, 240u);
  EXPECT_FALSE(o.crossed_boundary);
  EXPECT_EQ(o.divisor, 256.0);
  EXPECT_EQ(t.policy().g_cur, 8u);
}

TEST(Trainer, EveryoneDeadIsReported) {
  Trainer t(small(ModelKind::Linear, StreamKind::Synthetic));
  std::vector<FailureEntry> f;
  for (ReplicaId r = 0; r < 4; ++r) f.push_back(death(0, r, InjectionPoint::during_sync(0)));
  EXPECT_THROW(t.run_iteration(f), AllReplicasDead);
}
