// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "recover/comm.hpp"
#include "recover/restoration.hpp"

using namespace recover;

namespace {

BucketLedger single(std::vector<double> data) {
  BucketLedger l;
  l.buckets.push_back(GradientBucket{0, std::move(data), {}, {}, {}});
  return l;
}

LedgerSet uniform(std::size_t n, std::vector<double> data) {
  LedgerSet s;
  for (std::size_t i = 0; i < n; ++i) s.emplace(static_cast<ReplicaId>(i), single(data));
  return s;
}

}  // namespace

TEST(Allreduce, HealthyGroupSumsIdenticalInputs) {
  Communicator comm(4);
  auto ledgers = uniform(4, {1.0, 2.0});
  const auto work = ulfm_allreduce(comm, bucket_group(ledgers, comm, 0));
  ASSERT_TRUE(work.ok());
  EXPECT_FALSE(work.record);
  EXPECT_EQ(work.reduced_epoch, WorldEpoch{0});
  EXPECT_EQ(comm.epoch(), WorldEpoch{0});
  for (const auto& [id, l] : ledgers) {
    EXPECT_EQ(l.buckets[0].data, (std::vector<double>{4.0, 8.0}));
    EXPECT_EQ(l.buckets[0].reduced_under, WorldEpoch{0});
  }
}

TEST(Allreduce, DeadMajorWithoutSpareIsABoundary) {
  Communicator comm(32);
  for (ReplicaId id = 0; id < 32; ++id) comm.set_contribution(id, {8, 0});
  auto ledgers = uniform(32, {1.0});
  comm.kill(31);
  const auto work = ulfm_allreduce(comm, bucket_group(ledgers, comm, 0));
  ASSERT_TRUE(work.failed());
  ASSERT_TRUE(work.record);
  EXPECT_FALSE(work.reduced_epoch);
  EXPECT_EQ(work.record->contrib.total(), 248u);
  EXPECT_TRUE(work.record->at_boundary);
  EXPECT_TRUE(work.record->promotions.empty());
  EXPECT_EQ(work.record->failed_replicas, std::vector<ReplicaId>{31});
  EXPECT_EQ(work.record->epoch_after, WorldEpoch{1});
  EXPECT_EQ(comm.epoch(), WorldEpoch{1});
  EXPECT_EQ(comm.size(), 31u);
  for (ReplicaId id = 0; id < 31; ++id) {
    EXPECT_EQ(ledgers.at(id).buckets[0].data, std::vector<double>{1.0});
    EXPECT_FALSE(ledgers.at(id).buckets[0].reduced_under);
  }
}

TEST(Allreduce, SpareContributionIsZeroedVirtually) {
  Communicator comm(4);
  comm.set_role(3, ReplicaRole::MajorSpare);
  LedgerSet ledgers = uniform(3, {2.0});
  ledgers.emplace(3, single({5.0}));
  snapshot_and_tag(ledgers.at(3), 0, comm.epoch());
  const auto work = ulfm_allreduce(comm, bucket_group(ledgers, comm, 0));
  ASSERT_TRUE(work.ok());
  for (const auto& [id, l] : ledgers) EXPECT_EQ(l.buckets[0].data, std::vector<double>{6.0});
  EXPECT_EQ(*ledgers.at(3).buckets[0].snapshot, std::vector<double>{5.0});
}

TEST(Allreduce, BoundaryPassAdmitsSpares) {
  Communicator comm(2);
  comm.set_role(1, ReplicaRole::MajorSpare);
  comm.set_boundary_pass(true);
  LedgerSet ledgers;
  ledgers.emplace(0, single({1.0}));
  ledgers.emplace(1, single({2.0}));
  ASSERT_TRUE(ulfm_allreduce(comm, bucket_group(ledgers, comm, 0)).ok());
  EXPECT_EQ(ledgers.at(0).buckets[0].data, std::vector<double>{3.0});
}

TEST(Allreduce, QuiescedGroupIsANoop) {
  Communicator comm(3);
  auto ledgers = uniform(3, {1.0});
  comm.set_quiesced(true);
  comm.kill(1);
  const auto work = ulfm_allreduce(comm, bucket_group(ledgers, comm, 0));
  EXPECT_EQ(work.status, WorkStatus::Noop);
  EXPECT_EQ(comm.epoch(), WorldEpoch{0});
  EXPECT_EQ(comm.size(), 3u);
  EXPECT_TRUE(comm.has_undetected_failure());
  for (const auto& [id, l] : ledgers) {
    EXPECT_EQ(l.buckets[0].data, std::vector<double>{1.0});
    EXPECT_FALSE(l.buckets[0].reduced_under);
  }
}

TEST(Allreduce, SumsInAscendingIdOrder) {
  // 1e16 + 1 - 1e16 depends on association; the fixed fold gives one answer.
  Communicator comm(3);
  LedgerSet ledgers;
  ledgers.emplace(0, single({1e16}));
  ledgers.emplace(1, single({1.0}));
  ledgers.emplace(2, single({-1e16}));
  ASSERT_TRUE(ulfm_allreduce(comm, bucket_group(ledgers, comm, 0)).ok());
  EXPECT_EQ(ledgers.at(0).buckets[0].data[0], (1e16 + 1.0) + -1e16);
}

TEST(Allreduce, MismatchedLengthsAreRejected) {
  Communicator comm(2);
  LedgerSet ledgers;
  ledgers.emplace(0, single({1.0}));
  ledgers.emplace(1, single({1.0, 2.0}));
  EXPECT_THROW(ulfm_allreduce(comm, bucket_group(ledgers, comm, 0)), std::invalid_argument);
}

TEST(Allreduce, EveryoneDeadIsFatal) {
  Communicator comm(2);
  auto ledgers = uniform(2, {1.0});
  comm.kill(0);
  comm.kill(1);
  EXPECT_THROW(ulfm_allreduce(comm, bucket_group(ledgers, comm, 0)), EmptyMembership);
}

TEST(Consensus, HealthyGroupSucceeds) {
  Communicator comm(8);
  const auto work = ulfm_consensus(comm);
  EXPECT_TRUE(work.ok());
  EXPECT_EQ(comm.epoch(), WorldEpoch{0});
}

TEST(Consensus, LateDeathIsReportedAfterCleanReduction) {
  Communicator comm(8);
  auto ledgers = uniform(8, {1.0});
  ASSERT_TRUE(ulfm_allreduce(comm, bucket_group(ledgers, comm, 0)).ok());
  comm.kill(3);
  const auto work = ulfm_consensus(comm);
  ASSERT_TRUE(work.failed());
  EXPECT_EQ(work.record->failed_replicas, std::vector<ReplicaId>{3});
  EXPECT_EQ(comm.epoch(), WorldEpoch{1});
  // The reduction happened entirely under the old membership.
  EXPECT_EQ(ledgers.at(0).buckets[0].reduced_under, WorldEpoch{0});
  EXPECT_EQ(comm.membership_at(WorldEpoch{0}).size(), 8u);
  EXPECT_EQ(comm.membership_at(WorldEpoch{1}).size(), 7u);
}

TEST(Consensus, IgnoresQuiesce) {
  Communicator comm(3);
  comm.set_quiesced(true);
  comm.kill(2);
  EXPECT_TRUE(ulfm_consensus(comm).failed());
}

TEST(Consensus, SimultaneousMajorAndMinorWithSparesForBoth) {
  Communicator comm(6);
  comm.set_role(3, ReplicaRole::Minor);
  comm.set_role(4, ReplicaRole::MajorSpare);
  comm.set_role(5, ReplicaRole::MinorSpare);
  comm.kill(1);
  comm.kill(3);
  const auto work = ulfm_consensus(comm);
  ASSERT_TRUE(work.failed());
  EXPECT_FALSE(work.record->at_boundary);
  const std::vector<std::pair<ReplicaId, ReplicaRole>> promos{{4, ReplicaRole::Major}, {5, ReplicaRole::Minor}};
  EXPECT_EQ(work.record->promotions, promos);
  EXPECT_EQ(work.record->role_counts.majors, 3u);
  EXPECT_EQ(work.record->role_counts.minors, 1u);
  EXPECT_EQ(work.record->role_counts.major_spares + work.record->role_counts.minor_spares, 0u);
}

TEST(Consensus, RecordMatchesWhatTheAllreduceWouldReport) {
  Communicator a(5);
  a.set_role(4, ReplicaRole::MajorSpare);
  for (ReplicaId id = 0; id < 5; ++id) a.set_contribution(id, {3, 1});
  a.kill(2);
  Communicator b = a;
  auto ledgers = uniform(5, {1.0});
  const auto x = ulfm_allreduce(a, bucket_group(ledgers, a, 0));
  const auto y = ulfm_consensus(b);
  ASSERT_TRUE(x.failed() && y.failed());
  EXPECT_EQ(*x.record, *y.record);
}

TEST(Promotion, MinorSpareTakesOverTheMinor) {
  Communicator comm(31);
  for (ReplicaId id = 0; id < 28; ++id) comm.set_role(id, ReplicaRole::Major);
  comm.set_role(28, ReplicaRole::Minor);
  comm.set_role(29, ReplicaRole::MajorSpare);
  comm.set_role(30, ReplicaRole::MinorSpare);
  comm.kill(28);
  const auto work = ulfm_consensus(comm);
  ASSERT_TRUE(work.failed());
  EXPECT_FALSE(work.record->at_boundary);
  ASSERT_EQ(work.record->promotions.size(), 1u);
  EXPECT_EQ(work.record->promotions[0].first, 30u);
  EXPECT_EQ(comm.role(30), ReplicaRole::Minor);
  EXPECT_EQ(comm.role(29), ReplicaRole::MajorSpare);
}

TEST(Promotion, LowestIndexedSpareWins) {
  Communicator comm(10);
  comm.set_role(5, ReplicaRole::MajorSpare);
  comm.set_role(9, ReplicaRole::MajorSpare);
  EXPECT_EQ(elect_promotion(comm, ReplicaRole::Major), 5u);
  EXPECT_EQ(comm.role(5), ReplicaRole::Major);
  EXPECT_EQ(comm.role(9), ReplicaRole::MajorSpare);
}

TEST(Promotion, NoSpareOfTheKind) {
  Communicator comm(3);
  comm.set_role(2, ReplicaRole::MajorSpare);
  EXPECT_THROW(elect_promotion(comm, ReplicaRole::Minor), NoSpareAvailable);
  EXPECT_THROW(elect_promotion(comm, ReplicaRole::MajorSpare), std::invalid_argument);
}

TEST(Promotion, BoundaryMinorIsBackedByMajorSpares) {
  Communicator comm(3);
  comm.set_role(1, ReplicaRole::BoundaryMinor);
  comm.set_role(2, ReplicaRole::MajorSpare);
  comm.kill(1);
  const auto work = ulfm_consensus(comm);
  ASSERT_TRUE(work.failed());
  EXPECT_FALSE(work.record->at_boundary);
  EXPECT_EQ(comm.role(2), ReplicaRole::BoundaryMinor);
}

TEST(Registers, OnlyMembersCanBeWritten) {
  Communicator comm(2);
  EXPECT_THROW(comm.set_role(7, ReplicaRole::Major), std::out_of_range);
  EXPECT_THROW(comm.set_target(7, 1), std::out_of_range);
  comm.kill(1);
  ASSERT_TRUE(ulfm_consensus(comm).failed());
  EXPECT_THROW(comm.set_contribution(1, {}), std::out_of_range);
}

TEST(Registers, ContributionCensusSkipsSpares) {
  Communicator comm(3);
  comm.set_role(2, ReplicaRole::MinorSpare);
  comm.set_contribution(0, {4, 1});
  comm.set_contribution(1, {4, 0});
  comm.set_contribution(2, {4, 0});
  EXPECT_EQ(comm.contribution_census(), (Contribution{8, 1}));
}

// The boundary verdict checked against a direct statement of the rule: some
// role lost more replicas than it has surviving spares of the matching kind.
TEST(Record, BoundaryPredicateOverRandomFailedSets) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + gen() % 12;
    Communicator comm(n);
    std::map<ReplicaId, ReplicaRole> roles;
    for (ReplicaId id = 0; id < n; ++id) {
      const auto role = static_cast<ReplicaRole>(gen() % 5);
      comm.set_role(id, role);
      roles[id] = role;
    }
    std::set<ReplicaId> dead;
    const std::size_t kills = 1 + gen() % (n - 1);
    while (dead.size() < kills) dead.insert(static_cast<ReplicaId>(gen() % n));
    std::uint64_t lost_major = 0, lost_minor = 0, ms = 0, mi = 0;
    for (const auto& [id, role] : roles) {
      if (dead.contains(id)) {
        lost_major += role == ReplicaRole::Major || role == ReplicaRole::BoundaryMinor;
        lost_minor += role == ReplicaRole::Minor;
      } else {
        ms += role == ReplicaRole::MajorSpare;
        mi += role == ReplicaRole::MinorSpare;
      }
    }
    for (ReplicaId id : dead) comm.kill(id);
    const auto work = ulfm_consensus(comm);
    ASSERT_TRUE(work.failed());
    const bool expect = lost_major > ms || lost_minor > mi;
    ASSERT_EQ(work.record->at_boundary, expect) << "trial " << trial;
    if (!expect) {
      ASSERT_EQ(work.record->promotions.size(), lost_major + lost_minor);
    }
    ASSERT_EQ(work.record->role_counts.total(), n - kills);
  }
}

TEST(Epoch, MonotoneAcrossRepairs) {
  Communicator comm(6);
  WorldEpoch last = comm.epoch();
  for (ReplicaId id = 5; id >= 1; --id) {
    comm.kill(id);
    ASSERT_TRUE(ulfm_consensus(comm).failed());
    EXPECT_EQ(comm.epoch(), last.next());
    last = comm.epoch();
  }
  EXPECT_EQ(comm.epoch(), WorldEpoch{5});
  EXPECT_EQ(comm.members(), std::set<ReplicaId>{0});
}
