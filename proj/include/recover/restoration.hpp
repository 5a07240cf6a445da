// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "recover/bucket.hpp"
#include "recover/comm.hpp"

namespace recover {

/// Per-replica bucket ledgers of one data-parallel group.
using LedgerSet = std::map<ReplicaId, BucketLedger>;

inline BucketGroup bucket_group(LedgerSet& ledgers, const Communicator& comm, std::size_t index) {
  BucketGroup group;
  for (ReplicaId id : comm.members()) group.emplace(id, std::ref(ledgers.at(id).buckets.at(index)));
  return group;
}

enum class RestoreOutcome : std::uint8_t { Committed, ReenterFailureHandling };

struct RestoreReport {
  RestoreOutcome outcome = RestoreOutcome::Committed;
  RestoreMode mode = RestoreMode::Skip;
  std::optional<WorkResult> failure;  // set on ReenterFailureHandling
  std::size_t rewound = 0;            // stale bucket positions rewound
  std::size_t rereduced = 0;          // successful re-reductions
};

/// Rewinds stale buckets on every member and, for the blocking mode,
/// re-reduces them on the repaired group before returning.
///
/// All members latch the same mode and tag their buckets at the same points,
/// so the stale set is computed once and checked for agreement.
inline RestoreReport gradient_restoration(LedgerSet& ledgers, Communicator& comm) {
  RestoreReport report;
  const auto& members = comm.members();
  const ReplicaId lead = *members.begin();
  report.mode = ledgers.at(lead).pending_restore;

  const auto stale = classify_stale(ledgers.at(lead), comm.epoch());
  for (ReplicaId id : members) {
    const auto& ledger = ledgers.at(id);
    if (ledger.pending_restore != report.mode) throw InvariantViolation("replicas disagree on restore mode");
    if (classify_stale(ledger, comm.epoch()) != stale) throw InvariantViolation("replicas disagree on stale buckets");
  }

  if (report.mode == RestoreMode::Skip) return report;

  if (report.mode == RestoreMode::NonBlocking) {
    // The extended pass takes fresh snapshots and reduces on the current epoch.
    for (ReplicaId id : members) {
      auto& ledger = ledgers.at(id);
      for (std::size_t k : stale) rewind(ledger.buckets[k]);
      ledger.clear_bookkeeping();
      ledger.pending_restore = RestoreMode::Skip;
    }
    report.rewound = stale.size();
    comm.set_quiesced(false);
    return report;
  }

  for (std::size_t k : stale) {
    for (ReplicaId id : comm.members()) rewind(ledgers.at(id).buckets[k]);
    ++report.rewound;
    WorkResult work = ulfm_allreduce(comm, bucket_group(ledgers, comm, k));
    if (work.failed()) {
      report.outcome = RestoreOutcome::ReenterFailureHandling;
      report.failure = std::move(work);
      return report;
    }
    if (!work.ok()) throw InvariantViolation("blocking re-reduction hit a quiesced group");
    ++report.rereduced;
  }
  comm.set_quiesced(false);
  for (ReplicaId id : comm.members()) ledgers.at(id).pending_restore = RestoreMode::Skip;
  return report;
}

}  // namespace recover
