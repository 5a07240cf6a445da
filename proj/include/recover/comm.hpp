// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "recover/bucket.hpp"
#include "recover/core.hpp"

namespace recover {

enum class WorkStatus : std::uint8_t { Success, Noop, Failure };

struct WorkResult {
  WorkStatus status = WorkStatus::Success;
  std::optional<FailureRecord> record;
  std::optional<WorldEpoch> reduced_epoch;

  bool ok() const noexcept { return status == WorkStatus::Success; }
  bool failed() const noexcept { return status == WorkStatus::Failure; }
};

/// Per-member bucket views for one collective round.
using BucketGroup = std::map<ReplicaId, std::reference_wrapper<GradientBucket>>;

class Communicator;
inline WorkResult ulfm_allreduce(Communicator& comm, const BucketGroup& group);
inline WorkResult ulfm_consensus(Communicator& comm);
inline ReplicaId elect_promotion(Communicator& comm, ReplicaRole vacated);

/// Simulated shrinkable cross-replica process group.
///
/// Crash-stop deaths are registered with kill() and stay invisible until the
/// next collective on the group runs its detect phase, matching a backend
/// where replicas only learn about remote failures during synchronization.
/// All collectives are atomic rounds over the whole membership.
class Communicator {
 public:
  explicit Communicator(std::size_t world_size) {
    if (world_size == 0) throw std::invalid_argument("communicator needs at least one replica");
    for (std::size_t r = 0; r < world_size; ++r) {
      const auto id = static_cast<ReplicaId>(r);
      members_.insert(id);
      roles_[id] = ReplicaRole::Major;
      contrib_[id] = Contribution{};
      targets_[id] = 0;
    }
    history_.push_back(members_);
  }

  const std::set<ReplicaId>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  bool is_member(ReplicaId id) const { return members_.contains(id); }
  WorldEpoch epoch() const noexcept { return epoch_; }

  /// Membership that was in force while the communicator sat at `epoch`.
  const std::set<ReplicaId>& membership_at(WorldEpoch epoch) const { return history_.at(epoch.value); }

  bool quiesced() const noexcept { return quiesced_; }
  void set_quiesced(bool on) noexcept { quiesced_ = on; }

  /// True while survivors are running the extra microbatches of a policy
  /// boundary; spare zeroing is suspended.
  bool boundary_pass() const noexcept { return boundary_pass_; }
  void set_boundary_pass(bool on) noexcept { boundary_pass_ = on; }

  ReplicaRole role(ReplicaId id) const { return roles_.at(id); }
  void set_role(ReplicaId id, ReplicaRole role) { member_entry(roles_, id) = role; }

  Contribution contribution(ReplicaId id) const { return contrib_.at(id); }
  void set_contribution(ReplicaId id, Contribution c) { member_entry(contrib_, id) = c; }

  std::uint64_t target(ReplicaId id) const { return targets_.at(id); }
  void set_target(ReplicaId id, std::uint64_t quota) { member_entry(targets_, id) = quota; }

  /// Crash-stop death of a whole replica.
  void kill(ReplicaId id) {
    if (members_.contains(id)) dead_.insert(id);
  }
  bool is_dead(ReplicaId id) const { return dead_.contains(id); }
  bool has_undetected_failure() const noexcept { return !dead_.empty(); }

  RoleCounts census() const {
    RoleCounts counts;
    for (ReplicaId id : members_) ++counts[roles_.at(id)];
    return counts;
  }

  /// Microbatches committed by non-spare members. Spares execute work but
  /// contribute nothing until promoted.
  Contribution contribution_census() const {
    Contribution total;
    for (ReplicaId id : members_) {
      if (is_spare(roles_.at(id))) continue;
      total.regular += contrib_.at(id).regular;
      total.boundary += contrib_.at(id).boundary;
    }
    return total;
  }

 private:
  template <typename Map>
  typename Map::mapped_type& member_entry(Map& map, ReplicaId id) {
    if (!members_.contains(id)) throw std::out_of_range("replica is not a member of the communicator");
    return map[id];
  }

  std::optional<FailureRecord> detect_repair_record();
  friend WorkResult ulfm_allreduce(Communicator& comm, const BucketGroup& group);
  friend WorkResult ulfm_consensus(Communicator& comm);
  friend ReplicaId elect_promotion(Communicator& comm, ReplicaRole vacated);

  std::set<ReplicaId> members_;
  std::set<ReplicaId> dead_;
  WorldEpoch epoch_{};
  bool quiesced_ = false;
  bool boundary_pass_ = false;
  std::map<ReplicaId, ReplicaRole> roles_;
  std::map<ReplicaId, Contribution> contrib_;
  std::map<ReplicaId, std::uint64_t> targets_;
  std::vector<std::set<ReplicaId>> history_;
};

/// Promotes the lowest-indexed surviving spare of the matching kind into
/// `vacated`. The promoted replica keeps its locally accumulated gradient.
inline ReplicaId elect_promotion(Communicator& comm, ReplicaRole vacated) {
  if (is_spare(vacated)) throw std::invalid_argument("a spare role cannot be vacated into");
  const ReplicaRole kind = spare_kind_for(vacated);
  for (ReplicaId id : comm.members_) {
    if (comm.roles_.at(id) == kind) {
      comm.roles_[id] = vacated;
      return id;
    }
  }
  throw NoSpareAvailable(vacated);
}

/// Detect, Repair and Record. Returns nothing when the membership is intact.
inline std::optional<FailureRecord> Communicator::detect_repair_record() {
  if (dead_.empty()) return std::nullopt;

  FailureRecord record;
  RoleCounts failed;
  for (ReplicaId id : dead_) {
    const ReplicaRole role = roles_.at(id);
    record.failed_replicas.push_back(id);
    record.failed_roles.emplace_back(id, role);
    ++failed[role];
  }

  // Repair: shrink to survivors and bump the epoch.
  for (ReplicaId id : dead_) {
    members_.erase(id);
    roles_.erase(id);
    contrib_.erase(id);
    targets_.erase(id);
  }
  dead_.clear();
  if (members_.empty()) throw EmptyMembership();
  epoch_ = epoch_.next();
  history_.push_back(members_);

  // Record: boundary iff some role lost more replicas than it has spares.
  const RoleCounts surviving = census();
  const std::uint64_t lost_major = failed.majors + failed.boundary_minors;
  record.at_boundary = lost_major > surviving.major_spares || failed.minors > surviving.minor_spares;
  if (!record.at_boundary) {
    for (const auto& [id, role] : record.failed_roles) {
      if (is_spare(role)) continue;
      record.promotions.emplace_back(elect_promotion(*this, role), role);
    }
  }
  record.role_counts = census();
  record.contrib = contribution_census();
  record.epoch_after = epoch_;
  return record;
}

/// Fault-aware sum all-reduce of one bucket position across the membership.
///
/// A quiesced group returns Noop untouched. A detected failure repairs the
/// group and returns Failure without reducing anything. Otherwise the buckets
/// are summed in ascending replica order, with spares contributing zeros
/// outside a boundary pass, and every member receives the identical sum.
inline WorkResult ulfm_allreduce(Communicator& comm, const BucketGroup& group) {
  if (comm.quiesced_) return WorkResult{WorkStatus::Noop, std::nullopt, std::nullopt};
  if (auto record = comm.detect_repair_record()) {
    return WorkResult{WorkStatus::Failure, std::move(record), std::nullopt};
  }

  std::optional<std::size_t> len;
  for (ReplicaId id : comm.members_) {
    const auto it = group.find(id);
    if (it == group.end()) throw std::invalid_argument("member missing from all-reduce group");
    const std::size_t n = it->second.get().data.size();
    if (len && *len != n) throw std::invalid_argument("bucket lengths differ across members");
    len = n;
  }

  std::vector<double> sum(*len, 0.0);
  bool first = true;
  for (ReplicaId id : comm.members_) {
    const auto& bucket = group.at(id).get();
    const bool zeroed = is_spare(comm.roles_.at(id)) && !comm.boundary_pass_;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      const double v = zeroed ? 0.0 : bucket.data[i];
      sum[i] = first ? v : sum[i] + v;
    }
    first = false;
  }
  for (ReplicaId id : comm.members_) {
    auto& bucket = group.at(id).get();
    bucket.data = sum;
    bucket.reduced_under = comm.epoch_;
  }
  return WorkResult{WorkStatus::Success, std::nullopt, comm.epoch_};
}

/// Detect, Repair and Record with no data motion. Ignores the quiesce latch so
/// that late failures are always surfaced before the optimizer step.
inline WorkResult ulfm_consensus(Communicator& comm) {
  if (auto record = comm.detect_repair_record()) {
    return WorkResult{WorkStatus::Failure, std::move(record), std::nullopt};
  }
  return WorkResult{WorkStatus::Success, std::nullopt, std::nullopt};
}

}  // namespace recover
