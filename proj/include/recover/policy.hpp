// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "recover/core.hpp"

namespace recover {

enum class PolicyKind : std::uint8_t { Static, Adaptive };

/// Role layout and counters of the versatile-workload policy.
///
/// In steady state the layout satisfies
///   majors * g_cur + minors * r_cur == global_batch()
/// with g_cur the smallest factor that lets w_cur replicas cover the batch.
/// During a boundary iteration `major_bound` (the microbatch loop bound of a
/// major) grows past g_cur by the accumulated extensions.
struct PolicyState {
  std::uint64_t w_init = 1;
  std::uint64_t g_init = 1;
  std::uint64_t w_cur = 1;
  std::uint64_t g_cur = 1;
  std::uint64_t r_cur = 0;
  RoleCounts counts;
  bool at_boundary = false;
  std::optional<std::uint64_t> g_ext;
  std::optional<std::uint64_t> n_bdry;
  std::uint64_t major_bound = 1;

  std::uint64_t global_batch() const noexcept { return w_init * g_init; }

  /// Every replica starts as a major at g_init.
  static PolicyState initial(std::uint64_t w_init, std::uint64_t g_init) {
    if (w_init == 0 || g_init == 0) throw std::invalid_argument("w_init and g_init must be positive");
    PolicyState s;
    s.w_init = w_init;
    s.g_init = g_init;
    s.w_cur = w_init;
    s.g_cur = g_init;
    s.counts.majors = w_init;
    s.major_bound = g_init;
    return s;
  }

  /// Microbatches committed per iteration by the steady layout.
  std::uint64_t steady_contribution() const noexcept { return counts.majors * g_cur + counts.minors * r_cur; }
  std::uint64_t extension() const noexcept { return major_bound - g_cur; }
};

struct PolicyDecision {
  RestoreMode restore_mode = RestoreMode::Blocking;
  bool should_quiesce = false;
  bool at_boundary = false;
  std::optional<std::uint64_t> g_ext;
  std::optional<std::uint64_t> n_bdry;
  std::optional<ReplicaId> promoted;
};

struct Adjustment {
  PolicyState state;
  PolicyDecision decision;
};

struct Extension {
  std::uint64_t g_ext = 0;
  std::uint64_t n_bdry = 0;
};

inline constexpr std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) noexcept { return (a + b - 1) / b; }

/// Smallest g_ext >= 1 with contributed + survivors * g_ext >= batch, and the
/// number of survivors that run one fewer extra microbatch so the total lands
/// on the batch exactly.
inline Extension boundary_extension(std::uint64_t batch, std::uint64_t contributed, std::uint64_t survivors) {
  if (survivors == 0) throw EmptyMembership();
  if (contributed > batch) throw InvariantViolation("contribution count exceeds the global batch");
  Extension ext;
  ext.g_ext = std::max<std::uint64_t>(1, ceil_div(batch - contributed, survivors));
  ext.n_bdry = contributed + survivors * ext.g_ext - batch;
  return ext;
}

/// Failure record as seen by the iteration that observed it.
struct FailureEvent {
  FailureRecord record;
  std::uint64_t microbatch = 0;  // m when the failure surfaced
  WorldEpoch epoch;
  std::uint64_t w_cur = 0;
};

/// In-iteration response to an agreed failure. The extension is counted from
/// the current microbatch, so a second boundary observed before the first
/// extension ran replaces it rather than stacking on top.
inline Adjustment policy_adjustment(const PolicyState& state, const FailureEvent& e) {
  const FailureRecord& event = e.record;
  Adjustment out{state, {}};
  PolicyState& next = out.state;
  PolicyDecision& d = out.decision;
  next.w_cur = event.survivors();
  next.counts = event.role_counts;
  if (!event.promotions.empty()) d.promoted = event.promotions.front().first;

  if (!event.at_boundary) {
    d.restore_mode = RestoreMode::Blocking;
    return out;
  }

  const Extension ext = boundary_extension(state.global_batch(), event.contrib.total(), next.w_cur);
  next.at_boundary = true;
  next.g_ext = ext.g_ext;
  next.n_bdry = ext.n_bdry;
  next.major_bound = e.microbatch + ext.g_ext;

  d.restore_mode = RestoreMode::NonBlocking;
  d.should_quiesce = true;
  d.at_boundary = true;
  d.g_ext = ext.g_ext;
  d.n_bdry = ext.n_bdry;
  return out;
}

/// Failure observed at the end of the current loop bound.
inline Adjustment policy_adjustment(const PolicyState& state, const FailureRecord& record) {
  return policy_adjustment(state, FailureEvent{record, state.major_bound, record.epoch_after, record.survivors()});
}

/// Elastic baseline: always repair-and-continue, never extends the iteration.
inline PolicyDecision adaptive_policy_adjustment(const FailureRecord&) {
  return PolicyDecision{RestoreMode::Blocking, false, false, std::nullopt, std::nullopt, std::nullopt};
}

struct SteadyLayout {
  std::uint64_t g_cur = 0;
  std::uint64_t r_cur = 0;
  RoleCounts counts;
};

inline SteadyLayout steady_layout(std::uint64_t batch, std::uint64_t survivors) {
  if (survivors == 0) throw EmptyMembership();
  SteadyLayout l;
  l.g_cur = ceil_div(batch, survivors);
  l.counts.majors = batch / l.g_cur;
  l.r_cur = batch - l.counts.majors * l.g_cur;
  l.counts.minors = l.r_cur > 0 ? 1 : 0;
  const std::uint64_t spares = survivors - l.counts.majors - l.counts.minors;
  // Extra spares beyond the reserved minor-spare all back majors.
  l.counts.minor_spares = (l.counts.minors == 1 && spares >= 2) ? 1 : 0;
  l.counts.major_spares = spares - l.counts.minor_spares;
  return l;
}

/// Steady-state layout installed after a boundary iteration commits.
inline PolicyState policy_advancement(const PolicyState& state) {
  PolicyState next = state;
  const SteadyLayout l = steady_layout(state.global_batch(), state.w_cur);
  next.g_cur = l.g_cur;
  next.r_cur = l.r_cur;
  next.counts = l.counts;
  next.at_boundary = false;
  next.g_ext.reset();
  next.n_bdry.reset();
  next.major_bound = l.g_cur;
  return next;
}

/// Microbatches a replica of `role` contributes this iteration.
inline std::uint64_t contribution_quota(const PolicyState& state, ReplicaRole role, bool in_boundary_pass) {
  const std::uint64_t extra = in_boundary_pass ? state.extension() : 0;
  switch (role) {
    case ReplicaRole::Major: return state.g_cur + extra;
    case ReplicaRole::Minor: return state.r_cur + extra;
    case ReplicaRole::BoundaryMinor: return state.g_cur + (extra > 0 ? extra - 1 : 0);
    case ReplicaRole::MajorSpare:
    case ReplicaRole::MinorSpare: return 0;
  }
  return 0;
}

/// Microbatches a replica of `role` accumulates locally. Spares shadow their
/// counterpart so that promotion needs no recomputation.
inline std::uint64_t execution_quota(const PolicyState& state, ReplicaRole role) {
  switch (role) {
    case ReplicaRole::Major:
    case ReplicaRole::MajorSpare: return state.g_cur;
    case ReplicaRole::Minor:
    case ReplicaRole::MinorSpare: return state.r_cur;
    case ReplicaRole::BoundaryMinor: return state.g_cur;
  }
  return 0;
}

}  // namespace recover
