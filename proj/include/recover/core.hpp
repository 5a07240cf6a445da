// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace recover {

using ReplicaId = std::uint32_t;

/// Monotone membership counter of a cross-replica communicator. Every
/// successful repair bumps it by one; a bucket snapshot tagged with an older
/// value was (or may have been) reduced under a membership that no longer
/// exists.
struct WorldEpoch {
  std::uint64_t value = 0;

  constexpr WorldEpoch next() const noexcept { return WorldEpoch{value + 1}; }
  constexpr auto operator<=>(const WorldEpoch&) const = default;
};

enum class ReplicaRole : std::uint8_t {
  Major,
  Minor,
  MajorSpare,
  MinorSpare,
  BoundaryMinor,
};

constexpr bool is_spare(ReplicaRole role) noexcept {
  return role == ReplicaRole::MajorSpare || role == ReplicaRole::MinorSpare;
}

/// Spare kind able to take over a vacated contributor role.
constexpr ReplicaRole spare_kind_for(ReplicaRole vacated) noexcept {
  return vacated == ReplicaRole::Minor ? ReplicaRole::MinorSpare : ReplicaRole::MajorSpare;
}

constexpr std::string_view to_string(ReplicaRole role) noexcept {
  switch (role) {
    case ReplicaRole::Major: return "major";
    case ReplicaRole::Minor: return "minor";
    case ReplicaRole::MajorSpare: return "major_spare";
    case ReplicaRole::MinorSpare: return "minor_spare";
    case ReplicaRole::BoundaryMinor: return "boundary_minor";
  }
  return "unknown";
}

enum class RestoreMode : std::uint8_t { Skip = 0, Blocking = 1, NonBlocking = 2 };

constexpr std::string_view to_string(RestoreMode mode) noexcept {
  switch (mode) {
    case RestoreMode::Skip: return "skip";
    case RestoreMode::Blocking: return "blocking";
    case RestoreMode::NonBlocking: return "non_blocking";
  }
  return "unknown";
}

struct RoleCounts {
  std::uint64_t majors = 0;
  std::uint64_t minors = 0;
  std::uint64_t major_spares = 0;
  std::uint64_t minor_spares = 0;
  std::uint64_t boundary_minors = 0;

  constexpr std::uint64_t total() const noexcept {
    return majors + minors + major_spares + minor_spares + boundary_minors;
  }
  constexpr std::uint64_t& operator[](ReplicaRole role) noexcept {
    switch (role) {
      case ReplicaRole::Major: return majors;
      case ReplicaRole::Minor: return minors;
      case ReplicaRole::MajorSpare: return major_spares;
      case ReplicaRole::MinorSpare: return minor_spares;
      case ReplicaRole::BoundaryMinor: break;
    }
    return boundary_minors;
  }
  constexpr bool operator==(const RoleCounts&) const = default;
};

/// Microbatches a replica has folded into its local accumulation during the
/// current iteration. The boundary part counts microbatches run on extension
/// passes after a policy boundary.
struct Contribution {
  std::uint64_t regular = 0;
  std::uint64_t boundary = 0;

  constexpr std::uint64_t total() const noexcept { return regular + boundary; }
  constexpr bool operator==(const Contribution&) const = default;
};

/// Collectively agreed view after a repair. Every survivor receives the same
/// record for the same failure event.
struct FailureRecord {
  std::vector<ReplicaId> failed_replicas;  // ascending
  std::vector<std::pair<ReplicaId, ReplicaRole>> failed_roles;
  std::vector<std::pair<ReplicaId, ReplicaRole>> promotions;  // (spare, role it took over)
  RoleCounts role_counts;                                      // post-promotion survivors
  Contribution contrib;                                        // over contributing survivors
  bool at_boundary = false;
  WorldEpoch epoch_after;

  std::uint64_t survivors() const noexcept { return role_counts.total(); }
  bool operator==(const FailureRecord&) const = default;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every replica of the job is gone; nothing can continue.
class EmptyMembership : public Error {
 public:
  EmptyMembership() : Error("all replicas are dead") {}
};

class AllReplicasDead : public Error {
 public:
  explicit AllReplicasDead(std::uint64_t iteration)
      : Error("all replicas dead during iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::uint64_t iteration() const noexcept { return iteration_; }

 private:
  std::uint64_t iteration_;
};

class NoSpareAvailable : public Error {
 public:
  explicit NoSpareAvailable(ReplicaRole vacated)
      : Error("no " + std::string(to_string(spare_kind_for(vacated))) + " available to replace a " +
              std::string(to_string(vacated))) {}
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace recover
