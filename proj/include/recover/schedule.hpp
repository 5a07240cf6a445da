// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "recover/core.hpp"
#include "recover/rng.hpp"

namespace recover {

/// Where inside an iteration a replica dies.
struct InjectionPoint {
  enum class Kind : std::uint8_t { BeforeSync, DuringSync, AfterSyncBeforeStep };

  Kind kind = Kind::DuringSync;
  std::size_t bucket = 0;  // DuringSync only: the collective on this bucket observes the death

  static InjectionPoint before_sync() { return {Kind::BeforeSync, 0}; }
  static InjectionPoint during_sync(std::size_t k) { return {Kind::DuringSync, k}; }
  static InjectionPoint after_sync() { return {Kind::AfterSyncBeforeStep, 0}; }

  bool operator==(const InjectionPoint&) const = default;
};

inline std::string to_string(const InjectionPoint& p) {
  switch (p.kind) {
    case InjectionPoint::Kind::BeforeSync: return "before_sync";
    case InjectionPoint::Kind::DuringSync: return "during_sync:" + std::to_string(p.bucket);
    case InjectionPoint::Kind::AfterSyncBeforeStep: return "after_sync";
  }
  return "unknown";
}

inline std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ParseError("invalid " + std::string(what) + ": '" + std::string(text) + "'");
  }
  return v;
}

inline InjectionPoint parse_injection_point(std::string_view text) {
  if (text == "before_sync") return InjectionPoint::before_sync();
  if (text == "after_sync") return InjectionPoint::after_sync();
  constexpr std::string_view prefix = "during_sync:";
  if (text.starts_with(prefix)) {
    return InjectionPoint::during_sync(parse_uint(text.substr(prefix.size()), "bucket index in location"));
  }
  throw ParseError("unknown location '" + std::string(text) + "'");
}

struct FailureEntry {
  std::uint64_t step = 0;
  ReplicaId replica = 0;
  std::uint32_t local_rank = 0;
  InjectionPoint location;

  bool operator==(const FailureEntry&) const = default;
};

struct LocationWeights {
  double before_sync = 0.0;
  double during_sync = 1.0;
  double after_sync = 0.0;

  bool operator==(const LocationWeights&) const = default;
};

/// Inputs that fully determine a generated schedule.
struct ScheduleSpec {
  std::uint64_t w_init = 1;
  std::uint32_t ranks_per_replica = 1;
  std::size_t buckets = 1;
  std::uint64_t seed = 0;
  std::uint64_t count = 0;
  std::uint64_t step_lo = 0;
  std::uint64_t step_hi = 0;
  LocationWeights weights;

  bool operator==(const ScheduleSpec&) const = default;
};

struct FailureSchedule {
  std::vector<FailureEntry> entries;  // sorted by step
  std::optional<ScheduleSpec> spec;

  bool empty() const noexcept { return entries.empty(); }

  std::vector<FailureEntry> at_step(std::uint64_t step) const {
    std::vector<FailureEntry> out;
    for (const auto& e : entries) {
      if (e.step == step) out.push_back(e);
    }
    return out;
  }

  bool operator==(const FailureSchedule&) const = default;
};

inline void validate(const ScheduleSpec& spec) {
  if (spec.w_init == 0) throw InvalidSpec("w_init must be positive");
  if (spec.count >= spec.w_init) {
    throw InvalidSpec("count (" + std::to_string(spec.count) + ") must be less than w_init (" +
                      std::to_string(spec.w_init) + ") so that one replica survives");
  }
  if (spec.step_lo > spec.step_hi) throw InvalidSpec("step range is empty");
  if (spec.buckets == 0) throw InvalidSpec("bucket count must be positive");
  if (spec.ranks_per_replica == 0) throw InvalidSpec("ranks_per_replica must be positive");
  const auto& w = spec.weights;
  if (w.before_sync < 0 || w.during_sync < 0 || w.after_sync < 0) throw InvalidSpec("location weights must be non-negative");
  if (spec.count > 0 && w.before_sync + w.during_sync + w.after_sync <= 0) {
    throw InvalidSpec("location weights must not all be zero");
  }
}

/// Deterministic schedule: distinct replicas drawn uniformly without
/// replacement, steps uniform in the range, locations by weight.
inline FailureSchedule generate_schedule(const ScheduleSpec& spec) {
  validate(spec);
  std::mt19937_64 gen(spec.seed);
  std::vector<ReplicaId> pool(spec.w_init);
  std::iota(pool.begin(), pool.end(), ReplicaId{0});

  FailureSchedule schedule;
  schedule.spec = spec;
  const auto& w = spec.weights;
  const double total = w.before_sync + w.during_sync + w.after_sync;
  for (std::uint64_t i = 0; i < spec.count; ++i) {
    const auto pick = i + rng::below(gen, pool.size() - i);
    std::swap(pool[i], pool[pick]);

    FailureEntry e;
    e.replica = pool[i];
    e.step = spec.step_lo + rng::below(gen, spec.step_hi - spec.step_lo + 1);
    e.local_rank = static_cast<std::uint32_t>(rng::below(gen, spec.ranks_per_replica));
    const double u = rng::unit(gen) * total;
    if (u < w.before_sync) {
      e.location = InjectionPoint::before_sync();
    } else if (u < w.before_sync + w.during_sync || w.after_sync == 0) {
      e.location = InjectionPoint::during_sync(rng::below(gen, spec.buckets));
    } else {
      e.location = InjectionPoint::after_sync();
    }
    schedule.entries.push_back(e);
  }
  std::stable_sort(schedule.entries.begin(), schedule.entries.end(),
                   [](const FailureEntry& a, const FailureEntry& b) { return a.step < b.step; });
  return schedule;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  return os.str();
}

/// Human-readable YAML, one list item per failure.
inline std::string to_text(const FailureSchedule& schedule) {
  std::ostringstream os;
  os << "# failure schedule: (step, replica, local_rank, location)\n";
  if (schedule.spec) {
    const auto& s = *schedule.spec;
    os << "spec:\n"
       << "  w_init: " << s.w_init << "\n"
       << "  ranks_per_replica: " << s.ranks_per_replica << "\n"
       << "  buckets: " << s.buckets << "\n"
       << "  seed: " << s.seed << "\n"
       << "  count: " << s.count << "\n"
       << "  steps: \"" << s.step_lo << ":" << s.step_hi << "\"\n"
       << "  weights:\n"
       << "    before_sync: " << format_double(s.weights.before_sync) << "\n"
       << "    during_sync: " << format_double(s.weights.during_sync) << "\n"
       << "    after_sync: " << format_double(s.weights.after_sync) << "\n";
  }
  if (schedule.entries.empty()) {
    os << "failures: []\n";
    return os.str();
  }
  os << "failures:\n";
  for (const auto& e : schedule.entries) {
    os << "  - step: " << e.step << "\n"
       << "    replica: " << e.replica << "\n"
       << "    local_rank: " << e.local_rank << "\n"
       << "    location: " << to_string(e.location) << "\n";
  }
  return os.str();
}

namespace detail {

inline void reject_unknown_keys(const YAML::Node& node, std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParseError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
T required(const YAML::Node& node, const char* key, std::string_view where) {
  const auto child = node[key];
  if (!child) throw ParseError("missing key '" + std::string(key) + "' in " + std::string(where));
  try {
    return child.as<T>();
  } catch (const YAML::Exception&) {
    throw ParseError("bad value for key '" + std::string(key) + "' in " + std::string(where));
  }
}

inline std::pair<std::uint64_t, std::uint64_t> parse_step_range(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ParseError("step range must look like lo:hi, got '" + std::string(text) + "'");
  return {parse_uint(text.substr(0, colon), "step range start"), parse_uint(text.substr(colon + 1), "step range end")};
}

}  // namespace detail

inline FailureSchedule parse_schedule(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("schedule is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ParseError("schedule must be a mapping with a 'failures' key");
  detail::reject_unknown_keys(root, {"spec", "failures"}, "schedule");

  FailureSchedule schedule;
  if (const auto s = root["spec"]) {
    detail::reject_unknown_keys(s, {"w_init", "ranks_per_replica", "buckets", "seed", "count", "steps", "weights"}, "spec");
    ScheduleSpec spec;
    spec.w_init = detail::required<std::uint64_t>(s, "w_init", "spec");
    spec.ranks_per_replica = detail::required<std::uint32_t>(s, "ranks_per_replica", "spec");
    spec.buckets = detail::required<std::size_t>(s, "buckets", "spec");
    spec.seed = detail::required<std::uint64_t>(s, "seed", "spec");
    spec.count = detail::required<std::uint64_t>(s, "count", "spec");
    std::tie(spec.step_lo, spec.step_hi) = detail::parse_step_range(detail::required<std::string>(s, "steps", "spec"));
    if (const auto w = s["weights"]) {
      detail::reject_unknown_keys(w, {"before_sync", "during_sync", "after_sync"}, "weights");
      spec.weights.before_sync = detail::required<double>(w, "before_sync", "weights");
      spec.weights.during_sync = detail::required<double>(w, "during_sync", "weights");
      spec.weights.after_sync = detail::required<double>(w, "after_sync", "weights");
    }
    schedule.spec = spec;
  }

  const auto failures = root["failures"];
  if (!failures) throw ParseError("missing key 'failures' in schedule");
  if (!failures.IsSequence()) throw ParseError("'failures' must be a list");
  for (const auto& item : failures) {
    detail::reject_unknown_keys(item, {"step", "replica", "local_rank", "location"}, "failure entry");
    FailureEntry e;
    e.step = detail::required<std::uint64_t>(item, "step", "failure entry");
    e.replica = detail::required<ReplicaId>(item, "replica", "failure entry");
    e.local_rank = detail::required<std::uint32_t>(item, "local_rank", "failure entry");
    e.location = parse_injection_point(detail::required<std::string>(item, "location", "failure entry"));
    schedule.entries.push_back(e);
  }
  if (!std::is_sorted(schedule.entries.begin(), schedule.entries.end(),
                      [](const FailureEntry& a, const FailureEntry& b) { return a.step < b.step; })) {
    throw ParseError("failure entries must be sorted by step");
  }
  return schedule;
}

/// Checks a schedule against the world it will be injected into.
inline void check_schedule(const FailureSchedule& schedule, std::uint64_t w_init, std::size_t buckets,
                           std::uint32_t ranks_per_replica) {
  for (const auto& e : schedule.entries) {
    if (e.replica >= w_init) throw InvalidSpec("schedule names replica " + std::to_string(e.replica) + " outside w_init");
    if (e.local_rank >= ranks_per_replica) {
      throw InvalidSpec("schedule names local rank " + std::to_string(e.local_rank) + " outside ranks_per_replica");
    }
    if (e.location.kind == InjectionPoint::Kind::DuringSync && e.location.bucket >= buckets) {
      throw InvalidSpec("schedule names bucket " + std::to_string(e.location.bucket) + " outside the bucket count");
    }
  }
}

}  // namespace recover
