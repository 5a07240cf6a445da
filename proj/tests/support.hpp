// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent oracles and random-case generators shared by the unit tests and
// the acceptance binary. Nothing here calls into the policy arithmetic it is
// used to check.

#include <cstdint>
#include <random>
#include <vector>

#include "recover/recover.hpp"

namespace recover::testing {

struct OracleExtension {
  std::uint64_t g_ext = 0;
  std::uint64_t n_bdry = 0;
};

/// Smallest g >= 1 with contributed + survivors * g >= batch, by linear search.
inline OracleExtension brute_extension(std::uint64_t batch, std::uint64_t contributed, std::uint64_t survivors) {
  std::uint64_t g = 1;
  while (contributed + survivors * g < batch) ++g;
  return {g, contributed + survivors * g - batch};
}

struct OracleLayout {
  std::uint64_t g = 0, r = 0, majors = 0, minors = 0, major_spares = 0, minor_spares = 0;
};

/// Steady layout by search: smallest g covering the batch, then the largest
/// major count that fits, the leftover goes to a single minor.
inline OracleLayout brute_layout(std::uint64_t batch, std::uint64_t survivors) {
  OracleLayout l;
  l.g = 1;
  while (survivors * l.g < batch) ++l.g;
  while ((l.majors + 1) * l.g <= batch) ++l.majors;
  l.r = batch - l.majors * l.g;
  l.minors = l.r > 0 ? 1 : 0;
  std::uint64_t spares = survivors - l.majors - l.minors;
  if (l.minors == 1 && spares >= 2) {
    l.minor_spares = 1;
    --spares;
  }
  l.major_spares = spares;
  return l;
}

/// Random small experiment: W in [2, 64], G in [1, 16], fewer failures than
/// replicas, all three injection locations in play.
struct RandomCase {
  ExperimentConfig cfg;
  FailureSchedule schedule;
};

inline RandomCase random_case(std::uint64_t seed, std::uint64_t max_w = 64, std::uint64_t max_g = 16,
                              std::uint64_t iterations = 6) {
  std::mt19937_64 gen(seed);
  RandomCase c;
  c.cfg.w_init = 2 + rng::below(gen, max_w - 1);
  c.cfg.g_init = 1 + rng::below(gen, max_g);
  c.cfg.iterations = iterations;
  c.cfg.buckets = 1 + rng::below(gen, 5);
  c.cfg.dim = 4;
  c.cfg.seed = gen();
  c.cfg.learning_rate = 0.0625;

  ScheduleSpec spec;
  spec.w_init = c.cfg.w_init;
  spec.ranks_per_replica = 1;
  spec.buckets = c.cfg.buckets;
  spec.seed = gen();
  spec.count = rng::below(gen, c.cfg.w_init);
  spec.step_lo = 0;
  spec.step_hi = iterations - 1;
  spec.weights = LocationWeights{1.0, 1.0, 1.0};
  c.schedule = generate_schedule(spec);
  return c;
}

}  // namespace recover::testing
