// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "recover/schedule.hpp"
#include "recover/trainer.hpp"

namespace recover {

struct WalkthroughCheck {
  std::string name;
  std::uint64_t expected = 0;
  std::uint64_t actual = 0;

  bool ok() const noexcept { return expected == actual; }
};

struct WalkthroughReport {
  std::vector<std::string> trace;
  std::vector<WalkthroughCheck> checks;

  bool ok() const {
    for (const auto& c : checks) {
      if (!c.ok()) return false;
    }
    return !checks.empty();
  }
};

/// 32 replicas at 8 microbatches. Replica 31 dies on bucket 2 of iteration 1
/// with no spare to absorb it; the minor of the resulting layout (replica 28)
/// dies on bucket 1 of iteration 3 and the minor-spare takes over.
inline std::vector<FailureEntry> walkthrough_failures() {
  return {FailureEntry{1, 31, 0, InjectionPoint::during_sync(2)},
          FailureEntry{3, 28, 0, InjectionPoint::during_sync(1)}};
}

inline TrainerConfig walkthrough_config() {
  TrainerConfig cfg;
  cfg.w_init = 32;
  cfg.g_init = 8;
  cfg.buckets = 4;
  cfg.dim = 8;
  cfg.model = ModelKind::Linear;
  cfg.seed = 2024;
  return cfg;
}

inline WalkthroughReport run_walkthrough() {
  WalkthroughReport rep;
  Trainer trainer(walkthrough_config());
  const auto failures = walkthrough_failures();
  const std::uint64_t batch = trainer.config().global_batch();
  auto check = [&](std::string name, std::uint64_t expected, std::uint64_t actual) {
    rep.checks.push_back({std::move(name), expected, actual});
  };
  auto line = [&](const std::string& s) { rep.trace.push_back(s); };

  std::vector<IterationOutcome> outs;
  for (std::uint64_t t = 0; t < 5; ++t) {
    std::vector<FailureEntry> now;
    for (const auto& f : failures) {
      if (f.step == t) now.push_back(f);
    }
    outs.push_back(trainer.run_iteration(now));
    const auto& o = outs.back();
    std::ostringstream os;
    os << "iteration " << t << ": W=" << o.w_start << " G=" << o.g_start << " R=" << o.r_start
       << " layout=" << o.layout.majors << "/" << o.layout.minors << "/" << o.layout.major_spares << "/"
       << o.layout.minor_spares << " bound=" << o.major_bound << " contrib=" << o.contrib_parts.regular << "+"
       << o.contrib_parts.boundary << "=" << o.contrib_total << " epoch=" << o.final_epoch.value
       << (o.crossed_boundary ? " boundary" : "");
    line(os.str());
    for (const auto& f : o.failures) {
      std::ostringstream fs;
      const auto& r = f.event.record;
      fs << "  failure: replicas=";
      for (auto id : r.failed_replicas) fs << id << " ";
      fs << "contrib=" << r.contrib.total() << " at_boundary=" << (r.at_boundary ? "true" : "false")
         << " epoch_after=" << r.epoch_after.value << " mode=" << to_string(f.decision.restore_mode);
      if (f.decision.g_ext) fs << " g_ext=" << *f.decision.g_ext << " n_bdry=" << *f.decision.n_bdry;
      for (const auto& [id, role] : r.promotions) fs << " promoted " << id << "->" << to_string(role);
      line(fs.str());
    }
  }

  check("iteration 0 total", batch, outs[0].contrib_total);
  check("iteration 0 per-replica quota", 8, outs[0].contributions.at(0));

  const auto& t1 = outs[1];
  const auto* ev = t1.failures.empty() ? nullptr : &t1.failures.front();
  check("failure events at iteration 1", 1, t1.failures.size());
  check("C_cur reported by record", 248, ev ? ev->event.record.contrib.total() : 0);
  check("at_boundary", 1, ev ? ev->event.record.at_boundary : 0);
  check("epoch after repair", 1, ev ? ev->event.record.epoch_after.value : 0);
  check("G_ext", 1, ev && ev->decision.g_ext ? *ev->decision.g_ext : 0);
  check("n_bdry", 23, ev && ev->decision.n_bdry ? *ev->decision.n_bdry : 0);
  check("stale buckets rewound", 3, t1.counters.rewound);
  check("extended loop bound", 9, t1.major_bound);
  std::uint64_t at9 = 0;
  std::uint64_t at8 = 0;
  for (const auto& [id, n] : t1.contributions) {
    at9 += n == 9;
    at8 += n == 8;
  }
  check("replicas at 9 microbatches", 8, at9);
  check("replicas at 8 microbatches", 23, at8);
  check("regular contributions", 248, t1.contrib_parts.regular);
  check("extension contributions", 8, t1.contrib_parts.boundary);
  check("iteration 1 total", batch, t1.contrib_total);
  check("iteration 1 distinct indices", batch, t1.distinct_indices);
  check("iteration 1 epoch pure", 1, t1.epoch_pure);

  const auto& t2 = outs[2];
  check("next G_cur", 9, t2.g_start);
  check("next majors", 28, t2.layout.majors);
  check("next minors", 1, t2.layout.minors);
  check("next R_cur", 4, t2.r_start);
  check("next major-spares", 1, t2.layout.major_spares);
  check("next minor-spares", 1, t2.layout.minor_spares);
  check("iteration 2 total", batch, t2.contrib_total);

  const auto& t3 = outs[3];
  const auto* ev3 = t3.failures.empty() ? nullptr : &t3.failures.front();
  check("minor failure is absorbed", 0, ev3 ? ev3->event.record.at_boundary : 1);
  check("minor-spare promoted", 30, ev3 && !ev3->event.record.promotions.empty() ? ev3->event.record.promotions.front().first : 0);
  check("restore is blocking", 1, ev3 && ev3->decision.restore_mode == RestoreMode::Blocking);
  check("loop bound unchanged", 9, t3.major_bound);
  check("promoted replica quota", 4, t3.contributions.count(30) ? t3.contributions.at(30) : 0);
  check("iteration 3 total", batch, t3.contrib_total);
  check("iteration 3 epoch pure", 1, t3.epoch_pure);

  const auto& t4 = outs[4];
  check("G_cur unchanged after absorbed failure", 9, t4.g_start);
  check("R_cur unchanged after absorbed failure", 4, t4.r_start);
  check("majors after absorbed failure", 28, t4.layout.majors);
  check("minor-spares after absorbed failure", 0, t4.layout.minor_spares);
  check("iteration 4 total", batch, t4.contrib_total);
  return rep;
}

}  // namespace recover
