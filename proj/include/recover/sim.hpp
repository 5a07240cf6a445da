// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>  // vendored nlohmann/json

#include "recover/config.hpp"
#include "recover/schedule.hpp"
#include "recover/trainer.hpp"

namespace recover {

struct IterationMetrics {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  std::uint64_t w_cur = 0;
  std::uint64_t g_cur = 0;
  std::uint64_t r_cur = 0;
  std::uint64_t major_bound = 0;
  std::uint64_t epoch = 0;
  RoleCounts layout;
  bool boundary = false;
  std::uint64_t contrib_total = 0;
  Contribution contrib_parts;
  std::map<ReplicaId, std::uint64_t> contributions;
  std::uint64_t distinct_indices = 0;
  bool epoch_pure = true;
  bool invariant_ok = true;
  std::uint64_t alive = 0;
  double sim_seconds = 0.0;
  double sim_clock = 0.0;
  std::uint64_t tokens = 0;
  double throughput = 0.0;
  std::vector<FailureNote> failures;
  std::vector<double> params;
};

struct ExperimentResult {
  std::vector<IterationMetrics> metrics;
  std::vector<double> final_params;
  bool all_dead = false;
  std::optional<std::uint64_t> dead_at;
};

/// Simulated duration of one iteration.
inline double iteration_seconds(const CostModel& cost, const IterationCounters& c) {
  return cost.t_microbatch * static_cast<double>(c.rounds) + cost.t_reduce_fixed * static_cast<double>(c.cascades) +
         cost.t_reduce_per_bucket * static_cast<double>(c.reductions) + cost.t_restore * static_cast<double>(c.rewound);
}

/// Effective throughput of a failure-free iteration at loop bound `g` with
/// `alive` replicas: tokens / (elapsed * alive * ranks_per_replica).
inline double steady_throughput(const ExperimentConfig& cfg, std::uint64_t g, std::uint64_t alive) {
  const double tokens = static_cast<double>(cfg.global_batch() * cfg.tokens_per_microbatch);
  const double elapsed = cfg.cost.t_microbatch * static_cast<double>(g) + cfg.cost.t_reduce_fixed +
                         cfg.cost.t_reduce_per_bucket * static_cast<double>(cfg.buckets);
  return tokens / (elapsed * static_cast<double>(alive) * static_cast<double>(cfg.ranks_per_replica));
}

inline IterationMetrics make_metrics(const ExperimentConfig& cfg, const IterationOutcome& o, double clock,
                                     const std::vector<double>& params) {
  IterationMetrics m;
  m.iteration = o.iteration;
  m.loss = o.loss;
  m.w_cur = o.w_start;
  m.g_cur = o.g_start;
  m.r_cur = o.r_start;
  m.major_bound = o.major_bound;
  m.epoch = o.final_epoch.value;
  m.layout = o.layout;
  m.boundary = o.crossed_boundary;
  m.contrib_total = o.contrib_total;
  m.contrib_parts = o.contrib_parts;
  m.contributions = o.contributions;
  m.distinct_indices = o.distinct_indices;
  m.epoch_pure = o.epoch_pure;
  m.invariant_ok = o.contrib_total == cfg.global_batch() && o.distinct_indices == o.contrib_total && o.epoch_pure;
  m.alive = o.w_after;
  m.sim_seconds = iteration_seconds(cfg.cost, o.counters);
  m.sim_clock = clock + m.sim_seconds;
  m.tokens = o.contrib_total * cfg.tokens_per_microbatch;
  m.throughput = static_cast<double>(m.tokens) /
                 (m.sim_seconds * static_cast<double>(m.alive) * static_cast<double>(cfg.ranks_per_replica));
  m.failures = o.failures;
  m.params = params;
  return m;
}

/// Runs `cfg.iterations` iterations, injecting the schedule entries of each
/// step. The policy argument overrides the one in the config.
inline ExperimentResult run_experiment(ExperimentConfig cfg, const FailureSchedule& schedule, PolicyKind policy) {
  cfg.policy = policy;
  validate(cfg);
  check_schedule(schedule, cfg.w_init, cfg.buckets, cfg.ranks_per_replica);

  ExperimentResult result;
  Trainer trainer(cfg.trainer());
  double clock = 0.0;
  for (std::uint64_t t = 0; t < cfg.iterations; ++t) {
    const auto entries = schedule.at_step(t);
    try {
      const IterationOutcome o = trainer.run_iteration(entries);
      result.metrics.push_back(make_metrics(cfg, o, clock, trainer.params()));
      clock = result.metrics.back().sim_clock;
    } catch (const AllReplicasDead& e) {
      result.all_dead = true;
      result.dead_at = e.iteration();
      return result;
    }
  }
  result.final_params = trainer.params();
  return result;
}

inline ExperimentResult run_reference(const ExperimentConfig& cfg) {
  return run_experiment(cfg, FailureSchedule{}, cfg.policy);
}

namespace detail {

inline nlohmann::ordered_json role_counts_json(const RoleCounts& c) {
  return {{"majors", c.majors},
          {"minors", c.minors},
          {"major_spares", c.major_spares},
          {"minor_spares", c.minor_spares},
          {"boundary_minors", c.boundary_minors}};
}

inline nlohmann::ordered_json failure_json(const FailureNote& n) {
  const auto& r = n.event.record;
  nlohmann::ordered_json j;
  j["failed_replicas"] = r.failed_replicas;
  nlohmann::ordered_json roles = nlohmann::ordered_json::array();
  for (const auto& [id, role] : r.failed_roles) roles.push_back({{"replica", id}, {"role", to_string(role)}});
  j["failed_roles"] = roles;
  nlohmann::ordered_json promos = nlohmann::ordered_json::array();
  for (const auto& [id, role] : r.promotions) promos.push_back({{"replica", id}, {"role", to_string(role)}});
  j["promotions"] = promos;
  j["microbatch"] = n.event.microbatch;
  j["epoch_after"] = r.epoch_after.value;
  j["contrib"] = r.contrib.total();
  j["contrib_regular"] = r.contrib.regular;
  j["contrib_boundary"] = r.contrib.boundary;
  j["role_counts"] = role_counts_json(r.role_counts);
  j["at_boundary"] = r.at_boundary;
  j["deferred"] = n.deferred;
  j["restore_mode"] = to_string(n.decision.restore_mode);
  j["g_ext"] = n.decision.g_ext ? nlohmann::ordered_json(*n.decision.g_ext) : nlohmann::ordered_json(nullptr);
  j["n_bdry"] = n.decision.n_bdry ? nlohmann::ordered_json(*n.decision.n_bdry) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json header_record(const ExperimentConfig& cfg, const FailureSchedule& schedule) {
  nlohmann::ordered_json j;
  j["type"] = "header";
  j["config_hash"] = config_hash(cfg);
  j["policy"] = to_string(cfg.policy);
  j["global_batch"] = cfg.global_batch();
  j["schedule_entries"] = schedule.entries.size();
  j["config"] = to_json(cfg);
  return j;
}

inline nlohmann::ordered_json iteration_record(const IterationMetrics& m) {
  nlohmann::ordered_json j;
  j["type"] = "iteration";
  j["iteration"] = m.iteration;
  j["loss"] = m.loss;
  j["w_cur"] = m.w_cur;
  j["g_cur"] = m.g_cur;
  j["r_cur"] = m.r_cur;
  j["major_bound"] = m.major_bound;
  j["epoch"] = m.epoch;
  j["layout"] = detail::role_counts_json(m.layout);
  j["boundary"] = m.boundary;
  j["contrib_total"] = m.contrib_total;
  j["contrib_regular"] = m.contrib_parts.regular;
  j["contrib_boundary"] = m.contrib_parts.boundary;
  nlohmann::ordered_json contribs = nlohmann::ordered_json::object();
  for (const auto& [id, n] : m.contributions) contribs[std::to_string(id)] = n;
  j["contributions"] = contribs;
  j["distinct_indices"] = m.distinct_indices;
  j["epoch_pure"] = m.epoch_pure;
  j["invariant_ok"] = m.invariant_ok;
  j["alive"] = m.alive;
  j["sim_seconds"] = m.sim_seconds;
  j["sim_clock"] = m.sim_clock;
  j["tokens"] = m.tokens;
  j["throughput"] = m.throughput;
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  for (const auto& f : m.failures) failures.push_back(detail::failure_json(f));
  j["failures"] = failures;
  j["params"] = m.params;
  return j;
}

inline nlohmann::ordered_json final_record(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["type"] = "final";
  j["status"] = r.all_dead ? "all_replicas_dead" : "completed";
  j["iterations_committed"] = r.metrics.size();
  j["dead_at"] = r.dead_at ? nlohmann::ordered_json(*r.dead_at) : nlohmann::ordered_json(nullptr);
  j["sim_clock"] = r.metrics.empty() ? 0.0 : r.metrics.back().sim_clock;
  j["params"] = r.final_params;
  return j;
}

/// One JSON object per line: header, one record per committed iteration, final.
inline void write_metrics(std::ostream& os, const ExperimentConfig& cfg, const FailureSchedule& schedule,
                          const ExperimentResult& r) {
  os << header_record(cfg, schedule).dump() << '\n';
  for (const auto& m : r.metrics) os << iteration_record(m).dump() << '\n';
  os << final_record(r).dump() << '\n';
}

}  // namespace recover
