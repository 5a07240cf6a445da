// SPDX-License-Identifier: Apache-2.0
//
// recover: generate failure schedules, run the simulator, diff trajectories.
//
// Exit codes: 0 success, 1 usage/parse/config mismatch, 2 invariant
// violation, 3 all replicas dead.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "recover/recover.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInvariant = 2;
constexpr int kAllDead = 3;

struct ConfigFlags {
  std::string path;
  std::optional<std::uint64_t> w_init, g_init, iterations, seed, tokens_per_microbatch;
  std::optional<std::uint32_t> ranks_per_replica;
  std::optional<std::size_t> buckets, dim, microbatch_size;
  std::optional<double> noise, learning_rate, t_microbatch, t_reduce_fixed, t_reduce_per_bucket, t_restore;
  std::optional<std::string> model, stream, policy, adaptive_divisor, output;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "experiment config (JSON)");
    app->add_option("--w-init", w_init, "initial replica count");
    app->add_option("--g-init", g_init, "initial microbatches per replica");
    app->add_option("--ranks-per-replica", ranks_per_replica);
    app->add_option("--iterations", iterations);
    app->add_option("--buckets", buckets, "gradient buckets per replica");
    app->add_option("--dim", dim, "parameter dimension");
    app->add_option("--model", model, "linear | constant_gradient");
    app->add_option("--stream", stream, "synthetic | identical");
    app->add_option("--seed", seed, "stream seed");
    app->add_option("--microbatch-size", microbatch_size, "examples per microbatch");
    app->add_option("--noise", noise, "label noise scale");
    app->add_option("--learning-rate", learning_rate);
    app->add_option("--policy", policy, "static | adaptive");
    app->add_option("--adaptive-divisor", adaptive_divisor, "global_batch | effective_batch");
    app->add_option("--tokens-per-microbatch", tokens_per_microbatch);
    app->add_option("--t-microbatch", t_microbatch, "simulated seconds per microbatch");
    app->add_option("--t-reduce-fixed", t_reduce_fixed, "simulated seconds per bucket loop");
    app->add_option("--t-reduce-per-bucket", t_reduce_per_bucket, "simulated seconds per bucket reduce");
    app->add_option("--t-restore", t_restore, "simulated seconds per restored bucket");
    app->add_option("-o,--output", output, "metrics path, '-' for stdout");
  }

  recover::ExperimentConfig load() const {
    recover::ExperimentConfig cfg;
    if (!path.empty()) cfg = recover::merge_config(cfg, nlohmann::json::parse(recover::read_file(path)));
    nlohmann::json o = nlohmann::json::object();
    nlohmann::json cost = nlohmann::json::object();
    const auto put = [](nlohmann::json& j, const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    put(o, "w_init", w_init);
    put(o, "g_init", g_init);
    put(o, "ranks_per_replica", ranks_per_replica);
    put(o, "iterations", iterations);
    put(o, "buckets", buckets);
    put(o, "dim", dim);
    put(o, "model", model);
    put(o, "stream", stream);
    put(o, "seed", seed);
    put(o, "microbatch_size", microbatch_size);
    put(o, "noise", noise);
    put(o, "learning_rate", learning_rate);
    put(o, "policy", policy);
    put(o, "adaptive_divisor", adaptive_divisor);
    put(o, "tokens_per_microbatch", tokens_per_microbatch);
    put(o, "output", output);
    put(cost, "t_microbatch", t_microbatch);
    put(cost, "t_reduce_fixed", t_reduce_fixed);
    put(cost, "t_reduce_per_bucket", t_reduce_per_bucket);
    put(cost, "t_restore", t_restore);
    if (!cost.empty()) o["cost"] = cost;
    cfg = recover::merge_config(cfg, o);
    recover::validate(cfg);
    return cfg;
  }
};

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw recover::ParseError("cannot write '" + path + "'");
  out << text;
}

int execute(const recover::ExperimentConfig& cfg, const recover::FailureSchedule& schedule) {
  const auto result = recover::run_experiment(cfg, schedule, cfg.policy);
  std::ostringstream os;
  recover::write_metrics(os, cfg, schedule, result);
  emit(cfg.output, os.str());
  if (result.all_dead) {
    std::cerr << "all replicas dead at iteration " << *result.dead_at << "\n";
    return kAllDead;
  }
  if (cfg.policy == recover::PolicyKind::Static) {
    for (const auto& m : result.metrics) {
      if (!m.invariant_ok) {
        std::cerr << "iteration " << m.iteration << " broke the batch invariant\n";
        return kInvariant;
      }
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forward-recovery simulator for synchronous data-parallel training"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a deterministic failure schedule");
  recover::ScheduleSpec spec;
  spec.w_init = 16;
  std::string steps = "0:0";
  std::string gen_out = "-";
  std::string gen_config;
  std::optional<std::uint64_t> gen_w;
  std::optional<std::uint32_t> gen_ranks;
  std::optional<std::size_t> gen_buckets;
  gen->add_option("-c,--config", gen_config, "take w_init, ranks_per_replica and buckets from a config");
  gen->add_option("--w-init", gen_w, "initial replica count (default 16)");
  gen->add_option("--ranks-per-replica", gen_ranks);
  gen->add_option("--buckets", gen_buckets);
  gen->add_option("--seed", spec.seed);
  gen->add_option("--count", spec.count, "number of failures");
  gen->add_option("--steps", steps, "inclusive step range lo:hi");
  gen->add_option("--before-sync", spec.weights.before_sync, "location weight");
  gen->add_option("--during-sync", spec.weights.during_sync, "location weight");
  gen->add_option("--after-sync", spec.weights.after_sync, "location weight");
  gen->add_option("-o,--output", gen_out, "schedule path, '-' for stdout");

  // run / reference
  ConfigFlags run_flags;
  std::string schedule_path;
  auto* run = app.add_subcommand("run", "run an experiment under a failure schedule");
  run_flags.attach(run);
  run->add_option("-s,--schedule", schedule_path, "failure schedule (YAML)");

  ConfigFlags ref_flags;
  auto* ref = app.add_subcommand("reference", "run the failure-free trajectory");
  ref_flags.attach(ref);

  // compare
  std::string run_metrics;
  std::string ref_metrics;
  recover::CompareOptions copt;
  auto* cmp = app.add_subcommand("compare", "diff a run against its reference");
  cmp->add_option("run", run_metrics, "metrics of the run")->required();
  cmp->add_option("reference", ref_metrics, "metrics of the reference")->required();
  cmp->add_option("--final-rel-tolerance", copt.final_rel_tolerance);
  cmp->add_option("--spike-factor", copt.spike_factor);

  auto* walk = app.add_subcommand("walkthrough", "replay the 32-replica boundary example and check every number");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      if (!gen_config.empty()) {
        const auto cfg = recover::parse_config(recover::read_file(gen_config));
        spec.w_init = cfg.w_init;
        spec.ranks_per_replica = cfg.ranks_per_replica;
        spec.buckets = cfg.buckets;
      }
      if (gen_w) spec.w_init = *gen_w;
      if (gen_ranks) spec.ranks_per_replica = *gen_ranks;
      if (gen_buckets) spec.buckets = *gen_buckets;
      std::tie(spec.step_lo, spec.step_hi) = recover::detail::parse_step_range(steps);
      emit(gen_out, recover::to_text(recover::generate_schedule(spec)));
      return kOk;
    }
    if (*run) {
      const auto cfg = run_flags.load();
      recover::FailureSchedule schedule;
      if (!schedule_path.empty()) schedule = recover::parse_schedule(recover::read_file(schedule_path));
      return execute(cfg, schedule);
    }
    if (*ref) return execute(ref_flags.load(), recover::FailureSchedule{});
    if (*cmp) {
      const auto a = recover::parse_metrics_text(recover::read_file(run_metrics));
      const auto b = recover::parse_metrics_text(recover::read_file(ref_metrics));
      const auto r = recover::compare_traces(a, b, copt);
      std::cout << "iterations compared: " << r.deltas.size() << (r.length_mismatch ? " (lengths differ)" : "") << "\n";
      for (std::size_t i = 0; i < r.deltas.size(); ++i) {
        std::printf("  %4zu  dloss=% .6e\n", i, r.deltas[i]);
      }
      std::printf("max |dloss|: %.17g\n", r.max_abs_delta);
      std::printf("final loss relative difference: %.6e (tolerance %.3g)\n", r.final_rel_diff, copt.final_rel_tolerance);
      std::printf("max step: run %.6e, reference %.6e (factor %.3g)\n", r.run_max_step, r.ref_max_step, copt.spike_factor);
      std::cout << "invariant violations: " << r.violations << "\n";
      std::cout << (r.pass ? "PASS" : "FAIL") << "\n";
      return r.pass ? kOk : kInvariant;
    }
    if (*walk) {
      const auto rep = recover::run_walkthrough();
      for (const auto& l : rep.trace) std::cout << l << "\n";
      for (const auto& c : rep.checks) {
        std::cout << (c.ok() ? "[ok]   " : "[FAIL] ") << c.name << ": expected " << c.expected << ", got " << c.actual
                  << "\n";
      }
      return rep.ok() ? kOk : kInvariant;
    }
  } catch (const recover::AllReplicasDead& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAllDead;
  } catch (const recover::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kInvariant;
  } catch (const recover::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
