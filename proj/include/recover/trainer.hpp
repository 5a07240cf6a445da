// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "recover/bucket.hpp"
#include "recover/comm.hpp"
#include "recover/core.hpp"
#include "recover/model.hpp"
#include "recover/policy.hpp"
#include "recover/restoration.hpp"
#include "recover/schedule.hpp"

namespace recover {

/// Divisor the adaptive baseline applies before the optimizer step.
enum class DivisorMode : std::uint8_t {
  GlobalBatch,     // W_init * G_init, the same constant the static policy uses
  EffectiveBatch,  // microbatches actually committed this iteration
};

struct TrainerConfig {
  std::uint64_t w_init = 4;
  std::uint64_t g_init = 2;
  std::size_t buckets = 4;
  std::size_t dim = 8;
  ModelKind model = ModelKind::Linear;
  std::uint64_t seed = 0;
  std::size_t microbatch_size = 1;
  double noise = 0.0;
  StreamKind stream = StreamKind::Synthetic;
  double learning_rate = 0.0625;
  PolicyKind policy = PolicyKind::Static;
  DivisorMode adaptive_divisor = DivisorMode::GlobalBatch;

  std::uint64_t global_batch() const noexcept { return w_init * g_init; }
};

/// Per-replica assignment log of the running iteration.
struct ReplicaLog {
  std::vector<std::uint64_t> counted;  // accumulated into the local gradient
  std::vector<std::uint64_t> zeroed;   // consumed, gradient dropped
  Contribution contrib;
  double loss_sum = 0.0;
};

struct IterationCounters {
  std::uint64_t rounds = 0;      // microbatch rounds (the final loop bound)
  std::uint64_t cascades = 0;    // bucket loops fired
  std::uint64_t reductions = 0;  // successful bucket all-reduces, re-reductions included
  std::uint64_t rewound = 0;     // stale bucket positions restored
  std::uint64_t noops = 0;       // all-reduces absorbed by the quiesce latch
};

struct FailureNote {
  FailureEvent event;
  PolicyDecision decision;
  bool deferred = false;  // surfaced after a clean cascade and handled at commit
};

struct IterationOutcome {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  std::map<ReplicaId, std::uint64_t> contributions;  // contributing replicas only
  std::vector<std::uint64_t> indices;                // contributing stream indices, ascending
  std::uint64_t contrib_total = 0;
  Contribution contrib_parts;
  std::uint64_t distinct_indices = 0;
  WorldEpoch final_epoch;
  bool epoch_pure = true;
  bool crossed_boundary = false;
  std::uint64_t w_start = 0;
  std::uint64_t g_start = 0;
  std::uint64_t r_start = 0;
  RoleCounts layout;  // in force when the iteration started
  std::uint64_t major_bound = 0;
  std::uint64_t w_after = 0;
  double divisor = 1.0;
  IterationCounters counters;
  std::vector<FailureNote> failures;
};

/// Lockstep driver of every replica's iteration over one shared communicator.
///
/// Replicas keep their own parameter copies and bucket ledgers; the driver
/// interleaves them in ascending id order, so a run is a pure function of the
/// configuration and the injected deaths.
class Trainer {
 public:
  explicit Trainer(TrainerConfig cfg)
      : cfg_(cfg),
        comm_(cfg.w_init),
        policy_(PolicyState::initial(cfg.w_init, cfg.g_init)),
        stream_(StreamConfig{cfg.seed, cfg.w_init, cfg.dim, cfg.microbatch_size, cfg.noise, cfg.stream}) {
    if (cfg_.learning_rate <= 0) throw std::invalid_argument("learning rate must be positive");
    for (ReplicaId id : comm_.members()) {
      ledgers_.emplace(id, BucketLedger::partition(cfg_.dim, cfg_.buckets));
      params_.emplace(id, std::vector<double>(cfg_.dim, 0.0));
    }
    assign_layout();
  }

  const TrainerConfig& config() const noexcept { return cfg_; }
  const PolicyState& policy() const noexcept { return policy_; }
  const Communicator& comm() const noexcept { return comm_; }
  const LedgerSet& ledgers() const noexcept { return ledgers_; }
  DataStream& stream() noexcept { return stream_; }
  std::uint64_t iteration() const noexcept { return iteration_; }

  /// Parameters of the lowest-id survivor; every survivor holds the same bits.
  const std::vector<double>& params() const { return params_.at(*comm_.members().begin()); }
  const std::vector<double>& params(ReplicaId id) const { return params_.at(id); }

  IterationOutcome run_iteration(std::span<const FailureEntry> failures = {}) {
    try {
      return run_iteration_impl(failures);
    } catch (const EmptyMembership&) {
      throw AllReplicasDead(iteration_);
    }
  }

 private:
  struct CommitView {
    WorldEpoch epoch;
    std::set<ReplicaId> members;
    std::map<ReplicaId, ReplicaRole> roles;
  };

  IterationOutcome run_iteration_impl(std::span<const FailureEntry> failures) {
    IterationOutcome out;
    out.iteration = iteration_;
    out.w_start = policy_.w_cur;
    out.g_start = policy_.g_cur;
    out.r_start = policy_.r_cur;
    out.layout = comm_.census();
    begin_iteration();

    std::optional<CommitView> deferred_view;
    std::optional<FailureRecord> deferred;
    std::uint64_t m = 0;
    bool first = true;
    while (m < policy_.major_bound) {
      ++m;
      microbatch_round(m);
      if (m != policy_.major_bound) continue;

      ++out.counters.cascades;
      for (std::size_t k = 0; k < cfg_.buckets; ++k) {
        if (first) inject(failures, k);
        for (ReplicaId id : comm_.members()) snapshot_and_tag(ledgers_.at(id), k, comm_.epoch());
        WorkResult work = ulfm_allreduce(comm_, bucket_group(ledgers_, comm_, k));
        count(work, out.counters);
        if (work.failed()) handle_work_failure(work, m, out);
      }
      if (first) inject_after_sync(failures);
      first = false;

      const bool clean = cascade_clean();
      const CommitView view{comm_.epoch(), comm_.members(), roles_of(comm_.members())};
      WorkResult consensus = ulfm_consensus(comm_);
      if (consensus.failed()) {
        if (clean) {
          // Every bucket already reduced under one membership; the step commits
          // as is and the shrink takes effect from the next iteration.
          deferred_view = view;
          deferred = *consensus.record;
          FailureNote note;
          note.event = FailureEvent{*consensus.record, m, comm_.epoch(), consensus.record->survivors()};
          note.deferred = true;
          out.failures.push_back(std::move(note));
        } else {
          handle_work_failure(consensus, m, out);
        }
      }

      for (;;) {
        RestoreReport report = gradient_restoration(ledgers_, comm_);
        out.counters.rewound += report.rewound;
        out.counters.reductions += report.rereduced;
        if (report.outcome == RestoreOutcome::Committed) break;
        handle_work_failure(*report.failure, m, out);
      }
    }
    out.counters.rounds = m;
    out.major_bound = policy_.major_bound;

    if (comm_.quiesced()) throw InvariantViolation("iteration finished with the group still quiesced");
    const CommitView view = deferred_view ? *deferred_view
                                          : CommitView{comm_.epoch(), comm_.members(), roles_of(comm_.members())};
    commit(view, out);

    if (deferred) apply_deferred(*deferred, out);
    if (out.crossed_boundary && cfg_.policy == PolicyKind::Static) {
      policy_ = policy_advancement(policy_);
      assign_layout();
    }
    out.w_after = policy_.w_cur;
    ++iteration_;
    return out;
  }

  void begin_iteration() {
    comm_.set_quiesced(false);
    comm_.set_boundary_pass(false);
    policy_.major_bound = policy_.g_cur;
    logs_.clear();
    for (ReplicaId id : comm_.members()) {
      auto& ledger = ledgers_.at(id);
      ledger.zero();
      ledger.clear_bookkeeping();
      ledger.pending_restore = RestoreMode::Skip;
      comm_.set_contribution(id, {});
      comm_.set_target(id, execution_quota(policy_, comm_.role(id)));
      logs_[id];
    }
  }

  /// Roles by index: majors lowest, then the minor, the major-spares and the
  /// minor-spare last.
  void assign_layout() {
    const RoleCounts& c = policy_.counts;
    if (c.total() != comm_.size()) throw InvariantViolation("policy layout does not cover the membership");
    auto it = comm_.members().begin();
    const auto give = [&](std::uint64_t n, ReplicaRole role) {
      for (std::uint64_t i = 0; i < n; ++i, ++it) comm_.set_role(*it, role);
    };
    give(c.majors, ReplicaRole::Major);
    give(c.minors, ReplicaRole::Minor);
    give(c.major_spares, ReplicaRole::MajorSpare);
    give(c.minor_spares, ReplicaRole::MinorSpare);
    give(c.boundary_minors, ReplicaRole::BoundaryMinor);
  }

  void microbatch_round(std::uint64_t m) {
    for (ReplicaId id : comm_.members()) {
      auto& log = logs_[id];
      const std::uint64_t index = stream_.next(id);
      if (log.counted.size() >= comm_.target(id)) {
        log.zeroed.push_back(index);
        continue;
      }
      const ToyModel model{cfg_.model, params_.at(id)};
      const MicrobatchResult r = evaluate(model, stream_.at(index));
      ledgers_.at(id).accumulate(r.grad);
      log.counted.push_back(index);
      log.loss_sum += r.loss;
      if (m <= policy_.g_cur) {
        ++log.contrib.regular;
      } else {
        ++log.contrib.boundary;
      }
      comm_.set_contribution(id, log.contrib);
    }
  }

  void inject(std::span<const FailureEntry> failures, std::size_t bucket) {
    for (const auto& f : failures) {
      const auto& p = f.location;
      const bool before = p.kind == InjectionPoint::Kind::BeforeSync && bucket == 0;
      const bool during = p.kind == InjectionPoint::Kind::DuringSync && p.bucket == bucket;
      if (before || during) comm_.kill(f.replica);
    }
  }

  void inject_after_sync(std::span<const FailureEntry> failures) {
    for (const auto& f : failures) {
      if (f.location.kind == InjectionPoint::Kind::AfterSyncBeforeStep) comm_.kill(f.replica);
    }
  }

  static void count(const WorkResult& work, IterationCounters& c) {
    if (work.ok()) ++c.reductions;
    if (work.status == WorkStatus::Noop) ++c.noops;
  }

  std::map<ReplicaId, ReplicaRole> roles_of(const std::set<ReplicaId>& members) const {
    std::map<ReplicaId, ReplicaRole> roles;
    for (ReplicaId id : members) roles[id] = comm_.role(id);
    return roles;
  }

  bool cascade_clean() const {
    for (ReplicaId id : comm_.members()) {
      const auto& ledger = ledgers_.at(id);
      if (ledger.pending_restore != RestoreMode::Skip) return false;
      for (const auto& b : ledger.buckets) {
        if (b.reduced_under != comm_.epoch()) return false;
      }
    }
    return true;
  }

  void handle_work_failure(const WorkResult& work, std::uint64_t m, IterationOutcome& out) {
    if (!work.failed() || !work.record) throw std::invalid_argument("handle_work_failure needs a failed work result");
    const FailureRecord& record = *work.record;
    FailureNote note;
    note.event = FailureEvent{record, m, comm_.epoch(), record.survivors()};

    for (ReplicaId id : record.failed_replicas) ledgers_.erase(id);

    if (cfg_.policy == PolicyKind::Adaptive) {
      note.decision = adaptive_policy_adjustment(record);
      policy_.w_cur = record.survivors();
      policy_.counts = record.role_counts;
    } else {
      const Adjustment adj = policy_adjustment(policy_, note.event);
      policy_ = adj.state;
      note.decision = adj.decision;
      if (adj.decision.at_boundary) {
        install_boundary_split(*adj.decision.g_ext, *adj.decision.n_bdry);
        policy_.counts = comm_.census();
        comm_.set_quiesced(true);
        comm_.set_boundary_pass(true);
        out.crossed_boundary = true;
      }
    }

    for (ReplicaId id : comm_.members()) {
      auto& ledger = ledgers_.at(id);
      ledger.pending_restore = std::max(ledger.pending_restore, note.decision.restore_mode);
      for (auto& b : ledger.buckets) b.reduced_under.reset();
    }
    out.failures.push_back(std::move(note));
  }

  /// Every survivor contributes g_ext more microbatches, except the n_bdry
  /// highest ids, which contribute one fewer. Surviving spares drop their
  /// shadow work and join as contributors from zero.
  void install_boundary_split(std::uint64_t g_ext, std::uint64_t n_bdry) {
    const auto& members = comm_.members();
    const std::uint64_t keep_full = members.size() - n_bdry;
    std::uint64_t pos = 0;
    for (ReplicaId id : members) {
      auto& log = logs_[id];
      const ReplicaRole role = comm_.role(id);
      if (is_spare(role)) {
        auto& ledger = ledgers_.at(id);
        ledger.zero();
        for (auto& b : ledger.buckets) {
          if (b.snapshot) std::fill(b.snapshot->begin(), b.snapshot->end(), 0.0);
        }
        log.zeroed.insert(log.zeroed.end(), log.counted.begin(), log.counted.end());
        log.counted.clear();
        log.contrib = {};
        log.loss_sum = 0.0;
        comm_.set_contribution(id, log.contrib);
      }
      const bool full = pos++ < keep_full;
      const std::uint64_t extra = full ? g_ext : g_ext - 1;
      if (role != ReplicaRole::Minor) comm_.set_role(id, full ? ReplicaRole::Major : ReplicaRole::BoundaryMinor);
      comm_.set_target(id, log.counted.size() + extra);
    }
  }

  void commit(const CommitView& view, IterationOutcome& out) {
    out.final_epoch = view.epoch;
    double loss_sum = 0.0;
    for (ReplicaId id : view.members) {
      if (is_spare(view.roles.at(id))) continue;
      const auto& log = logs_.at(id);
      out.contributions[id] = log.counted.size();
      out.contrib_total += log.counted.size();
      out.contrib_parts.regular += log.contrib.regular;
      out.contrib_parts.boundary += log.contrib.boundary;
      out.indices.insert(out.indices.end(), log.counted.begin(), log.counted.end());
      loss_sum += log.loss_sum;
    }
    std::sort(out.indices.begin(), out.indices.end());
    out.distinct_indices = static_cast<std::uint64_t>(
        std::unique(out.indices.begin(), out.indices.end()) - out.indices.begin());
    out.indices.resize(out.distinct_indices);
    out.loss = out.contrib_total > 0 ? loss_sum / static_cast<double>(out.contrib_total) : 0.0;

    for (ReplicaId id : comm_.members()) {
      for (const auto& b : ledgers_.at(id).buckets) {
        if (b.reduced_under != view.epoch) out.epoch_pure = false;
      }
    }

    out.divisor = static_cast<double>(cfg_.global_batch());
    if (cfg_.policy == PolicyKind::Adaptive && cfg_.adaptive_divisor == DivisorMode::EffectiveBatch) {
      out.divisor = static_cast<double>(std::max<std::uint64_t>(out.contrib_total, 1));
    }

    for (ReplicaId id : comm_.members()) {
      const std::vector<double> grad = ledgers_.at(id).flatten();
      auto& theta = params_.at(id);
      for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= cfg_.learning_rate * (grad[j] / out.divisor);
    }
    for (auto it = params_.begin(); it != params_.end();) {
      it = comm_.is_member(it->first) ? std::next(it) : params_.erase(it);
    }
    const auto& ref = params_.begin()->second;
    for (const auto& [id, theta] : params_) {
      if (theta != ref) throw InvariantViolation("survivors diverged after the optimizer step");
    }
  }

  void apply_deferred(const FailureRecord& record, IterationOutcome& out) {
    for (ReplicaId id : record.failed_replicas) ledgers_.erase(id);
    policy_.w_cur = record.survivors();
    policy_.counts = record.role_counts;
    if (cfg_.policy == PolicyKind::Static && record.at_boundary) out.crossed_boundary = true;
  }

  TrainerConfig cfg_;
  Communicator comm_;
  PolicyState policy_;
  DataStream stream_;
  LedgerSet ledgers_;
  std::map<ReplicaId, std::vector<double>> params_;
  std::map<ReplicaId, ReplicaLog> logs_;
  std::uint64_t iteration_ = 0;
};

}  // namespace recover
