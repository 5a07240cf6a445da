// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "recover/core.hpp"

namespace recover {

/// One contiguous slice of a replica's flat gradient, plus the bookkeeping
/// needed to rewind it after a membership change.
struct GradientBucket {
  std::size_t index = 0;
  std::vector<double> data;
  std::optional<std::vector<double>> snapshot;
  std::optional<WorldEpoch> epoch_tag;
  std::optional<WorldEpoch> reduced_under;

  void clear_bookkeeping() noexcept {
    snapshot.reset();
    epoch_tag.reset();
    reduced_under.reset();
  }
};

/// Fixed, gap-free bucket order over a flat gradient of dimension `dim`.
/// Buckets 0..K-2 hold dim / K elements each; the last one takes the rest.
struct BucketLedger {
  std::vector<GradientBucket> buckets;
  RestoreMode pending_restore = RestoreMode::Skip;

  static BucketLedger partition(std::size_t dim, std::size_t bucket_count) {
    if (bucket_count == 0) {
      throw std::invalid_argument("bucket count must be positive");
    }
    BucketLedger ledger;
    ledger.buckets.resize(bucket_count);
    const std::size_t width = dim / bucket_count;
    for (std::size_t k = 0; k < bucket_count; ++k) {
      ledger.buckets[k].index = k;
      const std::size_t len = (k + 1 == bucket_count) ? dim - width * (bucket_count - 1) : width;
      ledger.buckets[k].data.assign(len, 0.0);
    }
    return ledger;
  }

  std::size_t size() const noexcept { return buckets.size(); }

  std::size_t dim() const noexcept {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.data.size();
    return n;
  }

  void zero() noexcept {
    for (auto& b : buckets) std::fill(b.data.begin(), b.data.end(), 0.0);
  }

  void clear_bookkeeping() noexcept {
    for (auto& b : buckets) b.clear_bookkeeping();
  }

  /// Adds a flat gradient into the bucket slices.
  void accumulate(std::span<const double> grad) {
    if (grad.size() != dim()) throw std::invalid_argument("gradient length does not match ledger");
    std::size_t offset = 0;
    for (auto& b : buckets) {
      for (double& v : b.data) v += grad[offset++];
    }
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(dim());
    for (const auto& b : buckets) out.insert(out.end(), b.data.begin(), b.data.end());
    return out;
  }
};

/// Deep-copies the bucket into its snapshot and tags it with `epoch`. A second
/// call in the same iteration overwrites both.
inline void snapshot_and_tag(BucketLedger& ledger, std::size_t index, WorldEpoch epoch) {
  auto& bucket = ledger.buckets.at(index);
  bucket.snapshot = bucket.data;
  bucket.epoch_tag = epoch;
}

/// Indices of snapshotted buckets whose tag predates `current`, ascending.
inline std::vector<std::size_t> classify_stale(const BucketLedger& ledger, WorldEpoch current) {
  std::vector<std::size_t> stale;
  for (const auto& b : ledger.buckets) {
    if (b.epoch_tag && *b.epoch_tag < current) stale.push_back(b.index);
  }
  return stale;
}

/// Copies S(b) back into b. Buckets without a snapshot are left alone.
inline void rewind(GradientBucket& bucket) {
  if (bucket.snapshot) bucket.data = *bucket.snapshot;
}

}  // namespace recover
