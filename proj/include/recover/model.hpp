// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "recover/core.hpp"
#include "recover/rng.hpp"

namespace recover {

enum class ModelKind : std::uint8_t {
  Linear,            // squared error on (x, y): gradient (theta . x - y) x
  ConstantGradient,  // linear potential theta . x: gradient x, independent of theta
};

struct Example {
  std::vector<double> x;
  double y = 0.0;
};

/// One microbatch is one position of the global stream.
struct Microbatch {
  std::uint64_t index = 0;
  std::vector<Example> examples;
};

struct ToyModel {
  ModelKind kind = ModelKind::Linear;
  std::vector<double> params;

  double dot(std::span<const double> x) const {
    if (x.size() != params.size()) throw std::invalid_argument("example dimension does not match model");
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += params[j] * x[j];
    return s;
  }

  double loss(const Example& ex) const {
    const double z = dot(ex.x);
    if (kind == ModelKind::ConstantGradient) return z;
    const double r = z - ex.y;
    return 0.5 * r * r;
  }
};

inline std::vector<double> per_example_gradient(const ToyModel& model, const Example& ex) {
  if (model.kind == ModelKind::ConstantGradient) {
    if (ex.x.size() != model.params.size()) throw std::invalid_argument("example dimension does not match model");
    return ex.x;
  }
  const double r = model.dot(ex.x) - ex.y;
  std::vector<double> g(ex.x.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = r * ex.x[j];
  return g;
}

/// Mean gradient and mean loss over the examples of one microbatch.
struct MicrobatchResult {
  std::vector<double> grad;
  double loss = 0.0;
};

inline MicrobatchResult evaluate(const ToyModel& model, const Microbatch& mb) {
  MicrobatchResult out;
  out.grad.assign(model.params.size(), 0.0);
  for (const auto& ex : mb.examples) {
    const auto g = per_example_gradient(model, ex);
    for (std::size_t j = 0; j < g.size(); ++j) out.grad[j] += g[j];
    out.loss += model.loss(ex);
  }
  const double n = static_cast<double>(mb.examples.size());
  for (double& v : out.grad) v /= n;
  out.loss /= n;
  return out;
}

enum class StreamKind : std::uint8_t {
  Synthetic,  // exchangeable i.i.d. examples
  Identical,  // every microbatch is the same example batch
};

struct StreamConfig {
  std::uint64_t seed = 0;
  std::uint64_t w_init = 1;
  std::size_t dim = 1;
  std::size_t microbatch_size = 1;
  double noise = 0.0;
  StreamKind kind = StreamKind::Synthetic;
};

/// Unbounded synthetic stream partitioned round-robin across the initial
/// replicas: replica r owns global indices {i : i mod w_init == r}.
///
/// Features are quantized to multiples of 1/256 so that sums of identical
/// gradients are exact in double precision.
class DataStream {
 public:
  explicit DataStream(StreamConfig cfg) : cfg_(cfg) {
    if (cfg_.w_init == 0 || cfg_.dim == 0 || cfg_.microbatch_size == 0) {
      throw std::invalid_argument("stream needs positive w_init, dim and microbatch size");
    }
    teacher_.resize(cfg_.dim);
    for (std::size_t j = 0; j < cfg_.dim; ++j) {
      teacher_[j] = quantize(rng::normal_from(rng::hash_key(cfg_.seed, 0x7eac4e7ULL, j, 0),
                                              rng::hash_key(cfg_.seed, 0x7eac4e7ULL, j, 1)));
    }
  }

  const StreamConfig& config() const noexcept { return cfg_; }
  const std::vector<double>& teacher() const noexcept { return teacher_; }

  std::uint64_t global_index(ReplicaId replica, std::uint64_t position) const noexcept {
    return replica + position * cfg_.w_init;
  }

  /// Pure function of (seed, index) and any salt on the owning slice.
  Microbatch at(std::uint64_t index) const {
    const std::uint64_t owner = index % cfg_.w_init;
    std::uint64_t seed = cfg_.seed;
    if (auto it = salts_.find(static_cast<ReplicaId>(owner)); it != salts_.end()) {
      seed = rng::hash_key(seed, 0x5a17ULL, it->second);
    }
    const std::uint64_t key = cfg_.kind == StreamKind::Identical ? 0 : index;
    Microbatch mb;
    mb.index = index;
    mb.examples.resize(cfg_.microbatch_size);
    for (std::size_t e = 0; e < cfg_.microbatch_size; ++e) {
      auto& ex = mb.examples[e];
      ex.x.resize(cfg_.dim);
      double target = 0.0;
      for (std::size_t j = 0; j < cfg_.dim; ++j) {
        ex.x[j] = quantize(rng::normal_from(rng::hash_key(seed, key, e, j, 0), rng::hash_key(seed, key, e, j, 1)));
        target += teacher_[j] * ex.x[j];
      }
      const double eps = rng::normal_from(rng::hash_key(seed, key, e, 0xe9ULL, 0), rng::hash_key(seed, key, e, 0xe9ULL, 1));
      ex.y = target + cfg_.noise * eps;
    }
    return mb;
  }

  /// Consumes the next position of `replica`'s slice.
  std::uint64_t next(ReplicaId replica) {
    if (replica >= cfg_.w_init) throw std::out_of_range("replica outside the initial world");
    return global_index(replica, cursors_[replica]++);
  }

  std::uint64_t cursor(ReplicaId replica) const {
    const auto it = cursors_.find(replica);
    return it == cursors_.end() ? 0 : it->second;
  }

  /// Reseeds one replica's slice, leaving every other slice untouched.
  void salt_slice(ReplicaId replica, std::uint64_t salt) { salts_[replica] = salt; }

  static double quantize(double v) noexcept { return std::round(std::clamp(v, -8.0, 8.0) * 256.0) / 256.0; }

 private:
  StreamConfig cfg_;
  std::vector<double> teacher_;
  std::map<ReplicaId, std::uint64_t> cursors_;
  std::map<ReplicaId, std::uint64_t> salts_;
};

}  // namespace recover
