// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>  // vendored nlohmann/json

#include "recover/core.hpp"
#include "recover/trainer.hpp"

namespace recover {

/// Simulated seconds charged per unit of work.
struct CostModel {
  double t_microbatch = 1.0;
  double t_reduce_fixed = 0.0;
  double t_reduce_per_bucket = 0.0;
  double t_restore = 0.0;

  bool operator==(const CostModel&) const = default;
};

struct ExperimentConfig {
  std::uint64_t w_init = 16;
  std::uint64_t g_init = 8;
  std::uint32_t ranks_per_replica = 1;
  std::uint64_t iterations = 20;
  std::size_t buckets = 4;
  std::size_t dim = 8;
  ModelKind model = ModelKind::Linear;
  StreamKind stream = StreamKind::Synthetic;
  std::uint64_t seed = 0;
  std::size_t microbatch_size = 1;
  double noise = 0.0;
  double learning_rate = 0.0625;
  PolicyKind policy = PolicyKind::Static;
  DivisorMode adaptive_divisor = DivisorMode::GlobalBatch;
  std::uint64_t tokens_per_microbatch = 4096;
  CostModel cost;
  std::string output;

  std::uint64_t global_batch() const noexcept { return w_init * g_init; }

  TrainerConfig trainer() const {
    TrainerConfig t;
    t.w_init = w_init;
    t.g_init = g_init;
    t.buckets = buckets;
    t.dim = dim;
    t.model = model;
    t.seed = seed;
    t.microbatch_size = microbatch_size;
    t.noise = noise;
    t.stream = stream;
    t.learning_rate = learning_rate;
    t.policy = policy;
    t.adaptive_divisor = adaptive_divisor;
    return t;
  }
};

constexpr std::string_view to_string(ModelKind k) noexcept {
  return k == ModelKind::Linear ? "linear" : "constant_gradient";
}
constexpr std::string_view to_string(StreamKind k) noexcept {
  return k == StreamKind::Synthetic ? "synthetic" : "identical";
}
constexpr std::string_view to_string(PolicyKind k) noexcept { return k == PolicyKind::Static ? "static" : "adaptive"; }
constexpr std::string_view to_string(DivisorMode k) noexcept {
  return k == DivisorMode::GlobalBatch ? "global_batch" : "effective_batch";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "linear") return ModelKind::Linear;
  if (s == "constant_gradient") return ModelKind::ConstantGradient;
  throw ParseError("bad value for key 'model': '" + std::string(s) + "' (expected linear or constant_gradient)");
}
inline StreamKind parse_stream_kind(std::string_view s) {
  if (s == "synthetic") return StreamKind::Synthetic;
  if (s == "identical") return StreamKind::Identical;
  throw ParseError("bad value for key 'stream': '" + std::string(s) + "' (expected synthetic or identical)");
}
inline PolicyKind parse_policy_kind(std::string_view s) {
  if (s == "static") return PolicyKind::Static;
  if (s == "adaptive") return PolicyKind::Adaptive;
  throw ParseError("bad value for key 'policy': '" + std::string(s) + "' (expected static or adaptive)");
}
inline DivisorMode parse_divisor_mode(std::string_view s) {
  if (s == "global_batch") return DivisorMode::GlobalBatch;
  if (s == "effective_batch") return DivisorMode::EffectiveBatch;
  throw ParseError("bad value for key 'adaptive_divisor': '" + std::string(s) + "'");
}

inline void validate(const ExperimentConfig& c) {
  const auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw InvalidSpec(std::string("config key '") + key + "' " + what);
  };
  need(c.w_init > 0, "w_init", "must be positive");
  need(c.g_init > 0, "g_init", "must be positive");
  need(c.ranks_per_replica > 0, "ranks_per_replica", "must be positive");
  need(c.buckets > 0, "buckets", "must be positive");
  need(c.dim > 0, "dim", "must be positive");
  need(c.microbatch_size > 0, "microbatch_size", "must be positive");
  need(c.noise >= 0, "noise", "must be non-negative");
  need(c.learning_rate > 0, "learning_rate", "must be positive");
  need(c.tokens_per_microbatch > 0, "tokens_per_microbatch", "must be positive");
  need(c.cost.t_microbatch > 0, "cost.t_microbatch", "must be positive");
  need(c.cost.t_reduce_fixed >= 0, "cost.t_reduce_fixed", "must be non-negative");
  need(c.cost.t_reduce_per_bucket >= 0, "cost.t_reduce_per_bucket", "must be non-negative");
  need(c.cost.t_restore >= 0, "cost.t_restore", "must be non-negative");
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["w_init"] = c.w_init;
  j["g_init"] = c.g_init;
  j["ranks_per_replica"] = c.ranks_per_replica;
  j["iterations"] = c.iterations;
  j["buckets"] = c.buckets;
  j["dim"] = c.dim;
  j["model"] = to_string(c.model);
  j["stream"] = to_string(c.stream);
  j["seed"] = c.seed;
  j["microbatch_size"] = c.microbatch_size;
  j["noise"] = c.noise;
  j["learning_rate"] = c.learning_rate;
  j["policy"] = to_string(c.policy);
  j["adaptive_divisor"] = to_string(c.adaptive_divisor);
  j["tokens_per_microbatch"] = c.tokens_per_microbatch;
  j["cost"] = {{"t_microbatch", c.cost.t_microbatch},
               {"t_reduce_fixed", c.cost.t_reduce_fixed},
               {"t_reduce_per_bucket", c.cost.t_reduce_per_bucket},
               {"t_restore", c.cost.t_restore}};
  j["output"] = c.output;
  return j;
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& dst, std::string_view prefix = {}) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("bad value for key '" + std::string(prefix) + key + "'");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                           std::string_view prefix = {}) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParseError("unknown config key '" + std::string(prefix) + key + "'");
    }
  }
}

}  // namespace detail

/// Applies the keys present in `j` on top of `base`.
inline ExperimentConfig merge_config(ExperimentConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  detail::reject_unknown(j, {"w_init", "g_init", "ranks_per_replica", "iterations", "buckets", "dim", "model", "stream",
                             "seed", "microbatch_size", "noise", "learning_rate", "policy", "adaptive_divisor",
                             "tokens_per_microbatch", "cost", "output"});
  auto& c = base;
  detail::read_key(j, "w_init", c.w_init);
  detail::read_key(j, "g_init", c.g_init);
  detail::read_key(j, "ranks_per_replica", c.ranks_per_replica);
  detail::read_key(j, "iterations", c.iterations);
  detail::read_key(j, "buckets", c.buckets);
  detail::read_key(j, "dim", c.dim);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "microbatch_size", c.microbatch_size);
  detail::read_key(j, "noise", c.noise);
  detail::read_key(j, "learning_rate", c.learning_rate);
  detail::read_key(j, "tokens_per_microbatch", c.tokens_per_microbatch);
  detail::read_key(j, "output", c.output);
  std::string s;
  if (j.contains("model")) {
    detail::read_key(j, "model", s);
    c.model = parse_model_kind(s);
  }
  if (j.contains("stream")) {
    detail::read_key(j, "stream", s);
    c.stream = parse_stream_kind(s);
  }
  if (j.contains("policy")) {
    detail::read_key(j, "policy", s);
    c.policy = parse_policy_kind(s);
  }
  if (j.contains("adaptive_divisor")) {
    detail::read_key(j, "adaptive_divisor", s);
    c.adaptive_divisor = parse_divisor_mode(s);
  }
  if (const auto it = j.find("cost"); it != j.end()) {
    if (!it->is_object()) throw ParseError("bad value for key 'cost'");
    detail::reject_unknown(*it, {"t_microbatch", "t_reduce_fixed", "t_reduce_per_bucket", "t_restore"}, "cost.");
    detail::read_key(*it, "t_microbatch", c.cost.t_microbatch, "cost.");
    detail::read_key(*it, "t_reduce_fixed", c.cost.t_reduce_fixed, "cost.");
    detail::read_key(*it, "t_reduce_per_bucket", c.cost.t_reduce_per_bucket, "cost.");
    detail::read_key(*it, "t_restore", c.cost.t_restore, "cost.");
  }
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = merge_config(ExperimentConfig{}, j);
  validate(c);
  return c;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// FNV-1a over the canonical config minus the keys two comparable runs may
/// legitimately differ in (policy and output path).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("policy");
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace recover
