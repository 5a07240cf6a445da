// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>  // vendored nlohmann/json

#include "recover/core.hpp"

namespace recover {

/// Parsed view of a metrics file.
struct MetricsTrace {
  std::uint64_t config_hash = 0;
  std::string policy;
  std::uint64_t global_batch = 0;
  std::vector<std::uint64_t> iterations;
  std::vector<double> losses;
  std::vector<bool> invariant_ok;
  std::string status;
  std::vector<double> final_params;
};

inline MetricsTrace parse_metrics(std::istream& in) {
  MetricsTrace t;
  bool header = false;
  bool final = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError("metrics line " + std::to_string(lineno) + " is not valid JSON");
    }
    try {
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        t.config_hash = j.at("config_hash").get<std::uint64_t>();
        t.policy = j.at("policy").get<std::string>();
        t.global_batch = j.at("global_batch").get<std::uint64_t>();
        header = true;
      } else if (type == "iteration") {
        t.iterations.push_back(j.at("iteration").get<std::uint64_t>());
        t.losses.push_back(j.at("loss").get<double>());
        t.invariant_ok.push_back(j.at("invariant_ok").get<bool>());
      } else if (type == "final") {
        t.status = j.at("status").get<std::string>();
        t.final_params = j.at("params").get<std::vector<double>>();
        final = true;
      } else {
        throw ParseError("metrics line " + std::to_string(lineno) + " has unknown type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("metrics line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ParseError("metrics file has no header record");
  if (!final) throw ParseError("metrics file has no final record");
  return t;
}

inline MetricsTrace parse_metrics_text(const std::string& text) {
  std::istringstream in(text);
  return parse_metrics(in);
}

struct CompareOptions {
  double final_rel_tolerance = 0.02;
  double spike_factor = 3.0;
};

struct CompareReport {
  std::vector<double> deltas;  // run - reference, per iteration
  double max_abs_delta = 0.0;
  double final_rel_diff = 0.0;
  double run_max_step = 0.0;
  double ref_max_step = 0.0;
  std::uint64_t violations = 0;  // iterations of the run that broke the batch invariant
  bool length_mismatch = false;
  bool pass = false;
};

inline double max_step(const std::vector<double>& xs) {
  double m = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) m = std::max(m, std::abs(xs[i] - xs[i - 1]));
  return m;
}

inline CompareReport compare_traces(const MetricsTrace& run, const MetricsTrace& ref, const CompareOptions& opt = {}) {
  if (run.config_hash != ref.config_hash) {
    throw ConfigMismatch("config hashes differ (" + std::to_string(run.config_hash) + " vs " +
                         std::to_string(ref.config_hash) + ")");
  }
  CompareReport r;
  const std::size_t n = std::min(run.losses.size(), ref.losses.size());
  r.length_mismatch = run.losses.size() != ref.losses.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = run.losses[i] - ref.losses[i];
    r.deltas.push_back(d);
    r.max_abs_delta = std::max(r.max_abs_delta, std::abs(d));
  }
  for (bool ok : run.invariant_ok) r.violations += ok ? 0 : 1;
  if (n > 0) {
    const double a = run.losses[n - 1];
    const double b = ref.losses[n - 1];
    r.final_rel_diff = b != 0.0 ? std::abs(a - b) / std::abs(b) : std::abs(a - b);
  }
  r.run_max_step = max_step(run.losses);
  r.ref_max_step = max_step(ref.losses);
  r.pass = !r.length_mismatch && r.violations == 0 && r.final_rel_diff < opt.final_rel_tolerance &&
           r.run_max_step <= opt.spike_factor * r.ref_max_step;
  return r;
}

}  // namespace recover
