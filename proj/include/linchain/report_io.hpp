// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "linchain/config.hpp"
#include "linchain/gradients.hpp"
#include "linchain/training.hpp"

namespace linchain {

/// Shortest decimal that parses back to the identical double ("nan", "inf" for
/// non-finite values).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

/// trace.csv header: epoch,step,train_loss,eval_loss,grad_norm_A,grad_norm_B,grad_norm_W1..Wn,wall_time_s
inline std::string trace_csv_header(std::size_t chain_length) {
  std::string h = "epoch,step,train_loss,eval_loss,grad_norm_A,grad_norm_B";
  for (std::size_t i = 1; i <= chain_length; ++i) h += ",grad_norm_W" + std::to_string(i);
  return h + ",wall_time_s";
}

inline void write_trace_csv(std::ostream& out, const std::vector<TrainRecord>& records, std::size_t chain_length) {
  out << trace_csv_header(chain_length) << '\n';
  for (const auto& r : records) {
    // grad_norm_per_group is ordered A, W1..Wn, B; the CSV puts B second.
    const auto& g = r.grad_norm_per_group;
    out << r.epoch << ',' << r.step << ',' << format_double(r.train_loss) << ',' << format_double(r.eval_loss) << ','
        << format_double(g.front().second) << ',' << format_double(g.back().second);
    for (std::size_t i = 1; i + 1 < g.size(); ++i) out << ',' << format_double(g[i].second);
    out << ',' << format_double(r.wall_time_s) << '\n';
  }
}

inline const char* compare_csv_header() {
  return "name,method,seed,initial_eval_loss,final_train_loss,final_eval_loss,auc,epochs_to_threshold,diverged,"
         "batch_order_hash,error";
}

inline void write_compare_csv(std::ostream& out, const ComparisonReport& rep) {
  out << compare_csv_header() << '\n';
  for (const auto& r : rep.rows) {
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.batch_order_hash));
    out << r.name << ',' << method_name(r.method) << ',' << r.seed << ',' << format_double(r.initial_eval_loss) << ','
        << format_double(r.final_train_loss) << ',' << format_double(r.final_eval_loss) << ','
        << format_double(r.auc) << ',' << r.epochs_to_threshold << ',' << (r.diverged ? 1 : 0) << ',' << hash << ','
        << err << '\n';
  }
}

/// Non-finite doubles become null.
inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const CheckReport& r) {
  Json groups = Json::object();
  for (const auto& g : r.groups) groups[g.name] = Json{{"max_relative_error", json_number(g.max_relative_error)}, {"passed", g.passed}};
  Json j{{"passed", r.passed},
         {"max_relative_error", json_number(r.max_relative_error)},
         {"tolerance", r.tolerance},
         {"groups", groups}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline Json to_json(const DependencyReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries)
    entries.push_back(Json{{"parameter", e.parameter}, {"depends_on", e.depends_on}, {"count", e.depends_on.size()}});
  return Json{{"chain_length", r.chain_length}, {"total_occurrences", r.total_occurrences}, {"gradients", entries}};
}

inline Json to_json(const TrainRecord& r) {
  Json norms = Json::object();
  for (const auto& [name, v] : r.grad_norm_per_group) norms[name] = json_number(v);
  return Json{{"epoch", r.epoch},
              {"step", r.step},
              {"train_loss", json_number(r.train_loss)},
              {"eval_loss", json_number(r.eval_loss)},
              {"grad_norm", norms},
              {"wall_time_s", r.wall_time_s}};
}

inline Json to_json(const ComparisonReport& rep) {
  Json rows = Json::array();
  for (const auto& r : rep.rows) {
    Json row{{"name", r.name},
             {"method", std::string(method_name(r.method))},
             {"seed", r.seed},
             {"initial_eval_loss", json_number(r.initial_eval_loss)},
             {"final_train_loss", json_number(r.final_train_loss)},
             {"final_eval_loss", json_number(r.final_eval_loss)},
             {"auc", json_number(r.auc)},
             {"epochs_to_threshold", r.epochs_to_threshold},
             {"diverged", r.diverged},
             {"batch_order_hash", r.batch_order_hash}};
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(row);
  }
  Json summaries = Json::array();
  for (const auto& s : rep.summaries) {
    summaries.push_back(Json{{"name", s.name},
                             {"method", std::string(method_name(s.method))},
                             {"runs", s.runs},
                             {"final_eval_loss_mean", json_number(s.final_eval_mean)},
                             {"final_eval_loss_sd", json_number(s.final_eval_sd)},
                             {"auc_mean", json_number(s.auc_mean)},
                             {"auc_sd", json_number(s.auc_sd)},
                             {"epochs_to_threshold_mean", json_number(s.epochs_to_threshold_mean)},
                             {"epochs_to_threshold_sd", json_number(s.epochs_to_threshold_sd)},
                             {"reached_threshold", s.reached_threshold}});
  }
  return Json{{"threshold", json_number(rep.threshold)}, {"rows", rows}, {"summaries", summaries}};
}

}  // namespace linchain
