// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Experiment configuration: a JSON document with a strict schema. See
// configs/README.md for an annotated example of every field.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "linchain/adapters.hpp"
#include "linchain/gradients.hpp"
#include "linchain/training.hpp"

namespace linchain {

using Json = nlohmann::ordered_json;

enum class GradcheckLoss { kMse, kCrossEntropy, kBoth };

struct GradcheckOptions {
  double tolerance = 1e-5;
  std::size_t cases = 20;
  std::size_t batch_size = 3;
  GradcheckLoss loss = GradcheckLoss::kBoth;
  /// Trainable entries are redrawn uniform in [-entry_range, entry_range).
  double entry_range = 1.0;
  /// Debug: use the right-placement chain gradient, which must fail the check.
  bool mutate_gradient = false;

  friend bool operator==(const GradcheckOptions&, const GradcheckOptions&) = default;
};

struct ExperimentConfig {
  std::vector<NamedAdapter> adapters;
  std::optional<TaskSpec> task;
  OptimizerConfig optimizer;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;
  GradcheckOptions gradcheck;
  CompareOptions compare;
};

inline bool operator==(const NamedAdapter& a, const NamedAdapter& b) {
  return a.name == b.name && a.config == b.config;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.adapters == b.adapters && a.task == b.task && a.optimizer == b.optimizer && a.seeds == b.seeds &&
         a.output_dir == b.output_dir && a.gradcheck == b.gradcheck && a.compare.threshold == b.compare.threshold &&
         a.compare.threshold_factor == b.compare.threshold_factor && a.compare.threads == b.compare.threads;
}

namespace detail {

/// Typed, key-checked view of one JSON object.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  void allow_only(std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, _] : j_.items()) {
      bool known = false;
      for (auto allowed : keys) known = known || k == allowed;
      if (!known) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const Json& at(const std::string& key) const { return j_.at(key); }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (!has(key)) return;
    out = get<T>(j_.at(key), path_ + "." + key);
  }

  template <typename T>
  static T get(const Json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
    }
    return v.get<T>();
  }

 private:
  const Json& j_;
  std::string path_;
};

inline std::vector<std::size_t> read_dims(const Json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of positive integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(ObjectReader::get<std::size_t>(e, where));
  return out;
}

}  // namespace detail

inline Json to_json(const AdapterConfig& c) {
  return Json{{"method", std::string(method_name(c.method))},
              {"d_in", c.d_in},
              {"d_out", c.d_out},
              {"chain_dims", c.chain_dims},
              {"scaling", c.scaling},
              {"seed", c.seed},
              {"identity_chain", c.identity_chain}};
}

/// `fallback` supplies d_in/d_out when the object omits them.
inline AdapterConfig adapter_config_from_json(const Json& j, const std::string& where,
                                              const std::optional<TaskSpec>& fallback = std::nullopt) {
  detail::ObjectReader r(j, where);
  r.allow_only({"name", "method", "d_in", "d_out", "chain_dims", "rank", "chain_length", "scaling", "seed",
                "identity_chain"});
  AdapterConfig c;
  if (!r.has("method")) throw ConfigError(where + ": missing 'method'");
  const auto method = parse_method(detail::ObjectReader::get<std::string>(r.at("method"), where + ".method"));
  if (!method) throw ConfigError(where + ".method: expected lora, moslora or linchain");
  c.method = *method;
  if (fallback) {
    c.d_in = fallback->d_in;
    c.d_out = fallback->d_out;
  } else if (!r.has("d_in") || !r.has("d_out")) {
    throw ConfigError(where + ": d_in/d_out required when no task is configured");
  }
  r.read("d_in", c.d_in);
  r.read("d_out", c.d_out);
  // Shorthand: rank (+ chain_length for linchain) instead of chain_dims.
  if (r.has("chain_dims")) {
    if (r.has("rank") || r.has("chain_length")) throw ConfigError(where + ": give chain_dims or rank, not both");
    c.chain_dims = detail::read_dims(r.at("chain_dims"), where + ".chain_dims");
  } else if (r.has("rank")) {
    std::size_t rank = 0, n = 0;
    r.read("rank", rank);
    r.read("chain_length", n);
    if (c.method == Method::kMoslora) n = 1;
    if (c.method == Method::kLinchain && n == 0) throw ConfigError(where + ": linchain needs chain_length >= 1");
    c.chain_dims.assign(n + 1, rank);
  } else {
    throw ConfigError(where + ": missing 'chain_dims' (or 'rank')");
  }
  r.read("scaling", c.scaling);
  r.read("seed", c.seed);
  r.read("identity_chain", c.identity_chain);
  c.validate();
  return c;
}

inline Json to_json(const TaskSpec& t) {
  return Json{{"kind", std::string(task_kind_name(t.kind))},
              {"d_in", t.d_in},
              {"d_out", t.d_out},
              {"target_rank", t.target_rank},
              {"train_size", t.train_size},
              {"eval_size", t.eval_size},
              {"data_seed", t.data_seed},
              {"noise_std", t.noise_std}};
}

inline TaskSpec task_from_json(const Json& j) {
  detail::ObjectReader r(j, "task");
  r.allow_only({"kind", "d_in", "d_out", "target_rank", "train_size", "eval_size", "data_seed", "noise_std"});
  TaskSpec t;
  if (r.has("kind")) {
    const auto kind = parse_task_kind(detail::ObjectReader::get<std::string>(r.at("kind"), "task.kind"));
    if (!kind) throw ConfigError("task.kind: expected target-recovery or teacher-student-classification");
    t.kind = *kind;
  }
  r.read("d_in", t.d_in);
  r.read("d_out", t.d_out);
  r.read("target_rank", t.target_rank);
  r.read("train_size", t.train_size);
  r.read("eval_size", t.eval_size);
  r.read("data_seed", t.data_seed);
  r.read("noise_std", t.noise_std);
  t.validate();
  return t;
}

inline Json to_json(const OptimizerConfig& o) {
  return Json{{"kind", o.kind == OptimizerKind::kSgd ? "sgd" : "adam"},
              {"learning_rate", o.learning_rate},
              {"momentum", o.momentum},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"epsilon", o.epsilon},
              {"epochs", o.epochs},
              {"batch_size", o.batch_size}};
}

inline OptimizerConfig optimizer_from_json(const Json& j) {
  detail::ObjectReader r(j, "optimizer");
  r.allow_only({"kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon", "epochs", "batch_size"});
  OptimizerConfig o;
  if (r.has("kind")) {
    const auto kind = detail::ObjectReader::get<std::string>(r.at("kind"), "optimizer.kind");
    if (kind == "sgd") {
      o.kind = OptimizerKind::kSgd;
    } else if (kind == "adam") {
      o.kind = OptimizerKind::kAdam;
    } else {
      throw ConfigError("optimizer.kind: expected sgd or adam");
    }
  }
  r.read("learning_rate", o.learning_rate);
  r.read("momentum", o.momentum);
  r.read("beta1", o.beta1);
  r.read("beta2", o.beta2);
  r.read("epsilon", o.epsilon);
  r.read("epochs", o.epochs);
  r.read("batch_size", o.batch_size);
  o.validate();
  return o;
}

inline std::string_view gradcheck_loss_name(GradcheckLoss l) {
  switch (l) {
    case GradcheckLoss::kMse: return "mse";
    case GradcheckLoss::kCrossEntropy: return "softmax-cross-entropy";
    case GradcheckLoss::kBoth: return "both";
  }
  return "both";
}

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  Json adapters = Json::array();
  for (const auto& a : c.adapters) {
    Json e{{"name", a.name}};
    e.update(to_json(a.config));
    adapters.push_back(e);
  }
  j["adapters"] = adapters;
  if (c.task) j["task"] = to_json(*c.task);
  j["optimizer"] = to_json(c.optimizer);
  j["seeds"] = c.seeds;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  j["gradcheck"] = Json{{"tolerance", c.gradcheck.tolerance},
                        {"cases", c.gradcheck.cases},
                        {"batch_size", c.gradcheck.batch_size},
                        {"loss", std::string(gradcheck_loss_name(c.gradcheck.loss))},
                        {"entry_range", c.gradcheck.entry_range},
                        {"mutate_gradient", c.gradcheck.mutate_gradient}};
  Json cmp{{"threshold", nullptr}, {"threshold_factor", c.compare.threshold_factor}, {"threads", c.compare.threads}};
  if (c.compare.threshold) cmp["threshold"] = *c.compare.threshold;
  j["compare"] = cmp;
  return j;
}

inline ExperimentConfig experiment_from_json(const Json& j) {
  detail::ObjectReader r(j, "config");
  r.allow_only({"adapter", "adapters", "task", "optimizer", "seeds", "output_dir", "gradcheck", "compare"});
  ExperimentConfig c;
  if (r.has("task")) c.task = task_from_json(r.at("task"));
  if (r.has("optimizer")) c.optimizer = optimizer_from_json(r.at("optimizer"));

  auto read_adapter = [&](const Json& a, const std::string& where) {
    NamedAdapter na;
    na.config = adapter_config_from_json(a, where, c.task);
    na.name = a.contains("name") ? detail::ObjectReader::get<std::string>(a.at("name"), where + ".name")
                                 : default_adapter_name(na.config);
    if (c.task && (na.config.d_in != c.task->d_in || na.config.d_out != c.task->d_out))
      throw ConfigError(where + ": d_in/d_out differ from the task");
    return na;
  };
  if (r.has("adapter") && r.has("adapters")) throw ConfigError("config: give 'adapter' or 'adapters', not both");
  if (r.has("adapter")) c.adapters.push_back(read_adapter(r.at("adapter"), "adapter"));
  if (r.has("adapters")) {
    const Json& list = r.at("adapters");
    if (!list.is_array()) throw ConfigError("adapters: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i)
      c.adapters.push_back(read_adapter(list[i], "adapters[" + std::to_string(i) + "]"));
  }
  if (c.adapters.empty()) throw ConfigError("config: at least one adapter is required");

  if (r.has("seeds")) {
    const Json& s = r.at("seeds");
    if (!s.is_array() || s.empty()) throw ConfigError("seeds: expected a non-empty array of integers");
    c.seeds.clear();
    for (const auto& v : s) c.seeds.push_back(detail::ObjectReader::get<std::uint64_t>(v, "seeds"));
  }
  r.read("output_dir", c.output_dir);

  if (r.has("gradcheck")) {
    detail::ObjectReader g(r.at("gradcheck"), "gradcheck");
    g.allow_only({"tolerance", "cases", "batch_size", "loss", "entry_range", "mutate_gradient"});
    g.read("tolerance", c.gradcheck.tolerance);
    g.read("cases", c.gradcheck.cases);
    g.read("batch_size", c.gradcheck.batch_size);
    g.read("entry_range", c.gradcheck.entry_range);
    g.read("mutate_gradient", c.gradcheck.mutate_gradient);
    if (g.has("loss")) {
      const auto l = detail::ObjectReader::get<std::string>(g.at("loss"), "gradcheck.loss");
      if (l == "mse") {
        c.gradcheck.loss = GradcheckLoss::kMse;
      } else if (l == "softmax-cross-entropy") {
        c.gradcheck.loss = GradcheckLoss::kCrossEntropy;
      } else if (l == "both") {
        c.gradcheck.loss = GradcheckLoss::kBoth;
      } else {
        throw ConfigError("gradcheck.loss: expected mse, softmax-cross-entropy or both");
      }
    }
    if (!(c.gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be positive");
    if (c.gradcheck.cases == 0 || c.gradcheck.batch_size == 0)
      throw ConfigError("gradcheck: cases and batch_size must be positive");
    if (!(c.gradcheck.entry_range > 0.0)) throw ConfigError("gradcheck.entry_range must be positive");
  }

  if (r.has("compare")) {
    detail::ObjectReader m(r.at("compare"), "compare");
    m.allow_only({"threshold", "threshold_factor", "threads"});
    if (m.has("threshold")) c.compare.threshold = detail::ObjectReader::get<double>(m.at("threshold"), "compare.threshold");
    m.read("threshold_factor", c.compare.threshold_factor);
    m.read("threads", c.compare.threads);
    if (!(c.compare.threshold_factor > 0.0)) throw ConfigError("compare.threshold_factor must be positive");
  }
  return c;
}

/// Parses JSON text; syntax errors surface as ConfigError.
inline ExperimentConfig parse_experiment(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return experiment_from_json(j);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment(buf.str());
}

inline std::string serialize_experiment(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace linchain
