// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "linchain/checkpoint.hpp"
#include "linchain/config.hpp"
#include "linchain/gradients.hpp"
#include "linchain/report_io.hpp"
#include "linchain/training.hpp"

namespace linchain {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  /// Gradient check failed, training diverged, or a runtime I/O error.
  kExitFailure = 1,
  /// Bad command line, unreadable or invalid config.
  kExitUsage = 2,
};

inline constexpr const char* kOutputDirEnv = "LINCHAIN_OUTPUT_DIR";

inline std::uint64_t fnv1a_64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a_64(to_json(c).dump())));
  return buf;
}

/// `<root>/<command>-<hash>[-k]/`, created fresh; an existing directory is
/// never reused. Holds a `.lock` file for its lifetime.
class RunDirectory {
 public:
  RunDirectory(const std::filesystem::path& root, std::string_view command, const std::string& hash) {
    std::filesystem::create_directories(root);
    const std::string base = std::string(command) + "-" + hash;
    for (int k = 1;; ++k) {
      const auto candidate = root / (k == 1 ? base : base + "-" + std::to_string(k));
      if (std::filesystem::create_directory(candidate)) {
        path_ = candidate;
        break;
      }
      if (k > 10000) throw std::runtime_error("cannot allocate a run directory under " + root.string());
    }
    lock_ = path_ / ".lock";
    std::FILE* f = std::fopen(lock_.c_str(), "wx");
    if (f == nullptr) throw std::runtime_error("run directory " + path_.string() + " is locked");
    std::fclose(f);
  }
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;
  ~RunDirectory() {
    std::error_code ec;
    std::filesystem::remove(lock_, ec);
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path lock_;
};

struct CommandOptions {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

struct CommandResult {
  int exit_code = kExitOk;
  std::filesystem::path run_dir;
};

namespace detail {

inline std::filesystem::path output_root(const ExperimentConfig& c, const CommandOptions& opts) {
  if (opts.output_dir) return *opts.output_dir;
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
  return "runs";
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

inline std::string dims_string(const std::vector<std::size_t>& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
  return s + "]";
}

inline LossSpec random_loss(LossKind kind, std::size_t batch, std::size_t d_out, Rng& rng) {
  if (kind == LossKind::kMse) return LossSpec::mse(uniform_matrix(batch, d_out, -1.0, 1.0, rng));
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = static_cast<std::size_t>(rng.below(d_out));
  return LossSpec::cross_entropy(std::move(labels));
}

}  // namespace detail

/// One gradient-check case: w0, then the adapter (init then redrawn
/// parameters), then x, then the target, all from `rng`.
struct GradcheckCase {
  AdaptedLinear adapter;
  Matrix x;
  LossSpec loss;
};

inline GradcheckCase make_gradcheck_case(const AdapterConfig& config, std::size_t batch, LossKind kind,
                                         double entry_range, Rng& rng) {
  const Matrix w0 = uniform_matrix(config.d_in, config.d_out, -1.0, 1.0, rng);
  GradcheckCase c{init_adapter(config, w0, rng), {}, {}};
  randomize_parameters(c.adapter, entry_range, rng);
  c.x = uniform_matrix(batch, config.d_in, -1.0, 1.0, rng);
  c.loss = detail::random_loss(kind, batch, config.d_out, rng);
  return c;
}

inline int run_gradcheck(const ExperimentConfig& cfg, const std::filesystem::path& dir, const CommandOptions& opts) {
  const auto& g = cfg.gradcheck;
  const auto form = g.mutate_gradient ? ChainGradientForm::kRightPlacement : ChainGradientForm::kChainRule;
  Json cases = Json::array();
  Json deps = Json::array();
  bool passed = true;
  double worst = 0.0;
  std::size_t failures = 0;
  for (const auto& named : cfg.adapters) {
    for (std::uint64_t seed : cfg.seeds) {
      AdapterConfig ac = named.config;
      ac.seed = seed;
      Rng rng(seed);
      for (std::size_t i = 0; i < g.cases; ++i) {
        LossKind kind = LossKind::kMse;
        if (g.loss == GradcheckLoss::kCrossEntropy || (g.loss == GradcheckLoss::kBoth && i % 2 == 1))
          kind = LossKind::kSoftmaxCrossEntropy;
        const GradcheckCase c = make_gradcheck_case(ac, g.batch_size, kind, g.entry_range, rng);
        const CheckReport rep = grad_check(c.adapter, c.x, c.loss, g.tolerance, form);
        passed = passed && rep.passed;
        failures += rep.passed ? 0 : 1;
        worst = std::max(worst, rep.max_relative_error);
        Json j{{"adapter", named.name},
               {"seed", seed},
               {"case", i},
               {"loss", kind == LossKind::kMse ? "mse" : "softmax-cross-entropy"}};
        j.update(to_json(rep));
        cases.push_back(j);
      }
    }
    Json d{{"adapter", named.name}};
    d.update(to_json(trace_dependencies(named.config.chain_length())));
    deps.push_back(d);
  }
  const Json report{{"command", "gradcheck"},
                    {"passed", passed},
                    {"tolerance", g.tolerance},
                    {"max_relative_error", json_number(worst)},
                    {"mutated_gradient", g.mutate_gradient},
                    {"case_count", cases.size()},
                    {"failures", failures},
                    {"cases", cases},
                    {"dependencies", deps}};
  detail::write_text(dir / "report.json", report.dump(2) + "\n");
  if (!opts.quiet) {
    *opts.out << "gradcheck: " << cases.size() << " cases, " << failures << " failed, max relative error "
              << format_double(worst) << " (tolerance " << format_double(g.tolerance) << ")\n";
  }
  return passed ? kExitOk : kExitFailure;
}

inline int run_paramcount(const ExperimentConfig& cfg, const std::filesystem::path& dir, const CommandOptions& opts) {
  Json rows = Json::array();
  std::ostringstream table;
  table << std::left << std::setw(18) << "name" << std::setw(10) << "method" << std::setw(7) << "d_in" << std::setw(7)
        << "d_out" << std::setw(16) << "chain_dims" << std::right << std::setw(12) << "params" << std::setw(10)
        << "chain" << std::setw(11) << "overhead" << '\n';
  for (const auto& a : cfg.adapters) {
    const auto& c = a.config;
    const std::size_t total = param_count(c);
    const std::size_t chain = chain_param_count(c);
    const double fraction = static_cast<double>(chain) / static_cast<double>(total);
    Json row{{"name", a.name},
             {"method", std::string(method_name(c.method))},
             {"d_in", c.d_in},
             {"d_out", c.d_out},
             {"chain_dims", c.chain_dims},
             {"params", total},
             {"chain_params", chain},
             {"overhead_fraction", fraction}};
    const bool square = std::all_of(c.chain_dims.begin(), c.chain_dims.end(),
                                    [&](std::size_t r) { return r == c.chain_dims.front(); });
    if (square) {
      const std::size_t r = c.chain_dims.front();
      row["square_formula"] = (c.d_in + c.d_out) * r + c.chain_length() * r * r;
    }
    rows.push_back(row);
    std::ostringstream pct;
    pct << std::fixed << std::setprecision(3) << 100.0 * fraction << '%';
    table << std::left << std::setw(18) << a.name << std::setw(10) << method_name(c.method) << std::setw(7) << c.d_in
          << std::setw(7) << c.d_out << std::setw(16) << detail::dims_string(c.chain_dims) << std::right
          << std::setw(12) << total << std::setw(10) << chain << std::setw(11) << pct.str() << '\n';
  }
  detail::write_text(dir / "report.json", Json{{"command", "paramcount"}, {"adapters", rows}}.dump(2) + "\n");
  if (!opts.quiet) *opts.out << table.str();
  return kExitOk;
}

inline int run_train(const ExperimentConfig& cfg, const std::filesystem::path& dir, const CommandOptions& opts) {
  const NamedAdapter& named = cfg.adapters.front();
  const std::uint64_t seed = cfg.seeds.front();
  AdapterConfig ac = named.config;
  ac.seed = seed;
  const Dataset ds = make_task(*cfg.task);
  AdaptedLinear ad = init_adapter(ac, ds.w0);
  const Matrix w0_before = ad.w0;
  const TrainResult tr = train(ad, ds, cfg.optimizer, seed);
  if (!(ad.w0 == w0_before)) throw std::logic_error("frozen base weight changed during training");

  {
    std::ofstream csv(dir / "trace.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write trace.csv");
    write_trace_csv(csv, tr.records, ac.chain_length());
  }
  save_checkpoint(ad, dir / "checkpoint.bin");
  save_merged(ad, dir / "merged.bin");

  const auto& last = tr.records.back();
  const Json summary{{"command", "train"},
                     {"adapter", named.name},
                     {"seed", seed},
                     {"params", param_count(ac)},
                     {"diverged", tr.diverged},
                     {"message", tr.message},
                     {"epochs_completed", last.epoch},
                     {"steps", last.step},
                     {"initial_train_loss", json_number(tr.records.front().train_loss)},
                     {"final_train_loss", json_number(last.train_loss)},
                     {"final_eval_loss", json_number(last.eval_loss)},
                     {"auc", json_number(area_under_curve(tr.records))},
                     {"batch_order_hash", tr.batch_order_hash}};
  detail::write_text(dir / "report.json", summary.dump(2) + "\n");
  if (tr.diverged) {
    *opts.err << "train: " << tr.message << '\n';
    return kExitFailure;
  }
  if (!opts.quiet) {
    *opts.out << "train: " << named.name << " seed " << seed << ", " << last.epoch << " epochs, final train loss "
              << format_double(last.train_loss) << ", eval loss " << format_double(last.eval_loss) << '\n';
  }
  return kExitOk;
}

inline int run_compare(const ExperimentConfig& cfg, const std::filesystem::path& dir, const CommandOptions& opts) {
  const ComparisonReport rep = compare_methods(cfg.adapters, *cfg.task, cfg.optimizer, cfg.seeds, cfg.compare);
  {
    std::ofstream csv(dir / "compare.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write compare.csv");
    write_compare_csv(csv, rep);
  }
  Json report = to_json(rep);
  report["command"] = "compare";
  detail::write_text(dir / "report.json", report.dump(2) + "\n");
  if (!opts.quiet) {
    *opts.out << std::left << std::setw(18) << "name" << std::right << std::setw(6) << "runs" << std::setw(24)
              << "final eval (mean+-sd)" << std::setw(24) << "AUC (mean+-sd)" << '\n';
    for (const auto& s : rep.summaries) {
      std::ostringstream fin, auc;
      fin << std::setprecision(5) << s.final_eval_mean << "+-" << s.final_eval_sd;
      auc << std::setprecision(5) << s.auc_mean << "+-" << s.auc_sd;
      *opts.out << std::left << std::setw(18) << s.name << std::right << std::setw(6) << s.runs << std::setw(24)
                << fin.str() << std::setw(24) << auc.str() << '\n';
    }
  }
  return kExitOk;
}

/// Loads `config_path`, applies overrides, allocates the run directory and
/// dispatches. Never throws; failures map onto ExitCode.
inline CommandResult run_command(std::string_view command, const std::filesystem::path& config_path,
                                 const CommandOptions& opts) {
  CommandResult result;
  ExperimentConfig cfg;
  try {
    if (command != "gradcheck" && command != "paramcount" && command != "train" && command != "compare")
      throw ConfigError("unknown command '" + std::string(command) + "'");
    cfg = load_experiment(config_path);
    if (opts.seed) cfg.seeds = {*opts.seed};
    if (opts.output_dir) cfg.output_dir = *opts.output_dir;
    if ((command == "train" || command == "compare") && !cfg.task)
      throw ConfigError(std::string(command) + " requires a 'task' section");
    if (command == "compare" && cfg.adapters.size() < 2)
      throw ConfigError("compare requires at least two adapters");
    if (command == "train" && cfg.adapters.size() != 1)
      throw ConfigError("train takes exactly one adapter");
  } catch (const std::exception& e) {
    *opts.err << "error: " << e.what() << '\n';
    result.exit_code = kExitUsage;
    return result;
  }
  try {
    RunDirectory dir(detail::output_root(cfg, opts), command, config_hash(cfg));
    result.run_dir = dir.path();
    detail::write_text(dir.path() / "config.json", serialize_experiment(cfg));
    for (const auto& a : cfg.adapters) {
      if (a.config.rank_not_small() && !opts.quiet)
        *opts.err << "warning: adapter '" << a.name << "' rank is not small relative to min(d_in, d_out)\n";
    }
    if (command == "gradcheck") {
      result.exit_code = run_gradcheck(cfg, dir.path(), opts);
    } else if (command == "paramcount") {
      result.exit_code = run_paramcount(cfg, dir.path(), opts);
    } else if (command == "train") {
      result.exit_code = run_train(cfg, dir.path(), opts);
    } else {
      result.exit_code = run_compare(cfg, dir.path(), opts);
    }
    if (!opts.quiet) *opts.out << "output: " << dir.path().string() << '\n';
  } catch (const std::exception& e) {
    *opts.err << "error: " << e.what() << '\n';
    result.exit_code = kExitFailure;
  }
  return result;
}

}  // namespace linchain
