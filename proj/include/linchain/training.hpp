// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "linchain/adapters.hpp"
#include "linchain/gradients.hpp"
#include "linchain/matrix.hpp"
#include "linchain/rng.hpp"

namespace linchain {

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

enum class TaskKind { kTargetRecovery, kTeacherStudent };

inline std::string_view task_kind_name(TaskKind k) {
  return k == TaskKind::kTargetRecovery ? "target-recovery" : "teacher-student-classification";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
  if (s == "target-recovery") return TaskKind::kTargetRecovery;
  if (s == "teacher-student-classification") return TaskKind::kTeacherStudent;
  return std::nullopt;
}

struct TaskSpec {
  TaskKind kind = TaskKind::kTargetRecovery;
  std::size_t d_in = 16;
  std::size_t d_out = 16;
  std::size_t target_rank = 4;
  std::size_t train_size = 256;
  std::size_t eval_size = 128;
  std::uint64_t data_seed = 0;
  double noise_std = 0.0;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;

  void validate() const {
    if (d_in == 0 || d_out == 0) throw ConfigError("task: d_in and d_out must be positive");
    if (target_rank == 0 || target_rank > std::min(d_in, d_out))
      throw ConfigError("task: target_rank must be in [1, min(d_in, d_out)]");
    if (train_size == 0 || eval_size == 0) throw ConfigError("task: train_size and eval_size must be positive");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("task: noise_std must be >= 0");
  }
};

/// Generated data. For target recovery the targets are
/// y = x (W0 + W*) + noise with W* = U V of rank target_rank; for the
/// classification task the labels are argmax over the same noisy logits.
struct Dataset {
  TaskSpec spec;
  Matrix w0;
  Matrix w_star;
  Matrix u, v;  // w_star = u v
  Matrix x_train, y_train, x_eval, y_eval;
  std::vector<std::size_t> labels_train, labels_eval;

  std::size_t train_size() const { return x_train.rows(); }
};

namespace detail {

inline Matrix noisy_targets(const Matrix& x, const Matrix& w0, const Matrix& w_star, double noise_std,
                            Rng& rng) {
  Matrix y = matmul(x, w0) + matmul(x, w_star);
  // Noise is drawn even when noise_std is 0.
  for (double& v : y.data()) v += noise_std * rng.normal();
  return y;
}

inline std::vector<std::size_t> argmax_rows(const Matrix& y) {
  std::vector<std::size_t> labels(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    labels[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return labels;
}

}  // namespace detail

/// Draw order: W0, U, V, x_train, train noise, x_eval, eval noise.
inline Dataset make_task(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.w0 = kaiming_uniform(spec.d_in, spec.d_out, rng);
  ds.u = kaiming_uniform(spec.d_in, spec.target_rank, rng);
  ds.v = kaiming_uniform(spec.target_rank, spec.d_out, rng);
  ds.w_star = matmul(ds.u, ds.v);
  ds.x_train = uniform_matrix(spec.train_size, spec.d_in, -1.0, 1.0, rng);
  ds.y_train = detail::noisy_targets(ds.x_train, ds.w0, ds.w_star, spec.noise_std, rng);
  ds.x_eval = uniform_matrix(spec.eval_size, spec.d_in, -1.0, 1.0, rng);
  ds.y_eval = detail::noisy_targets(ds.x_eval, ds.w0, ds.w_star, spec.noise_std, rng);
  if (spec.kind == TaskKind::kTeacherStudent) {
    ds.labels_train = detail::argmax_rows(ds.y_train);
    ds.labels_eval = detail::argmax_rows(ds.y_eval);
  }
  return ds;
}

inline Dataset make_task(const TaskSpec& spec) {
  Rng rng(spec.data_seed);
  return make_task(spec, rng);
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * m.cols()));
  }
  return out;
}

inline LossSpec train_loss_spec(const Dataset& ds, std::span<const std::size_t> idx) {
  if (ds.spec.kind == TaskKind::kTargetRecovery) return LossSpec::mse(gather_rows(ds.y_train, idx));
  std::vector<std::size_t> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(ds.labels_train[i]);
  return LossSpec::cross_entropy(std::move(labels));
}

inline LossSpec full_train_loss_spec(const Dataset& ds) {
  return ds.spec.kind == TaskKind::kTargetRecovery ? LossSpec::mse(ds.y_train)
                                                   : LossSpec::cross_entropy(ds.labels_train);
}

inline LossSpec eval_loss_spec(const Dataset& ds) {
  return ds.spec.kind == TaskKind::kTargetRecovery ? LossSpec::mse(ds.y_eval)
                                                   : LossSpec::cross_entropy(ds.labels_eval);
}

inline double train_loss(const AdaptedLinear& ad, const Dataset& ds) {
  return loss_value(full_train_loss_spec(ds), forward(ad, ds.x_train));
}

inline double eval_loss(const AdaptedLinear& ad, const Dataset& ds) {
  return loss_value(eval_loss_spec(ds), forward(ad, ds.x_eval));
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-2;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;

  void validate() const {
    // A zero learning rate is accepted.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("optimizer: learning_rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("optimizer: beta1 and beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
    if (epochs == 0 || batch_size == 0) throw ConfigError("optimizer: epochs and batch_size must be positive");
  }
};

struct SgdState {
  std::vector<Matrix> velocity;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;
};

namespace detail {

inline void require_matching(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: gradient group count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) Matrix::require_same_shape(*params[i], *grads[i], "optimizer");
}

inline std::vector<Matrix> zeros_like(const std::vector<Matrix*>& params) {
  std::vector<Matrix> out;
  for (const Matrix* p : params) out.push_back(Matrix::zeros(p->rows(), p->cols()));
  return out;
}

}  // namespace detail

/// v = momentum * v + g; theta -= lr * v. Touches A, W_i, B only.
inline void sgd_step(AdaptedLinear& ad, const GradientSet& grads, SgdState& state, const OptimizerConfig& cfg) {
  auto params = ad.parameters();
  const auto gs = grads.groups();
  detail::require_matching(params, gs);
  if (state.velocity.empty()) state.velocity = detail::zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = gs[i]->data();
    auto v = state.velocity[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = cfg.momentum * v[k] + g[k];
      p[k] -= cfg.learning_rate * v[k];
    }
  }
}

/// Adam with bias-corrected moments.
inline void adam_step(AdaptedLinear& ad, const GradientSet& grads, AdamState& state, const OptimizerConfig& cfg) {
  auto params = ad.parameters();
  const auto gs = grads.groups();
  detail::require_matching(params, gs);
  if (state.m.empty()) {
    state.m = detail::zeros_like(params);
    state.v = detail::zeros_like(params);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = gs[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      p[k] -= cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
    }
  }
}

/// Optimizer state for either kind.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(AdaptedLinear& ad, const GradientSet& grads) {
    if (cfg_.kind == OptimizerKind::kSgd) {
      sgd_step(ad, grads, sgd_, cfg_);
    } else {
      adam_step(ad, grads, adam_, cfg_);
    }
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  SgdState sgd_;
  AdamState adam_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  /// Frobenius norm of the full-training-set gradient, in group order A, W1..Wn, B.
  std::vector<std::pair<std::string, double>> grad_norm_per_group;
  double wall_time_s = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  bool diverged = false;
  std::string message;
  /// FNV-1a over every minibatch's example indices, in presentation order.
  std::uint64_t batch_order_hash = 0;
};

namespace detail {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xffU;
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace detail

/// Fisher-Yates with Rng::below, from the back.
inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

inline TrainRecord make_record(const AdaptedLinear& ad, const Dataset& ds, std::size_t epoch, std::size_t step,
                               double elapsed) {
  TrainRecord rec;
  rec.epoch = epoch;
  rec.step = step;
  const LossSpec full = full_train_loss_spec(ds);
  const Matrix y = forward(ad, ds.x_train);
  rec.train_loss = loss_value(full, y);
  rec.eval_loss = eval_loss(ad, ds);
  if (std::isfinite(rec.train_loss)) {
    const GradientSet g = backward_analytic(ad, ds.x_train, output_delta(full, y));
    const auto names = ad.group_names();
    const auto groups = g.groups();
    for (std::size_t i = 0; i < names.size(); ++i) rec.grad_norm_per_group.emplace_back(names[i], frobenius_norm(*groups[i]));
  } else {
    for (const auto& name : ad.group_names())
      rec.grad_norm_per_group.emplace_back(name, std::numeric_limits<double>::quiet_NaN());
  }
  rec.wall_time_s = elapsed;
  return rec;
}

/// Minibatch training with backward_analytic. Records epoch 0 (before any
/// step) and the end of every epoch. `seed` drives the batch order only.
/// A non-finite loss stops the run and is flagged in the result.
inline TrainResult train(AdaptedLinear& ad, const Dataset& ds, const OptimizerConfig& opt, std::uint64_t seed) {
  opt.validate();
  if (ad.config.d_in != ds.spec.d_in || ad.config.d_out != ds.spec.d_out) {
    throw ShapeError("train: adapter " + Matrix::shape_string(ad.config.d_in, ad.config.d_out) +
                     " does not match task " + Matrix::shape_string(ds.spec.d_in, ds.spec.d_out));
  }
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  TrainResult result;
  result.batch_order_hash = detail::kFnvOffset;
  Optimizer optimizer(opt);
  Rng order_rng(seed);
  std::vector<std::size_t> order(ds.train_size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t step = 0;
  result.records.push_back(make_record(ad, ds, 0, 0, elapsed()));
  if (!std::isfinite(result.records.back().train_loss)) {
    result.diverged = true;
    result.message = "non-finite loss at initialization";
    return result;
  }
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    shuffle_indices(order, order_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::size_t end = std::min(order.size(), begin + opt.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      for (std::size_t i : batch) result.batch_order_hash = detail::fnv1a(result.batch_order_hash, i);
      const Matrix x = gather_rows(ds.x_train, batch);
      const LossSpec loss = train_loss_spec(ds, batch);
      const GradientSet g = backward_analytic(ad, x, output_delta(loss, forward(ad, x)));
      optimizer.step(ad, g);
      ++step;
    }
    result.records.push_back(make_record(ad, ds, epoch, step, elapsed()));
    const auto& last = result.records.back();
    if (!std::isfinite(last.train_loss) || !std::isfinite(last.eval_loss)) {
      result.diverged = true;
      result.message = "non-finite loss at epoch " + std::to_string(epoch) + " (learning rate too large?)";
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Method comparison
// ---------------------------------------------------------------------------

/// Trapezoidal area under the eval-loss curve with unit epoch spacing.
inline double area_under_curve(const std::vector<TrainRecord>& records) {
  double area = 0.0;
  for (std::size_t i = 1; i < records.size(); ++i)
    area += 0.5 * (records[i - 1].eval_loss + records[i].eval_loss);
  return area;
}

/// First recorded epoch whose eval loss is strictly below `threshold`, or -1.
inline long epochs_to_threshold(const std::vector<TrainRecord>& records, double threshold) {
  for (const auto& r : records)
    if (r.eval_loss < threshold) return static_cast<long>(r.epoch);
  return -1;
}

struct NamedAdapter {
  std::string name;
  AdapterConfig config;
};

/// Canonical label, e.g. "lora-16", "moslora-16", "linchain-3-16", "linchain-2-8".
inline std::string default_adapter_name(const AdapterConfig& c) {
  std::string name(method_name(c.method));
  if (c.method == Method::kLinchain) name += "-" + std::to_string(c.chain_length());
  return name + "-" + std::to_string(c.rank_in());
}

struct CompareOptions {
  /// Absolute threshold; when unset, threshold_factor * best final eval loss.
  std::optional<double> threshold;
  double threshold_factor = 1.05;
  /// Worker threads for (method, seed) cells; 0 = hardware concurrency.
  std::size_t threads = 0;
};

struct CompareRow {
  std::size_t method_index = 0;
  std::string name;
  Method method = Method::kLora;
  std::uint64_t seed = 0;
  double initial_eval_loss = 0.0;
  double final_train_loss = 0.0;
  double final_eval_loss = 0.0;
  double auc = 0.0;
  long epochs_to_threshold = -1;
  bool diverged = false;
  std::uint64_t batch_order_hash = 0;
  std::string error;
  std::vector<double> eval_curve;
};

struct MethodSummary {
  std::string name;
  Method method = Method::kLora;
  std::size_t runs = 0;
  double final_eval_mean = 0.0, final_eval_sd = 0.0;
  double auc_mean = 0.0, auc_sd = 0.0;
  double epochs_to_threshold_mean = 0.0, epochs_to_threshold_sd = 0.0;
  /// Runs that reached the threshold (the epoch statistics cover only these).
  std::size_t reached_threshold = 0;
};

struct ComparisonReport {
  double threshold = 0.0;
  std::vector<CompareRow> rows;
  std::vector<MethodSummary> summaries;
};

namespace detail {

/// Mean and sample standard deviation (0 for fewer than two values).
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline CompareRow run_cell(const NamedAdapter& entry, std::size_t method_index, const Dataset& ds,
                           const OptimizerConfig& opt, std::uint64_t seed) {
  CompareRow row;
  row.method_index = method_index;
  row.name = entry.name;
  row.method = entry.config.method;
  row.seed = seed;
  try {
    AdapterConfig cfg = entry.config;
    cfg.seed = seed;
    AdaptedLinear ad = init_adapter(cfg, ds.w0);
    const TrainResult tr = train(ad, ds, opt, seed);
    row.diverged = tr.diverged;
    row.batch_order_hash = tr.batch_order_hash;
    row.initial_eval_loss = tr.records.front().eval_loss;
    row.final_train_loss = tr.records.back().train_loss;
    row.final_eval_loss = tr.records.back().eval_loss;
    row.auc = area_under_curve(tr.records);
    for (const auto& r : tr.records) row.eval_curve.push_back(r.eval_loss);
    if (tr.diverged) row.error = tr.message;
  } catch (const std::exception& e) {
    row.error = e.what();
    row.diverged = true;
    row.final_eval_loss = row.final_train_loss = row.auc = std::numeric_limits<double>::quiet_NaN();
  }
  return row;
}

}  // namespace detail

/// Trains every (adapter, seed) cell on one shared dataset. For a given seed
/// every method sees the same batch order and the same A draws; each cell's
/// adapter seed is set to the run seed. Rows are ordered by (method, seed).
inline ComparisonReport compare_methods(const std::vector<NamedAdapter>& adapters, const TaskSpec& task,
                                        const OptimizerConfig& opt, const std::vector<std::uint64_t>& seeds,
                                        const CompareOptions& options = {}) {
  if (adapters.empty() || seeds.empty()) throw ConfigError("compare: need at least one adapter and one seed");
  for (const auto& a : adapters) {
    a.config.validate();
    if (a.config.d_in != task.d_in || a.config.d_out != task.d_out)
      throw ConfigError("compare: adapter '" + a.name + "' does not match task dimensions");
  }
  opt.validate();
  const Dataset ds = make_task(task);

  const std::size_t cells = adapters.size() * seeds.size();
  std::vector<CompareRow> rows(cells);
  std::size_t workers = options.threads == 0 ? std::max(1U, std::thread::hardware_concurrency()) : options.threads;
  workers = std::min(workers, cells);

  // Static partition by cell index.
  auto work = [&](std::size_t worker) {
    for (std::size_t c = worker; c < cells; c += workers) {
      const std::size_t mi = c / seeds.size();
      rows[c] = detail::run_cell(adapters[mi], mi, ds, opt, seeds[c % seeds.size()]);
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, work, w));
    for (auto& j : jobs) j.get();
  }

  ComparisonReport report;
  if (options.threshold) {
    report.threshold = *options.threshold;
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : rows)
      if (r.error.empty() && std::isfinite(r.final_eval_loss)) best = std::min(best, r.final_eval_loss);
    report.threshold = options.threshold_factor * best;
  }
  for (auto& r : rows) {
    std::vector<TrainRecord> curve;
    for (std::size_t e = 0; e < r.eval_curve.size(); ++e) {
      TrainRecord rec;
      rec.epoch = e;
      rec.eval_loss = r.eval_curve[e];
      curve.push_back(rec);
    }
    r.epochs_to_threshold = epochs_to_threshold(curve, report.threshold);
  }

  for (std::size_t mi = 0; mi < adapters.size(); ++mi) {
    MethodSummary s;
    s.name = adapters[mi].name;
    s.method = adapters[mi].config.method;
    std::vector<double> finals, aucs, epochs;
    for (const auto& r : rows) {
      if (r.method_index != mi || !r.error.empty()) continue;
      finals.push_back(r.final_eval_loss);
      aucs.push_back(r.auc);
      if (r.epochs_to_threshold >= 0) epochs.push_back(static_cast<double>(r.epochs_to_threshold));
    }
    s.runs = finals.size();
    s.reached_threshold = epochs.size();
    std::tie(s.final_eval_mean, s.final_eval_sd) = detail::mean_sd(finals);
    std::tie(s.auc_mean, s.auc_sd) = detail::mean_sd(aucs);
    std::tie(s.epochs_to_threshold_mean, s.epochs_to_threshold_sd) = detail::mean_sd(epochs);
    report.summaries.push_back(s);
  }
  report.rows = std::move(rows);
  return report;
}

}  // namespace linchain
