// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "linchain/checkpoint.hpp"
#include "linchain/config.hpp"
#include "linchain/experiments.hpp"
#include "linchain/report_io.hpp"
#include "test_support.hpp"

namespace linchain {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("linchain-" + std::string(info->test_suite_name()) + "-" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

const char* kFullConfig = R"({
  "task": {"kind": "target-recovery", "d_in": 12, "d_out": 10, "target_rank": 3, "train_size": 40,
           "eval_size": 20, "data_seed": 4, "noise_std": 0.01},
  "adapters": [
    {"name": "lora", "method": "lora", "rank": 3},
    {"method": "moslora", "rank": 3, "scaling": 0.5},
    {"method": "linchain", "chain_dims": [2, 3, 2], "identity_chain": true}
  ],
  "optimizer": {"kind": "sgd", "learning_rate": 0.05, "momentum": 0.9, "epochs": 7, "batch_size": 8},
  "seeds": [3, 1, 2],
  "gradcheck": {"tolerance": 1e-6, "cases": 4, "loss": "mse"},
  "compare": {"threshold": 0.25, "threads": 2}
})";

TEST(ConfigTest, ParsesEveryField) {
  const ExperimentConfig c = parse_experiment(kFullConfig);
  ASSERT_TRUE(c.task.has_value());
  EXPECT_EQ(c.task->d_in, 12u);
  EXPECT_EQ(c.task->noise_std, 0.01);
  ASSERT_EQ(c.adapters.size(), 3u);
  EXPECT_EQ(c.adapters[0].name, "lora");
  EXPECT_EQ(c.adapters[1].name, "moslora-3");
  EXPECT_EQ(c.adapters[1].config.chain_dims, (std::vector<std::size_t>{3, 3}));
  EXPECT_EQ(c.adapters[1].config.scaling, 0.5);
  EXPECT_EQ(c.adapters[2].name, "linchain-2-2");
  EXPECT_TRUE(c.adapters[2].config.identity_chain);
  EXPECT_EQ(c.adapters[2].config.d_out, 10u);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::kSgd);
  EXPECT_EQ(c.optimizer.batch_size, 8u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 1, 2}));
  EXPECT_EQ(c.gradcheck.loss, GradcheckLoss::kMse);
  EXPECT_EQ(c.gradcheck.cases, 4u);
  EXPECT_EQ(c.compare.threshold, 0.25);
  EXPECT_EQ(c.compare.threads, 2u);
}

TEST(ConfigTest, RoundTripIsIdentity) {
  const ExperimentConfig c = parse_experiment(kFullConfig);
  const std::string once = serialize_experiment(c);
  const ExperimentConfig back = parse_experiment(once);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(serialize_experiment(back), once);
}

TEST(ConfigTest, RoundTripWithoutTask) {
  const ExperimentConfig c =
      parse_experiment(R"({"adapter": {"method": "linchain", "d_in": 4096, "d_out": 4096, "rank": 16,
                                        "chain_length": 3}})");
  EXPECT_FALSE(c.task.has_value());
  EXPECT_EQ(c.adapters[0].config.chain_dims, (std::vector<std::size_t>{16, 16, 16, 16}));
  EXPECT_TRUE(parse_experiment(serialize_experiment(c)) == c);
}

TEST(ConfigTest, RejectsMalformedInput) {
  const std::vector<std::string> bad = {
      "{not json",
      R"([])",
      R"({})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}, "bogus": 1})",
      R"({"adapter": {"method": "dora", "d_in": 8, "d_out": 8, "rank": 2}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "rank": 2}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 9}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": "two"}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": -2}})",
      R"({"adapter": {"method": "moslora", "d_in": 8, "d_out": 8, "chain_dims": [2, 3]}})",
      R"({"adapter": {"method": "linchain", "d_in": 8, "d_out": 8, "rank": 2}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2, "chain_dims": [2]}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}, "seeds": []})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}, "optimizer": {"kind": "rmsprop"}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}, "optimizer": {"learning_rate": -1}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}, "gradcheck": {"loss": "hinge"}})",
      R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}, "gradcheck": {"tolerance": 0}})",
      R"({"task": {"d_in": 8, "d_out": 8}, "adapter": {"method": "lora", "d_in": 6, "rank": 2}})",
      R"({"task": {"kind": "regression"}, "adapter": {"method": "lora", "rank": 2}})",
  };
  for (const auto& text : bad) EXPECT_THROW(parse_experiment(text), ConfigError) << text;
}

TEST(ConfigTest, MissingFileIsConfigError) {
  EXPECT_THROW(load_experiment("/nonexistent/linchain.json"), ConfigError);
}

TEST(ConfigTest, HashTracksContent) {
  const ExperimentConfig a = parse_experiment(kFullConfig);
  ExperimentConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seeds = {9};
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(CsvTest, DoublesRoundTripExactly) {
  Rng rng(5);
  std::vector<double> values{0.0, -0.0, 1.0, 0.1, 1e-300, 5e-324, std::numeric_limits<double>::max(), -123.456e78};
  for (int i = 0; i < 1000; ++i) values.push_back(std::ldexp(rng.uniform(-1, 1), static_cast<int>(rng.below(200)) - 100));
  for (double v : values) EXPECT_EQ(parse_double(format_double(v)), v) << format_double(v);
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_THROW(parse_double("1.5x"), std::invalid_argument);
}

TEST(CsvTest, TraceLayoutAndRoundTrip) {
  TrainRecord r;
  r.epoch = 3;
  r.step = 12;
  r.train_loss = 0.1 + 0.2;
  r.eval_loss = 1.0 / 3.0;
  r.grad_norm_per_group = {{"A", 1.5}, {"W1", 2.5}, {"W2", 3.5}, {"B", 4.5}};
  r.wall_time_s = 0.25;
  std::ostringstream out;
  write_trace_csv(out, {r}, 2);
  std::istringstream in(out.str());
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header, "epoch,step,train_loss,eval_loss,grad_norm_A,grad_norm_B,grad_norm_W1,grad_norm_W2,wall_time_s");
  std::vector<std::string> fields;
  std::stringstream ls(line);
  for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
  ASSERT_EQ(fields.size(), 9u);
  EXPECT_EQ(fields[0], "3");
  EXPECT_EQ(parse_double(fields[2]), r.train_loss);
  EXPECT_EQ(parse_double(fields[3]), r.eval_loss);
  EXPECT_EQ(parse_double(fields[4]), 1.5);
  EXPECT_EQ(parse_double(fields[5]), 4.5);
  EXPECT_EQ(parse_double(fields[6]), 2.5);
  EXPECT_EQ(parse_double(fields[7]), 3.5);
}

TEST(CheckpointTest, BitwiseRoundTrip) {
  TempDir tmp;
  Rng rng(7);
  for (const auto& cfg : {lora_config(9, 5, 2, 3), moslora_config(6, 6, 3, 1),
                          AdapterConfig{Method::kLinchain, 10, 7, {2, 5, 3}, 0.5, 8, false}}) {
    const AdaptedLinear ad = test::random_adapter(cfg, rng);
    const fs::path p = tmp.path() / "ck.bin";
    save_checkpoint(ad, p);
    const AdaptedLinear back = load_checkpoint(p, cfg);
    EXPECT_EQ(back.config, ad.config);
    EXPECT_EQ(back.w0, ad.w0);
    EXPECT_EQ(back.a, ad.a);
    ASSERT_EQ(back.chain.size(), ad.chain.size());
    for (std::size_t i = 0; i < ad.chain.size(); ++i) EXPECT_EQ(back.chain[i], ad.chain[i]);
    EXPECT_EQ(back.b, ad.b);
  }
}

TEST(CheckpointTest, ConfigMismatchRejected) {
  TempDir tmp;
  Rng rng(8);
  const AdaptedLinear ad = test::random_adapter(linchain_config(6, 6, 2, 2), rng);
  save_checkpoint(ad, tmp.path() / "ck.bin");
  EXPECT_THROW(load_checkpoint(tmp.path() / "ck.bin", linchain_config(6, 6, 2, 3)), CheckpointError);
  EXPECT_THROW(load_checkpoint(tmp.path() / "ck.bin", lora_config(6, 6, 2)), CheckpointError);
}

TEST(CheckpointTest, BadMagicAndTruncationRejected) {
  TempDir tmp;
  Rng rng(9);
  const AdaptedLinear ad = test::random_adapter(lora_config(5, 5, 2), rng);
  const fs::path p = tmp.path() / "ck.bin";
  save_checkpoint(ad, p);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() - 5);
  }
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << corrupt;
  }
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  EXPECT_THROW(load_checkpoint(tmp.path() / "missing.bin"), CheckpointError);
}

TEST(CheckpointTest, MergedExportEqualsBasePlusUpdate) {
  TempDir tmp;
  Rng rng(10);
  const AdaptedLinear ad = test::random_adapter(linchain_config(8, 7, 3, 3), rng);
  save_merged(ad, tmp.path() / "merged.bin");
  const MatrixContainer c = load_matrices(tmp.path() / "merged.bin");
  ASSERT_EQ(c.matrices.size(), 1u);
  EXPECT_EQ(c.matrices[0].name, "merged");
  EXPECT_EQ(c.matrices[0].value, ad.w0 + delta_weight(ad));
}

TEST(RunDirectoryTest, NeverReusesADirectory) {
  TempDir tmp;
  fs::path first, second;
  {
    RunDirectory a(tmp.path(), "train", "abc");
    first = a.path();
    EXPECT_TRUE(fs::exists(first / ".lock"));
    RunDirectory b(tmp.path(), "train", "abc");
    second = b.path();
  }
  EXPECT_NE(first, second);
  EXPECT_EQ(first.filename(), "train-abc");
  EXPECT_EQ(second.filename(), "train-abc-2");
  EXPECT_FALSE(fs::exists(first / ".lock"));
  RunDirectory c(tmp.path(), "train", "abc");
  EXPECT_EQ(c.path().filename(), "train-abc-3");
}

TEST(RunCommandTest, OutputRootPrecedence) {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "cfg.json";
  {
    std::ofstream out(cfg);
    out << R"({"adapter": {"method": "lora", "d_in": 64, "d_out": 64, "rank": 4}})";
  }
  std::ostringstream sink;
  CommandOptions opts;
  opts.out = &sink;
  opts.err = &sink;
  ::setenv(kOutputDirEnv, (tmp.path() / "from-env").c_str(), 1);
  const CommandResult env_run = run_command("paramcount", cfg, opts);
  EXPECT_EQ(env_run.exit_code, kExitOk);
  EXPECT_EQ(env_run.run_dir.parent_path(), tmp.path() / "from-env");
  opts.output_dir = (tmp.path() / "from-flag").string();
  const CommandResult flag_run = run_command("paramcount", cfg, opts);
  EXPECT_EQ(flag_run.run_dir.parent_path(), tmp.path() / "from-flag");
  ::unsetenv(kOutputDirEnv);
  EXPECT_TRUE(fs::exists(flag_run.run_dir / "report.json"));
  EXPECT_TRUE(fs::exists(flag_run.run_dir / "config.json"));
  // The stored copy is the effective config, overrides included.
  ExperimentConfig expected = load_experiment(cfg);
  expected.output_dir = *opts.output_dir;
  std::ifstream copy(flag_run.run_dir / "config.json");
  EXPECT_TRUE(parse_experiment(std::string(std::istreambuf_iterator<char>(copy), {})) == expected);
}

TEST(RunCommandTest, UsageErrors) {
  TempDir tmp;
  std::ostringstream sink;
  CommandOptions opts;
  opts.out = &sink;
  opts.err = &sink;
  opts.output_dir = tmp.path().string();
  const fs::path cfg = tmp.path() / "cfg.json";
  {
    std::ofstream out(cfg);
    out << R"({"adapter": {"method": "lora", "d_in": 8, "d_out": 8, "rank": 2}})";
  }
  EXPECT_EQ(run_command("train", cfg, opts).exit_code, kExitUsage);    // no task
  EXPECT_EQ(run_command("compare", cfg, opts).exit_code, kExitUsage);  // no task
  EXPECT_EQ(run_command("frobnicate", cfg, opts).exit_code, kExitUsage);
  EXPECT_EQ(run_command("gradcheck", tmp.path() / "missing.json", opts).exit_code, kExitUsage);
}

TEST(RunCommandTest, GradcheckReportsMutation) {
  TempDir tmp;
  std::ostringstream sink;
  CommandOptions opts;
  opts.out = &sink;
  opts.err = &sink;
  opts.output_dir = tmp.path().string();
  const fs::path cfg = tmp.path() / "cfg.json";
  const auto write = [&](bool mutate) {
    std::ofstream out(cfg, std::ios::trunc);
    out << R"({"adapter": {"method": "linchain", "d_in": 8, "d_out": 8, "rank": 3, "chain_length": 3},
               "gradcheck": {"cases": 3, "mutate_gradient": )"
        << (mutate ? "true" : "false") << "}}";
  };
  write(false);
  const CommandResult ok = run_command("gradcheck", cfg, opts);
  EXPECT_EQ(ok.exit_code, kExitOk);
  write(true);
  const CommandResult bad = run_command("gradcheck", cfg, opts);
  EXPECT_EQ(bad.exit_code, kExitFailure);
  std::ifstream in(bad.run_dir / "report.json");
  const Json report = Json::parse(in);
  EXPECT_FALSE(report["passed"].get<bool>());
  EXPECT_EQ(report["dependencies"][0]["total_occurrences"].get<std::size_t>(), 20u);
}

TEST(RunCommandTest, TrainWritesArtifacts) {
  TempDir tmp;
  std::ostringstream sink;
  CommandOptions opts;
  opts.out = &sink;
  opts.err = &sink;
  opts.output_dir = tmp.path().string();
  const fs::path cfg = tmp.path() / "cfg.json";
  {
    std::ofstream out(cfg);
    out << R"({"task": {"d_in": 8, "d_out": 8, "target_rank": 2, "train_size": 32, "eval_size": 16},
               "adapter": {"method": "linchain", "rank": 2, "chain_length": 2},
               "optimizer": {"epochs": 4, "batch_size": 8}, "seeds": [3]})";
  }
  const CommandResult r = run_command("train", cfg, opts);
  ASSERT_EQ(r.exit_code, kExitOk) << sink.str();
  for (const char* f : {"trace.csv", "checkpoint.bin", "merged.bin", "report.json", "config.json"})
    EXPECT_TRUE(fs::exists(r.run_dir / f)) << f;
  const AdaptedLinear ad = load_checkpoint(r.run_dir / "checkpoint.bin");
  EXPECT_EQ(ad.config.seed, 3u);
  const MatrixContainer merged = load_matrices(r.run_dir / "merged.bin");
  EXPECT_EQ(merged.matrices[0].value, merge(ad));
  std::ifstream trace(r.run_dir / "trace.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(trace, l);) ++lines;
  EXPECT_EQ(lines, 6u);  // header + epochs 0..4
}

}  // namespace
}  // namespace linchain
