// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

// linchain: gradcheck | paramcount | train | compare --config <file>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "linchain/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"LinChain / LoRA / MoSLoRA adapter experiments"};
  app.require_subcommand(1);

  std::string config;
  std::string output_dir;
  std::uint64_t seed = 0;
  bool quiet = false;
  app.add_option("--output-dir", output_dir, "Output root (overrides config and $LINCHAIN_OUTPUT_DIR)");
  auto* seed_opt = app.add_option("--seed", seed, "Run seed (replaces the config's seed list)");
  app.add_flag("--quiet", quiet, "Suppress non-error output");

  for (const char* name : {"gradcheck", "paramcount", "train", "compare"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "Experiment config (JSON)")->required();
    sub->add_option("--output-dir", output_dir, "Output root (overrides config and $LINCHAIN_OUTPUT_DIR)");
    sub->add_option("--seed", seed, "Run seed (replaces the config's seed list)");
    sub->add_flag("--quiet", quiet, "Suppress non-error output");
  }
  app.get_subcommand("gradcheck")->description("Check analytic gradients against central finite differences");
  app.get_subcommand("paramcount")->description("Count trainable parameters per adapter");
  app.get_subcommand("train")->description("Train one adapter; writes trace.csv and checkpoints");
  app.get_subcommand("compare")->description("Train several adapters over seeds and summarize");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return linchain::kExitUsage;
  }

  linchain::CommandOptions opts;
  opts.quiet = quiet;
  if (!output_dir.empty()) opts.output_dir = output_dir;
  bool seed_given = seed_opt->count() > 0;
  for (auto* sub : app.get_subcommands()) seed_given = seed_given || sub->count("--seed") > 0;
  if (seed_given) opts.seed = seed;

  const auto* sub = app.get_subcommands().front();
  return linchain::run_command(sub->get_name(), config, opts).exit_code;
}
