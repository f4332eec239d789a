#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ckd/config.hpp"

namespace ckd {

// Subcommand bodies. Each throws ConfigError, DataError, or ModelError; the
// binary maps those to exit codes. `overrides` are key=value pairs applied
// on top of the config file, flags winning.

// Writes <out>/data/<domain>.{train,dev,test}.txt and <out>/data/vocab.txt.
void cmd_gen_data(const std::filesystem::path& config_path,
                  std::span<const std::string> overrides);

// Trains one model per domain on its train split, saves frozen checkpoints
// under <out>/teachers/ plus an index teachers.json, and prints each
// teacher's dev BLEU measured after a save/load round trip. Names passed in
// `malicious` are flagged in the index; the permuting wrapper is applied by
// `run`, not here.
void cmd_train_teachers(const std::filesystem::path& config_path,
                        std::span<const std::string> overrides,
                        std::span<const std::string> malicious);

// Executes the configured method over the teacher order. Artifacts land in
// <out>/runs/<method>-<order>/: step_<t>.ckpt, history.jsonl (one line
// flushed per step), manifest.json.
void cmd_run(const std::filesystem::path& config_path,
             std::span<const std::string> overrides);

// Merges one or more history files (each needs its sibling manifest.json
// for method and configuration labels) into a comparison table, printed and
// written as report.txt + report.csv under out_dir.
void cmd_report(std::span<const std::filesystem::path> history_paths,
                const std::filesystem::path& out_dir);

// Runs the Q/BLEU correlation study over trained models x testsets and
// writes the per-cell CSV. Returns by printing pearson r; the CSV lands at
// out_csv (empty: <out>/correlation.csv).
void cmd_correlate(const std::filesystem::path& config_path,
                   std::span<const std::string> overrides,
                   const std::filesystem::path& out_csv);

}  // namespace ckd
