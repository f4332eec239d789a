// ckd: one binary, five subcommands. Exit codes: 0 success, 2 config
// error, 3 data or checkpoint error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ckd/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"continual knowledge distillation lab"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "experiment config (JSON)")->required();
    sub->add_option("--set", overrides,
                    "override a config key, e.g. --set distill.alpha=0.2");
    sub->add_option("--out-dir", [&](const CLI::results_t& r) {
      overrides.push_back("out_dir=" + r[0]);
      return true;
    }, "output root (overrides config)");
    sub->add_option("--seed", [&](const CLI::results_t& r) {
      overrides.push_back("seed=" + r[0]);
      return true;
    }, "root seed (overrides config)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate domain corpora and vocab");
  add_common(gen);

  auto* teach = app.add_subcommand("train-teachers", "train one model per domain");
  add_common(teach);
  std::vector<std::string> malicious;
  teach->add_option("--malicious", malicious, "flag this teacher for run-time permutation");

  auto* run = app.add_subcommand("run", "run the configured method over the order");
  add_common(run);
  run->add_option("--method", [&](const CLI::results_t& r) {
    overrides.push_back("method=" + r[0]);
    return true;
  }, "method: ckd | kd | ewc | multi_teacher (overrides config)");
  run->add_option("--order", [&](const CLI::results_t& r) {
    overrides.push_back("order=" + r[0]);
    return true;
  }, "teacher order, e.g. ABEW->C (overrides config)");

  auto* report = app.add_subcommand("report", "merge run histories into a table");
  std::vector<std::string> history_args;
  std::string report_dir = ".";
  report->add_option("histories", history_args, "history.jsonl files")->required();
  report->add_option("--out-dir", report_dir, "where report.txt/report.csv land");

  auto* corr = app.add_subcommand("correlate", "Q vs BLEU correlation study");
  add_common(corr);
  std::string corr_csv;
  corr->add_option("--csv", corr_csv, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ckd::cmd_gen_data(config, overrides);
    } else if (teach->parsed()) {
      ckd::cmd_train_teachers(config, overrides, malicious);
    } else if (run->parsed()) {
      ckd::cmd_run(config, overrides);
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> paths(history_args.begin(),
                                               history_args.end());
      ckd::cmd_report(paths, report_dir);
    } else if (corr->parsed()) {
      ckd::cmd_correlate(config, overrides, corr_csv);
    }
  } catch (const ckd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ckd::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ckd::ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
