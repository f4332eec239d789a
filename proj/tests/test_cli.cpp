#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ckd/common.hpp"
#include "doctest.h"

// End-to-end exercise of the installed binary: every subcommand, the exit
// code contract, and rerun determinism. CKD_BIN is injected by the build.

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ckd_cli_test";

int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path log = kRoot / "cmd.log";
  std::string cmd = std::string(CKD_BIN) + " " + args + " >" + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream f(log);
    std::stringstream buf;
    buf << f.rdbuf();
    *output = buf.str();
  }
  return WEXITSTATUS(rc);
}

void write_config(const fs::path& path, const fs::path& out_dir) {
  std::ofstream f(path);
  f << R"({
  "schema_version": 1,
  "out_dir": ")" << out_dir.string()
    << R"(",
  "seed": 7,
  "order": "AB->C",
  "method": "ckd",
  "domains": [
    {"name": "A", "lexicon_seed": 11, "train_size": 200, "dev_size": 12, "test_size": 20, "max_len": 7, "teacher_epochs": 30},
    {"name": "B", "lexicon_seed": 22, "train_size": 200, "dev_size": 12, "test_size": 20, "max_len": 7, "teacher_epochs": 30},
    {"name": "C", "lexicon_seed": 33, "train_size": 200, "dev_size": 12, "test_size": 20, "max_len": 7, "teacher_epochs": 30}
  ],
  "teacher_arch": {"family": "attention", "embed_dim": 16, "hidden_dim": 32},
  "student_arch": {"family": "attention", "embed_dim": 16, "hidden_dim": 32},
  "distill": {"epochs_per_step": 2, "batch_size": 16, "dropout": 0.0, "early_stop_patience": 0, "verbose": false}
})";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("full pipeline: gen-data, train-teachers, run, report, correlate") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  const fs::path cfg = kRoot / "exp.json";
  const fs::path out = kRoot / "out";
  write_config(cfg, out);

  std::string log;

  // ---- gen-data ----
  REQUIRE(run_cli("gen-data -c " + cfg.string(), &log) == 0);
  for (const char* d : {"A", "B", "C"})
    for (const char* r : {"train", "dev", "test"})
      CHECK(fs::exists(out / "data" / (std::string(d) + "." + r + ".txt")));
  CHECK(fs::exists(out / "data" / "vocab.txt"));

  // Idempotent: a second invocation reproduces the bytes.
  const std::string before = slurp(out / "data" / "A.train.txt");
  REQUIRE(run_cli("gen-data -c " + cfg.string()) == 0);
  CHECK(slurp(out / "data" / "A.train.txt") == before);

  // ---- train-teachers ----
  REQUIRE(run_cli("train-teachers -c " + cfg.string(), &log) == 0);
  for (const char* d : {"A", "B", "C"})
    CHECK(fs::exists(out / "teachers" / (std::string(d) + ".ckpt")));
  CHECK(fs::exists(out / "teachers" / "teachers.json"));
  CHECK(log.find("dev BLEU") != std::string::npos);

  // ---- run (ckd) ----
  REQUIRE(run_cli("run -c " + cfg.string(), &log) == 0);
  const fs::path run_dir = out / "runs" / "ckd-AB_to_C";
  REQUIRE(fs::exists(run_dir / "history.jsonl"));
  CHECK(fs::exists(run_dir / "manifest.json"));
  CHECK(fs::exists(run_dir / "step_0.ckpt"));
  CHECK(fs::exists(run_dir / "step_1.ckpt"));
  CHECK(fs::exists(run_dir / "step_2.ckpt"));
  CHECK(log.find("AD") != std::string::npos);

  // Rerun determinism: history bytes are identical.
  const std::string hist1 = slurp(run_dir / "history.jsonl");
  REQUIRE(run_cli("run -c " + cfg.string()) == 0);
  CHECK(slurp(run_dir / "history.jsonl") == hist1);

  // ---- run (kd baseline via --method) ----
  REQUIRE(run_cli("run -c " + cfg.string() + " --method kd", &log) == 0);
  const fs::path kd_dir = out / "runs" / "kd-AB_to_C";
  CHECK(fs::exists(kd_dir / "history.jsonl"));

  // ---- report ----
  REQUIRE(run_cli("report " + (run_dir / "history.jsonl").string() + " " +
                      (kd_dir / "history.jsonl").string() + " --out-dir " +
                      kRoot.string(),
                  &log) == 0);
  CHECK(fs::exists(kRoot / "report.txt"));
  CHECK(fs::exists(kRoot / "report.csv"));
  CHECK(log.find("ckd") != std::string::npos);
  CHECK(log.find("kd") != std::string::npos);
  const std::string csv = slurp(kRoot / "report.csv");
  CHECK(csv.find("method,config,step,bleu,delta_bleu,ad") != std::string::npos);

  // ---- correlate ----
  REQUIRE(run_cli("correlate -c " + cfg.string(), &log) == 0);
  CHECK(fs::exists(out / "correlation.csv"));
  CHECK(log.find("pearson") != std::string::npos);
  const fs::path alt_csv = kRoot / "corr_alt.csv";
  REQUIRE(run_cli("correlate -c " + cfg.string() + " --csv " + alt_csv.string()) == 0);
  CHECK(fs::exists(alt_csv));

  // ---- --set override steers the run ----
  REQUIRE(run_cli("run -c " + cfg.string() + " --method kd --set distill.epochs_per_step=0",
                  &log) == 0);
  // With zero epochs the student never moves, so step BLEU stays at step 0.
  {
    std::istringstream hist(slurp(kd_dir / "history.jsonl"));
    std::string l0, l1;
    std::getline(hist, l0);
    std::getline(hist, l1);
    auto bleu_of = [](const std::string& line) {
      auto k = line.find("\"bleu\":");
      return line.substr(k, line.find(',', k) - k);
    };
    CHECK(bleu_of(l0) == bleu_of(l1));
  }
}

TEST_CASE("exit codes follow the error taxonomy") {
  fs::create_directories(kRoot);
  const fs::path cfg = kRoot / "exp.json";
  const fs::path out = kRoot / "out";
  if (!fs::exists(cfg)) write_config(cfg, out);
  std::string log;

  // Unknown flag / missing required option: CLI parse error.
  CHECK(run_cli("run", &log) != 0);
  CHECK(run_cli("frobnicate -c " + cfg.string(), &log) != 0);

  // Config problems exit 2.
  CHECK(run_cli("run -c " + (kRoot / "absent.json").string(), &log) == 2);
  CHECK(run_cli("run -c " + cfg.string() + " --set method=warp", &log) == 2);
  CHECK(run_cli("run -c " + cfg.string() + " --order \"A->Z\"", &log) == 2);
  CHECK(run_cli("run -c " + cfg.string() + " --set distill.alpha=-1", &log) == 2);
  {
    const fs::path bad = kRoot / "bad.json";
    std::ofstream f(bad);
    f << "{\"schema_version\": 99}";
    f.close();
    CHECK(run_cli("gen-data -c " + bad.string(), &log) == 2);
    CHECK(log.find("schema") != std::string::npos);
  }

  // Missing data exits 3.
  const fs::path empty_out = kRoot / "empty_out";
  fs::remove_all(empty_out);
  CHECK(run_cli("run -c " + cfg.string() + " --out-dir " + empty_out.string(), &log) == 3);
  CHECK(run_cli("train-teachers -c " + cfg.string() + " --out-dir " +
                    empty_out.string(),
                &log) == 3);

  // Vocabulary mismatch between data and teachers is refused with 3:
  // regenerate the corpora over a smaller token universe, leaving the
  // stale teachers behind.
  {
    std::string text = slurp(cfg);
    const std::string key = "\"lexicon_seed\"";
    std::string shrunk;
    std::size_t at = 0;
    while (true) {
      std::size_t hit = text.find(key, at);
      if (hit == std::string::npos) {
        shrunk += text.substr(at);
        break;
      }
      shrunk += text.substr(at, hit - at);
      shrunk += "\"content_vocab\": 40, \"lexicon_seed\"";
      at = hit + key.size();
    }
    const fs::path cfg40 = kRoot / "exp40.json";
    std::ofstream f(cfg40);
    f << shrunk;
    f.close();
    REQUIRE(run_cli("gen-data -c " + cfg40.string()) == 0);
    CHECK(run_cli("run -c " + cfg40.string(), &log) == 3);
    CHECK(log.find("refus") != std::string::npos);
    // Restore the original data for any later case.
    REQUIRE(run_cli("gen-data -c " + cfg.string()) == 0);
  }

  // report with no histories fails at argument parsing.
  CHECK(run_cli("report", &log) != 0);
  // report on a malformed history file is a data error.
  {
    const fs::path junk = kRoot / "junk.jsonl";
    std::ofstream f(junk);
    f << "{broken\n";
    f.close();
    CHECK(run_cli("report " + junk.string(), &log) == 3);
  }
}

TEST_CASE("malicious flag reaches the run") {
  const fs::path cfg = kRoot / "exp.json";
  const fs::path out = kRoot / "out";
  REQUIRE(fs::exists(cfg));
  std::string log;
  // Teachers and data exist from the pipeline case; poison teacher B.
  REQUIRE(run_cli("train-teachers -c " + cfg.string() + " --malicious B", &log) == 0);
  CHECK(log.find("malicious") != std::string::npos);
  REQUIRE(run_cli("run -c " + cfg.string() + " --method kd", &log) == 0);

  // teachers.json records the flag.
  const std::string idx = slurp(out / "teachers" / "teachers.json");
  CHECK(idx.find("\"malicious\": true") != std::string::npos);

  fs::remove_all(kRoot);
}
