#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ckd/corpus.hpp"
#include "ckd/model.hpp"
#include "ckd/quantify.hpp"
#include "ckd/trainer.hpp"

namespace ckd {

inline constexpr int kSchemaVersion = 1;

// Teacher sequence notation: "ABEW->C" reads left to right as the teachers
// visited in order, with the student domain alone on the right. Multi-letter
// domain names use commas: "news,law->med".
struct OrderSpec {
  std::vector<std::string> teachers;
  std::string student;
};

OrderSpec parse_order(const std::string& order, std::span<const DomainSpec> domains);

// Settings for the `correlate` command.
struct CorrelateConfig {
  QKind q_kind = QKind::token_entropy;
  bool oriented = false;
  std::vector<std::string> models;    // teacher names; empty means all
  std::vector<std::string> testsets;  // domain names; empty means all
};

// Everything an experiment needs, resolved from one JSON file plus any
// key=value overrides (overrides win). The arch descriptors leave
// vocab_size = 0; commands fill it from the generated vocabulary.
struct ExperimentConfig {
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 1;
  std::string order;
  Method method = Method::ckd;
  std::vector<DomainSpec> domains;
  ArchSpec teacher_arch;
  ArchSpec student_arch;
  std::vector<std::string> malicious;  // teacher names wrapped at run time
  // The comparison corpus defaults to the student domain's train split;
  // these select another domain and/or split instead.
  std::string transfer_domain;
  std::string transfer_role = "train";
  DistillConfig distill;
  CorrelateConfig correlate;
};

// Parses the file, applies dotted-path overrides ("distill.alpha=0.2",
// "method=kd"), validates, and resolves. Unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::span<const std::string> overrides = {});

// Resolved snapshot as JSON text (the form embedded in manifests).
std::string config_json(const ExperimentConfig&);

// Record of one `run` invocation: with the config and the code version it
// pins every input by content hash, which is what makes a run repeatable.
struct RunManifest {
  int schema_version = kSchemaVersion;
  std::string method;
  std::string config_label;  // the order string
  std::string config;        // resolved config snapshot, JSON text
  std::string source_hash;
  std::map<std::string, std::string> corpus_hashes;      // file -> hex64
  std::map<std::string, std::string> checkpoint_hashes;  // file -> hex64
  double wall_seconds = 0;
};

void save_manifest(const RunManifest&, const std::filesystem::path&);
RunManifest load_manifest(const std::filesystem::path&);

}  // namespace ckd
