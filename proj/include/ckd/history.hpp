#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ckd {

// Per-step run record. Serialized to history.jsonl as one object per step:
// {step, bleu, delta_bleu, ad, pos, neg, losses{ce,kf,ki}}. For the
// parameter-anchored baseline the `ki` slot carries the penalty term.
struct StepLosses {
  double ce = 0;
  double kf = 0;
  double ki = 0;
};

struct StepMetrics {
  int step = 0;
  double bleu = 0;
  double delta_bleu = 0;  // vs step 0
  double ad = 0;          // accumulated through this step
  long pos = 0;           // split sizes at the last refresh of the step
  long neg = 0;
  StepLosses losses;  // final-epoch mean per-token losses
};

struct RunHistory {
  std::string method;
  std::string config_label;
  std::vector<StepMetrics> steps;
};

std::string history_line_json(const StepMetrics&);
// Appends one line and flushes, so a crashed run keeps completed steps.
void append_history_line(const std::filesystem::path&, const StepMetrics&);
RunHistory load_history(const std::filesystem::path&, std::string method = "",
                        std::string config_label = "");

}  // namespace ckd
