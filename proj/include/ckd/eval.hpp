#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ckd/corpus.hpp"
#include "ckd/history.hpp"
#include "ckd/model.hpp"

namespace ckd {

// 4-gram corpus BLEU over token ids, uniform weights, no smoothing: any
// zero n-gram precision zeroes the score, matching the classic script's
// behavior on pre-tokenized input.
struct BleuScore {
  double bleu = 0;  // 0..100
  double bp = 1;
  std::array<double, 4> precisions{};
  long hyp_len = 0;
  long ref_len = 0;
};

BleuScore corpus_bleu(std::span<const std::vector<int>> hypotheses,
                      std::span<const std::vector<int>> references);

// Sum over steps of the positive BLEU drops. Needs step 0 plus at least one
// step.
double accumulative_degradation(std::span<const double> bleu_sequence);

// Greedy-decodes every source and scores against the references with the
// trailing EOS stripped. max_len 0 uses the model's cap.
BleuScore eval_model_bleu(const PredictiveModel&, const ParallelCorpus& testset,
                          int max_len = 0);

// ---- reporting ----

// Text table: one column per (method, configuration) pair in first-seen
// order, one row per step, cells as `46.19(+3.35)`, a trailing per-method
// average column and a final AD row. CSV columns: method, config, step,
// bleu, delta_bleu, ad; numbers round-trip exactly.
struct ReportTables {
  std::string table_text;
  std::string csv_text;
};

ReportTables render_report(std::span<const RunHistory> histories);

}  // namespace ckd
