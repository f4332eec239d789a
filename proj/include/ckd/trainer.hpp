#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckd/corpus.hpp"
#include "ckd/filtration.hpp"
#include "ckd/history.hpp"
#include "ckd/inheritance.hpp"
#include "ckd/model.hpp"

namespace ckd {

// The continual loop: per-step optimization of the combined objective
//   ce_weight * CE(D_train) + lambda_t * KF(D_trans) + (1 - lambda_t) * KI(D_trans)
// plus the baselines sharing the same engine. Loss sums are normalized to
// per-token (CE) and per-tuple (KF/KI) means inside the engine so batch
// boundaries do not reweight the objective; KF and KI share one normalizer,
// which preserves the lambda ratio.

enum class LambdaKind { geometric, constant, table };

struct LambdaSchedule {
  LambdaKind kind = LambdaKind::geometric;
  double constant = 0.5;      // constant kind
  std::vector<double> table;  // table kind, 1-based by step; last value repeats
  // The closed form gives lambda_1 = 0, which disables teacher learning in
  // the very first step; the default caps step 1 at 0.999 and literal_t1
  // restores the formula value.
  bool literal_t1 = false;
};

double lambda_weight(int t, const LambdaSchedule&);

enum class SplitRefresh { per_epoch, per_step };

struct DistillConfig {
  double alpha = 0.1;
  QKind q_kind = QKind::token_ce;
  FiltrationPolicy policy = FiltrationPolicy::token_ce_with_filtration;
  DivergenceKind divergence = DivergenceKind::kl;
  NoiseSource noise;
  bool neg_min_form = false;
  double k_a = 1.0;
  double k_b = 1.0;
  LambdaSchedule lambda;
  double ce_weight = 1.0;
  double ewc_c = 1.0;
  int epochs_per_step = 30;
  int early_stop_patience = 5;
  int batch_size = 32;
  OptimConfig optim;
  double dropout = 0.1;
  SplitRefresh split_refresh = SplitRefresh::per_epoch;
  int decode_max_len = 0;  // 0: model cap
  std::uint64_t seed = 1;
  bool force_serial = false;
  bool verbose = true;  // split log lines on stdout
};

void validate_config(const DistillConfig&);

struct TeacherEntry {
  PredictiveModel model;  // frozen
  std::string name;
  bool malicious = false;
  std::uint64_t malicious_seed = 0;  // 0: derive from run seed and step
};

struct TeacherSequence {
  std::vector<TeacherEntry> teachers;
};

struct RunCorpora {
  ParallelCorpus train;     // student-domain training data
  ParallelCorpus transfer;  // comparison/distillation data
  ParallelCorpus dev;       // early stopping
  ParallelCorpus test;      // BLEU reporting
};

enum class Method { ckd, kd, ewc, multi_teacher };
const char* method_name(Method);
Method method_from_name(const std::string&);

struct StepResult {
  PredictiveModel snapshot;  // frozen post-step student
  StepMetrics metrics;       // delta_bleu/ad are filled by run_sequence
};

// One continual step of the full method. The split against the teacher is
// refreshed per epoch (or once per step) against the current student.
StepResult ckd_step(PredictiveModel& student, const PredictiveModel& teacher,
                    const InheritanceAnchor& anchor, const RunCorpora&,
                    const DistillConfig&, int t);

// Baseline: CE + lambda_t * KD over all tuples, no anchoring.
StepResult vanilla_kd_step(PredictiveModel& student, const PredictiveModel& teacher,
                           const RunCorpora&, const DistillConfig&, int t);

// Diagonal Fisher estimate: mean over transfer tokens of the squared
// per-token CE gradient, evaluated exactly (one backward per token).
std::vector<double> fisher_diagonal(const PredictiveModel&,
                                    std::span<const SentencePair> transfer,
                                    bool force_serial = false);

// Baseline: the vanilla-KD objective plus ewc_c * sum_i F_i (theta_i -
// theta*_i)^2 anchored at the previous student's parameters.
StepResult ewc_step(PredictiveModel& student, const PredictiveModel& teacher,
                    const PredictiveModel& previous, std::span<const double> fisher,
                    const RunCorpora&, const DistillConfig&, int t);

// Analysis baseline: one phase of CE + KD against the arithmetic mean of all
// teacher distributions.
StepResult multi_teacher_kd(PredictiveModel& student, const TeacherSequence&,
                            const RunCorpora&, const DistillConfig&);

// Plain CE training with dev-CE early stopping; used to build teachers.
PredictiveModel train_teacher(const ArchSpec&, std::uint64_t init_seed,
                              std::uint64_t vocab_hash, const ParallelCorpus& train,
                              const ParallelCorpus& dev, const DistillConfig&);

struct RunSink {
  std::filesystem::path out_dir;  // receives step_<t>.ckpt and history.jsonl
};

// Drives the chosen method over the teacher sequence; step 0 records the
// incoming student. multi_teacher consumes the whole sequence in one step.
RunHistory run_sequence(PredictiveModel& student, const TeacherSequence&,
                        const RunCorpora&, const DistillConfig&, Method,
                        const RunSink* sink = nullptr);

}  // namespace ckd
