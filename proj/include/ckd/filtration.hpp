#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "ckd/model.hpp"
#include "ckd/quantify.hpp"

namespace ckd {

// Transfer-set splitting and the knowledge-filtration loss: positive KD on
// tuples where the teacher beats the student, a margin-gated push-away on
// the rest, plus the policy/divergence/noise ablation machinery.

enum class DivergenceKind { kl, inverse_kl };
const char* divergence_name(DivergenceKind);
DivergenceKind divergence_from_name(const std::string&);

enum class FiltrationPolicy {
  trivial,
  hard_label_matching,
  hard_label_matching_with_filtration,
  token_ce,
  token_ce_with_filtration,
  hybrid_1,
  hybrid_2,
  hybrid_3,
};
const char* policy_name(FiltrationPolicy);
FiltrationPolicy policy_from_name(const std::string&);

enum class NoiseKind {
  none,
  uniform,
  normal,
  shuffled_batch_attached,
  shuffled_batch_detached,
};
const char* noise_name(NoiseKind);
NoiseKind noise_from_name(const std::string&);

struct NoiseSource {
  NoiseKind kind = NoiseKind::none;
  int sample_size = 1;
};

struct FiltrationSplit {
  std::vector<TransferTuple> positive;
  std::vector<TransferTuple> negative;
  QKind q_kind = QKind::token_ce;
};

// Tuple goes positive iff the teacher's oriented Q strictly exceeds the
// student's; ties are negative. Exact partition of the input.
FiltrationSplit split_transfer(const PredictiveModel& teacher,
                               const PredictiveModel& student,
                               std::span<const TransferTuple> tuples, QKind q_kind);
// Same rule on precomputed per-tuple distributions (parallel to `tuples`).
FiltrationSplit split_transfer_rows(std::span<const Row> teacher_rows,
                                    std::span<const Row> student_rows,
                                    std::span<const TransferTuple> tuples, QKind q_kind);

// Per-tuple routing decisions behind split_transfer and the policy table.
enum class TupleAction { discard, positive, negative };
TupleAction split_action(QKind, std::span<const double> teacher_row,
                         std::span<const double> student_row, int gold);
TupleAction policy_action(FiltrationPolicy, std::span<const double> teacher_row,
                          std::span<const double> student_row, int gold);

// kl = sum p ln(p/q); inverse_kl = sum q ln(q/p). Probabilities are
// floor-clamped inside the logs.
double divergence(std::span<const double> p, std::span<const double> q,
                  DivergenceKind kind);

// Positive distillation: sum over tuples of divergence(teacher ‖ student).
// The gradient is with respect to the student only.
LossValue kd_loss(const PredictiveModel& teacher, const PredictiveModel& student,
                  std::span<const TransferTuple> tuples,
                  DivergenceKind kind = DivergenceKind::kl, const TrainOptions& = {});
// Variant on precomputed reference rows (parallel to `tuples`), used by the
// trainer to reuse frozen-model outputs across epochs.
LossValue kd_loss_rows(std::span<const Row> reference_rows,
                       const PredictiveModel& student,
                       std::span<const TransferTuple> tuples,
                       DivergenceKind kind = DivergenceKind::kl,
                       const TrainOptions& = {});

// Margin-gated push-away. Per tuple, with d = divergence(teacher ‖ student):
// hinge form (default) contributes max(0, alpha - d), so the gradient on an
// active tuple increases d until it clears the margin; min_form keeps the
// literal min(0, alpha - d) for side-by-side study. active_out, when given,
// receives the number of tuples with a nonzero gate.
LossValue neg_kd_loss(const PredictiveModel& teacher, const PredictiveModel& student,
                      std::span<const TransferTuple> negatives, double alpha,
                      DivergenceKind kind = DivergenceKind::kl, const TrainOptions& = {},
                      bool min_form = false, long* active_out = nullptr);
LossValue neg_kd_loss_rows(std::span<const Row> reference_rows,
                           const PredictiveModel& student,
                           std::span<const TransferTuple> negatives, double alpha,
                           DivergenceKind kind = DivergenceKind::kl,
                           const TrainOptions& = {}, bool min_form = false,
                           long* active_out = nullptr);

// k_a * kd_loss(positive) + k_b * neg_kd_loss(negative, alpha).
LossValue kf_loss(const PredictiveModel& teacher, const PredictiveModel& student,
                  const FiltrationSplit& split, double alpha, double k_a = 1.0,
                  double k_b = 1.0, DivergenceKind kind = DivergenceKind::kl,
                  const TrainOptions& = {}, bool min_form = false,
                  long* active_out = nullptr);

// Routes every tuple to the positive term, the negative term, or the floor
// per the policy's decision table, then evaluates the same weighted
// combination as kf_loss. token_ce_with_filtration reproduces kf_loss over
// the default split exactly.
LossValue apply_filtration_policy(FiltrationPolicy policy, const PredictiveModel& teacher,
                                  const PredictiveModel& student,
                                  std::span<const TransferTuple> tuples,
                                  double alpha = 0.1, double k_a = 1.0, double k_b = 1.0,
                                  DivergenceKind kind = DivergenceKind::kl,
                                  const TrainOptions& = {});

// Classification used by apply_filtration_policy, exposed for inspection.
FiltrationSplit policy_split(FiltrationPolicy policy,
                             std::span<const Row> teacher_rows,
                             std::span<const Row> student_rows,
                             std::span<const TransferTuple> tuples);

// One batch of draws standing in for a teacher distribution. flat_index is
// the batch row a shuffled draw came from (sentence-major flattening), -1
// for synthetic noise.
struct NoiseDraw {
  Row dist;
  long flat_index = -1;
};

// Returns sample_size draws. Shuffled sources pick a batch row other than
// self_index and need at least two rows.
std::vector<NoiseDraw> sample_noise_distribution(const NoiseSource&,
                                                 const DistributionBatch& batch,
                                                 std::size_t self_index,
                                                 std::mt19937_64& rng);

// Push-away loss with the reference distribution replaced by noise, the
// per-tuple value averaged over sample_size draws. For
// shuffled_batch_attached the gradient also flows through the sampled
// student row; the detached variant treats it as a constant.
LossValue neg_kd_noise_loss(const PredictiveModel& student,
                            std::span<const TransferTuple> negatives, double alpha,
                            DivergenceKind kind, const NoiseSource& noise,
                            std::uint64_t noise_seed, const TrainOptions& = {},
                            bool min_form = false, long* active_out = nullptr);

}  // namespace ckd
