#include "ckd/inheritance.hpp"

#include "ckd/filtration.hpp"

namespace ckd {

InheritanceAnchor make_anchor(const PredictiveModel& previous_student, int step) {
  if (step < 1) throw ConfigError("anchor step must be >= 1");
  InheritanceAnchor a{snapshot(previous_student), step};
  return a;
}

LossValue ki_loss(const InheritanceAnchor& anchor, const PredictiveModel& student,
                  std::span<const TransferTuple> tuples, const TrainOptions& topt) {
  if (!anchor.previous.frozen()) throw ModelError("ki_loss: anchor must be frozen");
  if (anchor.previous.vocab_hash() != student.vocab_hash())
    throw ModelError("ki_loss: vocabulary mismatch");
  auto rows = tuple_rows(anchor.previous, tuples);
  return ki_loss_rows(rows, student, tuples, topt);
}

LossValue ki_loss_rows(std::span<const Row> anchor_rows, const PredictiveModel& student,
                       std::span<const TransferTuple> tuples, const TrainOptions& topt) {
  return kd_loss_rows(anchor_rows, student, tuples, DivergenceKind::kl, topt);
}

}  // namespace ckd
