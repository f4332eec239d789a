#pragma once

#include <span>

#include "ckd/model.hpp"

namespace ckd {

// Anchoring of the current student to the previous step's snapshot: the
// knowledge-inheritance loss is the KL of the anchor's distributions against
// the student's over the full transfer set, with no filtration.

struct InheritanceAnchor {
  PredictiveModel previous;  // frozen snapshot of the step-(t-1) student
  int step = 0;              // the step this anchor feeds, t >= 1
};

InheritanceAnchor make_anchor(const PredictiveModel& previous_student, int step);

LossValue ki_loss(const InheritanceAnchor&, const PredictiveModel& student,
                  std::span<const TransferTuple> tuples, const TrainOptions& = {});

// Variant on precomputed anchor rows (parallel to `tuples`).
LossValue ki_loss_rows(std::span<const Row> anchor_rows, const PredictiveModel& student,
                       std::span<const TransferTuple> tuples, const TrainOptions& = {});

}  // namespace ckd
