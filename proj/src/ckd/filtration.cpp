#include <cmath>
#include <functional>

#include "ckd/filtration.hpp"
#include "ckd/parallel.hpp"

namespace ckd {

namespace {

void check_pair(const PredictiveModel& reference, const PredictiveModel& student,
                const char* what) {
  if (reference.vocab_hash() != student.vocab_hash())
    throw ModelError(std::string(what) + ": vocabulary mismatch");
  if (!reference.frozen())
    throw ModelError(std::string(what) + ": reference model must be frozen");
}

// d = KL(ref ‖ other), natural log, floor-clamped inside the logs.
double kl_value(std::span<const double> ref, std::span<const double> other,
                long* clamped) {
  double d = 0;
  for (std::size_t y = 0; y < ref.size(); ++y)
    if (ref[y] > 0)
      d += ref[y] * (log_floored(ref[y], clamped) - log_floored(other[y], clamped));
  return d;
}

// Accumulates w * dd/dz for the logits behind the `other` side of
// KL(ref ‖ other).
void kl_grad_other(std::span<const double> ref, std::span<const double> other,
                   double w_over_temp, Row& dz) {
  for (std::size_t y = 0; y < ref.size(); ++y)
    dz[y] += w_over_temp * (other[y] - ref[y]);
}

// Accumulates w * dd/dz for the logits behind the `ref` side of
// KL(ref ‖ other), where d is the precomputed divergence value.
void kl_grad_ref(std::span<const double> ref, std::span<const double> other, double d,
                 double w_over_temp, Row& dz, long* clamped) {
  for (std::size_t y = 0; y < ref.size(); ++y) {
    const double lr = log_floored(ref[y], clamped) - log_floored(other[y], clamped);
    dz[y] += w_over_temp * ref[y] * (lr - d);
  }
}

struct PassAcc {
  double value = 0;
  long clamped = 0;
  long active = 0;
  std::vector<double> grad;
};

// Shared evaluation loop: groups the tuples, runs one student forward (and,
// when the student is trainable, one backward) per group, and lets `term`
// score each tuple and deposit its dL/dlogits row. Chunked ordered
// reduction keeps the result identical across thread counts.
using TupleTerm = std::function<double(std::size_t tuple_idx, std::span<const double> s_row,
                                       Row* dz, long* clamped, long* active)>;

LossValue tuple_pass(const PredictiveModel& student,
                     std::span<const TransferTuple> tuples, const TrainOptions& topt,
                     const TupleTerm& term, long* active_out) {
  const bool want_grad = !student.frozen();
  const auto n_params = student.param_count();
  const auto vocab = static_cast<std::size_t>(student.arch().vocab_size);
  auto groups = group_tuples(tuples);

  PassAcc total = par::map_reduce_ordered<PassAcc>(
      groups.size(), PassAcc{},
      [&](PassAcc& acc, std::size_t b, std::size_t e) {
        if (want_grad && acc.grad.empty()) acc.grad.assign(n_params, 0.0);
        std::vector<Row> probs;
        for (std::size_t gi = b; gi < e; ++gi) {
          const TupleGroup& g = groups[gi];
          EvalOptions eo;
          eo.dropout = topt.dropout;
          eo.dropout_seed = topt.dropout_seed;
          eo.sent_key = static_cast<long>(gi);
          std::unique_ptr<NetCache> cache;
          student.forward_cached(g.pair, eo, probs, cache);
          std::vector<Row> dl;
          if (want_grad) dl.assign(probs.size(), Row(vocab, 0.0));
          for (std::size_t k = 0; k < g.rows.size(); ++k) {
            const auto r = static_cast<std::size_t>(g.rows[k]);
            acc.value += term(g.tuple_index[k], probs[r], want_grad ? &dl[r] : nullptr,
                              &acc.clamped, &acc.active);
          }
          if (want_grad) student.backward(g.pair, eo, *cache, dl, acc.grad);
        }
      },
      [&](PassAcc& into, const PassAcc& from) {
        into.value += from.value;
        into.clamped += from.clamped;
        into.active += from.active;
        if (from.grad.empty()) return;
        if (into.grad.empty()) into.grad.assign(n_params, 0.0);
        for (std::size_t i = 0; i < n_params; ++i) into.grad[i] += from.grad[i];
      },
      topt.force_serial);

  LossValue out;
  out.value = total.value;
  out.clamped = total.clamped;
  out.has_grad = want_grad;
  if (want_grad) {
    if (total.grad.empty()) total.grad.assign(n_params, 0.0);
    out.grad = std::move(total.grad);
  }
  if (active_out) *active_out = total.active;
  return out;
}

}  // namespace

const char* divergence_name(DivergenceKind k) {
  return k == DivergenceKind::kl ? "kl" : "inverse_kl";
}

DivergenceKind divergence_from_name(const std::string& s) {
  if (s == "kl") return DivergenceKind::kl;
  if (s == "inverse_kl") return DivergenceKind::inverse_kl;
  throw ConfigError("unknown divergence kind: " + s);
}

const char* policy_name(FiltrationPolicy p) {
  switch (p) {
    case FiltrationPolicy::trivial: return "trivial";
    case FiltrationPolicy::hard_label_matching: return "hard_label_matching";
    case FiltrationPolicy::hard_label_matching_with_filtration:
      return "hard_label_matching_with_filtration";
    case FiltrationPolicy::token_ce: return "token_ce";
    case FiltrationPolicy::token_ce_with_filtration: return "token_ce_with_filtration";
    case FiltrationPolicy::hybrid_1: return "hybrid_1";
    case FiltrationPolicy::hybrid_2: return "hybrid_2";
    case FiltrationPolicy::hybrid_3: return "hybrid_3";
  }
  throw ConfigError("unknown filtration policy");
}

FiltrationPolicy policy_from_name(const std::string& s) {
  for (FiltrationPolicy p :
       {FiltrationPolicy::trivial, FiltrationPolicy::hard_label_matching,
        FiltrationPolicy::hard_label_matching_with_filtration, FiltrationPolicy::token_ce,
        FiltrationPolicy::token_ce_with_filtration, FiltrationPolicy::hybrid_1,
        FiltrationPolicy::hybrid_2, FiltrationPolicy::hybrid_3})
    if (s == policy_name(p)) return p;
  throw ConfigError("unknown filtration policy: " + s);
}

const char* noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::normal: return "normal";
    case NoiseKind::shuffled_batch_attached: return "shuffled_batch_attached";
    case NoiseKind::shuffled_batch_detached: return "shuffled_batch_detached";
  }
  throw ConfigError("unknown noise kind");
}

NoiseKind noise_from_name(const std::string& s) {
  for (NoiseKind k : {NoiseKind::none, NoiseKind::uniform, NoiseKind::normal,
                      NoiseKind::shuffled_batch_attached, NoiseKind::shuffled_batch_detached})
    if (s == noise_name(k)) return k;
  throw ConfigError("unknown noise kind: " + s);
}

FiltrationSplit split_transfer(const PredictiveModel& teacher,
                               const PredictiveModel& student,
                               std::span<const TransferTuple> tuples, QKind q_kind) {
  check_pair(teacher, student, "split_transfer");
  auto t_rows = tuple_rows(teacher, tuples);
  auto s_rows = tuple_rows(student, tuples);
  return split_transfer_rows(t_rows, s_rows, tuples, q_kind);
}

TupleAction split_action(QKind q_kind, std::span<const double> teacher_row,
                         std::span<const double> student_row, int gold) {
  const QScore qt = q_score(q_kind, teacher_row, gold);
  const QScore qs = q_score(q_kind, student_row, gold);
  return qt.oriented > qs.oriented ? TupleAction::positive : TupleAction::negative;
}

FiltrationSplit split_transfer_rows(std::span<const Row> teacher_rows,
                                    std::span<const Row> student_rows,
                                    std::span<const TransferTuple> tuples, QKind q_kind) {
  if (teacher_rows.size() != tuples.size() || student_rows.size() != tuples.size())
    throw ConfigError("split_transfer_rows: row/tuple count mismatch");
  FiltrationSplit split;
  split.q_kind = q_kind;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const bool pos = split_action(q_kind, teacher_rows[i], student_rows[i],
                                  tuples[i].gold) == TupleAction::positive;
    (pos ? split.positive : split.negative).push_back(tuples[i]);
  }
  return split;
}

double divergence(std::span<const double> p, std::span<const double> q,
                  DivergenceKind kind) {
  validate_distribution(p);
  validate_distribution(q);
  if (p.size() != q.size()) throw DataError("divergence: dimension mismatch");
  long clamped = 0;
  return kind == DivergenceKind::kl ? kl_value(p, q, &clamped)
                                    : kl_value(q, p, &clamped);
}

LossValue kd_loss(const PredictiveModel& teacher, const PredictiveModel& student,
                  std::span<const TransferTuple> tuples, DivergenceKind kind,
                  const TrainOptions& topt) {
  check_pair(teacher, student, "kd_loss");
  auto rows = tuple_rows(teacher, tuples);
  return kd_loss_rows(rows, student, tuples, kind, topt);
}

LossValue kd_loss_rows(std::span<const Row> reference_rows,
                       const PredictiveModel& student,
                       std::span<const TransferTuple> tuples, DivergenceKind kind,
                       const TrainOptions& topt) {
  if (reference_rows.size() != tuples.size())
    throw ConfigError("kd_loss_rows: row/tuple count mismatch");
  const double inv_temp = 1.0 / student.arch().temperature;
  TupleTerm term = [&, kind, inv_temp](std::size_t i, std::span<const double> s_row,
                                       Row* dz, long* clamped, long*) {
    const Row& t_row = reference_rows[i];
    if (kind == DivergenceKind::kl) {
      const double d = kl_value(t_row, s_row, clamped);
      if (dz) kl_grad_other(t_row, s_row, inv_temp, *dz);
      return d;
    }
    const double d = kl_value(s_row, t_row, clamped);
    if (dz) kl_grad_ref(s_row, t_row, d, inv_temp, *dz, clamped);
    return d;
  };
  return tuple_pass(student, tuples, topt, term, nullptr);
}

LossValue neg_kd_loss(const PredictiveModel& teacher, const PredictiveModel& student,
                      std::span<const TransferTuple> negatives, double alpha,
                      DivergenceKind kind, const TrainOptions& topt, bool min_form,
                      long* active_out) {
  check_pair(teacher, student, "neg_kd_loss");
  auto rows = tuple_rows(teacher, negatives);
  return neg_kd_loss_rows(rows, student, negatives, alpha, kind, topt, min_form,
                          active_out);
}

LossValue neg_kd_loss_rows(std::span<const Row> reference_rows,
                           const PredictiveModel& student,
                           std::span<const TransferTuple> negatives, double alpha,
                           DivergenceKind kind, const TrainOptions& topt, bool min_form,
                           long* active_out) {
  if (alpha <= 0) throw ConfigError("neg_kd_loss: alpha must be positive");
  if (reference_rows.size() != negatives.size())
    throw ConfigError("neg_kd_loss_rows: row/tuple count mismatch");
  const double inv_temp = 1.0 / student.arch().temperature;
  TupleTerm term = [&, kind, alpha, min_form, inv_temp](
                       std::size_t i, std::span<const double> s_row, Row* dz,
                       long* clamped, long* active) {
    const Row& t_row = reference_rows[i];
    const bool forward_kl = kind == DivergenceKind::kl;
    const double d = forward_kl ? kl_value(t_row, s_row, clamped)
                                : kl_value(s_row, t_row, clamped);
    const bool gated = min_form ? d > alpha : d < alpha;
    if (!gated) return 0.0;
    ++*active;
    if (dz) {
      // Loss is alpha - d, so the logit gradient is -dd/dz.
      if (forward_kl)
        kl_grad_other(t_row, s_row, -inv_temp, *dz);
      else
        kl_grad_ref(s_row, t_row, d, -inv_temp, *dz, clamped);
    }
    return alpha - d;
  };
  return tuple_pass(student, negatives, topt, term, active_out);
}

LossValue kf_loss(const PredictiveModel& teacher, const PredictiveModel& student,
                  const FiltrationSplit& split, double alpha, double k_a, double k_b,
                  DivergenceKind kind, const TrainOptions& topt, bool min_form,
                  long* active_out) {
  if (k_a < 0 || k_b < 0) throw ConfigError("kf_loss: negative component weight");
  LossValue kd = kd_loss(teacher, student, split.positive, kind, topt);
  LossValue neg = neg_kd_loss(teacher, student, split.negative, alpha, kind, topt,
                              min_form, active_out);
  LossValue out;
  out.value = k_a * kd.value + k_b * neg.value;
  out.clamped = kd.clamped + neg.clamped;
  out.has_grad = kd.has_grad;
  if (out.has_grad) {
    out.grad.assign(student.param_count(), 0.0);
    for (std::size_t i = 0; i < out.grad.size(); ++i)
      out.grad[i] = k_a * kd.grad[i] + k_b * neg.grad[i];
  }
  return out;
}

TupleAction policy_action(FiltrationPolicy policy, std::span<const double> teacher_row,
                          std::span<const double> student_row, int gold) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= teacher_row.size())
    throw DataError("policy_action: gold token id out of range");
  const bool ct = argmax_lowest(teacher_row) == gold;
  const bool cs = argmax_lowest(student_row) == gold;
  const bool dq =
      teacher_row[static_cast<std::size_t>(gold)] > student_row[static_cast<std::size_t>(gold)];
  switch (policy) {
    case FiltrationPolicy::trivial:
      return TupleAction::positive;
    case FiltrationPolicy::hard_label_matching:
      return (ct && !cs) ? TupleAction::positive : TupleAction::discard;
    case FiltrationPolicy::hard_label_matching_with_filtration:
      if (ct && !cs) return TupleAction::positive;
      if (cs && !ct) return TupleAction::negative;
      return TupleAction::discard;
    case FiltrationPolicy::token_ce:
      return dq ? TupleAction::positive : TupleAction::discard;
    case FiltrationPolicy::token_ce_with_filtration:
      return dq ? TupleAction::positive : TupleAction::negative;
    case FiltrationPolicy::hybrid_1:
      if (ct && cs) return dq ? TupleAction::positive : TupleAction::negative;
      if (!ct && !cs) return dq ? TupleAction::positive : TupleAction::discard;
      return cs ? TupleAction::negative : TupleAction::positive;
    case FiltrationPolicy::hybrid_2:
      if (ct && cs) return dq ? TupleAction::positive : TupleAction::discard;
      if (!ct && !cs) return dq ? TupleAction::positive : TupleAction::negative;
      return cs ? TupleAction::negative : TupleAction::positive;
    case FiltrationPolicy::hybrid_3:
      if (ct && cs) return dq ? TupleAction::discard : TupleAction::negative;
      if (!ct && !cs) return dq ? TupleAction::positive : TupleAction::negative;
      return cs ? TupleAction::negative : TupleAction::positive;
  }
  throw ConfigError("unknown filtration policy");
}

FiltrationSplit policy_split(FiltrationPolicy policy,
                             std::span<const Row> teacher_rows,
                             std::span<const Row> student_rows,
                             std::span<const TransferTuple> tuples) {
  if (teacher_rows.size() != tuples.size() || student_rows.size() != tuples.size())
    throw ConfigError("policy_split: row/tuple count mismatch");
  FiltrationSplit split;
  split.q_kind = (policy == FiltrationPolicy::hard_label_matching ||
                  policy == FiltrationPolicy::hard_label_matching_with_filtration)
                     ? QKind::hard_label_match
                     : QKind::token_ce;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    switch (policy_action(policy, teacher_rows[i], student_rows[i], tuples[i].gold)) {
      case TupleAction::positive: split.positive.push_back(tuples[i]); break;
      case TupleAction::negative: split.negative.push_back(tuples[i]); break;
      case TupleAction::discard: break;
    }
  }
  return split;
}

LossValue apply_filtration_policy(FiltrationPolicy policy, const PredictiveModel& teacher,
                                  const PredictiveModel& student,
                                  std::span<const TransferTuple> tuples, double alpha,
                                  double k_a, double k_b, DivergenceKind kind,
                                  const TrainOptions& topt) {
  check_pair(teacher, student, "apply_filtration_policy");
  auto t_rows = tuple_rows(teacher, tuples);
  auto s_rows = tuple_rows(student, tuples);
  FiltrationSplit split = policy_split(policy, t_rows, s_rows, tuples);
  return kf_loss(teacher, student, split, alpha, k_a, k_b, kind, topt);
}

std::vector<NoiseDraw> sample_noise_distribution(const NoiseSource& src,
                                                 const DistributionBatch& batch,
                                                 std::size_t self_index,
                                                 std::mt19937_64& rng) {
  if (src.kind == NoiseKind::none)
    throw ConfigError("sample_noise_distribution: source is none");
  if (src.sample_size < 1) throw ConfigError("noise sample_size must be >= 1");
  const auto vocab = static_cast<std::size_t>(batch.vocab);
  if (vocab == 0) throw ConfigError("noise batch has no vocabulary");

  std::vector<const Row*> flat;
  for (const auto& sent : batch.rows)
    for (const Row& r : sent) flat.push_back(&r);

  std::vector<NoiseDraw> draws;
  draws.reserve(static_cast<std::size_t>(src.sample_size));
  for (int s = 0; s < src.sample_size; ++s) {
    NoiseDraw d;
    switch (src.kind) {
      case NoiseKind::uniform: {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        d.dist.resize(vocab);
        for (double& x : d.dist) x = u(rng);
        softmax_inplace(d.dist);
        break;
      }
      case NoiseKind::normal: {
        std::normal_distribution<double> n(0.0, 1.0);
        d.dist.resize(vocab);
        for (double& x : d.dist) x = n(rng);
        softmax_inplace(d.dist);
        break;
      }
      case NoiseKind::shuffled_batch_attached:
      case NoiseKind::shuffled_batch_detached: {
        if (flat.size() < 2)
          throw ConfigError("shuffled-batch noise needs at least two batch rows");
        if (self_index >= flat.size())
          throw ConfigError("noise self index out of range");
        std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 2);
        std::size_t j = pick(rng);
        if (j >= self_index) ++j;
        d.dist = *flat[j];
        d.flat_index = static_cast<long>(j);
        break;
      }
      case NoiseKind::none: break;
    }
    draws.push_back(std::move(d));
  }
  return draws;
}

LossValue neg_kd_noise_loss(const PredictiveModel& student,
                            std::span<const TransferTuple> negatives, double alpha,
                            DivergenceKind kind, const NoiseSource& noise,
                            std::uint64_t noise_seed, const TrainOptions& topt,
                            bool min_form, long* active_out) {
  if (alpha <= 0) throw ConfigError("neg_kd_noise_loss: alpha must be positive");
  if (noise.kind == NoiseKind::none)
    throw ConfigError("neg_kd_noise_loss: source is none");
  const bool want_grad = !student.frozen();
  const bool attached = noise.kind == NoiseKind::shuffled_batch_attached;
  const double inv_temp = 1.0 / student.arch().temperature;
  const auto vocab = static_cast<std::size_t>(student.arch().vocab_size);

  LossValue out;
  out.has_grad = want_grad;
  if (want_grad) out.grad.assign(student.param_count(), 0.0);
  if (active_out) *active_out = 0;
  if (negatives.empty()) return out;

  // All student rows first: shuffled noise samples across the whole set, and
  // attached draws route gradient into other groups, so backward runs after
  // every per-tuple dz row is final.
  auto groups = group_tuples(negatives);
  std::vector<std::vector<Row>> probs(groups.size());
  std::vector<std::unique_ptr<NetCache>> caches(groups.size());
  std::vector<std::size_t> tuple_group(negatives.size());
  std::vector<std::size_t> tuple_row(negatives.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    EvalOptions eo;
    eo.dropout = topt.dropout;
    eo.dropout_seed = topt.dropout_seed;
    eo.sent_key = static_cast<long>(gi);
    student.forward_cached(groups[gi].pair, eo, probs[gi], caches[gi]);
    for (std::size_t k = 0; k < groups[gi].rows.size(); ++k) {
      tuple_group[groups[gi].tuple_index[k]] = gi;
      tuple_row[groups[gi].tuple_index[k]] = static_cast<std::size_t>(groups[gi].rows[k]);
    }
  }

  DistributionBatch batch;
  batch.vocab = student.arch().vocab_size;
  batch.rows.resize(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i)
    batch.rows[i] = {probs[tuple_group[i]][tuple_row[i]]};

  std::vector<std::vector<Row>> dlogits(groups.size());
  if (want_grad)
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
      dlogits[gi].assign(probs[gi].size(), Row(vocab, 0.0));

  auto rng = make_rng(noise_seed, SeedStream::noise);
  const double inv_s = 1.0 / static_cast<double>(noise.sample_size);
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const Row& s_row = batch.rows[i][0];
    auto draws = sample_noise_distribution(noise, batch, i, rng);
    bool any_active = false;
    for (const NoiseDraw& draw : draws) {
      const Row& p_row = draw.dist;
      const double d = kind == DivergenceKind::kl ? kl_value(p_row, s_row, &out.clamped)
                                                  : kl_value(s_row, p_row, &out.clamped);
      const bool gated = min_form ? d > alpha : d < alpha;
      if (!gated) continue;
      any_active = true;
      out.value += inv_s * (alpha - d);
      if (!want_grad) continue;
      Row& dz_self = dlogits[tuple_group[i]][tuple_row[i]];
      if (kind == DivergenceKind::kl) {
        kl_grad_other(p_row, s_row, -inv_s * inv_temp, dz_self);
        if (attached && draw.flat_index >= 0) {
          const auto j = static_cast<std::size_t>(draw.flat_index);
          Row& dz_other = dlogits[tuple_group[j]][tuple_row[j]];
          kl_grad_ref(p_row, s_row, d, -inv_s * inv_temp, dz_other, &out.clamped);
        }
      } else {
        kl_grad_ref(s_row, p_row, d, -inv_s * inv_temp, dz_self, &out.clamped);
        if (attached && draw.flat_index >= 0) {
          const auto j = static_cast<std::size_t>(draw.flat_index);
          Row& dz_other = dlogits[tuple_group[j]][tuple_row[j]];
          kl_grad_other(s_row, p_row, -inv_s * inv_temp, dz_other);
        }
      }
    }
    if (any_active && active_out) ++*active_out;
  }

  if (want_grad)
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      EvalOptions eo;
      eo.dropout = topt.dropout;
      eo.dropout_seed = topt.dropout_seed;
      eo.sent_key = static_cast<long>(gi);
      student.backward(groups[gi].pair, eo, *caches[gi], dlogits[gi], out.grad);
    }
  return out;
}

}  // namespace ckd
