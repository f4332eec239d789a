#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "ckd/eval.hpp"
#include "ckd/parallel.hpp"
#include "ckd/trainer.hpp"

namespace ckd {

double lambda_weight(int t, const LambdaSchedule& s) {
  if (t < 1) throw ConfigError("lambda schedule needs step >= 1");
  switch (s.kind) {
    case LambdaKind::constant:
      if (s.constant < 0 || s.constant > 1)
        throw ConfigError("constant lambda outside [0, 1]");
      return s.constant;
    case LambdaKind::table: {
      if (s.table.empty()) throw ConfigError("empty lambda table");
      const double v = static_cast<std::size_t>(t) <= s.table.size()
                           ? s.table[static_cast<std::size_t>(t) - 1]
                           : s.table.back();
      if (v < 0 || v > 1) throw ConfigError("lambda table value outside [0, 1]");
      return v;
    }
    case LambdaKind::geometric: {
      if (t == 1 && !s.literal_t1) return 0.999;
      const double r = 0.999;
      return r * (1.0 - std::pow(r, t - 1)) / (1.0 - std::pow(r, t));
    }
  }
  throw ConfigError("unknown lambda schedule");
}

void validate_config(const DistillConfig& cfg) {
  if (cfg.alpha <= 0) throw ConfigError("alpha must be positive");
  if (cfg.k_a < 0 || cfg.k_b < 0) throw ConfigError("negative loss component weight");
  if (cfg.ce_weight < 0) throw ConfigError("negative ce_weight");
  if (cfg.ewc_c < 0) throw ConfigError("negative ewc_c");
  if (cfg.epochs_per_step < 0) throw ConfigError("negative epochs_per_step");
  if (cfg.early_stop_patience < 0) throw ConfigError("negative early_stop_patience");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ConfigError("dropout outside [0, 1)");
  if (cfg.noise.sample_size < 1) throw ConfigError("noise sample_size must be >= 1");
  if (cfg.decode_max_len < 0) throw ConfigError("negative decode_max_len");
  if (cfg.optim.lr <= 0) throw ConfigError("learning rate must be positive");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::ckd: return "ckd";
    case Method::kd: return "kd";
    case Method::ewc: return "ewc";
    case Method::multi_teacher: return "multi_teacher";
  }
  throw ConfigError("unknown method");
}

Method method_from_name(const std::string& s) {
  for (Method m : {Method::ckd, Method::kd, Method::ewc, Method::multi_teacher})
    if (s == method_name(m)) return m;
  throw ConfigError("unknown method: " + s);
}

namespace {

long token_count(std::span<const SentencePair> pairs) {
  long n = 0;
  for (const auto& p : pairs) n += static_cast<long>(p.target.size());
  return n;
}

struct PhaseSpec {
  Method method = Method::ckd;
  const PredictiveModel* teacher = nullptr;
  std::vector<const PredictiveModel*> mt_teachers;  // multi_teacher only
  const InheritanceAnchor* anchor = nullptr;        // ckd only
  std::span<const double> fisher;                   // ewc only
  std::span<const double> prev_params;              // ewc anchor point
  double lambda = 0;
  int t = 1;
};

// Per-batch frozen-model outputs, computed once per step. Batch-sized calls
// keep a malicious teacher's permutation scoped to one batch.
struct TransCache {
  std::vector<TransferTuple> tuples;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::vector<std::vector<Row>> teacher_rows;
  std::vector<std::vector<Row>> anchor_rows;
  std::vector<TupleAction> category;
  long pos = 0, neg = 0, neg_active = 0;
};

TransCache build_trans_cache(const PhaseSpec& spec, const RunCorpora& corpora,
                             const DistillConfig& cfg) {
  TransCache tc;
  tc.tuples = as_transfer_tuples(corpora.transfer);
  if (tc.tuples.empty()) throw DataError("empty transfer set");
  const auto n = tc.tuples.size();
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t b = 0; b < n; b += bsz)
    tc.ranges.emplace_back(b, std::min(n, b + bsz));
  tc.teacher_rows.resize(tc.ranges.size());
  if (spec.anchor) tc.anchor_rows.resize(tc.ranges.size());
  for (std::size_t bi = 0; bi < tc.ranges.size(); ++bi) {
    const auto [b, e] = tc.ranges[bi];
    std::span<const TransferTuple> sub(tc.tuples.data() + b, e - b);
    if (!spec.mt_teachers.empty()) {
      for (std::size_t ti = 0; ti < spec.mt_teachers.size(); ++ti) {
        auto rows = tuple_rows(*spec.mt_teachers[ti], sub);
        if (ti == 0) {
          tc.teacher_rows[bi] = std::move(rows);
        } else {
          for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t y = 0; y < rows[i].size(); ++y)
              tc.teacher_rows[bi][i][y] += rows[i][y];
        }
      }
      const double inv = 1.0 / static_cast<double>(spec.mt_teachers.size());
      for (auto& row : tc.teacher_rows[bi])
        for (double& v : row) v *= inv;
    } else {
      tc.teacher_rows[bi] = tuple_rows(*spec.teacher, sub);
    }
    if (spec.anchor) tc.anchor_rows[bi] = tuple_rows(spec.anchor->previous, sub);
  }
  tc.category.assign(n, TupleAction::positive);
  tc.pos = static_cast<long>(n);
  return tc;
}

void refresh_split(TransCache& tc, const PredictiveModel& student,
                   const DistillConfig& cfg) {
  auto s_rows = tuple_rows(student, tc.tuples);
  tc.pos = tc.neg = tc.neg_active = 0;
  long clamped = 0;
  for (std::size_t bi = 0; bi < tc.ranges.size(); ++bi) {
    const auto [b, e] = tc.ranges[bi];
    for (std::size_t i = b; i < e; ++i) {
      const Row& t_row = tc.teacher_rows[bi][i - b];
      const Row& s_row = s_rows[i];
      const int gold = tc.tuples[i].gold;
      TupleAction a =
          cfg.policy == FiltrationPolicy::token_ce_with_filtration
              ? split_action(cfg.q_kind, t_row, s_row, gold)
              : policy_action(cfg.policy, t_row, s_row, gold);
      tc.category[i] = a;
      if (a == TupleAction::positive) {
        ++tc.pos;
      } else if (a == TupleAction::negative) {
        ++tc.neg;
        double d = 0;
        if (cfg.divergence == DivergenceKind::kl) {
          for (std::size_t y = 0; y < t_row.size(); ++y)
            if (t_row[y] > 0)
              d += t_row[y] * (log_floored(t_row[y], &clamped) -
                               log_floored(s_row[y], &clamped));
        } else {
          for (std::size_t y = 0; y < s_row.size(); ++y)
            if (s_row[y] > 0)
              d += s_row[y] * (log_floored(s_row[y], &clamped) -
                               log_floored(t_row[y], &clamped));
        }
        if (cfg.neg_min_form ? d > cfg.alpha : d < cfg.alpha) ++tc.neg_active;
      }
    }
  }
}

struct EpochStats {
  double ce = 0, kf = 0, ki = 0;
  long ce_tokens = 0, rows = 0;
  double ce_mean() const { return ce_tokens > 0 ? ce / static_cast<double>(ce_tokens) : 0; }
  double kf_mean() const { return rows > 0 ? kf / static_cast<double>(rows) : 0; }
  double ki_mean() const { return rows > 0 ? ki / static_cast<double>(rows) : 0; }
};

StepMetrics run_phase(PredictiveModel& student, const PhaseSpec& spec,
                      const RunCorpora& corpora, const DistillConfig& cfg) {
  validate_config(cfg);
  if (student.frozen()) throw ModelError("student is frozen");
  if (spec.lambda < 0 || spec.lambda > 1) throw ConfigError("lambda outside [0, 1]");
  const auto check_vocab = [&](const PredictiveModel& m, const char* what) {
    if (!m.frozen()) throw ModelError(std::string(what) + " must be frozen");
    if (m.vocab_hash() != student.vocab_hash())
      throw ModelError(std::string(what) + ": vocabulary mismatch");
  };
  if (spec.teacher) check_vocab(*spec.teacher, "teacher");
  for (const auto* m : spec.mt_teachers) check_vocab(*m, "teacher");
  if (spec.anchor) check_vocab(spec.anchor->previous, "anchor");
  if (spec.method == Method::ewc &&
      (spec.fisher.size() != student.param_count() ||
       spec.prev_params.size() != student.param_count()))
    throw ModelError("fisher/anchor size mismatch");
  if (corpora.train.pairs.empty()) throw DataError("empty training set");
  if (corpora.dev.pairs.empty()) throw DataError("empty dev set");

  TransCache tc = build_trans_cache(spec, corpora, cfg);
  const auto& train_pairs = corpora.train.pairs;
  const auto n_params = student.param_count();
  const bool is_ckd = spec.method == Method::ckd;
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t ntb = (train_pairs.size() + bsz - 1) / bsz;
  const std::size_t nxb = tc.ranges.size();

  AdamState adam;
  double best_dev = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  EpochStats last_stats;
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(n_params);

  for (int epoch = 0; epoch < cfg.epochs_per_step; ++epoch) {
    if (is_ckd && (epoch == 0 || cfg.split_refresh == SplitRefresh::per_epoch)) {
      refresh_split(tc, student, cfg);
      if (cfg.verbose)
        std::cout << "step=" << spec.t << " pos=" << tc.pos << " neg=" << tc.neg
                  << " neg_active=" << tc.neg_active << std::endl;
    }
    {
      auto rng = make_rng(cfg.seed, SeedStream::shuffle,
                          static_cast<std::uint64_t>(spec.t) * 1000003u +
                              static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }

    EpochStats stats;
    for (std::size_t k = 0; k < ntb; ++k) {
      std::vector<SentencePair> tb;
      for (std::size_t i = k * bsz; i < std::min(train_pairs.size(), (k + 1) * bsz); ++i)
        tb.push_back(train_pairs[order[i]]);

      const std::size_t xb = (static_cast<std::size_t>(epoch) * ntb + k) % nxb;
      const auto [b, e] = tc.ranges[xb];
      std::span<const TransferTuple> xt(tc.tuples.data() + b, e - b);
      const auto& trows = tc.teacher_rows[xb];

      TrainOptions topt;
      topt.dropout = cfg.dropout;
      topt.force_serial = cfg.force_serial;
      const std::uint64_t salt = (static_cast<std::uint64_t>(spec.t) << 40) |
                                 (static_cast<std::uint64_t>(epoch) << 20) |
                                 static_cast<std::uint64_t>(k);
      topt.dropout_seed = derive_seed(cfg.seed, SeedStream::dropout, salt);

      std::fill(grad.begin(), grad.end(), 0.0);
      const long rows_n = static_cast<long>(xt.size());

      if (cfg.ce_weight > 0) {
        LossValue ce = ce_loss(student, tb, true, topt);
        const long toks = token_count(tb);
        const double w = cfg.ce_weight / static_cast<double>(toks);
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += w * ce.grad[i];
        stats.ce += ce.value;
        stats.ce_tokens += toks;
      }

      if (!is_ckd) {
        if (spec.lambda > 0) {
          LossValue kd = kd_loss_rows(trows, student, xt, cfg.divergence, topt);
          const double w = spec.lambda / static_cast<double>(rows_n);
          for (std::size_t i = 0; i < n_params; ++i) grad[i] += w * kd.grad[i];
          stats.kf += kd.value;
        }
      } else {
        std::vector<TransferTuple> pos_t, neg_t;
        std::vector<Row> pos_r, neg_r;
        for (std::size_t i = b; i < e; ++i) {
          if (tc.category[i] == TupleAction::positive) {
            pos_t.push_back(tc.tuples[i]);
            pos_r.push_back(trows[i - b]);
          } else if (tc.category[i] == TupleAction::negative) {
            neg_t.push_back(tc.tuples[i]);
            neg_r.push_back(trows[i - b]);
          }
        }
        if (spec.lambda > 0) {
          LossValue kd = kd_loss_rows(pos_r, student, pos_t, cfg.divergence, topt);
          LossValue neg =
              cfg.noise.kind == NoiseKind::none
                  ? neg_kd_loss_rows(neg_r, student, neg_t, cfg.alpha, cfg.divergence,
                                     topt, cfg.neg_min_form)
                  : neg_kd_noise_loss(student, neg_t, cfg.alpha, cfg.divergence,
                                      cfg.noise,
                                      derive_seed(cfg.seed, SeedStream::noise, salt),
                                      topt, cfg.neg_min_form);
          const double w = spec.lambda / static_cast<double>(rows_n);
          for (std::size_t i = 0; i < n_params; ++i)
            grad[i] += w * (cfg.k_a * kd.grad[i] + cfg.k_b * neg.grad[i]);
          stats.kf += cfg.k_a * kd.value + cfg.k_b * neg.value;
        }
        if (spec.lambda < 1) {
          LossValue ki = ki_loss_rows(tc.anchor_rows[xb], student, xt, topt);
          const double w = (1.0 - spec.lambda) / static_cast<double>(rows_n);
          for (std::size_t i = 0; i < n_params; ++i) grad[i] += w * ki.grad[i];
          stats.ki += ki.value;
        }
      }

      if (spec.method == Method::ewc && cfg.ewc_c > 0) {
        auto params = student.params();
        double penalty = 0;
        for (std::size_t i = 0; i < n_params; ++i) {
          const double dth = params[i] - spec.prev_params[i];
          penalty += spec.fisher[i] * dth * dth;
          grad[i] += cfg.ewc_c * 2.0 * spec.fisher[i] * dth;
        }
        stats.ki += cfg.ewc_c * penalty * static_cast<double>(rows_n);
      }

      stats.rows += rows_n;
      train_step(student, grad, adam, cfg.optim);
    }
    last_stats = stats;

    LossValue dev = ce_loss(student, corpora.dev.pairs, false,
                            TrainOptions{0.0, 0, cfg.force_serial});
    const double dev_mean =
        dev.value / static_cast<double>(token_count(corpora.dev.pairs));
    if (dev_mean < best_dev - 1e-12) {
      best_dev = dev_mean;
      bad_epochs = 0;
    } else if (cfg.early_stop_patience > 0 && ++bad_epochs >= cfg.early_stop_patience) {
      break;
    }
  }

  StepMetrics m;
  m.step = spec.t;
  m.bleu = eval_model_bleu(student, corpora.test, cfg.decode_max_len).bleu;
  m.pos = tc.pos;
  m.neg = tc.neg;
  m.losses.ce = last_stats.ce_mean();
  m.losses.kf = last_stats.kf_mean();
  m.losses.ki = last_stats.ki_mean();
  return m;
}

}  // namespace

StepResult ckd_step(PredictiveModel& student, const PredictiveModel& teacher,
                    const InheritanceAnchor& anchor, const RunCorpora& corpora,
                    const DistillConfig& cfg, int t) {
  if (anchor.step != t)
    throw ConfigError("anchor built for step " + std::to_string(anchor.step) +
                      " used at step " + std::to_string(t));
  PhaseSpec spec;
  spec.method = Method::ckd;
  spec.teacher = &teacher;
  spec.anchor = &anchor;
  spec.lambda = lambda_weight(t, cfg.lambda);
  spec.t = t;
  StepMetrics m = run_phase(student, spec, corpora, cfg);
  return {snapshot(student), m};
}

StepResult vanilla_kd_step(PredictiveModel& student, const PredictiveModel& teacher,
                           const RunCorpora& corpora, const DistillConfig& cfg, int t) {
  PhaseSpec spec;
  spec.method = Method::kd;
  spec.teacher = &teacher;
  spec.lambda = lambda_weight(t, cfg.lambda);
  spec.t = t;
  StepMetrics m = run_phase(student, spec, corpora, cfg);
  return {snapshot(student), m};
}

std::vector<double> fisher_diagonal(const PredictiveModel& model,
                                    std::span<const SentencePair> transfer,
                                    bool force_serial) {
  if (transfer.empty()) throw DataError("fisher_diagonal: empty transfer set");
  const auto n_params = model.param_count();
  const auto vocab = static_cast<std::size_t>(model.arch().vocab_size);
  const double inv_temp = 1.0 / model.arch().temperature;

  struct Acc {
    std::vector<double> f;
    long tokens = 0;
  };
  Acc total = par::map_reduce_ordered<Acc>(
      transfer.size(), Acc{},
      [&](Acc& acc, std::size_t bgn, std::size_t end) {
        if (acc.f.empty()) acc.f.assign(n_params, 0.0);
        std::vector<double> tmp(n_params);
        std::vector<Row> probs;
        for (std::size_t s = bgn; s < end; ++s) {
          const SentencePair& pair = transfer[s];
          EvalOptions eo;
          eo.sent_key = static_cast<long>(s);
          std::unique_ptr<NetCache> cache;
          model.forward_cached(pair, eo, probs, cache);
          std::vector<Row> dl(probs.size(), Row(vocab, 0.0));
          for (std::size_t p = 0; p < probs.size(); ++p) {
            for (std::size_t y = 0; y < vocab; ++y) dl[p][y] = probs[p][y] * inv_temp;
            dl[p][static_cast<std::size_t>(pair.target[p])] -= inv_temp;
            std::fill(tmp.begin(), tmp.end(), 0.0);
            model.backward(pair, eo, *cache, dl, tmp);
            for (std::size_t i = 0; i < n_params; ++i) acc.f[i] += tmp[i] * tmp[i];
            std::fill(dl[p].begin(), dl[p].end(), 0.0);
            ++acc.tokens;
          }
        }
      },
      [&](Acc& into, const Acc& from) {
        if (from.f.empty()) return;
        if (into.f.empty()) into.f.assign(n_params, 0.0);
        for (std::size_t i = 0; i < n_params; ++i) into.f[i] += from.f[i];
        into.tokens += from.tokens;
      },
      force_serial);

  if (total.f.empty()) total.f.assign(n_params, 0.0);
  const double inv = 1.0 / static_cast<double>(total.tokens);
  for (double& v : total.f) v *= inv;
  return total.f;
}

StepResult ewc_step(PredictiveModel& student, const PredictiveModel& teacher,
                    const PredictiveModel& previous, std::span<const double> fisher,
                    const RunCorpora& corpora, const DistillConfig& cfg, int t) {
  PhaseSpec spec;
  spec.method = Method::ewc;
  spec.teacher = &teacher;
  spec.fisher = fisher;
  spec.prev_params = previous.params();
  spec.lambda = lambda_weight(t, cfg.lambda);
  spec.t = t;
  StepMetrics m = run_phase(student, spec, corpora, cfg);
  return {snapshot(student), m};
}

StepResult multi_teacher_kd(PredictiveModel& student, const TeacherSequence& teachers,
                            const RunCorpora& corpora, const DistillConfig& cfg) {
  if (teachers.teachers.empty()) throw ConfigError("no teachers");
  std::vector<PredictiveModel> wrapped;
  wrapped.reserve(teachers.teachers.size());
  for (std::size_t i = 0; i < teachers.teachers.size(); ++i) {
    const TeacherEntry& e = teachers.teachers[i];
    wrapped.push_back(
        e.malicious
            ? make_malicious(e.model, e.malicious_seed
                                          ? e.malicious_seed
                                          : derive_seed(cfg.seed, SeedStream::malicious,
                                                        i + 1))
            : snapshot(e.model));
  }
  PhaseSpec spec;
  spec.method = Method::multi_teacher;
  for (const auto& m : wrapped) spec.mt_teachers.push_back(&m);
  spec.lambda = lambda_weight(1, cfg.lambda);
  spec.t = 1;
  StepMetrics m = run_phase(student, spec, corpora, cfg);
  return {snapshot(student), m};
}

PredictiveModel train_teacher(const ArchSpec& arch, std::uint64_t init_seed,
                              std::uint64_t vocab_hash, const ParallelCorpus& train,
                              const ParallelCorpus& dev, const DistillConfig& cfg) {
  validate_config(cfg);
  if (train.pairs.empty() || dev.pairs.empty())
    throw DataError("train_teacher: empty corpus");
  PredictiveModel model(arch, init_seed, vocab_hash);
  AdamState adam;
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(train.pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.param_count());
  double best_dev = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  for (int epoch = 0; epoch < cfg.epochs_per_step; ++epoch) {
    {
      auto rng = make_rng(cfg.seed, SeedStream::shuffle,
                          0x7e000000u + static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t k = 0; k * bsz < train.pairs.size(); ++k) {
      std::vector<SentencePair> tb;
      for (std::size_t i = k * bsz; i < std::min(train.pairs.size(), (k + 1) * bsz); ++i)
        tb.push_back(train.pairs[order[i]]);
      TrainOptions topt;
      topt.dropout = cfg.dropout;
      topt.force_serial = cfg.force_serial;
      topt.dropout_seed = derive_seed(
          cfg.seed, SeedStream::dropout,
          (static_cast<std::uint64_t>(epoch) << 24) | static_cast<std::uint64_t>(k));
      LossValue ce = ce_loss(model, tb, true, topt);
      const double w = 1.0 / static_cast<double>(token_count(tb));
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = w * ce.grad[i];
      train_step(model, grad, adam, cfg.optim);
    }
    LossValue devce =
        ce_loss(model, dev.pairs, false, TrainOptions{0.0, 0, cfg.force_serial});
    const double dev_mean =
        devce.value / static_cast<double>(token_count(dev.pairs));
    if (dev_mean < best_dev - 1e-12) {
      best_dev = dev_mean;
      bad_epochs = 0;
    } else if (cfg.early_stop_patience > 0 && ++bad_epochs >= cfg.early_stop_patience) {
      break;
    }
  }
  return model;
}

RunHistory run_sequence(PredictiveModel& student, const TeacherSequence& teachers,
                        const RunCorpora& corpora, const DistillConfig& cfg,
                        Method method, const RunSink* sink) {
  if (teachers.teachers.empty()) throw ConfigError("run_sequence: no teachers");
  validate_config(cfg);

  RunHistory history;
  history.method = method_name(method);

  PredictiveModel prev = snapshot(student);
  std::vector<double> bleu_seq;
  StepMetrics m0;
  m0.step = 0;
  m0.bleu = eval_model_bleu(student, corpora.test, cfg.decode_max_len).bleu;
  bleu_seq.push_back(m0.bleu);
  history.steps.push_back(m0);
  if (sink) {
    save_checkpoint(prev, sink->out_dir / "step_0.ckpt");
    append_history_line(sink->out_dir / "history.jsonl", m0);
  }

  auto record = [&](StepResult&& r) {
    r.metrics.delta_bleu = r.metrics.bleu - bleu_seq.front();
    bleu_seq.push_back(r.metrics.bleu);
    r.metrics.ad = accumulative_degradation(bleu_seq);
    history.steps.push_back(r.metrics);
    if (sink) {
      save_checkpoint(r.snapshot,
                      sink->out_dir / ("step_" + std::to_string(r.metrics.step) + ".ckpt"));
      append_history_line(sink->out_dir / "history.jsonl", r.metrics);
    }
    prev = std::move(r.snapshot);
  };

  if (method == Method::multi_teacher) {
    record(multi_teacher_kd(student, teachers, corpora, cfg));
    return history;
  }

  for (std::size_t i = 0; i < teachers.teachers.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    const TeacherEntry& entry = teachers.teachers[i];
    PredictiveModel teacher =
        entry.malicious
            ? make_malicious(entry.model,
                             entry.malicious_seed
                                 ? entry.malicious_seed
                                 : derive_seed(cfg.seed, SeedStream::malicious,
                                               static_cast<std::uint64_t>(t)))
            : snapshot(entry.model);
    switch (method) {
      case Method::ckd: {
        InheritanceAnchor anchor = make_anchor(prev, t);
        record(ckd_step(student, teacher, anchor, corpora, cfg, t));
        break;
      }
      case Method::kd:
        record(vanilla_kd_step(student, teacher, corpora, cfg, t));
        break;
      case Method::ewc: {
        auto fisher =
            fisher_diagonal(prev, corpora.transfer.pairs, cfg.force_serial);
        record(ewc_step(student, teacher, prev, fisher, corpora, cfg, t));
        break;
      }
      case Method::multi_teacher:
        break;  // handled above
    }
  }
  return history;
}

}  // namespace ckd
