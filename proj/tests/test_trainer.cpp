#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "ckd/eval.hpp"
#include "ckd/trainer.hpp"
#include "doctest.h"

using namespace ckd;

namespace {

struct TinyWorld {
  DomainSpec da, db, dc;
  Vocab vocab;
  DomainData a, b, c;
  ArchSpec arch;

  TinyWorld() {
    da.name = "a";
    da.lexicon_seed = 11;
    da.train_size = 40;
    da.dev_size = 8;
    da.test_size = 12;
    da.min_len = 4;
    da.max_len = 7;
    db = da;
    db.name = "b";
    db.lexicon_seed = 22;
    dc = da;
    dc.name = "c";
    dc.lexicon_seed = 33;
    vocab = vocab_for_specs(std::vector<DomainSpec>{da, db, dc});
    a = gen_domain_corpus(da, 1);
    b = gen_domain_corpus(db, 2);
    c = gen_domain_corpus(dc, 3);
    arch.family = Family::recurrent;
    arch.vocab_size = vocab.size();
    arch.embed_dim = 8;
    arch.hidden_dim = 10;
  }

  DistillConfig fast_config() const {
    DistillConfig cfg;
    cfg.epochs_per_step = 2;
    cfg.early_stop_patience = 0;
    cfg.batch_size = 16;
    cfg.dropout = 0.0;
    cfg.verbose = false;
    cfg.seed = 5;
    return cfg;
  }

  RunCorpora corpora() const { return {c.train, c.train, c.dev, c.test}; }
};

}  // namespace

TEST_CASE("lambda schedule") {
  LambdaSchedule geo;
  CHECK(lambda_weight(1, geo) == doctest::Approx(0.999).epsilon(1e-12));
  CHECK(lambda_weight(2, geo) == doctest::Approx(0.49975).epsilon(2e-5));
  CHECK(lambda_weight(10000, geo) == doctest::Approx(0.999).epsilon(1e-6));

  LambdaSchedule lit = geo;
  lit.literal_t1 = true;
  CHECK(lambda_weight(1, lit) == 0.0);
  CHECK(lambda_weight(2, lit) == doctest::Approx(0.49975).epsilon(2e-5));
  // The literal form never decreases and stays below its limit.
  double prev = -1.0;
  for (int t = 1; t <= 10000; ++t) {
    double l = lambda_weight(t, lit);
    CHECK(l >= prev);
    CHECK(l <= 0.999 + 1e-12);
    prev = l;
  }

  LambdaSchedule con;
  con.kind = LambdaKind::constant;
  con.constant = 0.25;
  CHECK(lambda_weight(1, con) == 0.25);
  CHECK(lambda_weight(7, con) == 0.25);
  con.constant = 1.5;
  CHECK_THROWS_AS(lambda_weight(1, con), ConfigError);

  LambdaSchedule tab;
  tab.kind = LambdaKind::table;
  tab.table = {0.1, 0.6, 0.9};
  CHECK(lambda_weight(1, tab) == 0.1);
  CHECK(lambda_weight(2, tab) == 0.6);
  CHECK(lambda_weight(3, tab) == 0.9);
  CHECK(lambda_weight(9, tab) == 0.9);  // last value repeats
  tab.table.clear();
  CHECK_THROWS_AS(lambda_weight(1, tab), ConfigError);
  tab.table = {2.0};
  CHECK_THROWS_AS(lambda_weight(1, tab), ConfigError);

  CHECK_THROWS_AS(lambda_weight(0, geo), ConfigError);
  CHECK_THROWS_AS(lambda_weight(-3, geo), ConfigError);
}

TEST_CASE("config validation") {
  DistillConfig cfg;
  validate_config(cfg);
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.epochs_per_step = -1;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.ce_weight = -0.5;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.k_a = -1.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.ewc_c = -2.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.optim.lr = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = {};
  cfg.noise.kind = NoiseKind::uniform;
  cfg.noise.sample_size = 0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("method names round-trip") {
  for (Method m : {Method::ckd, Method::kd, Method::ewc, Method::multi_teacher})
    CHECK(method_from_name(method_name(m)) == m);
  CHECK_THROWS_AS(method_from_name("sgd"), ConfigError);
}

TEST_CASE("zero-epoch step leaves the student untouched but still reports") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  cfg.epochs_per_step = 0;
  PredictiveModel student(w.arch, 7, w.vocab.content_hash());
  PredictiveModel teacher = snapshot(PredictiveModel(w.arch, 8, w.vocab.content_hash()));
  auto before = student.params_hash();
  StepResult r = vanilla_kd_step(student, teacher, w.corpora(), cfg, 1);
  CHECK(student.params_hash() == before);
  CHECK(r.snapshot.frozen());
  CHECK(r.snapshot.params_hash() == before);
  CHECK(r.metrics.step == 1);
  CHECK(r.metrics.bleu >= 0.0);
}

TEST_CASE("steps validate their inputs") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  PredictiveModel student(w.arch, 7, w.vocab.content_hash());
  PredictiveModel teacher = snapshot(PredictiveModel(w.arch, 8, w.vocab.content_hash()));

  // Unfrozen teacher.
  PredictiveModel thawed = thaw(teacher);
  CHECK_THROWS_AS(vanilla_kd_step(student, thawed, w.corpora(), cfg, 1), ModelError);

  // Frozen student.
  PredictiveModel frozen = snapshot(student);
  CHECK_THROWS_AS(vanilla_kd_step(frozen, teacher, w.corpora(), cfg, 1), ModelError);

  // Vocabulary mismatch.
  PredictiveModel other = snapshot(PredictiveModel(w.arch, 8, w.vocab.content_hash() + 1));
  CHECK_THROWS_AS(vanilla_kd_step(student, other, w.corpora(), cfg, 1), ModelError);

  // Empty corpora.
  RunCorpora empty = w.corpora();
  empty.transfer.pairs.clear();
  CHECK_THROWS_AS(vanilla_kd_step(student, teacher, empty, cfg, 1), DataError);
  empty = w.corpora();
  empty.train.pairs.clear();
  CHECK_THROWS_AS(vanilla_kd_step(student, teacher, empty, cfg, 1), DataError);

  // Bad step index.
  CHECK_THROWS_AS(vanilla_kd_step(student, teacher, w.corpora(), cfg, 0), ConfigError);
}

TEST_CASE("fisher diagonal is a mean of squared per-token gradients") {
  TinyWorld w;
  PredictiveModel m(w.arch, 9, w.vocab.content_hash());
  auto pairs = std::span(w.c.train.pairs).subspan(0, 6);
  auto fisher = fisher_diagonal(m, pairs);
  REQUIRE(fisher.size() == m.param_count());
  for (double f : fisher) {
    CHECK(f >= 0.0);
    CHECK(std::isfinite(f));
  }
  // Serial and parallel agree bitwise.
  auto fs = fisher_diagonal(m, pairs, true);
  for (std::size_t i = 0; i < fisher.size(); ++i) CHECK(fisher[i] == fs[i]);
  // Doubling the corpus by repetition leaves the mean unchanged.
  std::vector<SentencePair> twice(pairs.begin(), pairs.end());
  twice.insert(twice.end(), pairs.begin(), pairs.end());
  auto f2 = fisher_diagonal(m, twice);
  for (std::size_t i = 0; i < fisher.size(); i += 61)
    CHECK(f2[i] == doctest::Approx(fisher[i]).epsilon(1e-9));
}

TEST_CASE("ewc penalty gradient matches finite differences") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  cfg.ewc_c = 3.0;
  PredictiveModel prev(w.arch, 10, w.vocab.content_hash());
  PredictiveModel student(w.arch, 11, w.vocab.content_hash());
  auto fisher = fisher_diagonal(prev, std::span(w.c.train.pairs).subspan(0, 4));

  // Penalty = c * sum_i F_i (theta_i - theta*_i)^2; its gradient is
  // 2 c F_i (theta_i - theta*_i). Probe a handful of coordinates.
  auto penalty = [&](const PredictiveModel& s) {
    double p = 0;
    for (std::size_t i = 0; i < fisher.size(); ++i) {
      double dtheta = s.params()[i] - prev.params()[i];
      p += fisher[i] * dtheta * dtheta;
    }
    return cfg.ewc_c * p;
  };
  double base = penalty(student);
  CHECK(base > 0.0);
  for (std::size_t i = 0; i < fisher.size(); i += fisher.size() / 7) {
    double analytic =
        2.0 * cfg.ewc_c * fisher[i] * (student.params()[i] - prev.params()[i]);
    const double h = 1e-6;
    PredictiveModel probe = student;
    probe.params_mutable()[i] += h;
    double up = penalty(probe);
    probe.params_mutable()[i] -= 2 * h;
    double dn = penalty(probe);
    double fd = (up - dn) / (2 * h);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-5));
  }

  // Quadratic scaling: doubling the distance quadruples the penalty.
  PredictiveModel far = student;
  {
    auto p = far.params_mutable();
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = prev.params()[i] + 2.0 * (student.params()[i] - prev.params()[i]);
  }
  CHECK(penalty(far) == doctest::Approx(4.0 * base).epsilon(1e-9));

  // ewc_step rejects a fisher of the wrong size.
  PredictiveModel teacher = snapshot(PredictiveModel(w.arch, 12, w.vocab.content_hash()));
  std::vector<double> short_fisher(3, 1.0);
  PredictiveModel prev_snap = snapshot(prev);
  CHECK_THROWS_AS(
      ewc_step(student, teacher, prev_snap, short_fisher, w.corpora(), cfg, 1),
      ModelError);
}

TEST_CASE("multi-teacher mean rows are distributions") {
  TinyWorld w;
  TeacherSequence seq;
  seq.teachers.push_back(
      {snapshot(PredictiveModel(w.arch, 21, w.vocab.content_hash())), "t1", false, 0});
  seq.teachers.push_back(
      {snapshot(PredictiveModel(w.arch, 22, w.vocab.content_hash())), "t2", false, 0});
  auto tuples = as_transfer_tuples(w.c.train);
  auto r1 = tuple_rows(seq.teachers[0].model, tuples);
  auto r2 = tuple_rows(seq.teachers[1].model, tuples);
  for (std::size_t i = 0; i < tuples.size(); i += 17) {
    double sum = 0;
    for (std::size_t k = 0; k < r1[i].size(); ++k) sum += 0.5 * (r1[i][k] + r2[i][k]);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("two identical teachers reduce to single-teacher KD bit for bit") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  PredictiveModel base = snapshot(PredictiveModel(w.arch, 23, w.vocab.content_hash()));

  PredictiveModel s1(w.arch, 24, w.vocab.content_hash());
  TeacherSequence one;
  one.teachers.push_back({base, "t", false, 0});
  StepResult a = multi_teacher_kd(s1, one, w.corpora(), cfg);

  PredictiveModel s2(w.arch, 24, w.vocab.content_hash());
  TeacherSequence twin;
  twin.teachers.push_back({base, "t", false, 0});
  twin.teachers.push_back({base, "t2", false, 0});
  StepResult b = multi_teacher_kd(s2, twin, w.corpora(), cfg);

  CHECK(a.snapshot.params_hash() == b.snapshot.params_hash());
  CHECK(a.metrics.bleu == b.metrics.bleu);
}

TEST_CASE("ckd step moves the student and reports split sizes") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  cfg.epochs_per_step = 2;
  PredictiveModel student(w.arch, 30, w.vocab.content_hash());
  PredictiveModel teacher = snapshot(PredictiveModel(w.arch, 31, w.vocab.content_hash()));
  InheritanceAnchor anchor = make_anchor(student, 1);
  auto before = student.params_hash();
  StepResult r = ckd_step(student, teacher, anchor, w.corpora(), cfg, 1);
  CHECK(student.params_hash() != before);
  CHECK(r.snapshot.params_hash() == student.params_hash());
  CHECK(r.snapshot.frozen());
  CHECK(r.metrics.pos + r.metrics.neg ==
        static_cast<long>(transfer_tuple_count(w.c.train)));
  CHECK(r.metrics.losses.ce > 0.0);

  // Anchor for the wrong step is rejected.
  InheritanceAnchor bad = make_anchor(student, 2);
  CHECK_THROWS_AS(ckd_step(student, teacher, bad, w.corpora(), cfg, 1), ConfigError);
}

TEST_CASE("run_sequence is deterministic and sinks its artifacts") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  TeacherSequence seq;
  seq.teachers.push_back(
      {snapshot(PredictiveModel(w.arch, 41, w.vocab.content_hash())), "a", false, 0});
  seq.teachers.push_back(
      {snapshot(PredictiveModel(w.arch, 42, w.vocab.content_hash())), "b", false, 0});

  const auto dir = std::filesystem::temp_directory_path() / "ckd_trainer_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  RunSink sink{dir};

  auto run_once = [&](Method m, const RunSink* s) {
    PredictiveModel student(w.arch, 40, w.vocab.content_hash());
    return run_sequence(student, seq, w.corpora(), cfg, m, s);
  };

  RunHistory h1 = run_once(Method::ckd, &sink);
  RunHistory h2 = run_once(Method::ckd, nullptr);
  REQUIRE(h1.steps.size() == 3);  // step 0 plus one per teacher
  REQUIRE(h2.steps.size() == 3);
  for (std::size_t i = 0; i < h1.steps.size(); ++i) {
    CHECK(h1.steps[i].bleu == h2.steps[i].bleu);
    CHECK(h1.steps[i].delta_bleu == h2.steps[i].delta_bleu);
    CHECK(h1.steps[i].ad == h2.steps[i].ad);
    CHECK(h1.steps[i].losses.ce == h2.steps[i].losses.ce);
  }
  CHECK(h1.steps[0].step == 0);
  CHECK(h1.steps[0].delta_bleu == 0.0);
  CHECK(h1.steps[0].ad == 0.0);

  // delta and AD recompute from the BLEU sequence.
  std::vector<double> bleu;
  for (const auto& s : h1.steps) bleu.push_back(s.bleu);
  for (std::size_t i = 1; i < h1.steps.size(); ++i) {
    CHECK(h1.steps[i].delta_bleu == doctest::Approx(bleu[i] - bleu[0]).epsilon(1e-12));
    CHECK(h1.steps[i].ad ==
          doctest::Approx(accumulative_degradation(
                              std::span(bleu).subspan(0, i + 1)))
              .epsilon(1e-12));
  }

  // Sinked artifacts: one checkpoint per step plus the history file.
  CHECK(std::filesystem::exists(dir / "step_0.ckpt"));
  CHECK(std::filesystem::exists(dir / "step_1.ckpt"));
  CHECK(std::filesystem::exists(dir / "step_2.ckpt"));
  CHECK(std::filesystem::exists(dir / "history.jsonl"));
  RunHistory from_disk = load_history(dir / "history.jsonl", "ckd", "");
  REQUIRE(from_disk.steps.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(from_disk.steps[i].bleu == h1.steps[i].bleu);
  PredictiveModel last = load_checkpoint(dir / "step_2.ckpt");
  CHECK(last.frozen());

  // multi_teacher consumes the sequence in one phase: step 0 + one step.
  RunHistory hm = run_once(Method::multi_teacher, nullptr);
  CHECK(hm.steps.size() == 2);

  // kd and ewc run one step per teacher too.
  RunHistory hk = run_once(Method::kd, nullptr);
  CHECK(hk.steps.size() == 3);
  RunHistory he = run_once(Method::ewc, nullptr);
  CHECK(he.steps.size() == 3);
  CHECK(hk.method == "kd");
  CHECK(he.method == "ewc");

  std::filesystem::remove_all(dir);
}

TEST_CASE("malicious teachers perturb the run") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  PredictiveModel tbase = snapshot(PredictiveModel(w.arch, 51, w.vocab.content_hash()));

  auto run_with = [&](bool malicious) {
    TeacherSequence seq;
    seq.teachers.push_back({tbase, "t", malicious, 0});
    PredictiveModel student(w.arch, 50, w.vocab.content_hash());
    return run_sequence(student, seq, w.corpora(), cfg, Method::kd, nullptr);
  };
  RunHistory clean = run_with(false);
  RunHistory dirty = run_with(true);
  REQUIRE(clean.steps.size() == 2);
  REQUIRE(dirty.steps.size() == 2);
  // The permuted teacher rows change the optimization trajectory.
  CHECK(clean.steps[1].losses.kf != dirty.steps[1].losses.kf);

  // An explicit wrap seed reproduces exactly.
  auto run_seeded = [&](std::uint64_t seed) {
    TeacherSequence seq;
    seq.teachers.push_back({tbase, "t", true, seed});
    PredictiveModel student(w.arch, 50, w.vocab.content_hash());
    return run_sequence(student, seq, w.corpora(), cfg, Method::kd, nullptr);
  };
  RunHistory m1 = run_seeded(9);
  RunHistory m2 = run_seeded(9);
  CHECK(m1.steps[1].bleu == m2.steps[1].bleu);
  CHECK(m1.steps[1].losses.kf == m2.steps[1].losses.kf);
}

TEST_CASE("teacher training fits the data and respects patience") {
  TinyWorld w;
  DistillConfig cfg = w.fast_config();
  cfg.epochs_per_step = 12;
  cfg.early_stop_patience = 3;
  PredictiveModel t =
      train_teacher(w.arch, 60, w.vocab.content_hash(), w.a.train, w.a.dev, cfg);
  CHECK(!t.frozen());
  double fitted = ce_loss(t, w.a.train.pairs, false).value;
  PredictiveModel fresh(w.arch, 60, w.vocab.content_hash());
  double initial = ce_loss(fresh, w.a.train.pairs, false).value;
  CHECK(fitted < initial);

  // Deterministic in its seeds.
  PredictiveModel t2 =
      train_teacher(w.arch, 60, w.vocab.content_hash(), w.a.train, w.a.dev, cfg);
  CHECK(t.params_hash() == t2.params_hash());
}
