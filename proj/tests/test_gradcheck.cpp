// Central finite differences against every analytic gradient the trainer
// consumes, over both model families, with dropout both off and on.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "ckd/filtration.hpp"
#include "ckd/inheritance.hpp"
#include "ckd/model.hpp"
#include "doctest.h"

using namespace ckd;

namespace {

ArchSpec tiny_arch(Family fam) {
  ArchSpec a;
  a.family = fam;
  a.vocab_size = 9;
  a.embed_dim = 4;
  a.hidden_dim = fam == Family::attention ? 6 : 5;
  a.max_len = 8;
  return a;
}

std::vector<SentencePair> tiny_pairs() {
  return {
      {{4, 5, 6}, {5, 4, 8, 1}},
      {{7, 8}, {6, 7, 1}},
      {{6, 4, 7, 5}, {8, 1}},
  };
}

std::vector<TransferTuple> tiny_tuples() {
  ParallelCorpus c;
  c.domain = "g";
  c.role = "train";
  c.pairs = tiny_pairs();
  return as_transfer_tuples(c);
}

// Worst tolerance-normalized error of analytic vs central-difference
// gradients over every parameter. The absolute term scales with the loss
// magnitude because the subtraction in the stencil loses that many digits;
// values below 1 pass.
double fd_check(PredictiveModel& m, const std::function<double(bool)>& loss,
                std::span<const double> analytic, double base, double h = 3e-5) {
  auto params = m.params_mutable();
  const double atol = 2e-8 * std::max(1.0, std::abs(base));
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss(false);
    params[i] = keep - h;
    const double dn = loss(false);
    params[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double err = std::abs(analytic[i] - fd) /
                       (atol + 1e-5 * std::max(std::abs(analytic[i]), std::abs(fd)));
    worst = std::max(worst, err);
  }
  return worst;
}

void check_all_losses(Family fam, double dropout) {
  CAPTURE(static_cast<int>(fam));
  CAPTURE(dropout);
  const ArchSpec arch = tiny_arch(fam);
  PredictiveModel student(arch, 31, 77);
  const PredictiveModel teacher = snapshot(PredictiveModel(arch, 32, 77));
  const auto pairs = tiny_pairs();
  const auto tuples = tiny_tuples();

  TrainOptions topt;
  topt.dropout = dropout;
  topt.dropout_seed = 99;

  const auto run = [&](const std::function<LossValue(bool)>& f) {
    const LossValue lv = f(true);
    const double worst =
        fd_check(student, [&](bool) { return f(false).value; }, lv.grad, lv.value);
    CHECK(worst < 1.0);
  };

  run([&](bool g) { return ce_loss(student, pairs, g, topt); });
  run([&](bool) { return kd_loss(teacher, student, tuples, DivergenceKind::kl, topt); });
  run([&](bool) {
    return kd_loss(teacher, student, tuples, DivergenceKind::inverse_kl, topt);
  });
  // alpha far above every divergence keeps the whole hinge active.
  run([&](bool) {
    return neg_kd_loss(teacher, student, tuples, 2.0, DivergenceKind::kl, topt);
  });
  run([&](bool) {
    return neg_kd_loss(teacher, student, tuples, 2.0, DivergenceKind::inverse_kl, topt);
  });
  // min form: active when d exceeds alpha.
  run([&](bool) {
    return neg_kd_loss(teacher, student, tuples, 1e-7, DivergenceKind::kl, topt, true);
  });
  run([&](bool) {
    InheritanceAnchor anchor = make_anchor(teacher, 1);
    return ki_loss(anchor, student, tuples, topt);
  });
  run([&](bool) {
    FiltrationSplit split = split_transfer(teacher, student, tuples, QKind::token_ce);
    return kf_loss(teacher, student, split, 2.0, 0.7, 1.3, DivergenceKind::kl, topt);
  });
}

void check_noise_losses(Family fam) {
  const ArchSpec arch = tiny_arch(fam);
  PredictiveModel student(arch, 41, 77);
  const auto tuples = tiny_tuples();
  TrainOptions topt;

  const auto run = [&](NoiseKind kind, int samples, bool min_form = false) {
    INFO(noise_name(kind));
    NoiseSource noise{kind, samples};
    const auto f = [&] {
      return neg_kd_noise_loss(student, tuples, 2.0, DivergenceKind::kl, noise, 7,
                               topt, min_form);
    };
    const LossValue lv = f();
    const double worst =
        fd_check(student, [&](bool) { return f().value; }, lv.grad, lv.value);
    CHECK(worst < 1.0);
  };

  run(NoiseKind::uniform, 1);
  run(NoiseKind::normal, 2);
  run(NoiseKind::shuffled_batch_attached, 1);
  run(NoiseKind::shuffled_batch_attached, 2);
}

}  // namespace

TEST_CASE("attention family, no dropout") { check_all_losses(Family::attention, 0.0); }
TEST_CASE("attention family, dropout 0.3") { check_all_losses(Family::attention, 0.3); }
TEST_CASE("recurrent family, no dropout") { check_all_losses(Family::recurrent, 0.0); }
TEST_CASE("recurrent family, dropout 0.3") { check_all_losses(Family::recurrent, 0.3); }

TEST_CASE("noise push-away, attention") { check_noise_losses(Family::attention); }
TEST_CASE("noise push-away, recurrent") { check_noise_losses(Family::recurrent); }

TEST_CASE("detached shuffled noise equals a fixed-reference hinge") {
  for (Family fam : {Family::attention, Family::recurrent}) {
    CAPTURE(static_cast<int>(fam));
    const ArchSpec arch = tiny_arch(fam);
    PredictiveModel student(arch, 51, 77);
    const auto tuples = tiny_tuples();

    // Materialize the draw each tuple receives, then compare against the
    // plain hinge over those rows as frozen references.
    const std::vector<Row> flat = tuple_rows(student, tuples);
    DistributionBatch batch;
    batch.vocab = arch.vocab_size;
    batch.rows.resize(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) batch.rows[i] = {flat[i]};
    auto rng = make_rng(7, SeedStream::noise);
    NoiseSource noise{NoiseKind::shuffled_batch_detached, 1};
    std::vector<Row> refs;
    for (std::size_t i = 0; i < tuples.size(); ++i)
      refs.push_back(sample_noise_distribution(noise, batch, i, rng)[0].dist);

    const LossValue got = neg_kd_noise_loss(student, tuples, 50.0, DivergenceKind::kl,
                                            noise, 7, TrainOptions{});
    const LossValue want =
        neg_kd_loss_rows(refs, student, tuples, 50.0, DivergenceKind::kl);
    CHECK(got.value == doctest::Approx(want.value).epsilon(1e-12));
    for (std::size_t i = 0; i < got.grad.size(); ++i)
      CHECK(std::abs(got.grad[i] - want.grad[i]) < 1e-12);
  }
}
