#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "ckd/filtration.hpp"
#include "ckd/inheritance.hpp"
#include "doctest.h"

using namespace ckd;

namespace {

ArchSpec tiny() {
  ArchSpec a;
  a.family = Family::recurrent;
  a.vocab_size = 10;
  a.embed_dim = 6;
  a.hidden_dim = 8;
  a.max_len = 12;
  return a;
}

std::vector<TransferTuple> tiny_tuples() {
  ParallelCorpus c{"d", "train",
                   {{{4, 5, 6}, {6, 5, 4, 1}}, {{7, 8}, {8, 7, 1}}, {{5, 9}, {9, 1}}}};
  return as_transfer_tuples(c);
}

}  // namespace

TEST_CASE("anchor construction") {
  PredictiveModel prev(tiny(), 1, 7);
  InheritanceAnchor a = make_anchor(prev, 2);
  CHECK(a.step == 2);
  CHECK(a.previous.frozen());
  CHECK(a.previous.params_hash() == prev.params_hash());
  // Mutating the source afterwards does not leak into the anchor.
  prev.params_mutable()[0] += 1.0;
  CHECK(a.previous.params_hash() != prev.params_hash());
  CHECK_THROWS_AS(make_anchor(prev, 0), ConfigError);
}

TEST_CASE("ki_loss is zero when the student sits on the anchor") {
  PredictiveModel student(tiny(), 3, 7);
  InheritanceAnchor a = make_anchor(student, 1);
  auto tuples = tiny_tuples();
  LossValue l = ki_loss(a, student, tuples);
  CHECK(l.value == doctest::Approx(0.0).epsilon(1e-12));
  REQUIRE(l.has_grad);
  // At the minimum the gradient vanishes.
  double gmax = 0;
  for (double g : l.grad) gmax = std::max(gmax, std::abs(g));
  CHECK(gmax <= 1e-10);
}

TEST_CASE("ki_loss recounts as a sum of per-tuple divergences") {
  PredictiveModel prev(tiny(), 5, 7);
  PredictiveModel student(tiny(), 6, 7);
  InheritanceAnchor a = make_anchor(prev, 1);
  auto tuples = tiny_tuples();

  LossValue l = ki_loss(a, student, tuples);
  auto a_rows = tuple_rows(a.previous, tuples);
  auto s_rows = tuple_rows(student, tuples);
  double expect = 0;
  for (std::size_t i = 0; i < tuples.size(); ++i)
    expect += divergence(a_rows[i], s_rows[i], DivergenceKind::kl);
  CHECK(l.value == doctest::Approx(expect).epsilon(1e-10));
  CHECK(l.value > 0.0);

  LossValue lr = ki_loss_rows(a_rows, student, tuples);
  CHECK(lr.value == doctest::Approx(l.value).epsilon(1e-12));
  REQUIRE(lr.grad.size() == l.grad.size());
  for (std::size_t i = 0; i < l.grad.size(); i += 131)
    CHECK(lr.grad[i] == doctest::Approx(l.grad[i]).epsilon(1e-10));

  // No filtration: every tuple contributes, so dropping one changes the sum.
  LossValue fewer = ki_loss(a, student, std::span(tuples).subspan(0, tuples.size() - 1));
  CHECK(fewer.value < l.value);

  CHECK(ki_loss(a, student, {}).value == 0.0);
}

TEST_CASE("descending the ki gradient pulls the student toward the anchor") {
  auto tuples = tiny_tuples();
  for (int seed = 0; seed < 20; ++seed) {
    PredictiveModel prev(tiny(), 100 + seed, 7);
    PredictiveModel student(tiny(), 200 + seed, 7);
    InheritanceAnchor a = make_anchor(prev, 1);
    LossValue l = ki_loss(a, student, tuples);
    REQUIRE(l.has_grad);
    double g2 = 0;
    for (double g : l.grad) g2 += g * g;
    REQUIRE(g2 > 0);
    double eta = 1e-3 / std::sqrt(g2);
    PredictiveModel moved = student;
    auto p = moved.params_mutable();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= eta * l.grad[i];
    CHECK(ki_loss(a, moved, tuples).value < l.value);
  }
}

TEST_CASE("ki_loss_rows validates row alignment") {
  PredictiveModel prev(tiny(), 9, 7);
  PredictiveModel student(tiny(), 10, 7);
  auto tuples = tiny_tuples();
  auto rows = tuple_rows(prev, tuples);
  rows.pop_back();
  CHECK_THROWS_AS(ki_loss_rows(rows, student, tuples), ConfigError);
}
