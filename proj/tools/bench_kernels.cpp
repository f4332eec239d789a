// Times the parallel loss kernels against their serial reference on a
// synthetic workload and checks that values and gradients agree bit for
// bit. Item counts scale with --pairs; thread count follows CKD_THREADS.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>

#include "ckd/filtration.hpp"
#include "ckd/model.hpp"
#include "ckd/parallel.hpp"

using namespace ckd;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <class F>
double time_best_of(int reps, F f) {
  double best = 1e30;
  for (int i = 0; i < reps; ++i) {
    const double t0 = now_s();
    f();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  int n_pairs = 256;
  int reps = 3;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--pairs" && i + 1 < argc) n_pairs = std::atoi(argv[++i]);
    else if (a == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
    else {
      std::cerr << "usage: bench_kernels [--pairs N] [--reps N]\n";
      return 2;
    }
  }

  DomainSpec spec;
  spec.name = "bench";
  spec.lexicon_seed = 5;
  spec.train_size = n_pairs;
  spec.dev_size = 8;
  spec.test_size = 8;
  DomainData data = gen_domain_corpus(spec, 42);
  const Vocab vocab = vocab_for_specs({&spec, 1});

  ArchSpec arch;
  arch.vocab_size = vocab.size();
  PredictiveModel student(arch, 1, vocab.content_hash());
  PredictiveModel teacher = snapshot(PredictiveModel(arch, 2, vocab.content_hash()));
  auto tuples = as_transfer_tuples(data.train);

  std::cout << "threads=" << par::max_threads() << " pairs=" << data.train.size()
            << " tuples=" << tuples.size() << " params=" << student.param_count()
            << "\n";

  LossValue ce_s, ce_p, kd_s, kd_p;
  TrainOptions serial{0.0, 0, true}, parallel{0.0, 0, false};

  const double t_ce_s =
      time_best_of(reps, [&] { ce_s = ce_loss(student, data.train.pairs, true, serial); });
  const double t_ce_p =
      time_best_of(reps, [&] { ce_p = ce_loss(student, data.train.pairs, true, parallel); });
  const double t_kd_s = time_best_of(
      reps, [&] { kd_s = kd_loss(teacher, student, tuples, DivergenceKind::kl, serial); });
  const double t_kd_p = time_best_of(
      reps, [&] { kd_p = kd_loss(teacher, student, tuples, DivergenceKind::kl, parallel); });

  const auto line = [](const char* name, double ts, double tp, double dv, double dg) {
    std::cout << name << ": serial " << ts * 1e3 << " ms, parallel " << tp * 1e3
              << " ms, speedup " << ts / tp << "x, |dvalue| " << dv
              << ", max |dgrad| " << dg << "\n";
  };
  line("ce_loss", t_ce_s, t_ce_p, std::abs(ce_s.value - ce_p.value),
       max_abs_diff(ce_s.grad, ce_p.grad));
  line("kd_loss", t_kd_s, t_kd_p, std::abs(kd_s.value - kd_p.value),
       max_abs_diff(kd_s.grad, kd_p.grad));

  const bool ok = ce_s.value == ce_p.value && kd_s.value == kd_p.value &&
                  max_abs_diff(ce_s.grad, ce_p.grad) == 0.0 &&
                  max_abs_diff(kd_s.grad, kd_p.grad) == 0.0;
  std::cout << (ok ? "parallel kernels match the serial reference bit for bit\n"
                   : "MISMATCH between serial and parallel kernels\n");
  return ok ? 0 : 1;
}
