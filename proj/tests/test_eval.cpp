#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include "ckd/eval.hpp"
#include "doctest.h"

using namespace ckd;

namespace {

// Apply a fixed token relabeling to every sequence (BLEU sees ids only).
std::vector<std::vector<int>> relabel(std::span<const std::vector<int>> seqs, int offset) {
  std::vector<std::vector<int>> out;
  for (const auto& s : seqs) {
    std::vector<int> t;
    for (int id : s) t.push_back(id + offset);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("corpus BLEU hand cases") {
  // Tokens stand for: the=10 cat=11 sat=12 on=13 mat=14 is=15.
  std::vector<std::vector<int>> hyp{{10, 11, 12, 13, 10, 14}};
  std::vector<std::vector<int>> ref{{10, 11, 15, 13, 10, 14}};
  BleuScore s = corpus_bleu(hyp, ref);
  // Unigram 5/6, bigram 3/5, trigram 1/4, fourgram 0/3: unsmoothed BLEU is 0.
  CHECK(s.bleu == 0.0);
  CHECK(s.precisions[0] == doctest::Approx(5.0 / 6.0));
  CHECK(s.precisions[1] == doctest::Approx(3.0 / 5.0));
  CHECK(s.precisions[2] == doctest::Approx(1.0 / 4.0));
  CHECK(s.precisions[3] == 0.0);
  CHECK(s.bp == 1.0);

  // One mismatched token in six: p = (5/6, 3/5, 2/4, 1/3), BP = 1.
  std::vector<std::vector<int>> hyp2{{1, 2, 3, 4, 9, 6}};
  std::vector<std::vector<int>> ref2{{1, 2, 3, 4, 5, 6}};
  BleuScore s2 = corpus_bleu(hyp2, ref2);
  double expect =
      100.0 * std::exp(0.25 * (std::log(5.0 / 6) + std::log(3.0 / 5) +
                               std::log(2.0 / 4) + std::log(1.0 / 3)));
  CHECK(s2.bleu == doctest::Approx(expect).epsilon(1e-12));
  CHECK(s2.bleu == doctest::Approx(53.728).epsilon(1e-3));

  // Perfect match scores 100 regardless of corpus size.
  std::vector<std::vector<int>> many;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<int> sent(4 + rng() % 6);
    for (int& t : sent) t = static_cast<int>(4 + rng() % 40);
    many.push_back(std::move(sent));
  }
  BleuScore sp = corpus_bleu(many, many);
  CHECK(sp.bleu == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(sp.bp == 1.0);

  // Zero overlap scores 0.
  std::vector<std::vector<int>> h0{{1, 2, 3, 4, 5}};
  std::vector<std::vector<int>> r0{{6, 7, 8, 9, 10}};
  CHECK(corpus_bleu(h0, r0).bleu == 0.0);
}

TEST_CASE("brevity penalty and corpus-level pooling") {
  // Hypothesis shorter than reference: BP = exp(1 - r/c).
  std::vector<std::vector<int>> hyp{{1, 2, 3, 4}};
  std::vector<std::vector<int>> ref{{1, 2, 3, 4, 5, 6, 7, 8}};
  BleuScore s = corpus_bleu(hyp, ref);
  CHECK(s.hyp_len == 4);
  CHECK(s.ref_len == 8);
  CHECK(s.bp == doctest::Approx(std::exp(1.0 - 8.0 / 4.0)).epsilon(1e-12));

  // Longer hypothesis is not penalized.
  BleuScore s2 = corpus_bleu(ref, hyp);
  CHECK(s2.bp == 1.0);

  // Counts pool across sentences before the ratio is taken, so two
  // sentences differ from scoring them separately and averaging.
  std::vector<std::vector<int>> h{{1, 2, 3, 4, 5}, {9, 9, 9, 9}};
  std::vector<std::vector<int>> r{{1, 2, 3, 4, 5}, {1, 2, 3, 4}};
  BleuScore pooled = corpus_bleu(h, r);
  CHECK(pooled.precisions[0] == doctest::Approx(5.0 / 9.0).epsilon(1e-12));

  // BLEU is invariant under any relabeling of token ids.
  BleuScore a = corpus_bleu(h, r);
  auto h2 = relabel(h, 100);
  auto r2 = relabel(r, 100);
  BleuScore b = corpus_bleu(h2, r2);
  CHECK(a.bleu == doctest::Approx(b.bleu).epsilon(1e-12));

  CHECK_THROWS_AS(corpus_bleu({}, {}), ConfigError);
  CHECK_THROWS_AS(corpus_bleu(h, std::span<const std::vector<int>>(r.data(), 1)),
                  ConfigError);
}

TEST_CASE("accumulative degradation oracle") {
  // Only the drops count, rises are ignored.
  std::vector<double> seq{42.84, 46.19, 44.62, 39.16, 30.57};
  CHECK(accumulative_degradation(std::span(seq).subspan(0, 3)) ==
        doctest::Approx(1.57).epsilon(0.0001));
  CHECK(accumulative_degradation(std::span(seq).subspan(0, 4)) ==
        doctest::Approx(7.03).epsilon(0.0001));
  CHECK(accumulative_degradation(seq) == doctest::Approx(15.62).epsilon(0.0001));

  // Monotone increases give zero.
  std::vector<double> up{10, 20, 30};
  CHECK(accumulative_degradation(up) == 0.0);

  // Additivity: AD(prefix) + drops(rest) == AD(whole).
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 60);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> s(6);
    for (double& v : s) v = u(rng);
    double whole = accumulative_degradation(s);
    double prefix = accumulative_degradation(std::span(s).subspan(0, 4));
    double rest = 0;
    for (std::size_t k = 4; k < s.size(); ++k) rest += std::max(0.0, s[k - 1] - s[k]);
    CHECK(whole == doctest::Approx(prefix + rest).epsilon(1e-12));
    CHECK(whole >= 0.0);
  }

  CHECK_THROWS_AS(accumulative_degradation(std::vector<double>{42.0}), ConfigError);
  CHECK_THROWS_AS(accumulative_degradation(std::vector<double>{}), ConfigError);
}

TEST_CASE("model BLEU strips the trailing EOS from references") {
  DomainSpec d;
  d.name = "e";
  d.lexicon_seed = 7;
  d.train_size = 20;
  d.dev_size = 4;
  d.test_size = 8;
  Vocab v = vocab_for_specs(std::vector<DomainSpec>{d});
  DomainData data = gen_domain_corpus(d, 3);
  ArchSpec arch;
  arch.vocab_size = v.size();
  arch.embed_dim = 6;
  arch.hidden_dim = 8;
  PredictiveModel m(arch, 1, v.content_hash());
  BleuScore s = eval_model_bleu(m, data.test);
  CHECK(s.bleu >= 0.0);
  CHECK(s.bleu <= 100.0);
  long ref_len = 0;
  for (const auto& p : data.test.pairs)
    ref_len += static_cast<long>(p.target.size()) - 1;  // EOS dropped
  CHECK(s.ref_len == ref_len);

  // Deterministic.
  BleuScore s2 = eval_model_bleu(m, data.test);
  CHECK(s.bleu == s2.bleu);
  CHECK(s.hyp_len == s2.hyp_len);

  CHECK_THROWS_AS(eval_model_bleu(m, ParallelCorpus{"e", "test", {}}), DataError);
}

TEST_CASE("history lines round-trip through jsonl") {
  const auto dir = std::filesystem::temp_directory_path() / "ckd_eval_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "history.jsonl";
  std::filesystem::remove(path);

  StepMetrics m0;
  m0.step = 0;
  m0.bleu = 42.84;
  StepMetrics m1;
  m1.step = 1;
  m1.bleu = 46.19;
  m1.delta_bleu = 3.35;
  m1.ad = 0.0;
  m1.pos = 120;
  m1.neg = 380;
  m1.losses = {1.25, 0.33, 0.01};
  append_history_line(path, m0);
  append_history_line(path, m1);

  RunHistory h = load_history(path, "ckd", "base");
  CHECK(h.method == "ckd");
  CHECK(h.config_label == "base");
  REQUIRE(h.steps.size() == 2);
  CHECK(h.steps[0].step == 0);
  CHECK(h.steps[0].bleu == 42.84);
  CHECK(h.steps[1].bleu == 46.19);
  CHECK(h.steps[1].delta_bleu == 3.35);
  CHECK(h.steps[1].pos == 120);
  CHECK(h.steps[1].neg == 380);
  CHECK(h.steps[1].losses.ce == 1.25);
  CHECK(h.steps[1].losses.kf == 0.33);
  CHECK(h.steps[1].losses.ki == 0.01);

  CHECK_THROWS_AS(load_history(dir / "absent.jsonl"), DataError);
  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << "{not json\n";
  }
  CHECK_THROWS_AS(load_history(dir / "bad.jsonl"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("report renders one column per run and recomputable cells") {
  RunHistory ckd;
  ckd.method = "ckd";
  ckd.config_label = "base";
  RunHistory kd;
  kd.method = "kd";
  kd.config_label = "base";
  std::vector<double> cb{42.84, 46.19, 44.62};
  std::vector<double> kb{42.84, 39.00, 35.50};
  for (int t = 0; t < 3; ++t) {
    StepMetrics m;
    m.step = t;
    m.bleu = cb[t];
    m.delta_bleu = cb[t] - cb[0];
    m.ad = accumulative_degradation(std::span(cb).subspan(0, t == 0 ? 2 : t + 1));
    if (t == 0) m.ad = 0.0;
    ckd.steps.push_back(m);
    m.bleu = kb[t];
    m.delta_bleu = kb[t] - kb[0];
    m.ad = t == 0 ? 0.0 : accumulative_degradation(std::span(kb).subspan(0, t + 1));
    kd.steps.push_back(m);
  }

  ReportTables r = render_report(std::vector<RunHistory>{ckd, kd});
  CHECK(r.table_text.find("ckd") != std::string::npos);
  CHECK(r.table_text.find("kd") != std::string::npos);
  CHECK(r.table_text.find("46.19") != std::string::npos);
  CHECK(r.table_text.find("+3.35") != std::string::npos);
  CHECK(r.table_text.find("AD") != std::string::npos);

  // CSV re-parses to the numbers that went in.
  std::istringstream csv(r.csv_text);
  std::string line;
  std::getline(csv, line);
  CHECK(line == "method,config,step,bleu,delta_bleu,ad");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    std::istringstream cells(line);
    std::string method, config, step, bleu, delta, ad;
    std::getline(cells, method, ',');
    std::getline(cells, config, ',');
    std::getline(cells, step, ',');
    std::getline(cells, bleu, ',');
    std::getline(cells, delta, ',');
    std::getline(cells, ad, ',');
    const RunHistory& src = method == "ckd" ? ckd : kd;
    const StepMetrics& want = src.steps[static_cast<std::size_t>(std::stoi(step))];
    CHECK(std::stod(bleu) == doctest::Approx(want.bleu).epsilon(1e-12));
    CHECK(std::stod(delta) == doctest::Approx(want.delta_bleu).epsilon(1e-12));
    CHECK(std::stod(ad) == doctest::Approx(want.ad).epsilon(1e-12));
  }
  CHECK(rows == 6);

  CHECK_THROWS_AS(render_report({}), ConfigError);
}
