#include <cmath>
#include <fstream>
#include <sstream>

#include "ckd/eval.hpp"
#include "ckd/quantify.hpp"

namespace ckd {

void validate_distribution(std::span<const double> dist) {
  if (dist.empty()) throw DataError("empty probability vector");
  double sum = 0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < -1e-12)
      throw DataError("invalid probability vector entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw DataError("probability vector does not sum to 1");
}

namespace {

void validate_gold(std::span<const double> dist, int gold) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= dist.size())
    throw DataError("gold token id out of range");
}

}  // namespace

const char* q_kind_name(QKind k) {
  switch (k) {
    case QKind::token_entropy: return "token_entropy";
    case QKind::hard_label_match: return "hard_label_match";
    case QKind::token_ce: return "token_ce";
  }
  throw ConfigError("unknown q kind");
}

QKind q_kind_from_name(const std::string& s) {
  if (s == "token_entropy") return QKind::token_entropy;
  if (s == "hard_label_match") return QKind::hard_label_match;
  if (s == "token_ce") return QKind::token_ce;
  throw ConfigError("unknown quantification function: " + s);
}

QScore q_token_entropy(std::span<const double> dist) {
  validate_distribution(dist);
  QScore s;
  for (double p : dist)
    if (p > 0) s.raw -= p * std::log(p);
  if (s.raw < 0) s.raw = 0;  // guard rounding at the one-hot extreme
  s.oriented = -s.raw;
  return s;
}

QScore q_hard_label_match(std::span<const double> dist, int gold) {
  validate_distribution(dist);
  validate_gold(dist, gold);
  QScore s;
  s.raw = argmax_lowest(dist) == gold ? 1.0 : 0.0;
  s.oriented = s.raw;
  return s;
}

QScore q_token_ce(std::span<const double> dist, int gold) {
  validate_distribution(dist);
  validate_gold(dist, gold);
  QScore s;
  long clamped = 0;
  s.raw = -log_floored(dist[static_cast<std::size_t>(gold)], &clamped);
  s.oriented = dist[static_cast<std::size_t>(gold)];
  s.clamped = clamped > 0;
  return s;
}

QScore q_score(QKind k, std::span<const double> dist, int gold) {
  switch (k) {
    case QKind::token_entropy: return q_token_entropy(dist);
    case QKind::hard_label_match: return q_hard_label_match(dist, gold);
    case QKind::token_ce: return q_token_ce(dist, gold);
  }
  throw ConfigError("unknown q kind");
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("pearson inputs differ in length");
  if (a.size() < 2) throw ConfigError("pearson needs at least two points");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) throw DataError("pearson input has zero variance");
  return sab / std::sqrt(saa * sbb);
}

CorrelationStudy correlation_study(std::span<const LabeledModel> models,
                                   std::span<const ParallelCorpus> testsets, QKind kind,
                                   bool oriented) {
  if (models.size() * testsets.size() < 2)
    throw ConfigError("correlation study needs at least two (model, testset) cells");
  CorrelationStudy study;
  study.kind = kind;
  study.oriented = oriented;
  for (const LabeledModel& lm : models) {
    if (!lm.model) throw ConfigError("null model in correlation study");
    for (const ParallelCorpus& ts : testsets) {
      auto tuples = as_transfer_tuples(ts);
      if (tuples.empty()) throw DataError("empty testset in correlation study");
      auto rows = tuple_rows(*lm.model, tuples);
      double raw = 0, ori = 0;
      for (std::size_t i = 0; i < tuples.size(); ++i) {
        QScore q = q_score(kind, rows[i], tuples[i].gold);
        raw += q.raw;
        ori += q.oriented;
      }
      CorrelationCell cell;
      cell.model = lm.label;
      cell.testset = ts.domain;
      cell.mean_raw_q = raw / static_cast<double>(tuples.size());
      cell.mean_oriented_q = ori / static_cast<double>(tuples.size());
      cell.bleu = eval_model_bleu(*lm.model, ts).bleu;
      study.cells.push_back(std::move(cell));
    }
  }
  std::vector<double> q, bleu;
  for (const auto& c : study.cells) {
    q.push_back(oriented ? c.mean_oriented_q : c.mean_raw_q);
    bleu.push_back(c.bleu);
  }
  study.r = pearson(q, bleu);
  return study;
}

void write_correlation_csv(const CorrelationStudy& study,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "model,testset,mean_raw_Q,BLEU\n";
  std::ostringstream body;
  body.precision(17);
  for (const auto& c : study.cells)
    body << c.model << ',' << c.testset << ',' << c.mean_raw_q << ',' << c.bleu << '\n';
  body << "pearson_r,,," << study.r << '\n';
  out << body.str();
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace ckd
