#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ckd/corpus.hpp"
#include "ckd/model.hpp"

namespace ckd {

// Per-token quality scores. Every function returns both the raw value and an
// oriented form in which larger is always better; the transfer-set split and
// all other comparisons use the oriented form.

enum class QKind { token_entropy, hard_label_match, token_ce };

const char* q_kind_name(QKind);
QKind q_kind_from_name(const std::string&);

struct QScore {
  double raw = 0;
  double oriented = 0;
  bool clamped = false;  // probability floor fired
};

// Throws DataError unless every entry is finite and non-negative and the
// vector sums to 1 within 1e-6.
void validate_distribution(std::span<const double> dist);

// raw = -sum p ln p (natural log); oriented = -raw.
QScore q_token_entropy(std::span<const double> dist);
// raw = oriented = 1 if argmax(dist) == gold else 0; argmax ties take the
// lowest id.
QScore q_hard_label_match(std::span<const double> dist, int gold);
// raw = -ln p(gold); oriented = p(gold).
QScore q_token_ce(std::span<const double> dist, int gold);

QScore q_score(QKind, std::span<const double> dist, int gold);

// Sample Pearson correlation. Throws ConfigError on size mismatch or
// fewer than two points, DataError when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// ---- correlation study ----
//
// One cell per (model, testset): the mean per-token Q of the model over the
// testset's transfer tuples against the model's corpus BLEU on that testset.
// r correlates BLEU with the mean raw Q by default; `oriented` switches the
// correlated mean to the oriented form (the cells always carry both).

struct LabeledModel {
  std::string label;
  const PredictiveModel* model = nullptr;
};

struct CorrelationCell {
  std::string model;
  std::string testset;
  double mean_raw_q = 0;
  double mean_oriented_q = 0;
  double bleu = 0;
};

struct CorrelationStudy {
  QKind kind = QKind::token_ce;
  bool oriented = false;
  std::vector<CorrelationCell> cells;
  double r = 0;
};

CorrelationStudy correlation_study(std::span<const LabeledModel> models,
                                   std::span<const ParallelCorpus> testsets, QKind kind,
                                   bool oriented = false);

// Columns: model, testset, mean_raw_Q, BLEU; footer row carries r.
void write_correlation_csv(const CorrelationStudy&, const std::filesystem::path&);

}  // namespace ckd
