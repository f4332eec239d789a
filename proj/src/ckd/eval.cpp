#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ckd/eval.hpp"
#include "ckd/parallel.hpp"

namespace ckd {

namespace {

using Ngram = std::vector<int>;
using NgramCounts = std::map<Ngram, long>;

void count_ngrams(const std::vector<int>& toks, int n, NgramCounts& out) {
  if (static_cast<int>(toks.size()) < n) return;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
    ++out[Ngram(toks.begin() + static_cast<long>(i),
                toks.begin() + static_cast<long>(i) + n)];
}

}  // namespace

BleuScore corpus_bleu(std::span<const std::vector<int>> hypotheses,
                      std::span<const std::vector<int>> references) {
  if (hypotheses.size() != references.size())
    throw ConfigError("corpus_bleu: hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw ConfigError("corpus_bleu: empty corpus");

  BleuScore s;
  std::array<long, 4> match{}, total{};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& ref = references[i];
    s.hyp_len += static_cast<long>(hyp.size());
    s.ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      const long hyp_ngrams = static_cast<long>(hyp.size()) - (n - 1);
      if (hyp_ngrams <= 0) continue;
      total[static_cast<std::size_t>(n - 1)] += hyp_ngrams;
      NgramCounts hc, rc;
      count_ngrams(hyp, n, hc);
      count_ngrams(ref, n, rc);
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        if (it != rc.end())
          match[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
      }
    }
  }

  bool zero = false;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    const auto nn = static_cast<std::size_t>(n);
    s.precisions[nn] =
        total[nn] > 0 ? static_cast<double>(match[nn]) / static_cast<double>(total[nn])
                      : 0.0;
    if (match[nn] <= 0 || total[nn] <= 0)
      zero = true;
    else
      log_sum += std::log(s.precisions[nn]);
  }
  if (s.hyp_len == 0) {
    s.bp = 0;
    return s;
  }
  s.bp = s.hyp_len <= s.ref_len
             ? std::exp(1.0 - static_cast<double>(s.ref_len) /
                                  static_cast<double>(s.hyp_len))
             : 1.0;
  if (!zero) s.bleu = s.bp * std::exp(log_sum / 4.0) * 100.0;
  return s;
}

double accumulative_degradation(std::span<const double> bleu_sequence) {
  if (bleu_sequence.size() < 2)
    throw ConfigError("accumulative degradation needs step 0 plus at least one step");
  double ad = 0;
  for (std::size_t k = 1; k < bleu_sequence.size(); ++k)
    ad += std::max(0.0, bleu_sequence[k - 1] - bleu_sequence[k]);
  return ad;
}

BleuScore eval_model_bleu(const PredictiveModel& model, const ParallelCorpus& testset,
                          int max_len) {
  if (testset.pairs.empty()) throw DataError("empty testset: " + testset.domain);
  std::vector<std::vector<int>> hyps(testset.pairs.size());
  std::vector<std::vector<int>> refs(testset.pairs.size());
  par::for_chunks(testset.pairs.size(), [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const SentencePair& p = testset.pairs[i];
      hyps[i] = model.greedy_decode(p.source, max_len);
      refs[i] = p.target;
      if (!refs[i].empty() && refs[i].back() == Vocab::kEos) refs[i].pop_back();
    }
  });
  return corpus_bleu(hyps, refs);
}

// ---- reporting ----

namespace {

std::string cell_text(const StepMetrics& m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f(%+.2f)", m.bleu, m.delta_bleu);
  return buf;
}

}  // namespace

ReportTables render_report(std::span<const RunHistory> histories) {
  if (histories.empty()) throw ConfigError("nothing to report");

  struct Col {
    std::string method, config;
    const RunHistory* run;
  };
  std::vector<Col> cols;
  std::vector<std::string> methods;
  std::size_t max_steps = 0;
  for (const RunHistory& h : histories) {
    cols.push_back({h.method, h.config_label, &h});
    if (std::find(methods.begin(), methods.end(), h.method) == methods.end())
      methods.push_back(h.method);
    max_steps = std::max(max_steps, h.steps.size());
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << "method,config,step,bleu,delta_bleu,ad\n";
  for (const Col& c : cols)
    for (const StepMetrics& m : c.run->steps)
      csv << c.method << ',' << c.config << ',' << m.step << ',' << m.bleu << ','
          << m.delta_bleu << ',' << m.ad << '\n';

  std::vector<std::string> headers;
  for (const Col& c : cols) headers.push_back(c.method + " " + c.config);
  for (const std::string& m : methods) headers.push_back(m + " avg");

  std::vector<std::vector<std::string>> body;
  for (std::size_t t = 0; t < max_steps; ++t) {
    std::vector<std::string> row;
    row.push_back("step " + std::to_string(t));
    for (const Col& c : cols)
      row.push_back(t < c.run->steps.size() ? cell_text(c.run->steps[t]) : "");
    for (const std::string& m : methods) {
      double bleu = 0, delta = 0;
      long n = 0;
      for (const Col& c : cols)
        if (c.method == m && t < c.run->steps.size()) {
          bleu += c.run->steps[t].bleu;
          delta += c.run->steps[t].delta_bleu;
          ++n;
        }
      if (n == 0) {
        row.push_back("");
        continue;
      }
      StepMetrics avg;
      avg.bleu = bleu / static_cast<double>(n);
      avg.delta_bleu = delta / static_cast<double>(n);
      row.push_back(cell_text(avg));
    }
    body.push_back(std::move(row));
  }
  {
    std::vector<std::string> row;
    row.push_back("AD");
    char buf[32];
    for (const Col& c : cols) {
      std::snprintf(buf, sizeof(buf), "%.2f", c.run->steps.back().ad);
      row.push_back(buf);
    }
    for (const std::string& m : methods) {
      double ad = 0;
      long n = 0;
      for (const Col& c : cols)
        if (c.method == m) {
          ad += c.run->steps.back().ad;
          ++n;
        }
      std::snprintf(buf, sizeof(buf), "%.2f", ad / static_cast<double>(n));
      row.push_back(buf);
    }
    body.push_back(std::move(row));
  }

  std::vector<std::size_t> width(headers.size() + 1, 0);
  width[0] = 8;
  for (const auto& row : body) width[0] = std::max(width[0], row[0].size());
  for (std::size_t j = 0; j < headers.size(); ++j) {
    width[j + 1] = headers[j].size();
    for (const auto& row : body) width[j + 1] = std::max(width[j + 1], row[j + 1].size());
  }
  std::ostringstream table;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) table << "  ";
      table << row[j];
      for (std::size_t k = row[j].size(); k < width[j]; ++k) table << ' ';
    }
    table << '\n';
  };
  std::vector<std::string> head;
  head.emplace_back("");
  for (const auto& h : headers) head.push_back(h);
  emit(head);
  for (const auto& row : body) emit(row);

  ReportTables out;
  out.table_text = table.str();
  out.csv_text = csv.str();
  return out;
}

}  // namespace ckd
