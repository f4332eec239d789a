#include "ckd/model.hpp"

#include <algorithm>
#include <map>

#include "ckd/parallel.hpp"

namespace ckd {

const char* family_name(Family f) {
  switch (f) {
    case Family::attention: return "attention";
    case Family::recurrent: return "recurrent";
  }
  throw ConfigError("bad family");
}

Family family_from_name(const std::string& s) {
  if (s == "attention") return Family::attention;
  if (s == "recurrent") return Family::recurrent;
  throw ConfigError("unknown model family: " + s);
}

void validate_arch(const ArchSpec& a) {
  if (a.vocab_size <= Vocab::kSpecials)
    throw ConfigError("vocab_size must exceed the special-token count");
  if (a.embed_dim < 1 || a.hidden_dim < 1 || a.layers < 1 || a.max_len < 2)
    throw ConfigError("bad architecture dimensions");
  if (a.temperature <= 0) throw ConfigError("temperature must be > 0");
}

std::size_t DistributionBatch::total_rows() const {
  std::size_t n = 0;
  for (const auto& s : rows) n += s.size();
  return n;
}

std::vector<std::size_t> malicious_permutation(std::uint64_t seed, std::size_t n_rows) {
  std::vector<std::size_t> perm(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) perm[i] = i;
  std::mt19937_64 rng(derive_seed(seed, SeedStream::malicious, n_rows));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

double dropout_mask(std::uint64_t seed, long sent_key, int site, int pos, int unit,
                    double rate) {
  if (rate <= 0) return 1.0;
  if (rate >= 1) throw ConfigError("dropout rate must be < 1");
  std::uint64_t k = seed;
  k = splitmix64(k ^ static_cast<std::uint64_t>(sent_key));
  k = splitmix64(k ^ static_cast<std::uint64_t>(site));
  k = splitmix64(k ^ static_cast<std::uint64_t>(pos));
  k = splitmix64(k ^ static_cast<std::uint64_t>(unit));
  double u = static_cast<double>(k >> 11) * 0x1.0p-53;
  return u < rate ? 0.0 : 1.0 / (1.0 - rate);
}

// ---- PredictiveModel ----

PredictiveModel::PredictiveModel(const ArchSpec& arch, std::uint64_t init_seed,
                                 std::uint64_t vocab_hash)
    : arch_(arch), vocab_hash_(vocab_hash) {
  validate_arch(arch_);
  net_ = make_net(arch_);
  params_.assign(net_->param_count(), 0.0);
  std::mt19937_64 rng = make_rng(init_seed, SeedStream::init);
  net_->init_params(params_, rng);
}

std::size_t PredictiveModel::param_count() const { return params_.size(); }

std::span<double> PredictiveModel::params_mutable() {
  if (frozen_) throw ModelError("attempt to mutate a frozen model");
  return params_;
}

std::uint64_t PredictiveModel::params_hash() const {
  return fnv1a64(params_.data(), params_.size() * sizeof(double));
}

void PredictiveModel::forward_cached(const SentencePair& pair, const EvalOptions& opt,
                                     std::vector<Row>& probs,
                                     std::unique_ptr<NetCache>& cache) const {
  net_->forward(params_, pair, opt, arch_.temperature, probs, &cache);
}

void PredictiveModel::backward(const SentencePair& pair, const EvalOptions& opt,
                               const NetCache& cache, const std::vector<Row>& dlogits,
                               std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ModelError("gradient buffer size mismatch");
  net_->backward(params_, pair, opt, cache, dlogits, grad);
}

DistributionBatch PredictiveModel::forward_distributions(
    std::span<const SentencePair> batch) const {
  DistributionBatch out;
  out.vocab = arch_.vocab_size;
  out.rows.resize(batch.size());
  par::for_chunks(batch.size(), [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n)
      net_->forward(params_, batch[n], EvalOptions{}, arch_.temperature, out.rows[n],
                    nullptr);
  });
  if (malicious_seed_) {
    std::vector<Row*> flat;
    flat.reserve(out.total_rows());
    for (auto& s : out.rows)
      for (auto& r : s) flat.push_back(&r);
    const auto perm = malicious_permutation(*malicious_seed_, flat.size());
    std::vector<Row> shuffled(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) shuffled[i] = std::move(*flat[perm[i]]);
    for (std::size_t i = 0; i < flat.size(); ++i) *flat[i] = std::move(shuffled[i]);
  }
  return out;
}

Row PredictiveModel::next_distribution(std::span<const int> source,
                                       std::span<const int> prefix) const {
  SentencePair pseudo;
  pseudo.source.assign(source.begin(), source.end());
  pseudo.target.assign(prefix.begin(), prefix.end());
  pseudo.target.push_back(Vocab::kEos);  // placeholder; the row cannot see it
  std::vector<Row> probs;
  net_->forward(params_, pseudo, EvalOptions{}, arch_.temperature, probs, nullptr);
  return probs.back();
}

std::vector<int> PredictiveModel::greedy_decode(std::span<const int> source,
                                                int max_len) const {
  int cap = max_len > 0 ? max_len : arch_.max_len;
  cap = std::min(cap, arch_.max_len);
  std::vector<int> out;
  for (int step = 0; step < cap; ++step) {
    Row row = next_distribution(source, out);
    int tok = argmax_lowest(row);
    if (tok == Vocab::kEos) break;
    out.push_back(tok);
  }
  return out;
}

PredictiveModel snapshot(const PredictiveModel& m) {
  PredictiveModel copy = m;
  copy.frozen_ = true;
  return copy;
}

PredictiveModel make_malicious(const PredictiveModel& m, std::uint64_t seed) {
  PredictiveModel copy = m;
  copy.frozen_ = true;
  copy.malicious_seed_ = seed;
  return copy;
}

PredictiveModel thaw(const PredictiveModel& m) {
  PredictiveModel copy = m;
  copy.frozen_ = false;
  copy.malicious_seed_.reset();
  return copy;
}

// ---- cross-entropy ----

LossValue ce_loss(const PredictiveModel& model, std::span<const SentencePair> batch,
                  bool want_grad, const TrainOptions& topt) {
  const bool grad = want_grad && !model.frozen();
  const double T = model.arch().temperature;

  struct Acc {
    double value = 0;
    long clamped = 0;
    std::vector<double> grad;
  };
  Acc init;
  if (grad) init.grad.assign(model.param_count(), 0.0);

  Acc total = par::map_reduce_ordered<Acc>(
      batch.size(), init,
      [&](Acc& acc, std::size_t b, std::size_t e) {
        std::vector<Row> probs;
        std::unique_ptr<NetCache> cache;
        for (std::size_t n = b; n < e; ++n) {
          const auto& pair = batch[n];
          EvalOptions opt{topt.dropout, topt.dropout_seed, static_cast<long>(n)};
          model.forward_cached(pair, opt, probs, cache);
          std::vector<Row> dlogits;
          if (grad) dlogits.assign(probs.size(), Row(probs[0].size(), 0.0));
          for (std::size_t p = 0; p < pair.target.size(); ++p) {
            int gold = pair.target[p];
            acc.value -= log_floored(probs[p][static_cast<std::size_t>(gold)],
                                     &acc.clamped);
            if (grad) {
              for (std::size_t k = 0; k < probs[p].size(); ++k)
                dlogits[p][k] = probs[p][k] / T;
              dlogits[p][static_cast<std::size_t>(gold)] -= 1.0 / T;
            }
          }
          if (grad) model.backward(pair, opt, *cache, dlogits, acc.grad);
        }
      },
      [](Acc& out, const Acc& part) {
        out.value += part.value;
        out.clamped += part.clamped;
        if (!out.grad.empty())
          for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += part.grad[i];
      },
      topt.force_serial);

  LossValue lv;
  lv.value = total.value;
  lv.clamped = total.clamped;
  lv.has_grad = grad;
  lv.grad = std::move(total.grad);
  return lv;
}

// ---- optimizer ----

void train_step(PredictiveModel& model, std::span<const double> grad, AdamState& st,
                const OptimConfig& cfg) {
  auto params = model.params_mutable();  // rejects frozen models
  if (grad.size() != params.size()) throw ModelError("gradient size mismatch");
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size()) throw ModelError("optimizer state size mismatch");

  double scale = 1.0;
  if (cfg.clip_norm > 0) {
    double n = l2_norm(grad);
    if (n > cfg.clip_norm) scale = cfg.clip_norm / n;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grad[i] * scale;
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    double mhat = st.m[i] / bc1;
    double vhat = st.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// ---- tuple grouping ----

std::vector<TupleGroup> group_tuples(std::span<const TransferTuple> tuples) {
  // Bucket by (sentence id, source); within a bucket the prefixes must
  // chain (each is a prefix of the reconstructed target), otherwise the
  // offender is evaluated on its own.
  std::map<std::pair<int, std::vector<int>>, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < tuples.size(); ++i)
    buckets[{tuples[i].sent, tuples[i].source}].push_back(i);

  std::vector<TupleGroup> out;
  auto standalone = [&](std::size_t i) {
    const auto& t = tuples[i];
    TupleGroup g;
    g.pair.source = t.source;
    g.pair.target = t.prefix;
    g.pair.target.push_back(t.gold);
    g.rows = {static_cast<int>(t.prefix.size())};
    g.tuple_index = {i};
    out.push_back(std::move(g));
  };

  for (auto& [key, idx] : buckets) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return tuples[a].prefix.size() < tuples[b].prefix.size();
    });
    TupleGroup g;
    g.pair.source = key.second;
    bool ok = true;
    for (std::size_t i : idx) {
      const auto& t = tuples[i];
      std::size_t row = t.prefix.size();
      if (row < g.pair.target.size()) {
        // Prefix must agree with what is already reconstructed, and the
        // gold token must match the target at this row.
        if (!std::equal(t.prefix.begin(), t.prefix.end(), g.pair.target.begin()) ||
            g.pair.target[row] != t.gold) {
          ok = false;
          break;
        }
      } else {
        if (!std::equal(g.pair.target.begin(), g.pair.target.end(), t.prefix.begin())) {
          ok = false;
          break;
        }
        g.pair.target = t.prefix;
        g.pair.target.push_back(t.gold);
      }
      g.rows.push_back(static_cast<int>(row));
      g.tuple_index.push_back(i);
    }
    if (ok) {
      out.push_back(std::move(g));
    } else {
      for (std::size_t i : idx) standalone(i);
    }
  }
  return out;
}

std::vector<Row> tuple_rows(const PredictiveModel& model,
                            std::span<const TransferTuple> tuples) {
  const auto groups = group_tuples(tuples);
  std::vector<SentencePair> pairs;
  pairs.reserve(groups.size());
  for (const auto& g : groups) pairs.push_back(g.pair);

  DistributionBatch batch = model.forward_distributions(pairs);

  std::vector<Row> rows(tuples.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    for (std::size_t k = 0; k < g.rows.size(); ++k)
      rows[g.tuple_index[k]] = batch.rows[gi][static_cast<std::size_t>(g.rows[k])];
  }
  return rows;
}

}  // namespace ckd
