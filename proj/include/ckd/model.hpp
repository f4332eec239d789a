#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ckd/common.hpp"
#include "ckd/corpus.hpp"

namespace ckd {

// ---- architecture ----

enum class Family { attention, recurrent };

const char* family_name(Family);
Family family_from_name(const std::string&);

struct ArchSpec {
  Family family = Family::attention;
  int vocab_size = 0;
  int embed_dim = 24;
  int hidden_dim = 48;  // FFN width (attention) or state width (recurrent)
  int layers = 1;       // decoder block count (attention only)
  int max_len = 24;     // position table size and default decode cap
  double temperature = 1.0;

  bool operator==(const ArchSpec&) const = default;
};

void validate_arch(const ArchSpec&);

// ---- distributions ----

using Row = std::vector<double>;

// Teacher-forced predictive distributions for a batch. rows[n][p] is the
// distribution over the next token after the gold prefix of length p of
// sentence n. Ragged: a row exists for every real target position
// (including the EOS position) and for nothing else, so there is no PAD
// masking to track.
struct DistributionBatch {
  int vocab = 0;
  std::vector<std::vector<Row>> rows;
  std::size_t total_rows() const;
};

// Row order used whenever a batch is flattened: sentence-major,
// position-minor.
std::vector<std::size_t> malicious_permutation(std::uint64_t seed, std::size_t n_rows);

// ---- evaluation options ----

// Dropout is resolved from (seed, sentence key, site, position, unit), so a
// forward pass is a pure function of its arguments and the matching
// backward pass sees the same masks without storing them.
struct EvalOptions {
  double dropout = 0.0;
  std::uint64_t dropout_seed = 0;
  long sent_key = 0;
};

double dropout_mask(std::uint64_t seed, long sent_key, int site, int pos, int unit,
                    double rate);

struct NetCache {
  virtual ~NetCache() = default;
};

// ---- model ----

class PredictiveModel {
 public:
  PredictiveModel(const ArchSpec&, std::uint64_t init_seed, std::uint64_t vocab_hash);

  const ArchSpec& arch() const { return arch_; }
  bool frozen() const { return frozen_; }
  bool malicious() const { return malicious_seed_.has_value(); }
  std::uint64_t malicious_seed() const { return malicious_seed_.value_or(0); }
  std::uint64_t vocab_hash() const { return vocab_hash_; }

  std::size_t param_count() const;
  std::span<const double> params() const { return params_; }
  // Throws ModelError on a frozen model.
  std::span<double> params_mutable();
  std::uint64_t params_hash() const;

  // Teacher-forced distributions, evaluation mode. A malicious model
  // permutes the rows of the whole batch; the permutation is a pure
  // function of (wrap seed, row count), so a single-row call is unchanged.
  DistributionBatch forward_distributions(std::span<const SentencePair> batch) const;

  // Distribution over the token following `prefix`. No malicious
  // permutation is visible here (one row).
  Row next_distribution(std::span<const int> source, std::span<const int> prefix) const;

  // Argmax decoding; ties take the lowest token id; stops at EOS or the
  // cap (0 means the architecture's max_len). The returned sequence does
  // not include EOS.
  std::vector<int> greedy_decode(std::span<const int> source, int max_len = 0) const;

  // Training-facing passes. forward_cached never applies the malicious
  // permutation; dlogits must have one row per target position.
  void forward_cached(const SentencePair&, const EvalOptions&, std::vector<Row>& probs,
                      std::unique_ptr<NetCache>& cache) const;
  void backward(const SentencePair&, const EvalOptions&, const NetCache&,
                const std::vector<Row>& dlogits, std::span<double> grad) const;

 private:
  PredictiveModel() = default;

  ArchSpec arch_;
  std::shared_ptr<const class Net> net_;
  std::vector<double> params_;
  bool frozen_ = false;
  std::optional<std::uint64_t> malicious_seed_;
  std::uint64_t vocab_hash_ = 0;

  friend PredictiveModel snapshot(const PredictiveModel&);
  friend PredictiveModel make_malicious(const PredictiveModel&, std::uint64_t);
  friend PredictiveModel thaw(const PredictiveModel&);
  friend PredictiveModel load_checkpoint(const std::filesystem::path&);
  friend void save_checkpoint(const PredictiveModel&, const std::filesystem::path&);
};

// Frozen deep copy. Idempotent; the copy never aliases the source's
// parameters.
PredictiveModel snapshot(const PredictiveModel&);

// Frozen copy whose batch outputs are row-permuted. Reports frozen() and
// malicious() true; parameters are bit-identical to the wrapped model.
PredictiveModel make_malicious(const PredictiveModel&, std::uint64_t seed);

// Trainable deep copy: clears frozen and any malicious wrapping.
PredictiveModel thaw(const PredictiveModel&);

// ---- losses ----

struct LossValue {
  double value = 0;
  bool has_grad = false;
  std::vector<double> grad;  // d value / d student params, empty unless has_grad
  long clamped = 0;          // how often the probability floor fired
};

// Evaluation options shared by the gradient-producing loss functions.
struct TrainOptions {
  double dropout = 0.0;
  std::uint64_t dropout_seed = 0;
  bool force_serial = false;
};

// Sum of next-token negative log-likelihoods over every target position
// (EOS included). Gradients are produced only for unfrozen models, so the
// loss can be probed on teachers.
LossValue ce_loss(const PredictiveModel&, std::span<const SentencePair> batch,
                  bool want_grad = true, const TrainOptions& = {});

// ---- optimizer ----

struct OptimConfig {
  double lr = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 0;  // 0 disables clipping
};

struct AdamState {
  long t = 0;
  std::vector<double> m, v;
};

void train_step(PredictiveModel&, std::span<const double> grad, AdamState&,
                const OptimConfig&);

// ---- checkpoints ----
//
// Self-describing binary container: magic, format version, architecture
// descriptor, vocabulary hash, frozen/malicious flags, then the parameters
// as little-endian 64-bit floats, so a save/load round trip is bit-exact.

void save_checkpoint(const PredictiveModel&, const std::filesystem::path&);
PredictiveModel load_checkpoint(const std::filesystem::path&);

// ---- tuple grouping ----

// Tuples sharing a sentence are evaluated in one pass: the group's pair
// holds the reconstructed target and `rows` lists the target positions the
// group's tuples occupy (row = prefix length). tuple_index maps each row
// back into the input tuple list.
struct TupleGroup {
  SentencePair pair;
  std::vector<int> rows;
  std::vector<std::size_t> tuple_index;
};

std::vector<TupleGroup> group_tuples(std::span<const TransferTuple>);

// Evaluation-mode rows for each tuple, in input order. Batch semantics
// match forward_distributions, so a malicious model permutes across the
// tuple set it is given.
std::vector<Row> tuple_rows(const PredictiveModel&, std::span<const TransferTuple>);

// ---- internal net interface (shared by the family implementations) ----

class Net {
 public:
  virtual ~Net() = default;
  virtual std::size_t param_count() const = 0;
  virtual void init_params(std::span<double>, std::mt19937_64&) const = 0;
  virtual void forward(std::span<const double> params, const SentencePair&,
                       const EvalOptions&, double temperature,
                       std::vector<Row>& probs, std::unique_ptr<NetCache>* cache) const = 0;
  virtual void backward(std::span<const double> params, const SentencePair&,
                        const EvalOptions&, const NetCache&,
                        const std::vector<Row>& dlogits, std::span<double> grad) const = 0;
};

std::shared_ptr<const Net> make_net(const ArchSpec&);
std::shared_ptr<const Net> make_attention_net(const ArchSpec&);
std::shared_ptr<const Net> make_recurrent_net(const ArchSpec&);

}  // namespace ckd
