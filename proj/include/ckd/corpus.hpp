#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ckd/common.hpp"

namespace ckd {

// ---- vocabulary ----
//
// One shared vocabulary serves every model in an experiment. The four
// specials sit at fixed ids; content tokens follow.

struct Vocab {
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSpecials = 4;

  std::vector<std::string> tokens;  // id -> surface form
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()); }
  // Unknown surface forms resolve to UNK.
  int id(const std::string& tok) const;
  const std::string& token(int id) const;
  std::uint64_t content_hash() const;

  static Vocab from_content(std::vector<std::string> content_tokens);
};

// ---- sentence pairs ----

// target is EOS-terminated; neither side contains PAD or BOS ids.
struct SentencePair {
  std::vector<int> source;
  std::vector<int> target;
};

struct ParallelCorpus {
  std::string domain;
  std::string role;  // train | dev | test | transfer
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  std::uint64_t content_hash() const;
};

bool valid_role(const std::string& role);

// ---- synthetic domains ----

enum class TransformKind { identity_lexicon, reversal, cyclic_shift, interleave };

const char* transform_name(TransformKind);
TransformKind transform_from_name(const std::string&);

// A domain is a deterministic source->target mapping: a seeded lexicon
// substitution composed with a fixed reordering. lexicon_seed 0 means the
// identity lexicon.
struct DomainSpec {
  std::string name;
  TransformKind transform = TransformKind::identity_lexicon;
  std::uint64_t lexicon_seed = 0;
  int content_vocab = 44;  // shared across domains of one experiment
  int train_size = 400;
  int dev_size = 64;
  int test_size = 200;
  int min_len = 4;
  int max_len = 9;
  int teacher_epochs = 30;  // training budget for this domain's own model
};

// Content-token lexicon of a domain: entry i gives the image of content
// token i (indices are content indices, not vocab ids). Identity when
// lexicon_seed == 0; otherwise half the tokens, chosen by seed, are
// deranged among themselves and the rest stay fixed.
std::vector<int> domain_lexicon(const DomainSpec&);

// Applies the domain mapping to a source written in vocab ids (content ids
// only). Returns the target without EOS.
std::vector<int> apply_transform(const DomainSpec&, std::span<const int> source);

// Fraction of positions at which two domains map sampled sources to
// different targets. For two domains sharing a reordering this is computed
// exactly over the token universe.
double domain_distinctness(const DomainSpec& a, const DomainSpec& b,
                           std::uint64_t probe_seed = 1234);

struct DomainData {
  ParallelCorpus train, dev, test;
};

// Deterministic in (spec, seed): sources are sampled without replacement
// across the three splits, so train/dev/test are pairwise disjoint.
DomainData gen_domain_corpus(const DomainSpec&, std::uint64_t seed);

// Vocabulary implied by a set of domain specs (they must agree on
// content_vocab).
Vocab vocab_for_specs(std::span<const DomainSpec> specs);

// Union vocabulary over already-built corpora: specials first, then every
// surface form that occurs, in sorted order. `source` is the vocabulary
// the corpora's ids currently refer to.
Vocab build_vocab(std::span<const ParallelCorpus> corpora, const Vocab& source);

// ---- transfer tuples ----

// One next-token prediction instance: gold continuation of a gold prefix.
// EOS positions are included. sent and pos locate the tuple in its corpus
// (pos is the 0-based target position, so gold == target[pos]).
struct TransferTuple {
  std::vector<int> source;
  std::vector<int> prefix;
  int gold = 0;
  int sent = -1;
  int pos = 0;
};

std::vector<TransferTuple> as_transfer_tuples(const ParallelCorpus&);
std::size_t transfer_tuple_count(const ParallelCorpus&);

// ---- file formats ----
//
// Corpus files are UTF-8 text: a header line `#domain=<name> role=<role>`,
// then one pair per line, source and target separated by a tab, tokens
// space-separated. The trailing EOS is implicit on disk. Vocab files hold
// one token per line; the line number is the id.

void save_corpus(const ParallelCorpus&, const Vocab&, const std::filesystem::path&);
ParallelCorpus load_corpus(const std::filesystem::path&, const Vocab&);

void save_vocab(const Vocab&, const std::filesystem::path&);
Vocab load_vocab(const std::filesystem::path&);

}  // namespace ckd
