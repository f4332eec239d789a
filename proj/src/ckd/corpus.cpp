#include "ckd/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ckd {

// ---- Vocab ----

int Vocab::id(const std::string& tok) const {
  auto it = index.find(tok);
  return it == index.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw DataError("token id out of range");
  return tokens[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

Vocab Vocab::from_content(std::vector<std::string> content_tokens) {
  Vocab v;
  v.tokens = {"<bos>", "<eos>", "<pad>", "<unk>"};
  for (auto& t : content_tokens) v.tokens.push_back(std::move(t));
  for (int i = 0; i < v.size(); ++i) {
    if (!v.index.emplace(v.tokens[static_cast<std::size_t>(i)], i).second)
      throw DataError("duplicate token in vocabulary: " +
                      v.tokens[static_cast<std::size_t>(i)]);
  }
  return v;
}

std::uint64_t ParallelCorpus::content_hash() const {
  std::uint64_t h = fnv1a64(domain);
  h = fnv1a64(role, h);
  for (const auto& p : pairs) {
    h = fnv1a64(p.source.data(), p.source.size() * sizeof(int), h);
    h = fnv1a64("\t", 1, h);
    h = fnv1a64(p.target.data(), p.target.size() * sizeof(int), h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

bool valid_role(const std::string& role) {
  return role == "train" || role == "dev" || role == "test" || role == "transfer";
}

// ---- transforms ----

const char* transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::identity_lexicon: return "identity_lexicon";
    case TransformKind::reversal: return "reversal";
    case TransformKind::cyclic_shift: return "cyclic_shift";
    case TransformKind::interleave: return "interleave";
  }
  throw ConfigError("bad transform kind");
}

TransformKind transform_from_name(const std::string& s) {
  if (s == "identity_lexicon") return TransformKind::identity_lexicon;
  if (s == "reversal") return TransformKind::reversal;
  if (s == "cyclic_shift") return TransformKind::cyclic_shift;
  if (s == "interleave") return TransformKind::interleave;
  throw ConfigError("unknown transform: " + s);
}

std::vector<int> domain_lexicon(const DomainSpec& spec) {
  if (spec.content_vocab < 2) throw ConfigError("content_vocab must be >= 2");
  const int n = spec.content_vocab;
  std::vector<int> lex(static_cast<std::size_t>(n));
  std::iota(lex.begin(), lex.end(), 0);
  if (spec.lexicon_seed == 0) return lex;

  // Pick half the tokens and rotate them one step along a seeded order.
  // The rotation guarantees no picked token maps to itself.
  std::mt19937_64 rng(splitmix64(spec.lexicon_seed));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int k = (n + 1) / 2;
  for (int i = 0; i < k; ++i) {
    int from = order[static_cast<std::size_t>(i)];
    int to = order[static_cast<std::size_t>((i + 1) % k)];
    lex[static_cast<std::size_t>(from)] = to;
  }
  return lex;
}

namespace {

std::vector<int> reorder_only(TransformKind k, std::span<const int> src) {
  std::vector<int> out(src.begin(), src.end());
  switch (k) {
    case TransformKind::identity_lexicon:
      break;
    case TransformKind::reversal:
      std::reverse(out.begin(), out.end());
      break;
    case TransformKind::cyclic_shift:
      if (out.size() > 1) std::rotate(out.begin(), out.begin() + 1, out.end());
      break;
    case TransformKind::interleave: {
      std::vector<int> tmp;
      tmp.reserve(out.size());
      for (std::size_t i = 0; i < out.size(); i += 2) tmp.push_back(out[i]);
      for (std::size_t i = 1; i < out.size(); i += 2) tmp.push_back(out[i]);
      out = std::move(tmp);
      break;
    }
  }
  return out;
}

}  // namespace

std::vector<int> apply_transform(const DomainSpec& spec, std::span<const int> source) {
  const std::vector<int> lex = domain_lexicon(spec);
  std::vector<int> out = reorder_only(spec.transform, source);
  for (int& id : out) {
    int c = id - Vocab::kSpecials;
    if (c < 0 || c >= spec.content_vocab)
      throw DataError("source token outside the content vocabulary");
    id = lex[static_cast<std::size_t>(c)] + Vocab::kSpecials;
  }
  return out;
}

double domain_distinctness(const DomainSpec& a, const DomainSpec& b,
                           std::uint64_t probe_seed) {
  if (a.content_vocab != b.content_vocab)
    throw ConfigError("domains disagree on content_vocab");
  if (a.transform == b.transform) {
    // Same reordering: compare the lexicons over the whole token universe.
    const auto la = domain_lexicon(a), lb = domain_lexicon(b);
    int diff = 0;
    for (std::size_t i = 0; i < la.size(); ++i) diff += la[i] != lb[i];
    return static_cast<double>(diff) / static_cast<double>(la.size());
  }
  // Different reorderings: sample sources and compare position-wise.
  std::mt19937_64 rng(splitmix64(probe_seed));
  std::uniform_int_distribution<int> len_d(std::max(2, a.min_len), std::max(2, a.max_len));
  std::uniform_int_distribution<int> tok_d(0, a.content_vocab - 1);
  long total = 0, diff = 0;
  for (int s = 0; s < 256; ++s) {
    int len = len_d(rng);
    std::vector<int> src(static_cast<std::size_t>(len));
    for (int& t : src) t = tok_d(rng) + Vocab::kSpecials;
    auto ta = apply_transform(a, src);
    auto tb = apply_transform(b, src);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      ++total;
      diff += ta[i] != tb[i];
    }
  }
  return static_cast<double>(diff) / static_cast<double>(total);
}

// ---- generation ----

DomainData gen_domain_corpus(const DomainSpec& spec, std::uint64_t seed) {
  if (spec.name.empty()) throw ConfigError("domain name must not be empty");
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw ConfigError("bad sentence length range for domain " + spec.name);
  if (spec.train_size < 1 || spec.dev_size < 1 || spec.test_size < 1)
    throw ConfigError("split sizes must be positive for domain " + spec.name);

  std::mt19937_64 rng = make_rng(seed, SeedStream::data, fnv1a64(spec.name));
  std::uniform_int_distribution<int> len_d(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> tok_d(0, spec.content_vocab - 1);

  const std::size_t want = static_cast<std::size_t>(spec.train_size) +
                           static_cast<std::size_t>(spec.dev_size) +
                           static_cast<std::size_t>(spec.test_size);
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> sources;
  sources.reserve(want);
  std::size_t attempts = 0;
  while (sources.size() < want) {
    if (++attempts > 200 * want + 1000)
      throw ConfigError("cannot sample enough distinct sentences for domain " +
                        spec.name + "; enlarge the vocabulary or length range");
    int len = len_d(rng);
    std::vector<int> src(static_cast<std::size_t>(len));
    for (int& t : src) t = tok_d(rng) + Vocab::kSpecials;
    if (seen.insert(src).second) sources.push_back(std::move(src));
  }

  auto make_split = [&](std::size_t begin, std::size_t count, const char* role) {
    ParallelCorpus c;
    c.domain = spec.name;
    c.role = role;
    c.pairs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      SentencePair p;
      p.source = sources[begin + i];
      p.target = apply_transform(spec, p.source);
      p.target.push_back(Vocab::kEos);
      c.pairs.push_back(std::move(p));
    }
    return c;
  };

  DomainData d;
  d.train = make_split(0, static_cast<std::size_t>(spec.train_size), "train");
  d.dev = make_split(static_cast<std::size_t>(spec.train_size),
                     static_cast<std::size_t>(spec.dev_size), "dev");
  d.test = make_split(static_cast<std::size_t>(spec.train_size + spec.dev_size),
                      static_cast<std::size_t>(spec.test_size), "test");
  return d;
}

Vocab vocab_for_specs(std::span<const DomainSpec> specs) {
  if (specs.empty()) throw ConfigError("no domains configured");
  int n = specs[0].content_vocab;
  for (const auto& s : specs)
    if (s.content_vocab != n)
      throw ConfigError("all domains must share one content_vocab");
  std::vector<std::string> content;
  content.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%02d", i);
    content.emplace_back(buf);
  }
  return Vocab::from_content(std::move(content));
}

Vocab build_vocab(std::span<const ParallelCorpus> corpora, const Vocab& source) {
  std::set<std::string> surface;
  for (const auto& c : corpora) {
    for (const auto& p : c.pairs) {
      for (int id : p.source) surface.insert(source.token(id));
      for (int id : p.target)
        if (id != Vocab::kEos) surface.insert(source.token(id));
    }
  }
  std::vector<std::string> content;
  for (const auto& s : surface)
    if (s != "<bos>" && s != "<eos>" && s != "<pad>" && s != "<unk>")
      content.push_back(s);
  return Vocab::from_content(std::move(content));
}

// ---- transfer tuples ----

std::vector<TransferTuple> as_transfer_tuples(const ParallelCorpus& c) {
  std::vector<TransferTuple> out;
  out.reserve(transfer_tuple_count(c));
  for (std::size_t n = 0; n < c.pairs.size(); ++n) {
    const auto& p = c.pairs[n];
    if (p.target.empty() || p.target.back() != Vocab::kEos)
      throw DataError("target not EOS-terminated");
    for (std::size_t j = 0; j < p.target.size(); ++j) {
      TransferTuple t;
      t.source = p.source;
      t.prefix.assign(p.target.begin(), p.target.begin() + static_cast<long>(j));
      t.gold = p.target[j];
      t.sent = static_cast<int>(n);
      t.pos = static_cast<int>(j);
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::size_t transfer_tuple_count(const ParallelCorpus& c) {
  std::size_t n = 0;
  for (const auto& p : c.pairs) n += p.target.size();
  return n;
}

// ---- file IO ----

namespace {

std::string join_tokens(std::span<const int> ids, const Vocab& v, bool strip_eos) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (strip_eos && i + 1 == ids.size() && ids[i] == Vocab::kEos) break;
    if (!out.empty()) out += ' ';
    out += v.token(ids[i]);
  }
  return out;
}

std::vector<int> parse_tokens(const std::string& text, const Vocab& v) {
  std::vector<int> ids;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    if (tok == "<pad>" || tok == "<bos>")
      throw DataError("corpus line contains a reserved token: " + tok);
    ids.push_back(v.id(tok));
  }
  return ids;
}

}  // namespace

void save_corpus(const ParallelCorpus& c, const Vocab& v,
                 const std::filesystem::path& path) {
  if (!valid_role(c.role)) throw DataError("bad corpus role: " + c.role);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write corpus file: " + path.string());
  f << "#domain=" << c.domain << " role=" << c.role << "\n";
  for (const auto& p : c.pairs)
    f << join_tokens(p.source, v, false) << '\t' << join_tokens(p.target, v, true)
      << "\n";
  if (!f) throw DataError("short write on corpus file: " + path.string());
}

ParallelCorpus load_corpus(const std::filesystem::path& path, const Vocab& v) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open corpus file: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty corpus file: " + path.string());
  ParallelCorpus c;
  {
    std::string head = line;
    if (head.rfind("#domain=", 0) != 0)
      throw DataError("missing corpus header in " + path.string());
    std::size_t sp = head.find(' ');
    if (sp == std::string::npos || head.find("role=", sp + 1) == std::string::npos)
      throw DataError("malformed corpus header in " + path.string());
    c.domain = head.substr(8, sp - 8);
    c.role = head.substr(sp + 6);
    if (c.domain.empty() || !valid_role(c.role))
      throw DataError("malformed corpus header in " + path.string());
  }
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected <source>\\t<target>");
    SentencePair p;
    p.source = parse_tokens(line.substr(0, tab), v);
    p.target = parse_tokens(line.substr(tab + 1), v);
    if (p.source.empty() || p.target.empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": empty side in sentence pair");
    p.target.push_back(Vocab::kEos);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

void save_vocab(const Vocab& v, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write vocab file: " + path.string());
  for (const auto& t : v.tokens) f << t << "\n";
  if (!f) throw DataError("short write on vocab file: " + path.string());
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open vocab file: " + path.string());
  Vocab v;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) throw DataError("empty token line in " + path.string());
    v.tokens.push_back(line);
  }
  if (v.size() < Vocab::kSpecials ||
      v.tokens[0] != "<bos>" || v.tokens[1] != "<eos>" || v.tokens[2] != "<pad>" ||
      v.tokens[3] != "<unk>")
    throw DataError("vocab file must start with <bos> <eos> <pad> <unk>");
  for (int i = 0; i < v.size(); ++i)
    if (!v.index.emplace(v.tokens[static_cast<std::size_t>(i)], i).second)
      throw DataError("duplicate token in vocab file: " +
                      v.tokens[static_cast<std::size_t>(i)]);
  return v;
}

}  // namespace ckd
