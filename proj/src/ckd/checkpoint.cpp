#include <cstdint>
#include <cstring>
#include <fstream>

#include "ckd/model.hpp"

// Checkpoint format, version 1. All integers little-endian.
//
//   byte 0..3   magic "CKDM"
//   u32         format version
//   u8          family (0 attention, 1 recurrent)
//   u32 x5      vocab_size, embed_dim, hidden_dim, layers, max_len
//   f64         temperature
//   u64         vocabulary content hash
//   u8          frozen flag
//   u8          malicious flag
//   u64         malicious seed (0 when the flag is clear)
//   u64         parameter count
//   f64 x N     parameters
//
// Parameters keep full double precision so a save/load round trip
// reproduces the model bit for bit.

namespace ckd {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'D', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ofstream& out, T v) {
  static_assert(std::is_integral_v<T> && std::is_unsigned_v<T>);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(out, b, sizeof(T));
}

void put_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le(out, bits);
}

void get_bytes(std::ifstream& in, void* p, std::size_t n,
               const std::filesystem::path& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw DataError("truncated checkpoint: " + path.string());
}

template <typename T>
T get_le(std::ifstream& in, const std::filesystem::path& path) {
  static_assert(std::is_integral_v<T> && std::is_unsigned_v<T>);
  unsigned char b[sizeof(T)];
  get_bytes(in, b, sizeof(T), path);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::ifstream& in, const std::filesystem::path& path) {
  std::uint64_t bits = get_le<std::uint64_t>(in, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const PredictiveModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  const ArchSpec& a = m.arch();
  put_bytes(out, kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  unsigned char fam = a.family == Family::attention ? 0 : 1;
  put_bytes(out, &fam, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.vocab_size));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.embed_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.hidden_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.layers));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.max_len));
  put_f64(out, a.temperature);
  put_le<std::uint64_t>(out, m.vocab_hash());
  unsigned char frozen = m.frozen() ? 1 : 0;
  unsigned char malicious = m.malicious() ? 1 : 0;
  put_bytes(out, &frozen, 1);
  put_bytes(out, &malicious, 1);
  put_le<std::uint64_t>(out, m.malicious() ? m.malicious_seed() : 0);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.param_count()));
  for (double v : m.params()) put_f64(out, v);
  if (!out) throw DataError("write failed: " + path.string());
}

PredictiveModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path.string());
  char magic[4];
  get_bytes(in, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  auto version = get_le<std::uint32_t>(in, path);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " +
                    path.string());
  unsigned char fam;
  get_bytes(in, &fam, 1, path);
  if (fam > 1) throw DataError("unknown model family in checkpoint: " + path.string());

  ArchSpec a;
  a.family = fam == 0 ? Family::attention : Family::recurrent;
  a.vocab_size = static_cast<int>(get_le<std::uint32_t>(in, path));
  a.embed_dim = static_cast<int>(get_le<std::uint32_t>(in, path));
  a.hidden_dim = static_cast<int>(get_le<std::uint32_t>(in, path));
  a.layers = static_cast<int>(get_le<std::uint32_t>(in, path));
  a.max_len = static_cast<int>(get_le<std::uint32_t>(in, path));
  a.temperature = get_f64(in, path);
  validate_arch(a);

  auto vocab_hash = get_le<std::uint64_t>(in, path);
  unsigned char frozen, malicious;
  get_bytes(in, &frozen, 1, path);
  get_bytes(in, &malicious, 1, path);
  auto malicious_seed = get_le<std::uint64_t>(in, path);
  auto n = get_le<std::uint64_t>(in, path);

  PredictiveModel m;
  m.arch_ = a;
  m.net_ = make_net(a);
  if (n != m.net_->param_count())
    throw DataError("parameter count mismatch in checkpoint: " + path.string());
  m.params_.resize(static_cast<std::size_t>(n));
  for (auto& v : m.params_) v = get_f64(in, path);
  m.frozen_ = frozen != 0;
  if (malicious != 0) m.malicious_seed_ = malicious_seed;
  m.vocab_hash_ = vocab_hash;
  return m;
}

}  // namespace ckd
