#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckd {

// Probability floor applied before any log or division on distribution
// entries. Keeps losses finite without renormalizing the rows themselves.
inline constexpr double kProbFloor = 1e-9;

// Thrown for bad configuration values and malformed requests. The CLI maps
// this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown for corpus, vocabulary and checkpoint problems. The CLI maps this
// to exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a model contract is violated (training a frozen model,
// architecture mismatches and the like). The CLI maps this to exit code 3.
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- seeding ----
//
// Every random choice in the lab flows from one root seed. Components pull
// their own streams so that, say, adding a dropout draw never shifts the
// data generator.

enum class SeedStream : std::uint64_t {
  data = 0x01,
  init = 0x02,
  shuffle = 0x03,
  malicious = 0x04,
  dropout = 0x05,
  noise = 0x06,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, SeedStream stream,
                                 std::uint64_t salt = 0) {
  return splitmix64(splitmix64(root ^ (static_cast<std::uint64_t>(stream) << 56)) ^
                    splitmix64(salt * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t root, SeedStream stream,
                                std::uint64_t salt = 0) {
  return std::mt19937_64(derive_seed(root, stream, salt));
}

// ---- hashing ----

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Literals would otherwise decay onto the (data, n) overload with h read as
// a byte count.
template <std::size_t N>
std::uint64_t fnv1a64(const char (&s)[N], std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(static_cast<const void*>(s), N - 1, h);
}

std::string hex64(std::uint64_t v);

// ---- small numerics ----

// log with the probability floor applied. Increments *clamped when the
// floor fired.
inline double log_floored(double p, long* clamped = nullptr) {
  if (p < kProbFloor) {
    if (clamped) ++*clamped;
    p = kProbFloor;
  }
  return std::log(p);
}

// In-place stable softmax with temperature. logits are overwritten by
// probabilities.
void softmax_inplace(std::span<double> logits, double temperature = 1.0);

// Index of the maximum entry; ties resolve to the lowest index.
int argmax_lowest(std::span<const double> row);

double l2_norm(std::span<const double> v);

}  // namespace ckd
