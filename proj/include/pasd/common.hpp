#ifndef PASD_COMMON_HPP_
#define PASD_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pasd {

// Error hierarchy. Everything thrown by the library derives from Error so the
// CLI can map failures onto exit codes in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  ParseError(const std::string& what, int line, int column)
      : Error(what + " (line " + std::to_string(line) + ", column " +
              std::to_string(column) + ")"),
        line(line),
        column(column) {}
  int line;
  int column;
};

struct ConfigError : Error {
  using Error::Error;
};

struct EpisodeOver : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random stream. Distribution code is written out here rather
// than using <random> distributions, whose output is implementation defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw Error("Rng::index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Inverse-CDF draw; falls back to the last index on rounding shortfall.
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  double normal() {
    // Box-Muller.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used for config hashes in manifests.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value);

}  // namespace pasd

#endif  // PASD_COMMON_HPP_
