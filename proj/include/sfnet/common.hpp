#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfnet {

using Shape = std::vector<std::size_t>;

/// Scalar width used by a computation graph. All tensors participating in
/// one graph share one mode: standard = 32-bit, verification = 64-bit.
enum class Precision { standard, verification };

inline const char* precision_name(Precision p) {
  return p == Precision::standard ? "standard" : "verification";
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument contract violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file, truncated payload, or unusable dataset.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a failed numerical verification.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

/// Deterministic 64-bit generator (splitmix64). Used everywhere randomness
/// is needed so that results depend only on the seed, not on the standard
/// library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. Stateless apart from the counter.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

/// Fisher-Yates with our own Rng; std::shuffle's draw sequence is not
/// pinned by the standard.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

/// Mixes a sub-stream index into a seed (per-epoch shuffles etc.).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  Rng r(seed ^ (0xA0761D6478BD642Full + 0x9E3779B97F4A7C15ull * (stream + 1)));
  return r.next_u64();
}

}  // namespace sfnet
