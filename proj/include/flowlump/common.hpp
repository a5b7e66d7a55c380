#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowlump {

using PhysId = std::uint32_t;
using StateId = std::uint32_t;
using ModuleId = std::uint32_t;

inline constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

enum class ErrorKind {
  EmptyCorpus,
  InvalidArgument,
  Format,
  Io,
  NoWindows,
  OutOfRange,
  NoProjectableFlow,
  NoCoverage,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Shortest text that round-trips `value` when `significant_digits` is 17;
// fewer digits print a rounded general-format value.
std::string format_double(double value, int significant_digits = 17);

// Parses a full token as a finite double; no leading/trailing garbage.
bool parse_double(const std::string& token, double& out);

// Runs body(i) for i in [0, n). Library code declares independent work units
// through this; the caller decides whether they run on a pool.
using ParallelFor =
    std::function<void(std::size_t n, const std::function<void(std::size_t)>& body)>;

void sequential_for(std::size_t n, const std::function<void(std::size_t)>& body);

// Fixed-size worker pool for independent jobs. `threads` == 0 picks the
// hardware concurrency.
ParallelFor make_thread_pool_for(std::size_t threads);

// std::mt19937_64 with portable bounded draws. The engine output is fixed by
// the standard but the std distributions are not, so a seed yields the same
// stream on every standard library only through these helpers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform integer in [0, bound), bound > 0, by rejection.
  std::uint64_t below(std::uint64_t bound);
  // Uniform double in [0, 1) with 53 random bits.
  double uniform();

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; derives independent sub-seeds from one run seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// x*log2(x) with 0*log(0) = 0.
inline double plogp(double x) { return x > 0.0 ? x * std::log2(x) : 0.0; }

}  // namespace flowlump
