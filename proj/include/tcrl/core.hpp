#pragma once

#include <cstdint>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tcrl {

/// Invalid configuration or shape mismatch between a component and its inputs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse by the caller (stepping a finished episode, non-scalar loss, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Broken internal invariant, e.g. an optimizer step without gradients.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The replay buffer cannot serve the request yet; keep collecting.
class NotReadyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Seedable random stream. The full state (engine plus cached normal) can be
/// captured as text and restored, which checkpoint resume relies on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream derived from a master seed and a component name, so
  /// that toggling one component never shifts another component's draws.
  static Rng substream(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t s = detail::splitmix64(master);
    s = detail::splitmix64(s ^ detail::fnv1a(name));
    s = detail::splitmix64(s ^ index);
    return Rng(s);
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }

  void set_state(const std::string& text) {
    std::istringstream is(text);
    is >> engine_ >> normal_;
    if (!is) throw ConfigError("corrupt rng state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_ && a.normal_ == b.normal_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline void log_warn(std::string_view msg) { std::cerr << "[tcrl] warning: " << msg << '\n'; }

}  // namespace tcrl
