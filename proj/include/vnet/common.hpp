#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vnet {

// Error taxonomy. The CLI maps config/input/usage errors to exit code 2,
// faults and failed checks to exit code 1.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class input_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
// NaN/Inf detection and data-integrity failures.
class fault_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class integrity_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline int& thread_count_ref() {
  static int n = std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
  return n;
}
inline int thread_count() { return thread_count_ref(); }
inline void set_thread_count(int n) { thread_count_ref() = std::max(1, n); }

// Splits [0,n) into one contiguous chunk per worker. Each index is handled by
// exactly one worker and every per-index computation keeps its serial
// accumulation order, so results are bit-identical for any thread count.
template <class F>
void parallel_for(int64_t n, const F& body) {
  if (n <= 0) return;
  const int nt = thread_count();
  if (nt <= 1 || n < 2) {
    body(int64_t{0}, n);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(nt, n));
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) {
    const int64_t b = w * chunk;
    const int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(int64_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

// Deterministic RNG. mt19937_64 has a standard-mandated sequence and the
// value derivations below avoid implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine half only.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // [lo, hi)
  int64_t randint(int64_t lo, int64_t hi) {
    if (hi <= lo) throw usage_error("Rng::randint: empty range");
    return lo + static_cast<int64_t>(eng_() % static_cast<uint64_t>(hi - lo));
  }

 private:
  std::mt19937_64 eng_;
};

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

}  // namespace vnet
