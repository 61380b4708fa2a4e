#pragma once

// shared plumbing: error types, hashing, rng, small numeric helpers

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cogheads {

// error hierarchy; cli maps these to exit codes
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct dimension_error : error {  // shape/config mismatch
  using error::error;
};
struct data_error : error {  // bad input data / unusable corpus
  using error::error;
};
struct numeric_error : error {  // non-finite values, failed numeric checks
  using error::error;
};
struct usage_error : error {  // bad call arguments
  using error::error;
};

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw dimension_error(msg);
}

// fnv-1a 64-bit content hash; fingerprint for manifests, not crypto
constexpr uint64_t fnv_basis = 1469598103934665603ull;
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = fnv_basis) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}
inline uint64_t fnv1a(const std::string& s, uint64_t h = fnv_basis) {
  return fnv1a(s.data(), s.size(), h);
}
inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// deterministic rng: every stochastic step derives its engine from an explicit seed
using rng_t = std::mt19937_64;
inline rng_t make_rng(uint64_t seed, uint64_t stream = 0) {
  // splitmix-style mixing so (seed, stream) pairs decorrelate
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return rng_t(z ^ (z >> 31));
}

// modulo draw and fisher-yates on top of the fixed engine, so shuffles and
// picks reproduce across standard libraries (std::shuffle would not)
inline int rand_below(rng_t& rng, int n) { return int(rng() % uint64_t(n)); }

template <typename T>
void shuffle_vec(std::vector<T>& v, rng_t& rng) {
  for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[size_t(i)], v[size_t(rand_below(rng, i + 1))]);
}

// uniform double in [0, 1) from the top 53 bits, same everywhere
inline double rand_unit(rng_t& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline bool finite(double v) { return std::isfinite(v); }

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

// stable softmax over a row, in place; sentinel large-negative scores stay ~0
inline void softmax_inplace(std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : row) v /= z;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

// population standard deviation (divide by n)
inline double pstdev_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

// the 8 cognitive-function labels, in bitmask order
inline const std::vector<std::string>& function_labels() {
  static const std::vector<std::string> v = {
      "SpatialPerception", "RelationalReasoning", "LowLevelVisual", "HighLevelVisual",
      "InfoExtraction",    "KnowledgeRecall",     "MathReasoning",  "DecisionMaking"};
  return v;
}

inline int function_index(const std::string& name) {
  const auto& v = function_labels();
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i] == name) return int(i);
  throw usage_error("unknown function label: " + name);
}

}  // namespace cogheads
