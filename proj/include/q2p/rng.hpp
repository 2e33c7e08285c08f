#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace q2p {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// Seeded generator with named sub-streams. Every component derives its own
// stream from the run seed (e.g. rng.derive("train")), so the sequence a
// component sees does not depend on what ran before it. Distribution code is
// written out here instead of using std::<distributions>, whose output is
// implementation-defined; this keeps sampled artifacts reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(detail::splitmix64(seed)) {}

  // Derivation mixes only the stored seed; it never consumes from this stream.
  Rng derive(std::string_view label) const {
    return Rng(detail::splitmix64(seed_ ^ detail::fnv1a(label)));
  }
  Rng derive(std::string_view label, std::uint64_t index) const {
    return Rng(detail::splitmix64(detail::splitmix64(seed_ ^ detail::fnv1a(label)) + index));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return r % n;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // k distinct indices out of [0, n), in random order. Requires k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(idx[i], idx[i + below(n - i)]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace q2p
