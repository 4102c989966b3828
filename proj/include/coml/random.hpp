#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace coml {

// Threefry-2x32 with 20 rounds (Salmon et al.'s counter-based generator).
std::array<std::uint32_t, 2> threefry2x32(std::array<std::uint32_t, 2> key,
                                          std::array<std::uint32_t, 2> counter);

// Node of a splittable PRNG tree. Children are derived by label, so a key's
// value depends only on the path from the master seed, never on the order in
// which siblings are created.
class Key {
 public:
  static Key from_seed(std::uint64_t seed);

  Key split(std::string_view label) const;
  Key fold(std::uint64_t index) const { return split(std::to_string(index)); }

  std::array<std::uint32_t, 2> block(std::uint64_t counter) const;

  std::array<std::uint32_t, 2> words() const { return key_; }
  std::uint64_t id() const {
    return (static_cast<std::uint64_t>(key_[1]) << 32) | key_[0];
  }
  // e.g. "seed=7/collect/traj/3"
  const std::string& path() const { return path_; }

 private:
  Key(std::array<std::uint32_t, 2> k, std::string path)
      : key_(k), path_(std::move(path)) {}

  std::array<std::uint32_t, 2> key_{};
  std::string path_;
};

// Sequential draws from a key. Every distribution is implemented here from
// raw bits, so sequences are identical across standard libraries.
class Stream {
 public:
  explicit Stream(Key key) : key_(std::move(key)) {}

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  double uniform();  // [0, 1), 53 bits
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double gamma(double shape);  // Marsaglia-Tsang, unit scale
  double beta(double a, double b);
  std::size_t below(std::size_t n);  // uniform integer in [0, n)

  // Random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);
  // k distinct indices from 0..n-1, sorted ascending.
  std::vector<std::size_t> sample(std::size_t n, std::size_t k);

  const Key& key() const { return key_; }

 private:
  Key key_;
  std::uint64_t counter_ = 0;
  std::uint32_t spare_ = 0;
  bool has_spare_ = false;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace coml
