#include "coml/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "coml/errors.hpp"

namespace coml {

namespace {

constexpr std::array<int, 8> kRotations = {13, 15, 26, 6, 17, 29, 16, 24};

inline std::uint32_t rotl(std::uint32_t x, int r) {
  return (x << r) | (x >> (32 - r));
}

}  // namespace

std::array<std::uint32_t, 2> threefry2x32(std::array<std::uint32_t, 2> key,
                                          std::array<std::uint32_t, 2> counter) {
  const std::array<std::uint32_t, 3> ks = {key[0], key[1],
                                           0x1BD11BDAu ^ key[0] ^ key[1]};
  std::uint32_t x0 = counter[0] + ks[0];
  std::uint32_t x1 = counter[1] + ks[1];
  for (int r = 0; r < 20; ++r) {
    x0 += x1;
    x1 = rotl(x1, kRotations[r % 8]);
    x1 ^= x0;
    if (r % 4 == 3) {
      const std::uint32_t i = static_cast<std::uint32_t>(r / 4 + 1);
      x0 += ks[i % 3];
      x1 += ks[(i + 1) % 3] + i;
    }
  }
  return {x0, x1};
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Key Key::from_seed(std::uint64_t seed) {
  return Key({static_cast<std::uint32_t>(seed),
              static_cast<std::uint32_t>(seed >> 32)},
             "seed=" + std::to_string(seed));
}

Key Key::split(std::string_view label) const {
  const std::uint64_t h = fnv1a64(label);
  // Two blocks so the child key uses all 64 bits of the label hash.
  const auto a = threefry2x32(key_, {static_cast<std::uint32_t>(h),
                                     static_cast<std::uint32_t>(h >> 32)});
  const auto b = threefry2x32(key_, {a[1], a[0] ^ 0x9E3779B9u});
  std::string p = path_;
  p += '/';
  p += label;
  return Key({a[0] ^ b[1], b[0]}, std::move(p));
}

std::array<std::uint32_t, 2> Key::block(std::uint64_t counter) const {
  return threefry2x32(key_, {static_cast<std::uint32_t>(counter),
                             static_cast<std::uint32_t>(counter >> 32)});
}

std::uint32_t Stream::next_u32() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const auto b = key_.block(counter_++);
  spare_ = b[1];
  has_spare_ = true;
  return b[0];
}

std::uint64_t Stream::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double Stream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Stream::gamma(double shape) {
  if (!(shape > 0.0)) throw Error("gamma: shape must be positive");
  if (shape < 1.0) {
    const double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Stream::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  return x / (x + y);
}

std::size_t Stream::below(std::size_t n) {
  if (n == 0) throw Error("below: empty range");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r < limit) return static_cast<std::size_t>(r % n);
  }
}

std::vector<std::size_t> Stream::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
  return p;
}

std::vector<std::size_t> Stream::sample(std::size_t n, std::size_t k) {
  if (k > n) throw Error("sample: k exceeds population");
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(p[i], p[i + below(n - i)]);
  p.resize(k);
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace coml
