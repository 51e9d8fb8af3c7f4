#pragma once

#include <cstdint>

namespace csou {

// Counter-based generator: the i-th draw of a stream with key k is
// splitmix64_finalize(k + (i + 1) * 0x9E3779B97F4A7C15). It is seekable
// and splittable, and the stream is fully defined by (key, counter), so
// any implementation reproduces it bit for bit.
//
//   uniform()     = (next_u64() >> 11) * 2^-53                  in [0, 1)
//   uniform_int n = rejection on next_u64() below floor(2^64/n)*n, then mod n
//   normal()      = Box-Muller on u1 = 1 - uniform(), u2 = uniform():
//                   sqrt(-2 ln u1) * cos(2 pi u2)   (one pair per draw)
//   split(s)      = key' = mix(key ^ mix(s * gamma + 0xD1B54A32D192ED03))
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi);
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  CounterRng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// FNV-1a, used to turn split names into stream ids.
std::uint64_t stream_id(const char* name);

}  // namespace csou
