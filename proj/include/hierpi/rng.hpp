#pragma once

#include <cstdint>
#include <limits>

namespace hierpi {

/// SplitMix64 finalizer: a bijective 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Key of an independent stream, derived from a base seed and a stream index.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632BE59BD9B4E019ull));
}

/// Counter-based generator: draw n is mix64(key + n * gamma). Streams with
/// different keys are independent, so a sample's noise depends only on
/// (seed, sample index) and never on which worker produced it.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  explicit constexpr CounterEngine(std::uint64_t key) noexcept : counter_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept { return mix64(counter_ += kGamma); }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  std::uint64_t counter_;
};

}  // namespace hierpi
