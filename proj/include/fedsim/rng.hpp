#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace fedsim {

// Deterministic counter-based random stream. A stream is identified by a
// 64-bit key derived from the root seed and the path of child labels taken
// from it; draws are pure integer mixing, so equal (seed, path) produces the
// same sequence on every platform and in every thread.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Derives a statistically independent stream. The child's identity depends
  // only on this stream's identity and the label, never on how many values
  // have already been drawn here.
  [[nodiscard]] RngStream child(std::uint64_t label) const;

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double next_double();

  // Uniform in (0, 1]; safe as a log() argument.
  double next_double_pos();

  // Standard normal via Box-Muller (two uniforms per draw, none cached).
  double next_gaussian();

  // Uniform integer in {0, ..., n-1}; n must be positive.
  std::uint64_t next_below(std::uint64_t n);

  // Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  RngStream(std::uint64_t key, std::uint64_t ctr) : key_(key), ctr_(ctr) {}

  std::uint64_t key_ = 0;
  std::uint64_t ctr_ = 0;
};

}  // namespace fedsim
