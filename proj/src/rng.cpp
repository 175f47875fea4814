#include "fedsim/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace fedsim {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kChildSalt = 0xbf58476d1ce4e5b9ULL;

// splitmix64 finalizer; bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed)), ctr_(0) {}

RngStream RngStream::child(std::uint64_t label) const {
  return RngStream(mix64(key_ ^ mix64(label ^ kChildSalt)), 0);
}

std::uint64_t RngStream::next_u64() {
  ctr_ += kGolden;
  return mix64(key_ ^ ctr_);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_double_pos() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
  const double u1 = next_double_pos();
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("RngStream::next_below: n must be positive");
  }
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

}  // namespace fedsim
