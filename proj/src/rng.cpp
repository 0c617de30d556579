#include "bpode/rng.hpp"

#include <cmath>
#include <numbers>

namespace bpode {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  // Two rounds of splitmix over (seed, stream, counter).
  const std::uint64_t key = mix64(seed_ ^ mix64(stream_ + 0x632be59bd9b4e019ULL));
  return mix64(key + mix64(counter_++));
}

double RngStream::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

std::vector<double> RngStream::normals(std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = normal();
  return out;
}

std::size_t RngStream::index(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

RngStream RngStream::split() {
  const std::uint64_t child = next_u64();
  return RngStream(seed_, mix64(stream_ ^ child));
}

RngStream RngStream::substream(std::uint64_t key) const {
  return RngStream(seed_, mix64(stream_ * 0x9e3779b97f4a7c15ULL + key + 1));
}

}  // namespace bpode
