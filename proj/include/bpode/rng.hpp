#pragma once

#include <cstdint>
#include <vector>

namespace bpode {

// Counter-based generator: draw k of a stream is a pure function of
// (seed, stream id, k), so split streams never depend on scheduling order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  std::vector<double> normals(std::size_t n);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  /// Independent child stream; the parent advances by one draw.
  RngStream split();
  /// Child stream keyed by an explicit task id; does not advance the parent.
  RngStream substream(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bpode
