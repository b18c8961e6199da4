#pragma once

#include <cstdint>
#include <random>

namespace mavfl {

using Rng = std::mt19937_64;

/// Independent random streams. Every consumer draws from its own stream so
/// that, for example, the traffic trajectory does not depend on which
/// selection policy is running.
enum class Stream : std::uint32_t {
  mobility = 1,
  task_data = 2,
  training = 3,
  selection = 4,
  fading = 5,
  probes = 6,
  monte_carlo = 7,
};

/// Derives a generator from (master seed, stream, a, b). Typical use is
/// a = vehicle id, b = round index.
inline Rng make_stream(std::uint64_t master_seed, Stream stream, std::uint64_t a = 0,
                       std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

}  // namespace mavfl
