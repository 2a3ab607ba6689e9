#pragma once

#include <cstdint>
#include <algorithm>
#include <cmath>
#include <random>

namespace crowdsel {

// Purpose tags for seed streams. Two streams with different tags never share
// state, so e.g. re-seeding votes leaves features untouched.
enum class Stream : std::uint32_t {
  kSplit = 1,
  kFeatures,
  kLabels,
  kVotes,
  kSubsample,
  kRestart,
  kFolds,
  kBayes,
  kTheory,
};

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller, so draws do not depend on the standard library's
// normal_distribution implementation.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates with an explicit uniform index draw (portable across
// standard libraries, unlike std::shuffle).
template <class It>
void portable_shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(i));
    std::iter_swap(first + (i - 1), first + static_cast<std::ptrdiff_t>(j < i ? j : i - 1));
  }
}

}  // namespace crowdsel
