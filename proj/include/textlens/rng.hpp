#pragma once

// Counter-based random streams.
//
// Every random draw in the pipeline is a pure function of
// (seed, stream name, stream indices, counter). A stream is addressed by a
// name such as "students" or "train/partition" plus up to a few integer
// indices (epoch, student id, ...). Two stages never share a stream, so
// reordering or parallelizing a stage cannot change another stage's draws.
//
// Streams used by the pipeline:
//   bank/layout        (skill)                    difficulty layout and template indices
//   bank/cue           (skill, subskill, level)   which level's phrasing a text uses; seeded by template index
//   bank/text          (skill, subskill, level)   term and number choices; seeded by template index
//   students           (student)                  proficiency draws, one normal per skill
//   responses          (student, item)            one uniform per response
//   split/students                                student shuffle
//   split/items        (skill, level)             per-stratum shuffle
//   shuffle/text       (skill)                    difficulty-text ablation permutation
//   model/init                                    weight initialization
//   predict/samples    (sample, batch row)        latent draws when eval_samples > 0
//   train/order        (epoch)                    minibatch order
//   train/partition    (epoch, student)           input/query split
//   train/noise        (epoch, batch)             reparameterization noise
//   train/validation   (student)                  fixed validation partition
//   train/validation-noise (batch)                fixed validation noise
//   grid/probe         (rep, student)             validation AUC probes
//   eval/query         (rep, student, pool)       query item draw
//   eval/input         (cond, rep, student)       input item draws
//   eval/bootstrap     (rep)                      test-student resampling

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace textlens {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s,
                                       std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Satisfies UniformRandomBitGenerator. Output n is splitmix64(key + n * golden),
/// so any position of the stream can be computed directly.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static CounterRng stream(std::uint64_t seed, std::string_view name,
                           std::initializer_list<std::uint64_t> indices = {}) {
    std::uint64_t k = splitmix64(seed ^ fnv1a64(name));
    for (std::uint64_t i : indices) k = splitmix64(k ^ splitmix64(i + 0x632BE59BD9B4E019ULL));
    return CounterRng(k);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ULL); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Standard normal via Box-Muller, consuming exactly two draws per call.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates driven by CounterRng::below, so results do not depend on the
/// standard library's shuffle implementation.
template <typename T>
void shuffle_in_place(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    using std::swap;
    swap(v[i - 1], v[j]);
  }
}

/// `k` distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, CounterRng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k && i < n; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(std::min(k, n));
  return idx;
}

}  // namespace textlens
