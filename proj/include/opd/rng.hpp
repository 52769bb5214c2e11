#ifndef OPD_RNG_HPP_
#define OPD_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace opd {

// Seedable random stream. Draws are converted to doubles by hand so that
// sequences do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n).
  int UniformInt(int n) {
    const int k = static_cast<int>(Uniform() * n);
    return k < n ? k : n - 1;
  }

  // Independent substream identified by a path of integers, e.g.
  // Derive(seed, {stream_id, iteration, prompt, member}).
  static Rng Derive(std::uint64_t seed,
                    std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = SplitMix(seed ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t p : path) h = SplitMix(h ^ SplitMix(p + 0x9e3779b97f4a7c15ULL));
    return Rng(h);
  }

  static std::uint64_t SplitMix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

// Stream identifiers used with Rng::Derive.
enum class Stream : std::uint64_t {
  kInit = 1,
  kRollout = 2,
  kEval = 3,
  kTeacher = 4,
  kDemo = 5,
  kPrompt = 6,
};

inline std::uint64_t StreamId(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace opd

#endif  // OPD_RNG_HPP_
