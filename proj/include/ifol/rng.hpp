#pragma once

#include <cstdint>
#include <string_view>

namespace ifol {

/// Counter-based generator (splitmix64). Self-contained so that streams are
/// reproducible across standard libraries and platforms; std:: distributions
/// are implementation-defined and never used for anything persisted.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one value per call, pair cached.
  double gaussian();

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) {
    state_ = s;
    have_spare_ = false;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over a name, mixed with the root seed. All randomness in a run
/// flows from one config seed through named streams ("init", "shuffle",
/// "sampling", ...) so components can be re-run independently.
std::uint64_t stream_seed(std::uint64_t root, std::string_view name);

inline Rng make_stream(std::uint64_t root, std::string_view name) {
  return Rng(stream_seed(root, name));
}

}  // namespace ifol
