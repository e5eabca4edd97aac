#pragma once

#include <cstdint>

namespace restv2 {

enum class FlopCategory { conv, linear, matmul, other };

/// Arithmetic counts in multiply-accumulate units, bucketed by operator kind.
struct FlopTally {
  std::uint64_t conv = 0;
  std::uint64_t linear = 0;
  std::uint64_t matmul = 0;
  std::uint64_t other = 0;

  std::uint64_t total() const { return conv + linear + matmul + other; }
  void add(FlopCategory category, std::uint64_t count);
  bool operator==(const FlopTally&) const = default;
};

/// While alive, every tensor-core op executed on this thread adds its
/// arithmetic count to `tally`. Used to instrument real executions.
class ScopedFlopTally {
 public:
  explicit ScopedFlopTally(FlopTally& tally);
  ~ScopedFlopTally();
  ScopedFlopTally(const ScopedFlopTally&) = delete;
  ScopedFlopTally& operator=(const ScopedFlopTally&) = delete;

 private:
  FlopTally* previous_;
};

void tally_flops(FlopCategory category, std::uint64_t count);

}  // namespace restv2
