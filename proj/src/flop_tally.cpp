#include "restv2/flop_tally.hpp"

namespace restv2 {

namespace {
thread_local FlopTally* active_tally = nullptr;
}

void FlopTally::add(FlopCategory category, std::uint64_t count) {
  switch (category) {
    case FlopCategory::conv: conv += count; break;
    case FlopCategory::linear: linear += count; break;
    case FlopCategory::matmul: matmul += count; break;
    case FlopCategory::other: other += count; break;
  }
}

ScopedFlopTally::ScopedFlopTally(FlopTally& tally) : previous_(active_tally) {
  active_tally = &tally;
}

ScopedFlopTally::~ScopedFlopTally() {
  active_tally = previous_;
}

void tally_flops(FlopCategory category, std::uint64_t count) {
  if (active_tally) active_tally->add(category, count);
}

}  // namespace restv2
