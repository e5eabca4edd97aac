#pragma once

#include <cstddef>
#include <functional>

namespace restv2 {

/// Worker count: EMSA2_THREADS when set and positive, otherwise the
/// hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous static chunks,
/// each index is handled by exactly one worker, so results do not depend on
/// the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace restv2
