#pragma once

#include <cstddef>
#include <functional>

namespace avatarforge {

/// Worker count used by parallel_for. Defaults to the hardware concurrency;
/// the AVATARFORGE_THREADS environment variable overrides it.
int worker_count();

/// Runs body(i) for i in [0, n). Iterations must not share mutable state;
/// results are therefore independent of the worker count. The first
/// exception thrown by any iteration is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace avatarforge
