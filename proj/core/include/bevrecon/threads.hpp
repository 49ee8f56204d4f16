#pragma once

#include <functional>

namespace bevrecon {

/// Worker count for scene-parallel loops. Reads BEVRECON_THREADS when set,
/// otherwise uses the hardware concurrency.
int configured_threads();

/// Runs fn(i) for i in [0, n), chunked across configured_threads() workers.
/// Falls back to a plain loop when a single worker is configured.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace bevrecon
