#pragma once

#include <functional>

namespace lofi {

int default_threads();

// Calls fn(index, worker) for index in [0, n). Worker w handles indices
// w, w + threads, ... so the assignment depends only on (n, threads). The
// first exception thrown by any worker is rethrown.
void parallel_for(int n, int threads, const std::function<void(int, int)>& fn);

}  // namespace lofi
