#pragma once

#include <functional>

namespace sobelkey {

// Resolved worker count. Defaults to hardware_concurrency, can be overridden
// by set_thread_count() or the SOBELKEY_THREADS environment variable.
int thread_count();
void set_thread_count(int n);

// Runs fn(0..n-1) across thread_count() workers. Callers own determinism:
// workers must only write to per-index slots; any reduction happens after.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace sobelkey
