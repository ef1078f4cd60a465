#pragma once

#include <cstddef>
#include <functional>

namespace langfield {

// Worker count from LANGFIELD_THREADS (0 or unset = all hardware threads).
std::size_t worker_count();

// Overrides the environment for the current process; 0 restores the default.
void set_worker_count(std::size_t n);

// Runs body(i) for i in [0, n) across workers with a static block partition.
// Callers must make body(i) independent of which worker executes it.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace langfield
