#pragma once

#include <cstddef>
#include <functional>

namespace ksteer {

/// Runs fn(0..n-1) on up to `jobs` threads (0 = hardware concurrency).
/// Indices are independent; the first exception is rethrown after all
/// workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ksteer
