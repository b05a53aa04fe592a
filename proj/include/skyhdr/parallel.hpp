#pragma once

#include <cstddef>
#include <functional>

namespace skyhdr {

/// Global worker cap (the CLI's --threads). 0 means hardware concurrency.
void set_thread_limit(unsigned n);
unsigned thread_limit();

/// Runs fn(i) for i in [begin, end) over contiguous chunks. Iterations must be
/// independent; results are identical for any thread count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

}  // namespace skyhdr
