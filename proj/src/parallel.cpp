#include "fixsynth/parallel.hpp"

#include <atomic>

namespace fixsynth {

namespace {
std::atomic<std::size_t> g_workers{1};
}

std::size_t default_workers() noexcept { return g_workers.load(); }

void set_default_workers(std::size_t workers) noexcept { g_workers.store(std::max<std::size_t>(workers, 1)); }

}  // namespace fixsynth
