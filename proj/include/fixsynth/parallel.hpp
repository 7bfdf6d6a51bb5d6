#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fixsynth {

/// Process-wide worker count used by parallel_for when none is given (default 1).
std::size_t default_workers() noexcept;
void set_default_workers(std::size_t workers) noexcept;

/// Runs body(i) for i in [0, n) over contiguous static chunks. Results must be written
/// to per-index slots so the outcome does not depend on scheduling. The exception
/// from the lowest failing chunk is rethrown.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t workers = 0) {
    if (workers == 0) workers = default_workers();
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
            try {
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace fixsynth
