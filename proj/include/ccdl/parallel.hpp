#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace ccdl {

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

// Runs fn(i) for i in [begin, end) split into contiguous chunks, one per
// worker. Each index is visited exactly once and join() acts as the barrier,
// so results are independent of the thread count as long as iterations only
// write disjoint state. Reductions stay with the caller.
template <class Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t threads, Fn&& fn) {
    const std::size_t count = end > begin ? end - begin : 0;
    if (count == 0) return;
    threads = resolve_threads(threads);
    if (threads > count) threads = count;
    if (threads <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    const std::size_t chunk = (count + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = begin + t * chunk;
        if (lo >= end) break;
        const std::size_t hi = lo + chunk < end ? lo + chunk : end;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace ccdl
