#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace utube {

inline unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs body(i) for i in [0, n) on `workers` threads. Indices are handed out one at a time
/// from a shared counter, so busy threads never wait on slow ones. Each index is processed
/// exactly once; results written by index are therefore independent of the worker count.
/// The first exception thrown by any body is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
    if (n == 0) return;
    workers = std::max(1u, workers);
    if (workers == 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (;;) {
            if (failed.load(std::memory_order_relaxed)) return;
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    const auto count = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::jthread> pool;
    pool.reserve(count - 1);
    for (unsigned w = 1; w < count; ++w) pool.emplace_back(run);
    run();
    pool.clear();
    if (error) std::rethrow_exception(error);
}

/// Ordered parallel map: out[i] = fn(in[i]).
template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& in, unsigned workers, Fn&& fn) {
    using Out = decltype(fn(in.front()));
    std::vector<Out> out(in.size());
    parallel_for(in.size(), workers, [&](std::size_t i) { out[i] = fn(in[i]); });
    return out;
}

}  // namespace utube
