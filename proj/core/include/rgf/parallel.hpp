#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rgf {

/// Number of threads to actually use for `workers` (0 = hardware concurrency).
inline int resolve_workers(int workers) {
    if (workers > 0) return workers;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(task_index, worker_index) for every task in [0, n). Tasks are
/// claimed dynamically, so the assignment of tasks to workers is not
/// deterministic; callers must write results into per-task slots and perform
/// any reduction in task order afterwards. That discipline keeps every
/// reduction in the project byte-stable regardless of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (n == 0) return;
    const int nthreads = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(resolve_workers(workers)), n));
    if (nthreads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int w = 0; w < nthreads; ++w) {
        pool.emplace_back([&, w]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= n || failed.load(std::memory_order_relaxed)) return;
                try {
                    fn(i, w);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true, std::memory_order_relaxed);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rgf
