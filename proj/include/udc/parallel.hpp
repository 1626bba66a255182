#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace udc {

/// Worker count from UDC_THREADS; unset, 0 or invalid means one thread (deterministic mode).
inline std::size_t thread_count() {
    const char* env = std::getenv("UDC_THREADS");
    if (!env) return 1;
    try {
        const long v = std::stol(env);
        return v > 0 ? static_cast<std::size_t>(v) : 1;
    } catch (...) {
        return 1;
    }
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is processed by exactly
/// one worker, so results written per index do not depend on the thread count. The first
/// exception thrown by any task is rethrown.
template <class Fn>
void parallel_for(std::size_t n, Fn fn, std::size_t threads = thread_count()) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace udc
