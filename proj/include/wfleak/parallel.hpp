#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace wfleak {

// Runs fn(i) for i in [0, n). Work items must be independent and write only
// to their own output slot, which keeps results identical for any thread
// count. The first exception thrown by a worker is rethrown to the caller.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (n == 0)
        return;
    unsigned hw = std::thread::hardware_concurrency();
    if (threads == 0)
        threads = hw ? hw : 1;
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));

    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }

    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            // Static striding: worker w handles i = w, w+threads, ...
            for (std::size_t i = w; i < n; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error)
                        first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool)
        th.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

} // namespace wfleak
