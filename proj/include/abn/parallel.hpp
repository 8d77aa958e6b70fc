#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace abn {

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work is
/// claimed through a shared counter; results must be written to per-index
/// slots so the outcome does not depend on scheduling. If any call throws, the
/// exception from the lowest failing index is rethrown.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
    threads = std::max(1u, threads);
    if (threads == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    std::size_t error_index = count;

    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (i < error_index) {
                    error_index = i;
                    error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    const auto n_workers = std::min<std::size_t>(threads, count);
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    pool.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace abn
