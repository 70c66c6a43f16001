#pragma once

// Deterministic fork/join map: task(i) for i in [0, n) on a fixed number of
// worker threads.  Results land in a vector indexed by i, so any fold over
// them is independent of the worker count and of scheduling order -- the
// property the byte-reproducibility contract of the artifact rests on.

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "randpot/errors.hpp"

namespace randpot {

template <typename R>
std::vector<R> parallel_map(int workers, std::size_t n,
                            const std::function<R(std::size_t)>& task) {
    if (workers < 1) throw ConfigError("parallel_map: workers must be >= 1");
    std::vector<R> results(n);
    if (n == 0) return results;
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) results[i] = task(i);
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto body = [&](int w) {
        try {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n || abort.load()) return;
                results[i] = task(i);
            }
        } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
            abort.store(true);
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body, w);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

}  // namespace randpot
