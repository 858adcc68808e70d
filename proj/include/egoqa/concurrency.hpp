#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace egoqa {

/// Runs fn(i) for i in [0, n) on at most `limit` threads. Each index runs exactly once.
/// Results must be written by index so output order never depends on completion order.
/// The first exception (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t limit, Fn&& fn)
{
    if (n == 0)
        return;
    limit = std::clamp<std::size_t>(limit, 1, n);
    if (limit == 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }

    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> workers;
        workers.reserve(limit);
        for (std::size_t w = 0; w < limit; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto const& e : errors) {
        if (e)
            std::rethrow_exception(e);
    }
}

} // namespace egoqa
