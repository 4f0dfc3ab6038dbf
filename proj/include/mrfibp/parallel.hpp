#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mrfibp {

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Work items must
/// not share mutable state; the first exception thrown is rethrown here.
template <typename Fn>
void for_each_index(std::size_t count, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(threads, count); ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (auto i = next++; i < count; i = next++) fn(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                    next = count;
                }
            });
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace mrfibp
