// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace promptevo
{

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The lowest-index exception is
/// rethrown after all work finishes, so failures are reported deterministically.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn)
{
    if (workers <= 1 || n <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next {0};
    auto work = [&] {
        for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        {
            try
            {
                fn(i);
            }
            catch (...)
            {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> threads;
        for (std::size_t t = 0; t < std::min(workers, n); ++t)
            threads.emplace_back(work);
    }
    for (auto& e: errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace promptevo
