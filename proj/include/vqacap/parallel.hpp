#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vqacap {

// Applies fn to every item on `workers` threads and returns results in input
// order, so parallelism never changes output bytes. The first exception wins
// and is rethrown after all workers stop (remaining items are abandoned).
template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& items, std::size_t workers, Fn fn)
    -> std::vector<decltype(fn(items.front()))> {
    using Out = decltype(fn(items.front()));
    std::vector<Out> results(items.size());
    if (items.empty()) return results;
    if (workers == 0) workers = 1;
    if (workers > items.size()) workers = items.size();

    if (workers == 1) {
        for (std::size_t i = 0; i < items.size(); ++i) results[i] = fn(items[i]);
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto run = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= items.size() || failed.load()) return;
            try {
                results[i] = fn(items[i]);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
    return results;
}

}  // namespace vqacap
