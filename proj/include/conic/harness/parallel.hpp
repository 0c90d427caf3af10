#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace conic {

inline unsigned& pool_size_setting()
{
    static unsigned n = 0;
    return n;
}

// Pool size: CONIC_DISPERSION_THREADS wins over the configured value, which wins over
// the hardware concurrency.
inline unsigned worker_count()
{
    if (const char* env = std::getenv("CONIC_DISPERSION_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    if (pool_size_setting() > 0) return pool_size_setting();
    return std::max(1u, std::thread::hardware_concurrency());
}

inline void set_pool_size(unsigned n) { pool_size_setting() = n; }

// Runs body(i) for i in [0, n). Each index writes only its own slot, so results are
// independent of scheduling.
template <class F>
void parallel_for(std::size_t n, F&& body)
{
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto run = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> ts;
    for (unsigned w = 1; w < workers; ++w) ts.emplace_back(run);
    run();
    for (auto& t : ts) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace conic
