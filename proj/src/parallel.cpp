#include "projnet/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace projnet {

namespace {

std::size_t initial_thread_count() {
    if (const char* env = std::getenv("PROJNET_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::size_t& thread_count_ref() {
    static std::size_t n = initial_thread_count();
    return n;
}

}  // namespace

std::size_t thread_count() { return thread_count_ref(); }
void set_thread_count(std::size_t n) { thread_count_ref() = std::max<std::size_t>(1, n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        if (n > 0) fn(0, n);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(0, std::min(n, chunk));
    for (auto& t : threads) t.join();
}

}  // namespace projnet
