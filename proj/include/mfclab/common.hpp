#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace mfclab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// stable across platforms and runs (FNV-1a then a mixing round)
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view key) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return splitmix64(master ^ splitmix64(h));
}

int thread_count();

// f(i) for i in [0, n); results must be written by index for determinism
template <class F>
void parallel_for(std::size_t n, F&& f) {
    int nt = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    {
        std::vector<std::jthread> pool;
        pool.reserve(nt);
        for (int t = 0; t < nt; ++t)
            pool.emplace_back([&] {
                try {
                    for (std::size_t i = next++; i < n; i = next++) f(i);
                } catch (...) {
                    std::lock_guard lk(mu);
                    if (!err) err = std::current_exception();
                    next = n;
                }
            });
    }
    if (err) std::rethrow_exception(err);
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace mfclab
