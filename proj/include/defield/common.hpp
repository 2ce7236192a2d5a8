#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace defield {

template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Mat4 = Eigen::Matrix<S, 4, 4>;
template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Bad command line usage. Maps to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid input data, failed validation or I/O. Maps to exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during optimization. Maps to exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace log {

inline std::atomic<bool>& quiet_flag() {
    static std::atomic<bool> quiet{false};
    return quiet;
}

inline void info(const std::string& msg) {
    if (!quiet_flag().load()) std::cerr << "[defield] " << msg << '\n';
}

inline void warn(const std::string& msg) { std::cerr << "[defield] warning: " << msg << '\n'; }

/// Emits `msg` the first time `flag` is seen unset.
inline void warn_once(std::atomic<bool>& flag, const std::string& msg) {
    if (!flag.exchange(true)) warn(msg);
}

}  // namespace log

template <typename S>
inline S softplus(S x) {
    // log(1 + e^x) without overflow for large x.
    return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename S>
inline S sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

/// splitmix64 finalizer, used to derive independent RNG seeds from tuples.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

template <typename... Ts>
inline std::uint64_t seed_from(std::uint64_t seed, Ts... parts) {
    std::uint64_t h = mix64(seed);
    ((h = mix64(h ^ static_cast<std::uint64_t>(parts))), ...);
    return h;
}

/// Worker count: explicit value if positive, else DEFIELD_THREADS, else hardware concurrency.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("DEFIELD_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(task, worker) for task in [0, n_tasks). Tasks are assigned statically
/// (task % workers), so each worker sees a fixed task sequence for a given worker count.
template <typename Fn>
void parallel_for(int n_tasks, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, n_tasks));
    if (workers == 1) {
        for (int i = 0; i < n_tasks; ++i) fn(i, 0);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    {
        std::vector<std::jthread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (int i = w; i < n_tasks; i += workers) fn(i, w);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace defield
