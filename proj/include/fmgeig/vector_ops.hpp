#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fmgeig/errors.hpp"

namespace fmgeig {

using Vector = std::vector<double>;

inline void require_same_size(std::size_t a, std::size_t b, const char* where) {
    if (a != b)
        throw InvalidArgument(std::string(where) + ": size mismatch (" + std::to_string(a) +
                              " vs " + std::to_string(b) + ")");
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    require_same_size(x.size(), y.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double norm_inf(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

// y += a x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    require_same_size(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(double a, std::span<double> x) {
    for (double& v : x) v *= a;
}

inline Vector subtract(std::span<const double> x, std::span<const double> y) {
    require_same_size(x.size(), y.size(), "subtract");
    Vector r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
    return r;
}

/// Thread count for row-parallel kernels, from FMGEIG_NUM_THREADS (default 1).
inline unsigned kernel_threads() {
    static const unsigned n = [] {
        const char* env = std::getenv("FMGEIG_NUM_THREADS");
        if (!env) return 1u;
        long v = std::strtol(env, nullptr, 10);
        return v > 1 ? static_cast<unsigned>(v) : 1u;
    }();
    return n;
}

/// Runs body(begin, end) over [0, n) split in contiguous chunks. Each index is
/// visited by exactly one thread, so row-wise kernels stay bitwise deterministic.
template <class Body>
void parallel_rows(std::size_t n, Body&& body, std::size_t min_rows_per_thread = 16384) {
    unsigned threads = kernel_threads();
    if (threads <= 1 || n < 2 * min_rows_per_thread) {
        body(std::size_t{0}, n);
        return;
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n / min_rows_per_thread));
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        std::size_t b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& th : pool) th.join();
}

} // namespace fmgeig
