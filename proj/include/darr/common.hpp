#pragma once

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace darr {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using u32 = std::uint32_t;
using u16 = std::uint16_t;
using u8 = std::uint8_t;

// Error taxonomy. Callers catch by category; the CLI maps all of them to exit 1.
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct SizeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class E>
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw E(msg);
}

// FNV-1a over raw bytes. Used for parameter checksums (bitwise identity checks).
inline u64 fnv1a(const void* data, std::size_t n, u64 h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <class T>
inline u64 fnv1a_span(const std::vector<T>& v, u64 h = 0xcbf29ce484222325ull) {
    return fnv1a(v.data(), v.size() * sizeof(T), h);
}

inline bool deterministic_mode() {
    const char* e = std::getenv("DARR_DETERMINISTIC");
    return e && e[0] != '\0' && e[0] != '0';
}

inline int default_workers() {
    if (deterministic_mode()) return 1;
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n) on `workers` threads. Results must be written to
// preallocated per-index slots; reductions happen in index order afterwards,
// so the outcome does not depend on the worker count.
template <class Fn>
inline void parallel_for(i64 n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (i64 i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(workers));
    const int nw = static_cast<int>(std::min<i64>(workers, n));
    for (int w = 0; w < nw; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (i64 i = w; i < n; i += nw) fn(i);
            } catch (...) {
                errs[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace darr
