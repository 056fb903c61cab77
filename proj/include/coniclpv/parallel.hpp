#pragma once

// OpenMP-backed loop helpers. Every parallel kernel in the library writes to
// preallocated per-index slots and reduces serially afterwards, so results
// are bitwise identical to the serial reference regardless of thread count.
// Setting CONICLPV_SERIAL=1 in the environment forces the serial path.

#include <cstddef>
#include <cstdlib>

#ifdef CONICLPV_HAVE_OPENMP
#include <omp.h>
#endif

namespace coniclpv::par {

inline bool serial_forced() {
    const char* v = std::getenv("CONICLPV_SERIAL");
    return v != nullptr && v[0] == '1';
}

inline bool parallel_enabled() {
#ifdef CONICLPV_HAVE_OPENMP
    return !serial_forced();
#else
    return false;
#endif
}

inline int max_threads() {
#ifdef CONICLPV_HAVE_OPENMP
    return parallel_enabled() ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

/// Serial reference loop, kept as the comparison baseline for tests and the
/// benchmark target.
template <class F>
void for_index_serial(std::ptrdiff_t n, F&& body) {
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
}

/// Parallel loop over [0, n). The body must only touch state owned by its
/// index.
template <class F>
void for_index(std::ptrdiff_t n, F&& body) {
#ifdef CONICLPV_HAVE_OPENMP
    if (parallel_enabled() && n > 1) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    for_index_serial(n, body);
}

}  // namespace coniclpv::par
