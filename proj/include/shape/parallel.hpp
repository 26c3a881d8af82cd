#pragma once

#include <cstdlib>
#include <functional>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace shape {

enum class ExecMode { Serial, OpenMP };

// Honors SHAPE_EXEC=serial|openmp; defaults to OpenMP when compiled in.
inline ExecMode default_exec_mode() {
  if (const char* env = std::getenv("SHAPE_EXEC")) {
    if (std::string(env) == "serial") return ExecMode::Serial;
    if (std::string(env) == "openmp") return ExecMode::OpenMP;
  }
#ifdef _OPENMP
  return ExecMode::OpenMP;
#else
  return ExecMode::Serial;
#endif
}

// Runs body(i) for i in [0, n). Iterations must be independent: each owns
// its rng/budget/trace and writes only to its own slot. The serial path is
// the reference; results must be bit-identical between modes.
template <typename Body>
void parallel_for(int64_t n, ExecMode mode, const Body& body) {
#ifdef _OPENMP
  if (mode == ExecMode::OpenMP) {
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#else
  (void)mode;
#endif
  for (int64_t i = 0; i < n; ++i) body(i);
}

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace shape
