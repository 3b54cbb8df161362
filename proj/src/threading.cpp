#include "convlstm/threading.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace convlstm {

namespace {

int env_threads() {
  const char* raw = std::getenv("CONVLSTM_THREADS");
  if (raw == nullptr || *raw == '\0') {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
  }
  char* end = nullptr;
  long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 0) {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
  }
  if (v == 0) return 1;  // 0 = serial
  return static_cast<int>(v);
}

int g_override = 0;

}  // namespace

int max_threads() {
  if (g_override > 0) return g_override;
  static const int from_env = env_threads();
  return from_env;
}

bool parallel_enabled() {
#ifdef _OPENMP
  return max_threads() > 1;
#else
  return false;
#endif
}

void set_max_threads(int n) { g_override = n; }

}  // namespace convlstm
