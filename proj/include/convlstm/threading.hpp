#pragma once

namespace convlstm {

// Worker-count cap, read once from CONVLSTM_THREADS (0 = serial). Unset or
// invalid values fall back to the OpenMP default. All parallel kernels are
// gather-style, so results are bitwise identical for any thread count.
int max_threads();

// True when parallel kernel variants should run (cap != 1).
bool parallel_enabled();

// Override for tests and the benchmark; 0 restores the environment value.
void set_max_threads(int n);

}  // namespace convlstm
