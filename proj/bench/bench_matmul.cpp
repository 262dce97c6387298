// Compares the OpenMP matmul kernel against the serial reference and checks
// that both produce bit-identical output.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "unlab/tensor.hpp"

using namespace unlab;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    // warm-up
    fn();
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp disabled (serial build)\n");
#endif
    std::printf("%6s %12s %12s %8s %s\n", "n", "serial(ms)", "openmp(ms)", "speedup",
                "bit-identical");

    Rng rng(1);
    for (std::size_t n : {64, 128, 256, 512}) {
        Tensor a = Tensor::gaussian({n, n}, rng, 1.0);
        Tensor b = Tensor::gaussian({n, n}, rng, 1.0);
        Tensor out_s = Tensor::zeros({n, n});
        Tensor out_p = Tensor::zeros({n, n});

        int reps = n <= 128 ? 20 : 5;
        double ts = time_ms([&] { matmul_serial(a, b, out_s); }, reps);
        double tp = time_ms([&] { matmul(a, b, out_p); }, reps);
        bool identical = out_s.data == out_p.data;
        std::printf("%6zu %12.3f %12.3f %7.2fx %s\n", n, ts, tp, ts / tp,
                    identical ? "yes" : "NO");
        if (!identical) return 1;
    }
    return 0;
}
