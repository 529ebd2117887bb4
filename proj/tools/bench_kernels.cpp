// Benchmarks the OpenMP kernels against their serial reference builds and
// checks that both produce bit-identical outputs, which the tape relies on
// for reproducibility at any thread count.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "contproto/kernels.hpp"
#include "contproto/rng.hpp"
#include "contproto/tensor.hpp"

using namespace contproto;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
    return t;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double time_ms(std::size_t reps, const std::function<void()>& fn) {
    fn(); // warm-up, also primes caches
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < reps; ++i) fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() /
           static_cast<double>(reps);
}

struct Row {
    std::string name;
    double serial_ms = 0.0;
    double parallel_ms = 0.0;
    bool identical = false;
};

void print_row(const Row& r) {
    std::printf("  %-22s %10.3f %12.3f %9.2fx   %s\n", r.name.c_str(), r.serial_ms,
                r.parallel_ms, r.serial_ms / r.parallel_ms,
                r.identical ? "identical" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    std::size_t n = 192;     // matmul dimension
    std::size_t rows = 4096; // rowwise-kernel batch
    std::size_t cols = 256;
    std::size_t reps = 5;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        auto next = [&](const char* flag) {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "%s needs a value\n", flag);
                std::exit(2);
            }
            return static_cast<std::size_t>(std::stoull(argv[++i]));
        };
        if (arg == "--n") n = next("--n");
        else if (arg == "--rows") rows = next("--rows");
        else if (arg == "--cols") cols = next("--cols");
        else if (arg == "--reps") reps = next("--reps");
        else {
            std::fprintf(stderr,
                         "usage: bench_kernels [--n N] [--rows R] [--cols C] [--reps K]\n");
            return 2;
        }
    }

#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP; both columns run serial code\n");
#endif
    std::printf("matmul %zux%zu, rowwise kernels %zux%zu, %zu reps each\n\n", n, n, rows,
                cols, reps);
    std::printf("  %-22s %10s %12s %10s\n", "kernel", "serial ms", "parallel ms",
                "speedup");

    Rng rng(42);
    const Tensor a = random_tensor(n, n, rng);
    const Tensor b = random_tensor(n, n, rng);
    const Tensor x = random_tensor(rows, cols, rng);
    const Tensor y = random_tensor(rows, cols, rng);

    std::vector<Row> table;
    auto bench = [&](const std::string& name, const std::function<Tensor()>& serial,
                     const std::function<Tensor()>& parallel) {
        Row r;
        r.name = name;
        Tensor ref, out;
        r.serial_ms = time_ms(reps, [&] { ref = serial(); });
        r.parallel_ms = time_ms(reps, [&] { out = parallel(); });
        r.identical = bit_identical(ref, out);
        print_row(r);
        table.push_back(r);
    };

    bench("matmul", [&] { return kernels::serial::matmul(a, b); },
          [&] { return kernels::matmul(a, b); });
    bench("matmul transpose_rhs", [&] { return kernels::serial::matmul(a, b, false, true); },
          [&] { return kernels::matmul(a, b, false, true); });
    bench("softmax_rows", [&] { return kernels::serial::softmax_rows(x); },
          [&] { return kernels::softmax_rows(x); });
    bench("l2_normalize_rows", [&] { return kernels::serial::l2_normalize_rows(x); },
          [&] { return kernels::l2_normalize_rows(x); });
    bench("elementwise_exp", [&] { return kernels::serial::elementwise_exp(x); },
          [&] { return kernels::elementwise_exp(x); });

    {
        Row r;
        r.name = "dot";
        double ref = 0.0, out = 0.0;
        r.serial_ms = time_ms(reps, [&] { ref = kernels::serial::dot(x, y); });
        r.parallel_ms = time_ms(reps, [&] { out = kernels::dot(x, y); });
        r.identical = std::memcmp(&ref, &out, sizeof(double)) == 0;
        print_row(r);
        table.push_back(r);
    }

    bool all_identical = true;
    for (const Row& r : table) all_identical = all_identical && r.identical;
    std::printf("\n%s\n", all_identical ? "all kernels bit-identical"
                                        : "kernel outputs diverged");
    return all_identical ? 0 : 1;
}
