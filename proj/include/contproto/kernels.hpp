#pragma once

#include "contproto/tensor.hpp"

namespace contproto::kernels {

// Dense kernels behind the tape ops. Every kernel comes in two builds: the
// serial reference below in kernels::serial, and the default entry points in
// this namespace which parallelize with OpenMP over independent output rows
// or elements. Each output element is produced by the same sequential
// arithmetic in both builds, so serial and parallel results are bit-identical
// for any thread count; tests and the bench tool compare them directly.

// C = op(A) * op(B), op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

// C += op(A) * op(B)
void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b, bool transpose_a = false,
                bool transpose_b = false);

Tensor softmax_rows(const Tensor& x);
// dX for y = softmax_rows(x), given y and upstream dY.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad_y);

// Rows scaled to unit L2 norm; zero rows stay zero.
Tensor l2_normalize_rows(const Tensor& x);
Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& y, const Tensor& grad_y);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor elementwise_exp(const Tensor& x);
// log(max(x, eps)); entries at or below eps get derivative 0. clamp_count, when
// non-null, is incremented once per clamped entry.
Tensor elementwise_log(const Tensor& x, double eps, std::size_t* clamp_count);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor tanh_forward(const Tensor& x);
Tensor relu_forward(const Tensor& x);

double dot(const Tensor& a, const Tensor& b);

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
Tensor softmax_rows(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x);
Tensor elementwise_exp(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);

} // namespace serial

} // namespace contproto::kernels
