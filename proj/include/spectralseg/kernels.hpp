#pragma once

#include <cstdint>
#include <vector>

// Low-level numeric kernels. Everything in spectralseg::kern is OpenMP-parallel
// and deterministic: work is partitioned over independent output elements with
// static schedules, and every reduction runs in a fixed order. The
// spectralseg::kern::serial namespace holds naive single-thread reference
// implementations used by the tests and the kernel benchmark.
namespace spectralseg::kern {

// Row-major GEMM variants. `acc` accumulates into C instead of overwriting.
// C[M x N] = A[M x K] * B[K x N]
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc);
// C[M x N] = A^T * B with A stored [K x M]
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool acc);
// C[M x N] = A * B^T with B stored [N x K]
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool acc);

// Direct 3x3 / stride 1 / pad 1 convolution kernels, weights [Co x Ci x 3 x 3].
void conv3x3_forward(const double* x, int B, int Ci, int H, int W, const double* w, int Co, double* y);
// gx += correlation of gy with the 180-degree-rotated kernels
void conv3x3_input_grad(const double* gy, int B, int Co, int H, int W, const double* w, int Ci, double* gx);
// gw accumulates over the whole batch
void conv3x3_weight_grad(const double* x, const double* gy, int B, int Ci, int Co, int H, int W, double* gw);

void relu_forward(const double* x, double* y, std::int64_t n);
void relu_backward(const double* y, const double* gy, double* gx, std::int64_t n);

// 2x2 max pooling with stride 2 over [planes x H x W]; `idx` stores the winning
// position (0..3, row-major within the window) for the backward scatter.
void maxpool2_forward(const double* x, int planes, int H, int W, double* y, std::uint8_t* idx);
void maxpool2_backward(const double* gy, const std::uint8_t* idx, int planes, int H, int W, double* gx);

// Per-channel statistics over (B, H, W) of a [B x C x H x W] tensor.
void channel_mean_var(const double* x, int B, int C, int HW, double* mean, double* var);
void bn_normalize(const double* x, int B, int C, int HW, const double* mean, const double* invstd,
                  const double* gamma, const double* beta, double* y, double* xhat);
// Training-mode batch-norm backward (statistics depend on the batch).
void bn_backward(const double* gy, const double* xhat, int B, int C, int HW, const double* gamma,
                 const double* invstd, double* gx, double* dgamma, double* dbeta);
// Evaluation-mode backward: running statistics are constants.
void bn_backward_eval(const double* gy, const double* xhat, int B, int C, int HW, const double* gamma,
                      const double* invstd, double* gx, double* dgamma, double* dbeta);

void add_inplace(double* y, const double* x, std::int64_t n);
void axpy(double a, const double* x, double* y, std::int64_t n);  // y += a*x
void copy(const double* x, double* y, std::int64_t n);

namespace serial {

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc);
// Direct convolution, 3x3 / stride 1 / pad 1, weights [Co x Ci x 3 x 3].
void conv2d_3x3(const double* x, int B, int Ci, int H, int W, const double* w, int Co, double* y);
void conv2d_1x1(const double* x, int B, int Ci, int H, int W, const double* w, int Co, double* y);
void conv_transpose2x2(const double* x, int B, int Ci, int H, int W, const double* w, int Co,
                       const double* bias, double* y);
void maxpool2(const double* x, int planes, int H, int W, double* y);
void relu(const double* x, double* y, std::int64_t n);

}  // namespace serial

}  // namespace spectralseg::kern
