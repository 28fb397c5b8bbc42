#include "spectralseg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace spectralseg::kern {

namespace {
constexpr int kNTile = 256;  // B-panel width kept L1-resident
constexpr int kMTile = 4;    // accumulator rows per micro-kernel pass
}  // namespace

// Partitioned over N so each output column range belongs to one thread; the K
// loop is sequential per output element, which keeps results bit-identical for
// any thread count.
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
  const int ntiles = (N + kNTile - 1) / kNTile;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < ntiles; ++t) {
    const int n0 = t * kNTile;
    const int n1 = std::min(N, n0 + kNTile);
    for (int m0 = 0; m0 < M; m0 += kMTile) {
      const int mr = std::min(kMTile, M - m0);
      double* c0 = C + static_cast<std::int64_t>(m0) * N;
      double* c1 = mr > 1 ? c0 + N : c0;
      double* c2 = mr > 2 ? c1 + N : c1;
      double* c3 = mr > 3 ? c2 + N : c2;
      if (!acc) {
        for (int m = 0; m < mr; ++m) {
          std::fill(c0 + static_cast<std::int64_t>(m) * N + n0, c0 + static_cast<std::int64_t>(m) * N + n1, 0.0);
        }
      }
      const double* a0 = A + static_cast<std::int64_t>(m0) * K;
      const double* a1 = mr > 1 ? a0 + K : a0;
      const double* a2 = mr > 2 ? a1 + K : a1;
      const double* a3 = mr > 3 ? a2 + K : a2;
      for (int k = 0; k < K; ++k) {
        const double* b = B + static_cast<std::int64_t>(k) * N;
        const double v0 = a0[k];
        const double v1 = a1[k];
        const double v2 = a2[k];
        const double v3 = a3[k];
        switch (mr) {
          case 4:
#pragma omp simd
            for (int n = n0; n < n1; ++n) {
              c0[n] += v0 * b[n];
              c1[n] += v1 * b[n];
              c2[n] += v2 * b[n];
              c3[n] += v3 * b[n];
            }
            break;
          case 3:
#pragma omp simd
            for (int n = n0; n < n1; ++n) {
              c0[n] += v0 * b[n];
              c1[n] += v1 * b[n];
              c2[n] += v2 * b[n];
            }
            break;
          case 2:
#pragma omp simd
            for (int n = n0; n < n1; ++n) {
              c0[n] += v0 * b[n];
              c1[n] += v1 * b[n];
            }
            break;
          default:
#pragma omp simd
            for (int n = n0; n < n1; ++n) c0[n] += v0 * b[n];
        }
      }
    }
  }
}

void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
  const int ntiles = (N + kNTile - 1) / kNTile;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < ntiles; ++t) {
    const int n0 = t * kNTile;
    const int n1 = std::min(N, n0 + kNTile);
    for (int m0 = 0; m0 < M; m0 += kMTile) {
      const int mr = std::min(kMTile, M - m0);
      double* crow[kMTile];
      for (int m = 0; m < mr; ++m) {
        crow[m] = C + static_cast<std::int64_t>(m0 + m) * N;
        if (!acc) std::fill(crow[m] + n0, crow[m] + n1, 0.0);
      }
      for (int k = 0; k < K; ++k) {
        const double* b = B + static_cast<std::int64_t>(k) * N;
        const double* arow = A + static_cast<std::int64_t>(k) * M + m0;
        for (int m = 0; m < mr; ++m) {
          const double v = arow[m];
          double* c = crow[m];
#pragma omp simd
          for (int n = n0; n < n1; ++n) c[n] += v * b[n];
        }
      }
    }
  }
}

// K is typically huge here (H*W pixel reductions); rows of C are independent,
// and each dot product is a single contiguous pass over K.
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const double* a = A + static_cast<std::int64_t>(m) * K;
    double* c = C + static_cast<std::int64_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const double* b = B + static_cast<std::int64_t>(n) * K;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (int k = 0; k < K; ++k) s += a[k] * b[k];
      c[n] = acc ? c[n] + s : s;
    }
  }
}

namespace {

// dst += 3x3 stencil of src with padding 1; k is one row-major 3x3 kernel
inline void stencil3x3_acc(const double* src, const double* k, double* dst, int H, int W) {
  for (int i = 0; i < H; ++i) {
    double* out = dst + static_cast<std::int64_t>(i) * W;
    for (int ki = 0; ki < 3; ++ki) {
      const int si = i + ki - 1;
      if (si < 0 || si >= H) continue;
      const double* s = src + static_cast<std::int64_t>(si) * W;
      const double w0 = k[ki * 3], w1 = k[ki * 3 + 1], w2 = k[ki * 3 + 2];
      out[0] += w1 * s[0] + w2 * s[1];
#pragma omp simd
      for (int j = 1; j < W - 1; ++j) out[j] += w0 * s[j - 1] + w1 * s[j] + w2 * s[j + 1];
      out[W - 1] += w0 * s[W - 2] + w1 * s[W - 1];
    }
  }
}

}  // namespace

void conv3x3_forward(const double* x, int B, int Ci, int H, int W, const double* w, int Co, double* y) {
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      double* out = y + (static_cast<std::int64_t>(b) * Co + co) * HW;
      std::fill(out, out + HW, 0.0);
      for (int ci = 0; ci < Ci; ++ci) {
        stencil3x3_acc(x + (static_cast<std::int64_t>(b) * Ci + ci) * HW,
                       w + (static_cast<std::int64_t>(co) * Ci + ci) * 9, out, H, W);
      }
    }
  }
}

void conv3x3_input_grad(const double* gy, int B, int Co, int H, int W, const double* w, int Ci, double* gx) {
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b) {
    for (int ci = 0; ci < Ci; ++ci) {
      double* out = gx + (static_cast<std::int64_t>(b) * Ci + ci) * HW;
      for (int co = 0; co < Co; ++co) {
        const double* k = w + (static_cast<std::int64_t>(co) * Ci + ci) * 9;
        const double flipped[9] = {k[8], k[7], k[6], k[5], k[4], k[3], k[2], k[1], k[0]};
        stencil3x3_acc(gy + (static_cast<std::int64_t>(b) * Co + co) * HW, flipped, out, H, W);
      }
    }
  }
}

void conv3x3_weight_grad(const double* x, const double* gy, int B, int Ci, int Co, int H, int W, double* gw) {
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static) collapse(2)
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < Ci; ++ci) {
      double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
      for (int b = 0; b < B; ++b) {
        const double* gp = gy + (static_cast<std::int64_t>(b) * Co + co) * HW;
        const double* xp = x + (static_cast<std::int64_t>(b) * Ci + ci) * HW;
        for (int i = 0; i < H; ++i) {
          const double* g = gp + static_cast<std::int64_t>(i) * W;
          for (int ki = 0; ki < 3; ++ki) {
            const int si = i + ki - 1;
            if (si < 0 || si >= H) continue;
            const double* s = xp + static_cast<std::int64_t>(si) * W;
            double d0 = 0.0, d1 = 0.0, d2 = 0.0;
#pragma omp simd reduction(+ : d0, d1, d2)
            for (int j = 1; j < W - 1; ++j) {
              d0 += g[j] * s[j - 1];
              d1 += g[j] * s[j];
              d2 += g[j] * s[j + 1];
            }
            d1 += g[0] * s[0] + g[W - 1] * s[W - 1];
            d2 += g[0] * s[1];
            d0 += g[W - 1] * s[W - 2];
            acc[ki * 3] += d0;
            acc[ki * 3 + 1] += d1;
            acc[ki * 3 + 2] += d2;
          }
        }
      }
      double* dst = gw + (static_cast<std::int64_t>(co) * Ci + ci) * 9;
      for (int t = 0; t < 9; ++t) dst[t] += acc[t];
    }
  }
}

void relu_forward(const double* x, double* y, std::int64_t n) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* y, const double* gy, double* gx, std::int64_t n) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) gx[i] = y[i] > 0.0 ? gy[i] : 0.0;
}

void maxpool2_forward(const double* x, int planes, int H, int W, double* y, std::uint8_t* idx) {
  const int Ho = H / 2;
  const int Wo = W / 2;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* in = x + static_cast<std::int64_t>(p) * H * W;
    double* out = y + static_cast<std::int64_t>(p) * Ho * Wo;
    std::uint8_t* sel = idx + static_cast<std::int64_t>(p) * Ho * Wo;
    for (int i = 0; i < Ho; ++i) {
      const double* r0 = in + static_cast<std::int64_t>(2 * i) * W;
      const double* r1 = r0 + W;
      for (int j = 0; j < Wo; ++j) {
        const double v00 = r0[2 * j];
        const double v01 = r0[2 * j + 1];
        const double v10 = r1[2 * j];
        const double v11 = r1[2 * j + 1];
        // first-max wins on ties, fixed scan order
        double best = v00;
        std::uint8_t k = 0;
        if (v01 > best) { best = v01; k = 1; }
        if (v10 > best) { best = v10; k = 2; }
        if (v11 > best) { best = v11; k = 3; }
        out[static_cast<std::int64_t>(i) * Wo + j] = best;
        sel[static_cast<std::int64_t>(i) * Wo + j] = k;
      }
    }
  }
}

void maxpool2_backward(const double* gy, const std::uint8_t* idx, int planes, int H, int W, double* gx) {
  const int Ho = H / 2;
  const int Wo = W / 2;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    double* gin = gx + static_cast<std::int64_t>(p) * H * W;
    std::fill(gin, gin + static_cast<std::int64_t>(H) * W, 0.0);
    const double* gout = gy + static_cast<std::int64_t>(p) * Ho * Wo;
    const std::uint8_t* sel = idx + static_cast<std::int64_t>(p) * Ho * Wo;
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        const std::uint8_t k = sel[static_cast<std::int64_t>(i) * Wo + j];
        const int si = 2 * i + (k >> 1);
        const int sj = 2 * j + (k & 1);
        gin[static_cast<std::int64_t>(si) * W + sj] = gout[static_cast<std::int64_t>(i) * Wo + j];
      }
    }
  }
}

void channel_mean_var(const double* x, int B, int C, int HW, double* mean, double* var) {
  const double n = static_cast<double>(B) * HW;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    double s2 = 0.0;
    for (int b = 0; b < B; ++b) {
      const double* p = x + (static_cast<std::int64_t>(b) * C + c) * HW;
      for (int i = 0; i < HW; ++i) {
        s += p[i];
        s2 += p[i] * p[i];
      }
    }
    const double m = s / n;
    mean[c] = m;
    var[c] = std::max(0.0, s2 / n - m * m);
  }
}

void bn_normalize(const double* x, int B, int C, int HW, const double* mean, const double* invstd,
                  const double* gamma, const double* beta, double* y, double* xhat) {
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * HW;
      const double m = mean[c];
      const double is = invstd[c];
      const double g = gamma[c];
      const double be = beta[c];
      const double* in = x + off;
      double* xo = xhat + off;
      double* yo = y + off;
#pragma omp simd
      for (int i = 0; i < HW; ++i) {
        const double xh = (in[i] - m) * is;
        xo[i] = xh;
        yo[i] = g * xh + be;
      }
    }
  }
}

void bn_backward(const double* gy, const double* xhat, int B, int C, int HW, const double* gamma,
                 const double* invstd, double* gx, double* dgamma, double* dbeta) {
  const double n = static_cast<double>(B) * HW;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sg = 0.0;   // sum gy
    double sgx = 0.0;  // sum gy * xhat
    for (int b = 0; b < B; ++b) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * HW;
      const double* g = gy + off;
      const double* xh = xhat + off;
      for (int i = 0; i < HW; ++i) {
        sg += g[i];
        sgx += g[i] * xh[i];
      }
    }
    dgamma[c] += sgx;
    dbeta[c] += sg;
    const double scale = gamma[c] * invstd[c];
    const double mg = sg / n;
    const double mgx = sgx / n;
    for (int b = 0; b < B; ++b) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * HW;
      const double* g = gy + off;
      const double* xh = xhat + off;
      double* out = gx + off;
#pragma omp simd
      for (int i = 0; i < HW; ++i) out[i] = scale * (g[i] - mg - xh[i] * mgx);
    }
  }
}

void bn_backward_eval(const double* gy, const double* xhat, int B, int C, int HW, const double* gamma,
                      const double* invstd, double* gx, double* dgamma, double* dbeta) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sg = 0.0;
    double sgx = 0.0;
    const double scale = gamma[c] * invstd[c];
    for (int b = 0; b < B; ++b) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + c) * HW;
      const double* g = gy + off;
      const double* xh = xhat + off;
      double* out = gx + off;
      for (int i = 0; i < HW; ++i) {
        sg += g[i];
        sgx += g[i] * xh[i];
        out[i] = scale * g[i];
      }
    }
    dgamma[c] += sgx;
    dbeta[c] += sg;
  }
}

void add_inplace(double* y, const double* x, std::int64_t n) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) y[i] += x[i];
}

void axpy(double a, const double* x, double* y, std::int64_t n) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void copy(const double* x, double* y, std::int64_t n) {
  std::memcpy(y, x, static_cast<size_t>(n) * sizeof(double));
}

namespace serial {

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
  for (int m = 0; m < M; ++m) {
    for (int n = 0; n < N; ++n) {
      double s = acc ? C[static_cast<std::int64_t>(m) * N + n] : 0.0;
      for (int k = 0; k < K; ++k) {
        s += A[static_cast<std::int64_t>(m) * K + k] * B[static_cast<std::int64_t>(k) * N + n];
      }
      C[static_cast<std::int64_t>(m) * N + n] = s;
    }
  }
}

void conv2d_3x3(const double* x, int B, int Ci, int H, int W, const double* w, int Co, double* y) {
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      double* out = y + (static_cast<std::int64_t>(b) * Co + co) * HW;
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          double s = 0.0;
          for (int ci = 0; ci < Ci; ++ci) {
            const double* in = x + (static_cast<std::int64_t>(b) * Ci + ci) * HW;
            const double* k = w + ((static_cast<std::int64_t>(co) * Ci + ci) * 9);
            for (int ki = 0; ki < 3; ++ki) {
              const int si = i + ki - 1;
              if (si < 0 || si >= H) continue;
              for (int kj = 0; kj < 3; ++kj) {
                const int sj = j + kj - 1;
                if (sj < 0 || sj >= W) continue;
                s += k[ki * 3 + kj] * in[static_cast<std::int64_t>(si) * W + sj];
              }
            }
          }
          out[static_cast<std::int64_t>(i) * W + j] = s;
        }
      }
    }
  }
}

void conv2d_1x1(const double* x, int B, int Ci, int H, int W, const double* w, int Co, double* y) {
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      double* out = y + (static_cast<std::int64_t>(b) * Co + co) * HW;
      for (std::int64_t i = 0; i < HW; ++i) out[i] = 0.0;
      for (int ci = 0; ci < Ci; ++ci) {
        const double* in = x + (static_cast<std::int64_t>(b) * Ci + ci) * HW;
        const double k = w[static_cast<std::int64_t>(co) * Ci + ci];
        for (std::int64_t i = 0; i < HW; ++i) out[i] += k * in[i];
      }
    }
  }
}

void conv_transpose2x2(const double* x, int B, int Ci, int H, int W, const double* w, int Co,
                       const double* bias, double* y) {
  const int Ho = 2 * H;
  const int Wo = 2 * W;
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      double* out = y + (static_cast<std::int64_t>(b) * Co + co) * Ho * Wo;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i) out[i] = bias ? bias[co] : 0.0;
      for (int ci = 0; ci < Ci; ++ci) {
        const double* in = x + (static_cast<std::int64_t>(b) * Ci + ci) * H * W;
        const double* k = w + (static_cast<std::int64_t>(ci) * Co + co) * 4;
        for (int i = 0; i < H; ++i) {
          for (int j = 0; j < W; ++j) {
            const double v = in[static_cast<std::int64_t>(i) * W + j];
            for (int di = 0; di < 2; ++di) {
              for (int dj = 0; dj < 2; ++dj) {
                out[static_cast<std::int64_t>(2 * i + di) * Wo + (2 * j + dj)] += v * k[di * 2 + dj];
              }
            }
          }
        }
      }
    }
  }
}

void maxpool2(const double* x, int planes, int H, int W, double* y) {
  const int Ho = H / 2;
  const int Wo = W / 2;
  for (int p = 0; p < planes; ++p) {
    const double* in = x + static_cast<std::int64_t>(p) * H * W;
    double* out = y + static_cast<std::int64_t>(p) * Ho * Wo;
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        double m = in[static_cast<std::int64_t>(2 * i) * W + 2 * j];
        m = std::max(m, in[static_cast<std::int64_t>(2 * i) * W + 2 * j + 1]);
        m = std::max(m, in[static_cast<std::int64_t>(2 * i + 1) * W + 2 * j]);
        m = std::max(m, in[static_cast<std::int64_t>(2 * i + 1) * W + 2 * j + 1]);
        out[static_cast<std::int64_t>(i) * Wo + j] = m;
      }
    }
  }
}

void relu(const double* x, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

}  // namespace serial

}  // namespace spectralseg::kern
