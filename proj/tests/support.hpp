#pragma once

// Shared test oracles. Everything here is deliberately naive and independent
// of the production kernels: brute-force DFT double loops, straight-line block
// compositions, simple statistics.

#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spectralseg/fft.hpp"
#include "spectralseg/kernels.hpp"
#include "spectralseg/layers.hpp"
#include "spectralseg/rng.hpp"
#include "spectralseg/tensor.hpp"

namespace testsup {

using spectralseg::Rng;
using spectralseg::Spectrum;
using spectralseg::Tensor;

// Full complex 2-D DFT of one plane, unnormalized, e^{-i} forward convention.
inline std::vector<std::complex<double>> dft2_brute(const double* x, int H, int W) {
  std::vector<std::complex<double>> out(static_cast<size_t>(H) * W);
  for (int ky = 0; ky < H; ++ky) {
    for (int kx = 0; kx < W; ++kx) {
      std::complex<double> acc{0.0, 0.0};
      for (int y = 0; y < H; ++y) {
        for (int xpos = 0; xpos < W; ++xpos) {
          const double ang = -2.0 * M_PI * (static_cast<double>(ky) * y / H + static_cast<double>(kx) * xpos / W);
          acc += x[static_cast<size_t>(y) * W + xpos] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      }
      out[static_cast<size_t>(ky) * W + kx] = acc;
    }
  }
  return out;
}

// Half-width real-input spectrum via the brute-force path.
inline Spectrum rfft2_brute(const Tensor& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Wf = W / 2 + 1;
  Spectrum s;
  s.full_w = W;
  s.re = Tensor(B, C, H, Wf);
  s.im = Tensor(B, C, H, Wf);
  for (int p = 0; p < B * C; ++p) {
    const auto full = dft2_brute(x.data() + static_cast<std::int64_t>(p) * H * W, H, W);
    for (int ky = 0; ky < H; ++ky) {
      for (int kx = 0; kx < Wf; ++kx) {
        s.re.data()[(static_cast<std::int64_t>(p) * H + ky) * Wf + kx] = full[static_cast<size_t>(ky) * W + kx].real();
        s.im.data()[(static_cast<std::int64_t>(p) * H + ky) * Wf + kx] = full[static_cast<size_t>(ky) * W + kx].imag();
      }
    }
  }
  return s;
}

// Inverse of the above: Hermitian-extend, brute inverse DFT, real part / (HW).
inline Tensor irfft2_brute(const Spectrum& s, int H, int W) {
  const int B = s.re.dim(0), C = s.re.dim(1), Wf = s.re.dim(3);
  Tensor x(B, C, H, W);
  for (int p = 0; p < B * C; ++p) {
    std::vector<std::complex<double>> full(static_cast<size_t>(H) * W);
    for (int ky = 0; ky < H; ++ky) {
      for (int kx = 0; kx < W; ++kx) {
        if (kx < Wf) {
          full[static_cast<size_t>(ky) * W + kx] = {
              s.re.data()[(static_cast<std::int64_t>(p) * H + ky) * Wf + kx],
              s.im.data()[(static_cast<std::int64_t>(p) * H + ky) * Wf + kx]};
        } else {
          const int sy = (H - ky) % H;
          const int sx = W - kx;
          full[static_cast<size_t>(ky) * W + kx] = {
              s.re.data()[(static_cast<std::int64_t>(p) * H + sy) * Wf + sx],
              -s.im.data()[(static_cast<std::int64_t>(p) * H + sy) * Wf + sx]};
        }
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int xpos = 0; xpos < W; ++xpos) {
        std::complex<double> acc{0.0, 0.0};
        for (int ky = 0; ky < H; ++ky) {
          for (int kx = 0; kx < W; ++kx) {
            const double ang = 2.0 * M_PI * (static_cast<double>(ky) * y / H + static_cast<double>(kx) * xpos / W);
            acc += full[static_cast<size_t>(ky) * W + kx] * std::complex<double>(std::cos(ang), std::sin(ang));
          }
        }
        x.data()[(static_cast<std::int64_t>(p) * H + y) * W + xpos] = acc.real() / (static_cast<double>(H) * W);
      }
    }
  }
  return x;
}

inline void fill_random(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double scale = 1e-30;
  for (std::int64_t i = 0; i < a.numel(); ++i) scale = std::max(scale, std::abs(a[i]));
  return max_abs_diff(a, b) / scale;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

// Naive per-channel batch norm (training statistics), matching the layer's
// eps, written independently of the production kernels.
inline Tensor bn_naive(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y = Tensor::zeros_like(x);
  for (int c = 0; c < C; ++c) {
    double sum = 0.0, sum2 = 0.0;
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const double v = x.at(b, c, i, j);
          sum += v;
          sum2 += v * v;
        }
      }
    }
    const double n = static_cast<double>(B) * H * W;
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double invstd = 1.0 / std::sqrt(var + eps);
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          y.at(b, c, i, j) = gamma[c] * ((x.at(b, c, i, j) - mean) * invstd) + beta[c];
        }
      }
    }
  }
  return y;
}

inline Tensor relu_naive(const Tensor& x) {
  Tensor y = Tensor::zeros_like(x);
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

inline Tensor conv1x1_naive(const Tensor& x, const Tensor& w, int cout) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y(B, cout, H, W);
  spectralseg::kern::serial::conv2d_1x1(x.data(), B, Ci, H, W, w.data(), cout, y.data());
  return y;
}

// Central-difference check at the documented 1e-3 step; when that straddles a
// ReLU/max-pool kink, a 1e-5 step disambiguates (a wrong gradient fails both).
inline double fd_rel(const std::function<double()>& loss, double* slot, double analytic, double tol = 1e-2) {
  auto rel_at = [&](double h) {
    const double saved = *slot;
    *slot = saved + h;
    const double lp = loss();
    *slot = saved - h;
    const double lm = loss();
    *slot = saved;
    const double fd = (lp - lm) / (2 * h);
    return std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
  };
  const double r1 = rel_at(1e-3);
  if (r1 <= tol) return r1;
  return std::min(r1, rel_at(1e-5));
}

inline std::string make_temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("spectralseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir.string();
}

// ---------------------------------------------------------------------------
// Straight-line reference compositions of the spectral blocks, written from
// the primitive stages with brute-force transforms. These are the "second
// route" the production blocks are checked against.

// The remove filter is discontinuous at zero, and the imaginary parts of
// self-conjugate bins are analytic zeros that land on either side of the
// discontinuity depending on rounding. For that mode the oracle reuses the
// production forward transform (itself checked against the brute-force DFT
// elsewhere) and stays independent for every later stage.
inline Tensor fourier_unit_oracle(const Tensor& x, spectralseg::FourierUnit& fu, bool train) {
  using spectralseg::FilterMode;
  using spectralseg::Spectrum;
  if (fu.use_norm && !train) throw std::logic_error("oracle implements batch statistics only");
  const int C = fu.channels, H = x.dim(2), W = x.dim(3);
  Spectrum s = fu.filter.mode == FilterMode::remove ? spectralseg::fft2_real(x) : rfft2_brute(x);
  if (fu.filter.mode != FilterMode::none) {
    for (std::int64_t i = 0; i < s.re.numel(); ++i) {
      s.re[i] = spectralseg::filter_value(s.re[i], fu.filter);
      s.im[i] = spectralseg::filter_value(s.im[i], fu.filter);
    }
  }
  const int Wf = s.re.dim(3);
  Tensor z(x.dim(0), 2 * C, H, Wf);
  for (int b = 0; b < x.dim(0); ++b) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < Wf; ++j) {
          z.at(b, c, i, j) = s.re.at(b, c, i, j);
          z.at(b, C + c, i, j) = s.im.at(b, c, i, j);
        }
      }
    }
  }
  Tensor t = conv1x1_naive(z, fu.conv.w, 2 * C);
  if (fu.use_norm) t = bn_naive(t, fu.bn.gamma, fu.bn.beta, fu.bn.eps);
  if (fu.use_act) t = relu_naive(t);
  Spectrum s2;
  s2.full_w = W;
  s2.re = Tensor(x.dim(0), C, H, Wf);
  s2.im = Tensor(x.dim(0), C, H, Wf);
  for (int b = 0; b < x.dim(0); ++b) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < Wf; ++j) {
          s2.re.at(b, c, i, j) = t.at(b, c, i, j);
          s2.im.at(b, c, i, j) = t.at(b, C + c, i, j);
        }
      }
    }
  }
  return irfft2_brute(s2, H, W);
}

inline Tensor spectral_transform_oracle(const Tensor& xg, spectralseg::SpectralTransform& st, bool train) {
  Tensor x1 = conv1x1_naive(xg, st.conv_in.w, st.mid);
  x1 = bn_naive(x1, st.bn_in.gamma, st.bn_in.beta, st.bn_in.eps);
  x1 = relu_naive(x1);

  Tensor fu_out;
  if (st.cg > 0 && st.cl > 0) {
    auto [g, l] = spectralseg::split_channels(x1, st.cg);
    fu_out = spectralseg::concat_channels(fourier_unit_oracle(g, *st.fu_g, train),
                                          fourier_unit_oracle(l, *st.fu_l, train));
  } else if (st.cg > 0) {
    fu_out = fourier_unit_oracle(x1, *st.fu_g, train);
  } else {
    fu_out = fourier_unit_oracle(x1, *st.fu_l, train);
  }
  Tensor sum = x1;
  for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += fu_out[i];
  return conv1x1_naive(sum, st.conv_out.w, st.cout);
}

// ---------------------------------------------------------------------------
// Layer-by-layer parameter arithmetic, independent of the model's accounting.

namespace param_oracle {

inline std::int64_t conv(std::int64_t cin, std::int64_t cout, std::int64_t k, bool bias) {
  return cin * cout * k * k + (bias ? cout : 0);
}
inline std::int64_t bn(std::int64_t c) { return 2 * c; }
inline std::int64_t block(std::int64_t cin, std::int64_t mid, std::int64_t cout) {
  return conv(cin, mid, 3, false) + bn(mid) + conv(mid, cout, 3, false) + bn(cout);
}
inline std::int64_t tconv(std::int64_t cin, std::int64_t cout) { return cin * cout * 4 + cout; }
inline std::int64_t fourier_unit(std::int64_t c) { return conv(2 * c, 2 * c, 1, false) + bn(2 * c); }

inline std::int64_t spectral_transform(std::int64_t cin, std::int64_t cout, double alpha) {
  const std::int64_t mid = cout / 2;
  const auto cg = static_cast<std::int64_t>(std::floor(alpha * static_cast<double>(mid) + 0.5));
  const std::int64_t cl = mid - cg;
  std::int64_t n = conv(cin, mid, 1, false) + bn(mid) + conv(mid, cout, 1, false);
  if (cg > 0) n += fourier_unit(cg);
  if (cl > 0) n += fourier_unit(cl);
  return n;
}

inline std::int64_t ffc_block(std::int64_t cl_in, std::int64_t cg_in, std::int64_t half_out, double alpha) {
  return conv(cl_in, half_out, 3, false) + conv(cl_in, half_out, 3, false) + conv(cg_in, half_out, 3, false) +
         spectral_transform(cg_in, half_out, alpha) + bn(half_out) + bn(half_out);
}

inline std::int64_t spatial_encoder(std::int64_t w) {
  return block(1, w, w) + block(w, 2 * w, 2 * w) + block(2 * w, 4 * w, 4 * w) + block(4 * w, 8 * w, 8 * w);
}

inline std::int64_t decoder(std::int64_t w, std::int64_t classes) {
  return tconv(16 * w, 8 * w) + block(16 * w, 8 * w, 8 * w) + tconv(8 * w, 4 * w) + block(8 * w, 4 * w, 4 * w) +
         tconv(4 * w, 2 * w) + block(4 * w, 2 * w, 2 * w) + tconv(2 * w, w) + block(2 * w, w, w) +
         conv(w, classes, 1, true);
}

inline std::int64_t unet_total(std::int64_t w, std::int64_t classes) {
  return spatial_encoder(w) + block(8 * w, 16 * w, 16 * w) + decoder(w, classes);
}

inline std::int64_t ynet_total(std::int64_t w, std::int64_t classes, double alpha) {
  const std::int64_t spectral = ffc_block(1, 1, w / 2, alpha) + ffc_block(w / 2, w / 2, w, alpha) +
                                ffc_block(w, w, 2 * w, alpha) + ffc_block(2 * w, 2 * w, 4 * w, alpha);
  return spatial_encoder(w) + spectral + block(16 * w, 8 * w, 16 * w) + decoder(w, classes);
}

}  // namespace param_oracle

}  // namespace testsup
