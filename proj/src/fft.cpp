#include "spectralseg/fft.hpp"

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace spectralseg {

namespace {

// FFTW plan creation is not thread-safe; executions on distinct buffers are.
// Plans are cached per (H, W, sign) and reused via the new-array interface.
class PlanCache {
 public:
  fftw_plan get(int H, int W, int sign) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::tuple<int, int, int>(H, W, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<std::complex<double>> in(static_cast<size_t>(H) * W);
    std::vector<std::complex<double>> out(static_cast<size_t>(H) * W);
    fftw_plan p = fftw_plan_dft_2d(H, W, reinterpret_cast<fftw_complex*>(in.data()),
                                   reinterpret_cast<fftw_complex*>(out.data()), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw std::runtime_error("fftw plan creation failed");
    plans_.emplace(key, p);
    return p;
  }

 private:
  std::mutex mu_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

void exec(fftw_plan p, std::complex<double>* in, std::complex<double>* out) {
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(in), reinterpret_cast<fftw_complex*>(out));
}

int freq_width(int W) { return W / 2 + 1; }

void check_rank4(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(what) + ": expected a [B, C, H, W] tensor");
}

}  // namespace

void FrequencyFilterSpec::validate() const {
  if (mode != FilterMode::none && !(bound > 0.0)) {
    throw std::invalid_argument("frequency filter: bound must be > 0 for keep/remove modes");
  }
}

std::string FrequencyFilterSpec::str() const {
  switch (mode) {
    case FilterMode::none: return "none";
    case FilterMode::keep: return "keep(" + std::to_string(bound) + ")";
    case FilterMode::remove: return "remove(" + std::to_string(bound) + ")";
  }
  return "?";
}

FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "none") return FilterMode::none;
  if (s == "keep") return FilterMode::keep;
  if (s == "remove") return FilterMode::remove;
  throw std::invalid_argument("unknown filter mode '" + s + "' (expected none|keep|remove)");
}

std::string to_string(FilterMode m) {
  switch (m) {
    case FilterMode::none: return "none";
    case FilterMode::keep: return "keep";
    case FilterMode::remove: return "remove";
  }
  return "?";
}

Spectrum fft2_real(const Tensor& x) {
  check_rank4(x, "fft2_real");
  require_finite(x, "fft2_real");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Wf = freq_width(W);
  Spectrum s;
  s.full_w = W;
  s.re = Tensor(B, C, H, Wf);
  s.im = Tensor(B, C, H, Wf);
  fftw_plan plan = plan_cache().get(H, W, FFTW_FORWARD);
  const std::int64_t planes = static_cast<std::int64_t>(B) * C;
#pragma omp parallel
  {
    std::vector<std::complex<double>> in(static_cast<size_t>(H) * W);
    std::vector<std::complex<double>> out(static_cast<size_t>(H) * W);
#pragma omp for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* src = x.data() + p * H * W;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) in[static_cast<size_t>(i)] = {src[i], 0.0};
      exec(plan, in.data(), out.data());
      double* re = s.re.data() + p * H * Wf;
      double* im = s.im.data() + p * H * Wf;
      for (int ky = 0; ky < H; ++ky) {
        for (int kx = 0; kx < Wf; ++kx) {
          const std::complex<double> v = out[static_cast<size_t>(ky) * W + kx];
          re[static_cast<std::int64_t>(ky) * Wf + kx] = v.real();
          im[static_cast<std::int64_t>(ky) * Wf + kx] = v.imag();
        }
      }
    }
  }
  return s;
}

Tensor inverse_fft2_real(const Spectrum& s, int H, int W) {
  check_rank4(s.re, "inverse_fft2_real");
  const int B = s.re.dim(0), C = s.re.dim(1);
  const int Wf = freq_width(W);
  if (s.re.dim(2) != H || s.re.dim(3) != Wf || !s.re.same_shape(s.im)) {
    throw std::invalid_argument("inverse_fft2_real: spectrum dimensions inconsistent with H=" + std::to_string(H) +
                                ", W=" + std::to_string(W) + " (got " + s.re.shape_str() + ")");
  }
  Tensor x(B, C, H, W);
  fftw_plan plan = plan_cache().get(H, W, FFTW_BACKWARD);
  const double norm = 1.0 / (static_cast<double>(H) * W);
  const std::int64_t planes = static_cast<std::int64_t>(B) * C;
#pragma omp parallel
  {
    std::vector<std::complex<double>> in(static_cast<size_t>(H) * W);
    std::vector<std::complex<double>> out(static_cast<size_t>(H) * W);
#pragma omp for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* re = s.re.data() + p * H * Wf;
      const double* im = s.im.data() + p * H * Wf;
      for (int ky = 0; ky < H; ++ky) {
        for (int kx = 0; kx < Wf; ++kx) {
          in[static_cast<size_t>(ky) * W + kx] = {re[static_cast<std::int64_t>(ky) * Wf + kx],
                                                  im[static_cast<std::int64_t>(ky) * Wf + kx]};
        }
        // Hermitian extension of the missing half
        for (int kx = Wf; kx < W; ++kx) {
          const int sy = (H - ky) % H;
          const int sx = W - kx;
          in[static_cast<size_t>(ky) * W + kx] = {re[static_cast<std::int64_t>(sy) * Wf + sx],
                                                  -im[static_cast<std::int64_t>(sy) * Wf + sx]};
        }
      }
      exec(plan, in.data(), out.data());
      double* dst = x.data() + p * H * W;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
        dst[i] = out[static_cast<size_t>(i)].real() * norm;
      }
    }
  }
  return x;
}

Tensor fft2_real_adjoint(const Spectrum& grad_spec, int H, int W) {
  const int B = grad_spec.re.dim(0), C = grad_spec.re.dim(1);
  const int Wf = freq_width(W);
  if (grad_spec.re.dim(2) != H || grad_spec.re.dim(3) != Wf) {
    throw std::invalid_argument("fft2_real_adjoint: gradient shape mismatch");
  }
  Tensor gx(B, C, H, W);
  fftw_plan plan = plan_cache().get(H, W, FFTW_BACKWARD);
  const std::int64_t planes = static_cast<std::int64_t>(B) * C;
#pragma omp parallel
  {
    std::vector<std::complex<double>> in(static_cast<size_t>(H) * W);
    std::vector<std::complex<double>> out(static_cast<size_t>(H) * W);
#pragma omp for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* re = grad_spec.re.data() + p * H * Wf;
      const double* im = grad_spec.im.data() + p * H * Wf;
      for (int ky = 0; ky < H; ++ky) {
        for (int kx = 0; kx < Wf; ++kx) {
          in[static_cast<size_t>(ky) * W + kx] = {re[static_cast<std::int64_t>(ky) * Wf + kx],
                                                  im[static_cast<std::int64_t>(ky) * Wf + kx]};
        }
        for (int kx = Wf; kx < W; ++kx) in[static_cast<size_t>(ky) * W + kx] = {0.0, 0.0};
      }
      exec(plan, in.data(), out.data());
      double* dst = gx.data() + p * H * W;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
        dst[i] = out[static_cast<size_t>(i)].real();
      }
    }
  }
  return gx;
}

Spectrum inverse_fft2_real_adjoint(const Tensor& grad_x) {
  check_rank4(grad_x, "inverse_fft2_real_adjoint");
  const int B = grad_x.dim(0), C = grad_x.dim(1), H = grad_x.dim(2), W = grad_x.dim(3);
  const int Wf = freq_width(W);
  Spectrum g;
  g.full_w = W;
  g.re = Tensor(B, C, H, Wf);
  g.im = Tensor(B, C, H, Wf);
  fftw_plan plan = plan_cache().get(H, W, FFTW_FORWARD);
  const double norm = 1.0 / (static_cast<double>(H) * W);
  const std::int64_t planes = static_cast<std::int64_t>(B) * C;
#pragma omp parallel
  {
    std::vector<std::complex<double>> in(static_cast<size_t>(H) * W);
    std::vector<std::complex<double>> out(static_cast<size_t>(H) * W);
#pragma omp for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* src = grad_x.data() + p * H * W;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) in[static_cast<size_t>(i)] = {src[i], 0.0};
      exec(plan, in.data(), out.data());
      double* re = g.re.data() + p * H * Wf;
      double* im = g.im.data() + p * H * Wf;
      for (int ky = 0; ky < H; ++ky) {
        for (int kx = 0; kx < Wf; ++kx) {
          const std::complex<double> v = out[static_cast<size_t>(ky) * W + kx];
          re[static_cast<std::int64_t>(ky) * Wf + kx] = v.real() * norm;
          im[static_cast<std::int64_t>(ky) * Wf + kx] = v.imag() * norm;
        }
      }
      // Stored bins that also feed the mirrored half pick up its contribution;
      // separate pass so no assignment above can clobber an accumulation.
      for (int ky = 0; ky < H; ++ky) {
        for (int kx = Wf; kx < W; ++kx) {
          const std::complex<double> v = out[static_cast<size_t>(ky) * W + kx];
          const int sy = (H - ky) % H;
          const int sx = W - kx;
          re[static_cast<std::int64_t>(sy) * Wf + sx] += v.real() * norm;
          im[static_cast<std::int64_t>(sy) * Wf + sx] -= v.imag() * norm;
        }
      }
    }
  }
  return g;
}

double filter_value(double v, const FrequencyFilterSpec& spec) {
  switch (spec.mode) {
    case FilterMode::none:
      return v;
    case FilterMode::keep:
      if (v > spec.bound) return spec.bound;
      if (v < -spec.bound) return -spec.bound;
      return v;
    case FilterMode::remove:
      if (v > -spec.bound && v <= 0.0) return -spec.bound;
      if (v > 0.0 && v < spec.bound) return spec.bound;
      return v;
  }
  return v;
}

Spectrum apply_frequency_filter(const Spectrum& s, const FrequencyFilterSpec& spec) {
  spec.validate();
  Spectrum out;
  out.full_w = s.full_w;
  out.re = s.re;
  out.im = s.im;
  if (spec.mode == FilterMode::none) return out;
  const std::int64_t n = s.re.numel();
  for (auto [src, dst] : {std::pair{s.re.data(), out.re.data()}, std::pair{s.im.data(), out.im.data()}}) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) dst[i] = filter_value(src[i], spec);
  }
  return out;
}

void frequency_filter_backward(const Spectrum& input, const FrequencyFilterSpec& spec, Spectrum& grad) {
  if (spec.mode == FilterMode::none) return;
  const std::int64_t n = input.re.numel();
  const double a = spec.bound;
  for (auto [src, g] : {std::pair{input.re.data(), grad.re.data()}, std::pair{input.im.data(), grad.im.data()}}) {
    if (spec.mode == FilterMode::keep) {
#pragma omp parallel for simd schedule(static)
      for (std::int64_t i = 0; i < n; ++i) {
        if (!(src[i] > -a && src[i] < a)) g[i] = 0.0;
      }
    } else {
#pragma omp parallel for simd schedule(static)
      for (std::int64_t i = 0; i < n; ++i) {
        if (src[i] > -a && src[i] < a) g[i] = 0.0;
      }
    }
  }
}

}  // namespace spectralseg
