#include <doctest.h>

#include <cmath>
#include <complex>

#include "spectralseg/fft.hpp"
#include "spectralseg/kernels.hpp"
#include "spectralseg/layers.hpp"
#include "support.hpp"

using namespace spectralseg;
using testsup::fill_random;

namespace k = spectralseg::kern;

TEST_CASE("gemm variants agree with the serial reference") {
  Rng rng(1);
  for (const auto [M, N, K] : {std::tuple{3, 7, 5}, std::tuple{8, 130, 19}, std::tuple{17, 523, 36}}) {
    std::vector<double> A(static_cast<size_t>(M) * K), B(static_cast<size_t>(K) * N);
    std::vector<double> C1(static_cast<size_t>(M) * N, 0.5), C2(static_cast<size_t>(M) * N, 0.5);
    for (auto& v : A) v = rng.uniform(-1, 1);
    for (auto& v : B) v = rng.uniform(-1, 1);

    k::serial::gemm_nn(M, N, K, A.data(), B.data(), C1.data(), true);
    k::gemm_nn(M, N, K, A.data(), B.data(), C2.data(), true);
    for (size_t i = 0; i < C1.size(); ++i) CHECK(C1[i] == doctest::Approx(C2[i]).epsilon(1e-12));

    // gemm_tn: A stored [K x M]
    std::vector<double> At(static_cast<size_t>(K) * M);
    for (int m = 0; m < M; ++m) {
      for (int kk = 0; kk < K; ++kk) At[static_cast<size_t>(kk) * M + m] = A[static_cast<size_t>(m) * K + kk];
    }
    std::vector<double> C3(static_cast<size_t>(M) * N), C4(static_cast<size_t>(M) * N);
    k::serial::gemm_nn(M, N, K, A.data(), B.data(), C3.data(), false);
    k::gemm_tn(M, N, K, At.data(), B.data(), C4.data(), false);
    for (size_t i = 0; i < C3.size(); ++i) CHECK(C3[i] == doctest::Approx(C4[i]).epsilon(1e-12));

    // gemm_nt: B stored [N x K]
    std::vector<double> Bt(static_cast<size_t>(N) * K);
    for (int kk = 0; kk < K; ++kk) {
      for (int n = 0; n < N; ++n) Bt[static_cast<size_t>(n) * K + kk] = B[static_cast<size_t>(kk) * N + n];
    }
    std::vector<double> C5(static_cast<size_t>(M) * N);
    k::gemm_nt(M, N, K, A.data(), Bt.data(), C5.data(), false);
    for (size_t i = 0; i < C3.size(); ++i) CHECK(C3[i] == doctest::Approx(C5[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d forward matches the direct serial convolution") {
  Rng rng(2);
  for (const auto [Ci, Co, H, W] : {std::tuple{1, 4, 10, 12}, std::tuple{5, 3, 9, 7}}) {
    Tensor x(2, Ci, H, W);
    fill_random(x, rng);
    Conv2d conv(Ci, Co, 3, false);
    conv.init(rng);
    const Tensor y = conv.forward(x);
    Tensor ref(2, Co, H, W);
    k::serial::conv2d_3x3(x.data(), 2, Ci, H, W, conv.w.data(), Co, ref.data());
    CHECK(testsup::max_abs_diff(y, ref) < 1e-12);
  }
  // 1x1 path with bias
  Tensor x(2, 3, 6, 5);
  fill_random(x, rng);
  Conv2d conv(3, 4, 1, true);
  conv.init(rng);
  for (int i = 0; i < 4; ++i) conv.b[i] = rng.uniform(-1, 1);
  Tensor ref(2, 4, 6, 5);
  k::serial::conv2d_1x1(x.data(), 2, 3, 6, 5, conv.w.data(), 4, ref.data());
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 5; ++j) ref.at(b, c, i, j) += conv.b[c];
      }
    }
  }
  CHECK(testsup::max_abs_diff(conv.forward(x), ref) < 1e-12);
}

TEST_CASE("conv transpose forward matches the serial reference and doubles dims") {
  Rng rng(3);
  Tensor x(2, 3, 5, 4);
  fill_random(x, rng);
  ConvTranspose2d up(3, 2);
  up.init(rng);
  for (int i = 0; i < 2; ++i) up.b[i] = rng.uniform(-1, 1);
  const Tensor y = up.forward(x);
  REQUIRE(y.dim(2) == 10);
  REQUIRE(y.dim(3) == 8);
  Tensor ref(2, 2, 10, 8);
  k::serial::conv_transpose2x2(x.data(), 2, 3, 5, 4, up.w.data(), 2, up.b.data(), ref.data());
  CHECK(testsup::max_abs_diff(y, ref) < 1e-12);
}

namespace {

// central finite differences of a scalar functional of a layer output
template <typename Fwd>
double fd_grad(Tensor& param, std::int64_t idx, const Fwd& loss, double h = 1e-6) {
  const double saved = param[idx];
  param[idx] = saved + h;
  const double lp = loss();
  param[idx] = saved - h;
  const double lm = loss();
  param[idx] = saved;
  return (lp - lm) / (2 * h);
}

double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d backward agrees with finite differences") {
  Rng rng(4);
  Tensor x(1, 3, 6, 6);
  fill_random(x, rng);
  Conv2d conv(3, 2, 3, false);
  conv.init(rng);
  Tensor wsum(1, 2, 6, 6);
  fill_random(wsum, rng);

  auto loss = [&] { return weighted_sum(conv.forward(x), wsum); };
  conv.gw.zero();
  Tensor gx = Tensor::zeros_like(x);
  conv.backward(x, wsum, &gx);

  for (std::int64_t i : {0L, 7L, 33L, conv.w.numel() - 1}) {
    CHECK(conv.gw[i] == doctest::Approx(fd_grad(conv.w, i, loss)).epsilon(1e-6));
  }
  for (std::int64_t i : {0L, 17L, x.numel() - 1}) {
    CHECK(gx[i] == doctest::Approx(fd_grad(x, i, loss)).epsilon(1e-6));
  }
}

TEST_CASE("batch norm forward/backward") {
  Rng rng(5);
  Tensor x(3, 4, 5, 5);
  fill_random(x, rng);
  BatchNorm2d bn(4);
  for (int c = 0; c < 4; ++c) {
    bn.gamma[c] = rng.uniform(0.5, 1.5);
    bn.beta[c] = rng.uniform(-0.5, 0.5);
  }

  BNCtx ctx;
  const Tensor y = bn.forward(x, true, ctx);
  const Tensor ref = testsup::bn_naive(x, bn.gamma, bn.beta, bn.eps);
  CHECK(testsup::max_abs_diff(y, ref) < 1e-10);

  // running statistics land between init and the batch statistics
  CHECK(bn.running_mean[0] == doctest::Approx(0.1 * ctx.mean[0]).epsilon(1e-9));

  Tensor wsum = Tensor::zeros_like(y);
  fill_random(wsum, rng);
  auto loss = [&] {
    BNCtx c2;
    return weighted_sum(bn.forward(x, true, c2), wsum);
  };
  bn.ggamma.zero();
  bn.gbeta.zero();
  Tensor gx = Tensor::zeros_like(x);
  bn.backward(ctx, wsum, &gx);
  for (int c = 0; c < 4; ++c) {
    CHECK(bn.ggamma[c] == doctest::Approx(fd_grad(bn.gamma, c, loss)).epsilon(1e-5));
    CHECK(bn.gbeta[c] == doctest::Approx(fd_grad(bn.beta, c, loss)).epsilon(1e-5));
  }
  for (std::int64_t i : {1L, 40L, x.numel() - 2}) {
    CHECK(gx[i] == doctest::Approx(fd_grad(x, i, loss)).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("max pooling matches reference; odd dims rejected") {
  Rng rng(6);
  Tensor x(2, 3, 8, 6);
  fill_random(x, rng);
  MaxPool2 pool;
  PoolCtx ctx;
  const Tensor y = pool.forward(x, ctx);
  Tensor ref(2, 3, 4, 3);
  k::serial::maxpool2(x.data(), 6, 8, 6, ref.data());
  CHECK(testsup::max_abs_diff(y, ref) == 0.0);

  Tensor odd(1, 1, 7, 8);
  PoolCtx c2;
  CHECK_THROWS_AS((void)pool.forward(odd, c2), std::invalid_argument);

  // backward scatters exactly the upstream gradient to the argmax cells
  Tensor gy = Tensor::zeros_like(y);
  fill_random(gy, rng);
  const Tensor gx = pool.backward(ctx, gy, 2, 3);
  double sum_in = 0.0, sum_out = 0.0;
  for (std::int64_t i = 0; i < gy.numel(); ++i) sum_in += gy[i];
  for (std::int64_t i = 0; i < gx.numel(); ++i) sum_out += gx[i];
  CHECK(sum_in == doctest::Approx(sum_out).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// FFT suite

TEST_CASE("fft round trip at every required size") {
  Rng rng(7);
  for (int n : {8, 16, 32, 224}) {
    Tensor x(1, 1, n, n);
    fill_random(x, rng);
    const Spectrum s = fft2_real(x);
    const Tensor back = inverse_fft2_real(s, n, n);
    CHECK(testsup::max_rel_diff(back, x) < 1e-5);
  }
  // non-square
  Tensor x(2, 3, 12, 8);
  fill_random(x, rng);
  CHECK(testsup::max_rel_diff(inverse_fft2_real(fft2_real(x), 12, 8), x) < 1e-5);
}

TEST_CASE("fft agrees with the brute-force DFT and satisfies Parseval") {
  Rng rng(8);
  Tensor x(1, 1, 8, 8);
  fill_random(x, rng);
  const Spectrum s = fft2_real(x);
  const Spectrum b = testsup::rfft2_brute(x);
  CHECK(testsup::max_abs_diff(s.re, b.re) < 1e-9);
  CHECK(testsup::max_abs_diff(s.im, b.im) < 1e-9);

  // Parseval for the unnormalized convention: sum|X|^2 = H*W * sum|x|^2,
  // with interior half-spectrum bins counted twice.
  const auto full = testsup::dft2_brute(x.data(), 8, 8);
  double spec_energy = 0.0;
  for (const auto& v : full) spec_energy += std::norm(v);
  double space_energy = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) space_energy += x[i] * x[i];
  CHECK(spec_energy == doctest::Approx(64.0 * space_energy).epsilon(1e-9));

  double half_energy = 0.0;
  const int Wf = 5;
  for (int ky = 0; ky < 8; ++ky) {
    for (int kx = 0; kx < Wf; ++kx) {
      const double m = s.re.data()[ky * Wf + kx] * s.re.data()[ky * Wf + kx] +
                       s.im.data()[ky * Wf + kx] * s.im.data()[ky * Wf + kx];
      half_energy += (kx == 0 || kx == Wf - 1) ? m : 2.0 * m;
    }
  }
  CHECK(half_energy == doctest::Approx(64.0 * space_energy).epsilon(1e-9));
}

TEST_CASE("fft corner cases: zero, constant, DC-only") {
  Tensor zero(1, 1, 8, 8);
  const Spectrum sz = fft2_real(zero);
  CHECK(testsup::max_abs_diff(sz.re, Tensor::zeros_like(sz.re)) == 0.0);
  CHECK(testsup::max_abs_diff(sz.im, Tensor::zeros_like(sz.im)) == 0.0);

  Tensor c(1, 1, 8, 8);
  c.fill(3.25);
  const Spectrum sc = fft2_real(c);
  CHECK(sc.re[0] == doctest::Approx(3.25 * 64).epsilon(1e-12));
  double off_dc = 0.0;
  for (std::int64_t i = 1; i < sc.re.numel(); ++i) off_dc = std::max(off_dc, std::abs(sc.re[i]));
  for (std::int64_t i = 0; i < sc.im.numel(); ++i) off_dc = std::max(off_dc, std::abs(sc.im[i]));
  CHECK(off_dc < 1e-9);

  Spectrum dc;
  dc.full_w = 8;
  dc.re = Tensor(1, 1, 8, 5);
  dc.im = Tensor(1, 1, 8, 5);
  dc.re[0] = 7.0 * 64;
  const Tensor back = inverse_fft2_real(dc, 8, 8);
  for (std::int64_t i = 0; i < back.numel(); ++i) CHECK(back[i] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("fft linearity and input validation") {
  Rng rng(9);
  Tensor x(1, 2, 8, 8), y(1, 2, 8, 8);
  fill_random(x, rng);
  fill_random(y, rng);
  Tensor mix(1, 2, 8, 8);
  for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = 2.5 * x[i] - 1.25 * y[i];
  const Spectrum sm = fft2_real(mix);
  const Spectrum sx = fft2_real(x);
  const Spectrum sy = fft2_real(y);
  double err = 0.0;
  for (std::int64_t i = 0; i < sm.re.numel(); ++i) {
    err = std::max(err, std::abs(sm.re[i] - (2.5 * sx.re[i] - 1.25 * sy.re[i])));
    err = std::max(err, std::abs(sm.im[i] - (2.5 * sx.im[i] - 1.25 * sy.im[i])));
  }
  CHECK(err < 1e-9);

  Tensor bad(1, 1, 4, 4);
  bad[3] = std::nan("");
  CHECK_THROWS_AS((void)fft2_real(bad), std::invalid_argument);

  Spectrum s = fft2_real(x);
  CHECK_THROWS_AS((void)inverse_fft2_real(s, 8, 10), std::invalid_argument);
}

TEST_CASE("fft adjoints satisfy the dot-product identity") {
  Rng rng(10);
  const int H = 6, W = 8, Wf = 5;
  Tensor x(1, 2, H, W);
  fill_random(x, rng);
  Spectrum gs;
  gs.full_w = W;
  gs.re = Tensor(1, 2, H, Wf);
  gs.im = Tensor(1, 2, H, Wf);
  fill_random(gs.re, rng);
  fill_random(gs.im, rng);

  // < fft(x), gs > == < x, fft^T(gs) >
  const Spectrum fx = fft2_real(x);
  double lhs = 0.0;
  for (std::int64_t i = 0; i < fx.re.numel(); ++i) lhs += fx.re[i] * gs.re[i] + fx.im[i] * gs.im[i];
  const Tensor adj = fft2_real_adjoint(gs, H, W);
  double rhs = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * adj[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  // < ifft(s), g > == < s, ifft^T(g) >
  Spectrum s;
  s.full_w = W;
  s.re = Tensor(1, 2, H, Wf);
  s.im = Tensor(1, 2, H, Wf);
  fill_random(s.re, rng);
  fill_random(s.im, rng);
  Tensor g(1, 2, H, W);
  fill_random(g, rng);
  const Tensor ix = inverse_fft2_real(s, H, W);
  double lhs2 = 0.0;
  for (std::int64_t i = 0; i < ix.numel(); ++i) lhs2 += ix[i] * g[i];
  const Spectrum sadj = inverse_fft2_real_adjoint(g);
  double rhs2 = 0.0;
  for (std::int64_t i = 0; i < s.re.numel(); ++i) rhs2 += s.re[i] * sadj.re[i] + s.im[i] * sadj.im[i];
  CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-10));
}

// ---------------------------------------------------------------------------
// frequency filter

TEST_CASE("frequency filter value semantics") {
  const FrequencyFilterSpec keep{FilterMode::keep, 10.0};
  const FrequencyFilterSpec remove{FilterMode::remove, 10.0};
  const FrequencyFilterSpec none{FilterMode::none, 0.0};

  CHECK(filter_value(5.0, keep) == 5.0);
  CHECK(filter_value(23.7, keep) == 10.0);
  CHECK(filter_value(-23.7, keep) == -10.0);
  CHECK(filter_value(5.0, remove) == 10.0);
  CHECK(filter_value(-3.0, remove) == -10.0);
  CHECK(filter_value(0.0, remove) == -10.0);  // 0 maps to the negative bound
  CHECK(filter_value(10.0, remove) == 10.0);
  CHECK(filter_value(-10.0, remove) == -10.0);
  CHECK(filter_value(42.0, remove) == 42.0);
  CHECK(filter_value(1.5, none) == 1.5);

  FrequencyFilterSpec bad{FilterMode::keep, 0.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("frequency filter idempotence and range properties") {
  Rng rng(11);
  Tensor x(1, 2, 8, 8);
  fill_random(x, rng, -30.0, 30.0);
  Spectrum s = fft2_real(x);

  for (const auto mode : {FilterMode::none, FilterMode::keep, FilterMode::remove}) {
    const FrequencyFilterSpec spec{mode, 10.0};
    const Spectrum once = apply_frequency_filter(s, spec);
    const Spectrum twice = apply_frequency_filter(once, spec);
    CHECK(testsup::bitwise_equal(once.re, twice.re));
    CHECK(testsup::bitwise_equal(once.im, twice.im));
  }

  const Spectrum kept = apply_frequency_filter(s, {FilterMode::keep, 10.0});
  for (std::int64_t i = 0; i < kept.re.numel(); ++i) {
    CHECK(std::abs(kept.re[i]) <= std::abs(s.re[i]) + 1e-15);
    CHECK(std::abs(kept.re[i]) <= 10.0);
    CHECK(std::abs(kept.im[i]) <= std::abs(s.im[i]) + 1e-15);
  }
  const Spectrum removed = apply_frequency_filter(s, {FilterMode::remove, 10.0});
  for (std::int64_t i = 0; i < removed.re.numel(); ++i) {
    const bool re_ok = removed.re[i] == 0.0 || std::abs(removed.re[i]) >= 10.0;
    const bool im_ok = removed.im[i] == 0.0 || std::abs(removed.im[i]) >= 10.0;
    CHECK(re_ok);
    CHECK(im_ok);
  }
}
