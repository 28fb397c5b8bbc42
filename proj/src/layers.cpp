#include "spectralseg/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "spectralseg/kernels.hpp"

namespace spectralseg {

namespace {

void check_input(const Tensor& x, int cin, const char* what) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(what) + ": expected [B, C, H, W] input");
  if (x.dim(1) != cin) {
    throw std::invalid_argument(std::string(what) + ": channel mismatch, expected " + std::to_string(cin) +
                                " got " + std::to_string(x.dim(1)));
  }
}

}  // namespace

Tensor relu(const Tensor& x) {
  Tensor y = Tensor::zeros_like(x);
  kern::relu_forward(x.data(), y.data(), x.numel());
  return y;
}

Tensor relu_grad_from_output(const Tensor& y, const Tensor& gy) {
  Tensor gx = Tensor::zeros_like(y);
  kern::relu_backward(y.data(), gy.data(), gx.data(), y.numel());
  return gx;
}

int alpha_split_channels(int channels, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return static_cast<int>(std::floor(alpha * channels + 0.5));
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int c_first) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c_first < 0 || c_first > C) throw std::invalid_argument("split_channels: bad split point");
  Tensor a(B, c_first, H, W);
  Tensor b(B, C - c_first, H, W);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < B; ++bi) {
    const double* src = x.data() + static_cast<std::int64_t>(bi) * C * HW;
    if (c_first > 0) kern::copy(src, a.data() + static_cast<std::int64_t>(bi) * c_first * HW, c_first * HW);
    if (C - c_first > 0) {
      kern::copy(src + static_cast<std::int64_t>(c_first) * HW,
                 b.data() + static_cast<std::int64_t>(bi) * (C - c_first) * HW,
                 static_cast<std::int64_t>(C - c_first) * HW);
    }
  }
  return {std::move(a), std::move(b)};
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.numel() == 0 && a.rank() != 4) return b;
  if (b.numel() == 0 && b.rank() != 4) return a;
  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  if (b.dim(0) != B || b.dim(2) != H || b.dim(3) != W) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor y(B, Ca + Cb, H, W);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < B; ++bi) {
    double* dst = y.data() + static_cast<std::int64_t>(bi) * (Ca + Cb) * HW;
    if (Ca > 0) kern::copy(a.data() + static_cast<std::int64_t>(bi) * Ca * HW, dst, static_cast<std::int64_t>(Ca) * HW);
    if (Cb > 0) {
      kern::copy(b.data() + static_cast<std::int64_t>(bi) * Cb * HW, dst + static_cast<std::int64_t>(Ca) * HW,
                 static_cast<std::int64_t>(Cb) * HW);
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int cin_, int cout_, int ksize, bool bias)
    : cin(cin_), cout(cout_), k(ksize), has_bias(bias) {
  if (k != 1 && k != 3) throw std::invalid_argument("Conv2d: only 1x1 and 3x3 kernels are supported");
  w = Tensor(std::vector<int>{cout, cin, k, k});
  gw = Tensor::zeros_like(w);
  if (has_bias) {
    b = Tensor(std::vector<int>{cout});
    gb = Tensor::zeros_like(b);
  }
}

void Conv2d::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  if (has_bias) b.zero();
}

Tensor Conv2d::forward(const Tensor& x) const {
  check_input(x, cin, "Conv2d");
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  Tensor y(B, cout, H, W);
  if (k == 3) {
    kern::conv3x3_forward(x.data(), B, cin, H, W, w.data(), cout, y.data());
  } else {
    for (int bi = 0; bi < B; ++bi) {
      kern::gemm_nn(cout, static_cast<int>(HW), cin, w.data(),
                    x.data() + static_cast<std::int64_t>(bi) * cin * HW,
                    y.data() + static_cast<std::int64_t>(bi) * cout * HW, false);
    }
  }
  if (has_bias) {
#pragma omp parallel for schedule(static) collapse(2)
    for (int bi = 0; bi < B; ++bi) {
      for (int co = 0; co < cout; ++co) {
        double* row = y.data() + (static_cast<std::int64_t>(bi) * cout + co) * HW;
        const double bias = b[co];
#pragma omp simd
        for (std::int64_t i = 0; i < HW; ++i) row[i] += bias;
      }
    }
  }
  return y;
}

void Conv2d::backward(const Tensor& x, const Tensor& gy, Tensor* gx) {
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  if (k == 3) {
    kern::conv3x3_weight_grad(x.data(), gy.data(), B, cin, cout, H, W, gw.data());
    if (gx) {
      gx->zero();
      kern::conv3x3_input_grad(gy.data(), B, cout, H, W, w.data(), cin, gx->data());
    }
  } else {
    if (gx) gx->zero();
    for (int bi = 0; bi < B; ++bi) {
      const double* xb = x.data() + static_cast<std::int64_t>(bi) * cin * HW;
      const double* gyb = gy.data() + static_cast<std::int64_t>(bi) * cout * HW;
      kern::gemm_nt(cout, cin, static_cast<int>(HW), gyb, xb, gw.data(), true);
      if (gx) {
        kern::gemm_tn(cin, static_cast<int>(HW), cout, w.data(), gyb,
                      gx->data() + static_cast<std::int64_t>(bi) * cin * HW, false);
      }
    }
  }
  if (has_bias) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      double s = 0.0;
      for (int bi = 0; bi < B; ++bi) {
        const double* row = gy.data() + (static_cast<std::int64_t>(bi) * cout + co) * HW;
        for (std::int64_t i = 0; i < HW; ++i) s += row[i];
      }
      gb[co] += s;
    }
  }
}

void Conv2d::collect(const std::string& prefix, std::vector<Param>& params) {
  params.push_back({prefix + ".weight", &w, &gw});
  if (has_bias) params.push_back({prefix + ".bias", &b, &gb});
}

std::int64_t Conv2d::param_count() const {
  return static_cast<std::int64_t>(cin) * cout * k * k + (has_bias ? cout : 0);
}

// ---------------------------------------------------------------------------
// ConvTranspose2d (kernel 2, stride 2)

ConvTranspose2d::ConvTranspose2d(int cin_, int cout_) : cin(cin_), cout(cout_) {
  w = Tensor(std::vector<int>{cin, cout, 2, 2});
  gw = Tensor::zeros_like(w);
  b = Tensor(std::vector<int>{cout});
  gb = Tensor::zeros_like(b);
}

void ConvTranspose2d::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * 4.0);
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  b.zero();
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  check_input(x, cin, "ConvTranspose2d");
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  const int Ho = 2 * H, Wo = 2 * W;
  Tensor y(B, cout, Ho, Wo);
  std::vector<double> t(static_cast<size_t>(cout) * 4 * HW);
  for (int bi = 0; bi < B; ++bi) {
    const double* xb = x.data() + static_cast<std::int64_t>(bi) * cin * HW;
    // w viewed as [Ci x (Co*4)]; T = w^T * x gives per-offset output planes
    kern::gemm_tn(cout * 4, static_cast<int>(HW), cin, w.data(), xb, t.data(), false);
    double* yb = y.data() + static_cast<std::int64_t>(bi) * cout * Ho * Wo;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      double* out = yb + static_cast<std::int64_t>(co) * Ho * Wo;
      const double bias = b[co];
      for (int d = 0; d < 4; ++d) {
        const int di = d >> 1, dj = d & 1;
        const double* src = t.data() + (static_cast<std::int64_t>(co) * 4 + d) * HW;
        for (int i = 0; i < H; ++i) {
          double* orow = out + static_cast<std::int64_t>(2 * i + di) * Wo + dj;
          const double* srow = src + static_cast<std::int64_t>(i) * W;
#pragma omp simd
          for (int j = 0; j < W; ++j) orow[2 * j] = srow[j] + bias;
        }
      }
    }
  }
  return y;
}

void ConvTranspose2d::backward(const Tensor& x, const Tensor& gy, Tensor* gx) {
  const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  const int Ho = 2 * H, Wo = 2 * W;
  std::vector<double> tg(static_cast<size_t>(cout) * 4 * HW);
  for (int bi = 0; bi < B; ++bi) {
    const double* gyb = gy.data() + static_cast<std::int64_t>(bi) * cout * Ho * Wo;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      const double* gout = gyb + static_cast<std::int64_t>(co) * Ho * Wo;
      double gbias = 0.0;
      for (int d = 0; d < 4; ++d) {
        const int di = d >> 1, dj = d & 1;
        double* dst = tg.data() + (static_cast<std::int64_t>(co) * 4 + d) * HW;
        for (int i = 0; i < H; ++i) {
          const double* grow = gout + static_cast<std::int64_t>(2 * i + di) * Wo + dj;
          double* drow = dst + static_cast<std::int64_t>(i) * W;
          double s = 0.0;
#pragma omp simd reduction(+ : s)
          for (int j = 0; j < W; ++j) {
            drow[j] = grow[2 * j];
            s += grow[2 * j];
          }
          gbias += s;
        }
      }
      gb[co] += gbias;
    }
    const double* xb = x.data() + static_cast<std::int64_t>(bi) * cin * HW;
    kern::gemm_nt(cin, cout * 4, static_cast<int>(HW), xb, tg.data(), gw.data(), true);
    if (gx) {
      kern::gemm_nn(cin, static_cast<int>(HW), cout * 4, w.data(), tg.data(),
                    gx->data() + static_cast<std::int64_t>(bi) * cin * HW, false);
    }
  }
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<Param>& params) {
  params.push_back({prefix + ".weight", &w, &gw});
  params.push_back({prefix + ".bias", &b, &gb});
}

std::int64_t ConvTranspose2d::param_count() const {
  return static_cast<std::int64_t>(cin) * cout * 4 + cout;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels_) : channels(channels_) {
  gamma = Tensor(std::vector<int>{channels});
  beta = Tensor(std::vector<int>{channels});
  ggamma = Tensor::zeros_like(gamma);
  gbeta = Tensor::zeros_like(beta);
  running_mean = Tensor(std::vector<int>{channels});
  running_var = Tensor(std::vector<int>{channels});
  gamma.fill(1.0);
  running_var.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train, BNCtx& ctx) {
  check_input(x, channels, "BatchNorm2d");
  ctx.train = train;
  if (identity) return x;
  const int B = x.dim(0), C = channels, H = x.dim(2), W = x.dim(3);
  const int HW = H * W;
  ctx.mean.resize(static_cast<size_t>(C));
  ctx.invstd.resize(static_cast<size_t>(C));
  if (train) {
    std::vector<double> var(static_cast<size_t>(C));
    kern::channel_mean_var(x.data(), B, C, HW, ctx.mean.data(), var.data());
    const double n = static_cast<double>(B) * HW;
    for (int c = 0; c < C; ++c) {
      ctx.invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * ctx.mean[static_cast<size_t>(c)];
      const double unbiased = n > 1.0 ? var[static_cast<size_t>(c)] * n / (n - 1.0) : var[static_cast<size_t>(c)];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      ctx.mean[static_cast<size_t>(c)] = running_mean[c];
      ctx.invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor y = Tensor::zeros_like(x);
  ctx.xhat = Tensor::zeros_like(x);
  kern::bn_normalize(x.data(), B, C, HW, ctx.mean.data(), ctx.invstd.data(), gamma.data(), beta.data(), y.data(),
                     ctx.xhat.data());
  return y;
}

void BatchNorm2d::backward(const BNCtx& ctx, const Tensor& gy, Tensor* gx) {
  if (identity) {
    if (gx) *gx = gy;
    return;
  }
  const int B = gy.dim(0), H = gy.dim(2), W = gy.dim(3);
  Tensor tmp;
  Tensor* out = gx;
  if (!out) {
    tmp = Tensor::zeros_like(gy);
    out = &tmp;
  }
  if (ctx.train) {
    kern::bn_backward(gy.data(), ctx.xhat.data(), B, channels, H * W, gamma.data(), ctx.invstd.data(), out->data(),
                      ggamma.data(), gbeta.data());
  } else {
    kern::bn_backward_eval(gy.data(), ctx.xhat.data(), B, channels, H * W, gamma.data(), ctx.invstd.data(),
                           out->data(), ggamma.data(), gbeta.data());
  }
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers) {
  params.push_back({prefix + ".gamma", &gamma, &ggamma});
  params.push_back({prefix + ".beta", &beta, &gbeta});
  if (buffers) {
    buffers->push_back({prefix + ".running_mean", &running_mean});
    buffers->push_back({prefix + ".running_var", &running_var});
  }
}

std::int64_t BatchNorm2d::param_count() const { return 2LL * channels; }

// ---------------------------------------------------------------------------
// MaxPool2

Tensor MaxPool2::forward(const Tensor& x, PoolCtx& ctx) const {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw std::invalid_argument("MaxPool2: spatial dims must be even, got " + x.shape_str());
  }
  ctx.H = H;
  ctx.W = W;
  Tensor y(B, C, H / 2, W / 2);
  ctx.idx.resize(static_cast<size_t>(y.numel()));
  kern::maxpool2_forward(x.data(), B * C, H, W, y.data(), ctx.idx.data());
  return y;
}

Tensor MaxPool2::backward(const PoolCtx& ctx, const Tensor& gy, int B, int C) const {
  Tensor gx(B, C, ctx.H, ctx.W);
  kern::maxpool2_backward(gy.data(), ctx.idx.data(), B * C, ctx.H, ctx.W, gx.data());
  return gx;
}

// ---------------------------------------------------------------------------
// FourierUnit

FourierUnit::FourierUnit(int channels_, FrequencyFilterSpec filter_)
    : channels(channels_), conv(2 * channels_, 2 * channels_, 1, false), bn(2 * channels_), filter(filter_) {}

void FourierUnit::init(Rng& rng) { conv.init(rng); }

Tensor FourierUnit::forward(const Tensor& x, bool train, FourierUnitCtx& ctx) {
  check_input(x, channels, "FourierUnit");
  ctx.H = x.dim(2);
  ctx.W = x.dim(3);
  ctx.s_raw = fft2_real(x);
  Spectrum filtered = apply_frequency_filter(ctx.s_raw, filter);
  ctx.z_concat = concat_channels(filtered.re, filtered.im);
  Tensor z = conv.forward(ctx.z_concat);
  if (use_norm) z = bn.forward(z, train, ctx.bn);
  if (use_act) z = relu(z);
  ctx.z_act = z;
  auto [re2, im2] = split_channels(z, channels);
  Spectrum back;
  back.re = std::move(re2);
  back.im = std::move(im2);
  back.full_w = ctx.W;
  return inverse_fft2_real(back, ctx.H, ctx.W);
}

Tensor FourierUnit::backward(const FourierUnitCtx& ctx, const Tensor& gy) {
  Spectrum gs = inverse_fft2_real_adjoint(gy);
  Tensor gz = concat_channels(gs.re, gs.im);
  if (use_act) gz = relu_grad_from_output(ctx.z_act, gz);
  if (use_norm) {
    Tensor gbn = Tensor::zeros_like(gz);
    bn.backward(ctx.bn, gz, &gbn);
    gz = std::move(gbn);
  }
  Tensor gconv_in = Tensor::zeros_like(ctx.z_concat);
  conv.backward(ctx.z_concat, gz, &gconv_in);
  auto [gre, gim] = split_channels(gconv_in, channels);
  Spectrum gspec;
  gspec.re = std::move(gre);
  gspec.im = std::move(gim);
  gspec.full_w = ctx.W;
  frequency_filter_backward(ctx.s_raw, filter, gspec);
  return fft2_real_adjoint(gspec, ctx.H, ctx.W);
}

void FourierUnit::collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers) {
  conv.collect(prefix + ".conv", params);
  bn.collect(prefix + ".bn", params, buffers);
}

std::int64_t FourierUnit::param_count() const { return conv.param_count() + bn.param_count(); }

// ---------------------------------------------------------------------------
// SpectralTransform

SpectralTransform::SpectralTransform(int cin_, int cout_, double alpha_, FrequencyFilterSpec filter_)
    : cin(cin_), cout(cout_), alpha(alpha_) {
  if (cout % 2 != 0) throw std::invalid_argument("SpectralTransform: output channels must be even");
  mid = cout / 2;
  cg = alpha_split_channels(mid, alpha);
  cl = mid - cg;
  conv_in = Conv2d(cin, mid, 1, false);
  bn_in = BatchNorm2d(mid);
  if (cg > 0) fu_g = std::make_unique<FourierUnit>(cg, filter_);
  if (cl > 0) fu_l = std::make_unique<FourierUnit>(cl, filter_);
  conv_out = Conv2d(mid, cout, 1, false);
}

void SpectralTransform::init(Rng& rng) {
  conv_in.init(rng);
  if (fu_g) fu_g->init(rng);
  if (fu_l) fu_l->init(rng);
  conv_out.init(rng);
}

Tensor SpectralTransform::forward(const Tensor& xg, bool train, SpectralTransformCtx& ctx) {
  Tensor x1 = conv_in.forward(xg);
  x1 = bn_in.forward(x1, train, ctx.bn_in);
  ctx.x2 = relu(x1);
  Tensor fu_out;
  if (cg > 0 && cl > 0) {
    auto [g, l] = split_channels(ctx.x2, cg);
    fu_out = concat_channels(fu_g->forward(g, train, ctx.fu_g), fu_l->forward(l, train, ctx.fu_l));
  } else if (cg > 0) {
    fu_out = fu_g->forward(ctx.x2, train, ctx.fu_g);
  } else {
    fu_out = fu_l->forward(ctx.x2, train, ctx.fu_l);
  }
  ctx.sum_in = ctx.x2;
  kern::add_inplace(ctx.sum_in.data(), fu_out.data(), fu_out.numel());
  return conv_out.forward(ctx.sum_in);
}

Tensor SpectralTransform::backward(const SpectralTransformCtx& ctx, const Tensor& xg, const Tensor& gy) {
  Tensor gsum = Tensor::zeros_like(ctx.sum_in);
  conv_out.backward(ctx.sum_in, gy, &gsum);
  // residual: gsum flows both into x2 directly and through the Fourier units
  Tensor gx2 = gsum;
  if (cg > 0 && cl > 0) {
    auto [gg, gl] = split_channels(gsum, cg);
    Tensor back = concat_channels(fu_g->backward(ctx.fu_g, gg), fu_l->backward(ctx.fu_l, gl));
    kern::add_inplace(gx2.data(), back.data(), back.numel());
  } else if (cg > 0) {
    Tensor back = fu_g->backward(ctx.fu_g, gsum);
    kern::add_inplace(gx2.data(), back.data(), back.numel());
  } else {
    Tensor back = fu_l->backward(ctx.fu_l, gsum);
    kern::add_inplace(gx2.data(), back.data(), back.numel());
  }
  gx2 = relu_grad_from_output(ctx.x2, gx2);
  Tensor gpre = Tensor::zeros_like(gx2);
  bn_in.backward(ctx.bn_in, gx2, &gpre);
  Tensor gx = Tensor(xg.dim(0), cin, xg.dim(2), xg.dim(3));
  conv_in.backward(xg, gpre, &gx);
  return gx;
}

void SpectralTransform::collect(const std::string& prefix, std::vector<Param>& params,
                                std::vector<BufferRef>* buffers) {
  conv_in.collect(prefix + ".conv_in", params);
  bn_in.collect(prefix + ".bn_in", params, buffers);
  if (fu_g) fu_g->collect(prefix + ".fu_global", params, buffers);
  if (fu_l) fu_l->collect(prefix + ".fu_local", params, buffers);
  conv_out.collect(prefix + ".conv_out", params);
}

std::int64_t SpectralTransform::param_count() const {
  std::int64_t n = conv_in.param_count() + bn_in.param_count() + conv_out.param_count();
  if (fu_g) n += fu_g->param_count();
  if (fu_l) n += fu_l->param_count();
  return n;
}

// ---------------------------------------------------------------------------
// FFCBlock

FFCBlock::FFCBlock(int cl_in_, int cg_in_, int cl_out_, int cg_out_, double alpha, FrequencyFilterSpec filter)
    : cl_in(cl_in_),
      cg_in(cg_in_),
      cl_out(cl_out_),
      cg_out(cg_out_),
      l2l(cl_in_, cl_out_, 3, false),
      l2g(cl_in_, cg_out_, 3, false),
      g2l(cg_in_, cl_out_, 3, false),
      st(cg_in_, cg_out_, alpha, filter),
      bn_l(cl_out_),
      bn_g(cg_out_) {}

void FFCBlock::init(Rng& rng) {
  l2l.init(rng);
  l2g.init(rng);
  g2l.init(rng);
  st.init(rng);
}

std::pair<Tensor, Tensor> FFCBlock::forward(const Tensor& xl, const Tensor& xg, bool train, FFCBlockCtx& ctx) {
  if (xl.dim(2) != xg.dim(2) || xl.dim(3) != xg.dim(3)) {
    throw std::invalid_argument("FFCBlock: local/global spatial dims differ");
  }
  Tensor yl_pre = l2l.forward(xl);
  {
    Tensor t = g2l.forward(xg);
    kern::add_inplace(yl_pre.data(), t.data(), t.numel());
  }
  Tensor yg_pre = l2g.forward(xl);
  {
    Tensor t = st.forward(xg, train, ctx.st);
    kern::add_inplace(yg_pre.data(), t.data(), t.numel());
  }
  ctx.yl_act = relu(bn_l.forward(yl_pre, train, ctx.bn_l));
  ctx.yg_act = relu(bn_g.forward(yg_pre, train, ctx.bn_g));
  Tensor yl = pool.forward(ctx.yl_act, ctx.pool_l);
  Tensor yg = pool.forward(ctx.yg_act, ctx.pool_g);
  return {std::move(yl), std::move(yg)};
}

std::pair<Tensor, Tensor> FFCBlock::backward(const FFCBlockCtx& ctx, const Tensor& xl, const Tensor& xg,
                                             const Tensor& gyl, const Tensor& gyg) {
  const int B = xl.dim(0);
  Tensor gl = pool.backward(ctx.pool_l, gyl, B, cl_out);
  gl = relu_grad_from_output(ctx.yl_act, gl);
  Tensor gl_pre = Tensor::zeros_like(gl);
  bn_l.backward(ctx.bn_l, gl, &gl_pre);

  Tensor gg = pool.backward(ctx.pool_g, gyg, B, cg_out);
  gg = relu_grad_from_output(ctx.yg_act, gg);
  Tensor gg_pre = Tensor::zeros_like(gg);
  bn_g.backward(ctx.bn_g, gg, &gg_pre);

  Tensor gxl(B, cl_in, xl.dim(2), xl.dim(3));
  l2l.backward(xl, gl_pre, &gxl);
  {
    Tensor t(B, cl_in, xl.dim(2), xl.dim(3));
    l2g.backward(xl, gg_pre, &t);
    kern::add_inplace(gxl.data(), t.data(), t.numel());
  }
  Tensor gxg(B, cg_in, xg.dim(2), xg.dim(3));
  g2l.backward(xg, gl_pre, &gxg);
  {
    Tensor t = st.backward(ctx.st, xg, gg_pre);
    kern::add_inplace(gxg.data(), t.data(), t.numel());
  }
  return {std::move(gxl), std::move(gxg)};
}

void FFCBlock::collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers) {
  l2l.collect(prefix + ".l2l", params);
  l2g.collect(prefix + ".l2g", params);
  g2l.collect(prefix + ".g2l", params);
  st.collect(prefix + ".st", params, buffers);
  bn_l.collect(prefix + ".bn_l", params, buffers);
  bn_g.collect(prefix + ".bn_g", params, buffers);
}

std::int64_t FFCBlock::param_count() const {
  return l2l.param_count() + l2g.param_count() + g2l.param_count() + st.param_count() + bn_l.param_count() +
         bn_g.param_count();
}

// ---------------------------------------------------------------------------
// ConvBlock

ConvBlock::ConvBlock(int cin, int mid, int cout)
    : conv1(cin, mid, 3, false), conv2(mid, cout, 3, false), bn1(mid), bn2(cout) {}

void ConvBlock::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
}

Tensor ConvBlock::forward(const Tensor& x, bool train, ConvBlockCtx& ctx) {
  Tensor t = conv1.forward(x);
  t = bn1.forward(t, train, ctx.bn1);
  ctx.a1 = relu(t);
  t = conv2.forward(ctx.a1);
  t = bn2.forward(t, train, ctx.bn2);
  return relu(t);
}

Tensor ConvBlock::backward(const ConvBlockCtx& ctx, const Tensor& x, const Tensor& y, const Tensor& gy,
                           bool need_gx) {
  Tensor g = relu_grad_from_output(y, gy);
  Tensor g2 = Tensor::zeros_like(g);
  bn2.backward(ctx.bn2, g, &g2);
  Tensor ga1 = Tensor::zeros_like(ctx.a1);
  conv2.backward(ctx.a1, g2, &ga1);
  ga1 = relu_grad_from_output(ctx.a1, ga1);
  Tensor g1 = Tensor::zeros_like(ga1);
  bn1.backward(ctx.bn1, ga1, &g1);
  Tensor gx;
  if (need_gx) {
    gx = Tensor(x.dim(0), conv1.cin, x.dim(2), x.dim(3));
    conv1.backward(x, g1, &gx);
  } else {
    conv1.backward(x, g1, nullptr);
  }
  return gx;
}

void ConvBlock::collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers) {
  conv1.collect(prefix + ".conv1", params);
  bn1.collect(prefix + ".bn1", params, buffers);
  conv2.collect(prefix + ".conv2", params);
  bn2.collect(prefix + ".bn2", params, buffers);
}

std::int64_t ConvBlock::param_count() const {
  return conv1.param_count() + conv2.param_count() + bn1.param_count() + bn2.param_count();
}

}  // namespace spectralseg
