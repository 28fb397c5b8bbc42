#pragma once

#include <memory>
#include <string>
#include <vector>

#include "spectralseg/fft.hpp"
#include "spectralseg/rng.hpp"
#include "spectralseg/tensor.hpp"

namespace spectralseg {

// Named reference to one learnable tensor and its gradient accumulator.
struct Param {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

// Non-learnable persistent state (batch-norm running statistics).
struct BufferRef {
  std::string name;
  Tensor* value = nullptr;
};

Tensor relu(const Tensor& x);
Tensor relu_grad_from_output(const Tensor& y, const Tensor& gy);

// Leading `c_first` channels go to the first output (the "global" side when
// splitting by alpha). Concatenation restores the input exactly.
std::pair<Tensor, Tensor> split_channels(const Tensor& x, int c_first);
Tensor concat_channels(const Tensor& a, const Tensor& b);
int alpha_split_channels(int channels, double alpha);  // round-half-up(alpha*C)

class Conv2d {
 public:
  Conv2d() = default;
  // ksize 1 or 3 (3 implies stride 1 / pad 1)
  Conv2d(int cin, int cout, int ksize, bool bias);

  Tensor forward(const Tensor& x) const;
  // Accumulates weight/bias gradients; writes input gradient when gx != null.
  void backward(const Tensor& x, const Tensor& gy, Tensor* gx);

  void init(Rng& rng);
  void collect(const std::string& prefix, std::vector<Param>& params);
  std::int64_t param_count() const;

  int cin = 0, cout = 0, k = 0;
  bool has_bias = false;
  Tensor w, b, gw, gb;
};

class ConvTranspose2d {  // kernel 2, stride 2, with bias
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int cin, int cout);

  Tensor forward(const Tensor& x) const;
  void backward(const Tensor& x, const Tensor& gy, Tensor* gx);

  void init(Rng& rng);
  void collect(const std::string& prefix, std::vector<Param>& params);
  std::int64_t param_count() const;

  int cin = 0, cout = 0;
  Tensor w, b, gw, gb;  // w layout [Ci, Co, 2, 2]
};

struct BNCtx {
  Tensor xhat;
  std::vector<double> mean, invstd;
  bool train = true;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x, bool train, BNCtx& ctx);
  void backward(const BNCtx& ctx, const Tensor& gy, Tensor* gx);

  void collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers);
  std::int64_t param_count() const;

  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  bool identity = false;  // test hook: pass input through untouched
  Tensor gamma, beta, ggamma, gbeta;
  Tensor running_mean, running_var;
};

struct PoolCtx {
  std::vector<std::uint8_t> idx;
  int H = 0, W = 0;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& x, PoolCtx& ctx) const;
  Tensor backward(const PoolCtx& ctx, const Tensor& gy, int B, int C) const;
};

struct FourierUnitCtx {
  Spectrum s_raw;   // spectrum before the frequency filter
  Tensor z_concat;  // stacked re/im planes, conv input
  BNCtx bn;
  Tensor z_act;  // post-activation stacked planes
  int H = 0, W = 0;
};

// FFT -> frequency filter -> stacked-plane 1x1 conv -> norm -> activation ->
// inverse FFT. Shape-preserving.
class FourierUnit {
 public:
  FourierUnit() = default;
  FourierUnit(int channels, FrequencyFilterSpec filter);

  Tensor forward(const Tensor& x, bool train, FourierUnitCtx& ctx);
  Tensor backward(const FourierUnitCtx& ctx, const Tensor& gy);

  void init(Rng& rng);
  void collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers);
  std::int64_t param_count() const;

  int channels = 0;
  Conv2d conv;      // 2C -> 2C, 1x1
  BatchNorm2d bn;   // over 2C stacked planes
  bool use_norm = true;
  bool use_act = true;
  FrequencyFilterSpec filter;
};

struct SpectralTransformCtx {
  BNCtx bn_in;
  Tensor x2;  // post conv_in/bn/relu, conv_out sees x2 + fourier output
  FourierUnitCtx fu_g, fu_l;
  Tensor sum_in;
};

// 1x1 reduction, alpha channel split into two Fourier units, residual sum,
// 1x1 expansion. A zero-channel side simply has no Fourier unit.
class SpectralTransform {
 public:
  SpectralTransform() = default;
  SpectralTransform(int cin, int cout, double alpha, FrequencyFilterSpec filter);

  Tensor forward(const Tensor& xg, bool train, SpectralTransformCtx& ctx);
  Tensor backward(const SpectralTransformCtx& ctx, const Tensor& xg, const Tensor& gy);

  void init(Rng& rng);
  void collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers);
  std::int64_t param_count() const;

  int cin = 0, cout = 0, mid = 0, cg = 0, cl = 0;
  double alpha = 0.5;
  Conv2d conv_in;  // cin -> mid, 1x1
  BatchNorm2d bn_in;
  std::unique_ptr<FourierUnit> fu_g, fu_l;
  Conv2d conv_out;  // mid -> cout, 1x1
};

struct FFCBlockCtx {
  SpectralTransformCtx st;
  BNCtx bn_l, bn_g;
  Tensor yl_act, yg_act;  // pre-pool activations
  PoolCtx pool_l, pool_g;
};

// Dual-stream block: three 3x3 conv paths plus the spectral path, then
// norm/activation/2x max-pool on both streams. Halves spatial dims.
class FFCBlock {
 public:
  FFCBlock() = default;
  FFCBlock(int cl_in, int cg_in, int cl_out, int cg_out, double alpha, FrequencyFilterSpec filter);

  std::pair<Tensor, Tensor> forward(const Tensor& xl, const Tensor& xg, bool train, FFCBlockCtx& ctx);
  std::pair<Tensor, Tensor> backward(const FFCBlockCtx& ctx, const Tensor& xl, const Tensor& xg,
                                     const Tensor& gyl, const Tensor& gyg);

  void init(Rng& rng);
  void collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers);
  std::int64_t param_count() const;

  int cl_in = 0, cg_in = 0, cl_out = 0, cg_out = 0;
  Conv2d l2l, l2g, g2l;
  SpectralTransform st;
  BatchNorm2d bn_l, bn_g;
  MaxPool2 pool;
};

struct ConvBlockCtx {
  BNCtx bn1, bn2;
  Tensor a1;  // output of the first conv/norm/act stage
};

// Two 3x3 conv / batch-norm / ReLU stages (classic U-Net block). The
// three-argument form routes through a different middle width.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int cin, int cout) : ConvBlock(cin, cout, cout) {}
  ConvBlock(int cin, int mid, int cout);

  Tensor forward(const Tensor& x, bool train, ConvBlockCtx& ctx);
  // `y` is the block output returned by forward (used for the ReLU gradient).
  Tensor backward(const ConvBlockCtx& ctx, const Tensor& x, const Tensor& y, const Tensor& gy,
                  bool need_gx = true);

  void init(Rng& rng);
  void collect(const std::string& prefix, std::vector<Param>& params, std::vector<BufferRef>* buffers);
  std::int64_t param_count() const;

  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
};

}  // namespace spectralseg
