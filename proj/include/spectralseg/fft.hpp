#pragma once

#include <string>

#include "spectralseg/tensor.hpp"

namespace spectralseg {

// Frequency-domain twin of a [B, C, H, W] feature map. Real-input transform
// over the last two axes: full height, width reduced to W/2+1 by Hermitian
// symmetry. Convention: unnormalized forward, 1/(H*W) on the inverse.
struct Spectrum {
  Tensor re;  // [B, C, H, Wf]
  Tensor im;  // [B, C, H, Wf]
  int full_w = 0;

  int freq_w() const { return re.rank() == 4 ? re.dim(3) : 0; }
};

enum class FilterMode { none, keep, remove };

// Elementwise clamp/notch applied to raw spectral values (both planes).
struct FrequencyFilterSpec {
  FilterMode mode = FilterMode::none;
  double bound = 0.0;

  void validate() const;
  std::string str() const;
};

FilterMode filter_mode_from_string(const std::string& s);
std::string to_string(FilterMode m);

Spectrum fft2_real(const Tensor& x);
Tensor inverse_fft2_real(const Spectrum& s, int H, int W);

// Adjoints of the two linear maps above, for backpropagation.
Tensor fft2_real_adjoint(const Spectrum& grad_spec, int H, int W);
Spectrum inverse_fft2_real_adjoint(const Tensor& grad_x);

Spectrum apply_frequency_filter(const Spectrum& s, const FrequencyFilterSpec& spec);
// Pass-through gradient where the filter left the value untouched, zero where
// it pinned the value to a constant.
void frequency_filter_backward(const Spectrum& input, const FrequencyFilterSpec& spec, Spectrum& grad);

// Scalar filter semantics, exposed for direct testing.
double filter_value(double v, const FrequencyFilterSpec& spec);

}  // namespace spectralseg
