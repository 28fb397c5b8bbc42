#pragma once

#include <array>
#include <string>
#include <vector>

#include "spectralseg/layers.hpp"

namespace spectralseg {

enum class Variant { ynet, unet, ynet_conv_branch };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  Variant variant = Variant::ynet;
  int num_classes = 9;
  int depth = 4;  // fixed four encoder stages
  int base_width = 32;
  double alpha = 0.5;
  FrequencyFilterSpec filter;
  int input_h = 224;
  int input_w = 224;

  void validate() const;
};

// Per-forward activation cache; owned by the caller so evaluation batches and
// training steps can overlap without shared mutable state in the model.
struct Activations {
  Tensor input;
  // spatial encoder
  std::array<Tensor, 4> s_pre;   // pre-pool block outputs (skip taps)
  std::array<ConvBlockCtx, 4> s_ctx;
  std::array<PoolCtx, 4> s_pool;
  std::array<Tensor, 4> s_post;  // pooled stage outputs
  // second branch (FFC blocks, or conv blocks for the ablation variant)
  std::array<Tensor, 5> f_l, f_g;  // stream values entering each FFC block
  std::array<FFCBlockCtx, 4> f_ctx;
  std::array<Tensor, 5> b_in;
  std::array<ConvBlockCtx, 4> b_ctx;
  std::array<PoolCtx, 4> b_pool;
  std::array<Tensor, 4> b_pre;
  Tensor second_final;  // second-branch features entering the fusion concat
  // fusion + bottleneck + decoder
  Tensor fused;
  ConvBlockCtx bneck_ctx;
  Tensor bneck_out;
  std::array<Tensor, 4> up_out;   // index 0 = deepest up stage
  std::array<Tensor, 4> cat_in;
  std::array<ConvBlockCtx, 4> d_ctx;
  std::array<Tensor, 4> d_out;
  Tensor logits;
};

// Dual-encoder segmentation network with a U-Net style decoder. The spatial
// encoder always exists and provides the skip connections; the second branch
// depends on the variant. The decoder concatenates both encoders' final
// features ahead of the bottleneck (variant unet feeds the bottleneck the
// spatial features alone).
class SegmentationModel {
 public:
  SegmentationModel() = default;
  explicit SegmentationModel(const ModelConfig& cfg);

  void init_weights(std::uint64_t seed);

  // `second_override`: when non-null, skips the second branch and uses the
  // given tensor as its final features (the zero-filled-slot construction).
  Tensor forward(const Tensor& x, bool train, Activations& acts, const Tensor* second_override = nullptr);
  // Accumulates parameter gradients from d(loss)/d(logits).
  void backward(const Activations& acts, const Tensor& dlogits);

  Tensor predict(const Tensor& x);  // evaluation mode, no gradient state

  std::vector<Param> parameters();
  std::vector<BufferRef> buffers();
  void zero_grad();
  std::int64_t count_parameters() const;

  const ModelConfig& config() const { return cfg_; }

  // stage widths: w, 2w, 4w, 8w; bottleneck operates at 16w
  int stage_width(int i) const { return cfg_.base_width << i; }

 private:
  void build();

  ModelConfig cfg_;
  std::array<ConvBlock, 4> enc_;
  MaxPool2 pool_;
  std::array<FFCBlock, 4> fblocks_;
  std::array<ConvBlock, 4> benc_;  // conv-branch ablation
  ConvBlock bottleneck_;
  std::array<ConvTranspose2d, 4> up_;   // index 0 = deepest
  std::array<ConvBlock, 4> dec_;
  Conv2d head_;
};

SegmentationModel build_model(const ModelConfig& cfg);

}  // namespace spectralseg
