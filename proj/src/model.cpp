#include "spectralseg/model.hpp"

#include <stdexcept>

#include "spectralseg/kernels.hpp"

namespace spectralseg {

Variant variant_from_string(const std::string& s) {
  if (s == "ynet") return Variant::ynet;
  if (s == "unet") return Variant::unet;
  if (s == "ynet_conv_branch") return Variant::ynet_conv_branch;
  throw std::invalid_argument("unknown model variant '" + s + "' (expected ynet|unet|ynet_conv_branch)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ynet: return "ynet";
    case Variant::unet: return "unet";
    case Variant::ynet_conv_branch: return "ynet_conv_branch";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (depth != 4) throw std::invalid_argument("ModelConfig: depth must be 4");
  if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
  if (base_width < 1) throw std::invalid_argument("ModelConfig: base_width must be >= 1");
  if (variant == Variant::ynet && (base_width % 4 != 0)) {
    throw std::invalid_argument("ModelConfig: ynet requires base_width divisible by 4 (got " +
                                std::to_string(base_width) + ")");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ModelConfig: alpha must lie in [0, 1]");
  if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0) {
    throw std::invalid_argument("ModelConfig: input size must be >= 16 and divisible by 16");
  }
  filter.validate();
}

SegmentationModel::SegmentationModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build();
}

SegmentationModel build_model(const ModelConfig& cfg) { return SegmentationModel(cfg); }

void SegmentationModel::build() {
  const int w = cfg_.base_width;
  // spatial encoder: 1 -> w -> 2w -> 4w -> 8w
  enc_[0] = ConvBlock(1, w);
  enc_[1] = ConvBlock(w, 2 * w);
  enc_[2] = ConvBlock(2 * w, 4 * w);
  enc_[3] = ConvBlock(4 * w, 8 * w);

  if (cfg_.variant == Variant::ynet) {
    // FFC blocks mirror the stage widths, split evenly between the local and
    // global streams; the first block's global input is a one-channel zero map.
    for (int i = 0; i < 4; ++i) {
      const int cl_in = i == 0 ? 1 : stage_width(i - 1) / 2;
      const int cg_in = i == 0 ? 1 : stage_width(i - 1) / 2;
      fblocks_[static_cast<size_t>(i)] =
          FFCBlock(cl_in, cg_in, stage_width(i) / 2, stage_width(i) / 2, cfg_.alpha, cfg_.filter);
    }
  } else if (cfg_.variant == Variant::ynet_conv_branch) {
    benc_[0] = ConvBlock(1, w);
    benc_[1] = ConvBlock(w, 2 * w);
    benc_[2] = ConvBlock(2 * w, 4 * w);
    benc_[3] = ConvBlock(4 * w, 8 * w);
  }

  if (cfg_.variant == Variant::unet) {
    // classic channel-doubling bottleneck
    bottleneck_ = ConvBlock(8 * w, 16 * w);
  } else {
    // the two concatenated encoder outputs already carry 16w channels;
    // compress-expand instead of doubling
    bottleneck_ = ConvBlock(16 * w, 8 * w, 16 * w);
  }

  up_[0] = ConvTranspose2d(16 * w, 8 * w);
  dec_[0] = ConvBlock(16 * w, 8 * w);
  up_[1] = ConvTranspose2d(8 * w, 4 * w);
  dec_[1] = ConvBlock(8 * w, 4 * w);
  up_[2] = ConvTranspose2d(4 * w, 2 * w);
  dec_[2] = ConvBlock(4 * w, 2 * w);
  up_[3] = ConvTranspose2d(2 * w, w);
  dec_[3] = ConvBlock(2 * w, w);
  head_ = Conv2d(w, cfg_.num_classes, 1, true);
}

void SegmentationModel::init_weights(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : enc_) e.init(rng);
  if (cfg_.variant == Variant::ynet) {
    for (auto& f : fblocks_) f.init(rng);
  } else if (cfg_.variant == Variant::ynet_conv_branch) {
    for (auto& e : benc_) e.init(rng);
  }
  bottleneck_.init(rng);
  for (auto& u : up_) u.init(rng);
  for (auto& d : dec_) d.init(rng);
  head_.init(rng);
}

Tensor SegmentationModel::forward(const Tensor& x, bool train, Activations& acts, const Tensor* second_override) {
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw std::invalid_argument("forward: expected [B, 1, H, W] input, got " + x.shape_str());
  }
  const int H = x.dim(2), W = x.dim(3);
  if (H < 16 || W < 16 || H % 16 != 0 || W % 16 != 0) {
    throw std::invalid_argument("forward: spatial dims must be >= 16 and divisible by 16, got " + x.shape_str());
  }
  const int B = x.dim(0);
  acts.input = x;

  Tensor cur = x;
  for (int i = 0; i < 4; ++i) {
    acts.s_pre[static_cast<size_t>(i)] =
        enc_[static_cast<size_t>(i)].forward(cur, train, acts.s_ctx[static_cast<size_t>(i)]);
    acts.s_post[static_cast<size_t>(i)] =
        pool_.forward(acts.s_pre[static_cast<size_t>(i)], acts.s_pool[static_cast<size_t>(i)]);
    cur = acts.s_post[static_cast<size_t>(i)];
  }

  if (second_override != nullptr) {
    acts.second_final = *second_override;
  } else if (cfg_.variant == Variant::ynet) {
    acts.f_l[0] = x;
    acts.f_g[0] = Tensor(B, 1, H, W);  // zero global stream into the first block
    for (int i = 0; i < 4; ++i) {
      auto [yl, yg] = fblocks_[static_cast<size_t>(i)].forward(acts.f_l[static_cast<size_t>(i)],
                                                               acts.f_g[static_cast<size_t>(i)], train,
                                                               acts.f_ctx[static_cast<size_t>(i)]);
      acts.f_l[static_cast<size_t>(i) + 1] = std::move(yl);
      acts.f_g[static_cast<size_t>(i) + 1] = std::move(yg);
    }
    acts.second_final = concat_channels(acts.f_l[4], acts.f_g[4]);
  } else if (cfg_.variant == Variant::ynet_conv_branch) {
    acts.b_in[0] = x;
    for (int i = 0; i < 4; ++i) {
      acts.b_pre[static_cast<size_t>(i)] = benc_[static_cast<size_t>(i)].forward(
          acts.b_in[static_cast<size_t>(i)], train, acts.b_ctx[static_cast<size_t>(i)]);
      acts.b_in[static_cast<size_t>(i) + 1] =
          pool_.forward(acts.b_pre[static_cast<size_t>(i)], acts.b_pool[static_cast<size_t>(i)]);
    }
    acts.second_final = acts.b_in[4];
  }

  if (cfg_.variant == Variant::unet && second_override == nullptr) {
    acts.fused = acts.s_post[3];
  } else {
    acts.fused = concat_channels(acts.s_post[3], acts.second_final);
  }
  acts.bneck_out = bottleneck_.forward(acts.fused, train, acts.bneck_ctx);

  cur = acts.bneck_out;
  for (int i = 0; i < 4; ++i) {
    acts.up_out[static_cast<size_t>(i)] = up_[static_cast<size_t>(i)].forward(cur);
    acts.cat_in[static_cast<size_t>(i)] =
        concat_channels(acts.up_out[static_cast<size_t>(i)], acts.s_pre[static_cast<size_t>(3 - i)]);
    acts.d_out[static_cast<size_t>(i)] = dec_[static_cast<size_t>(i)].forward(
        acts.cat_in[static_cast<size_t>(i)], train, acts.d_ctx[static_cast<size_t>(i)]);
    cur = acts.d_out[static_cast<size_t>(i)];
  }
  acts.logits = head_.forward(cur);
  return acts.logits;
}

void SegmentationModel::backward(const Activations& acts, const Tensor& dlogits) {
  const int B = acts.input.dim(0);
  Tensor g = Tensor(B, cfg_.base_width, acts.d_out[3].dim(2), acts.d_out[3].dim(3));
  head_.backward(acts.d_out[3], dlogits, &g);

  std::array<Tensor, 4> skip_grad;  // gradient into each spatial skip tap
  Tensor gcur = std::move(g);
  for (int i = 3; i >= 0; --i) {
    Tensor gcat = dec_[static_cast<size_t>(i)].backward(acts.d_ctx[static_cast<size_t>(i)],
                                                        acts.cat_in[static_cast<size_t>(i)],
                                                        acts.d_out[static_cast<size_t>(i)], gcur);
    auto [gup, gskip] = split_channels(gcat, acts.up_out[static_cast<size_t>(i)].dim(1));
    skip_grad[static_cast<size_t>(3 - i)] = std::move(gskip);
    const Tensor& up_in = i == 0 ? acts.bneck_out : acts.d_out[static_cast<size_t>(i) - 1];
    Tensor gprev(up_in.dim(0), up_in.dim(1), up_in.dim(2), up_in.dim(3));
    up_[static_cast<size_t>(i)].backward(up_in, gup, &gprev);
    gcur = std::move(gprev);
  }

  Tensor gfused = bottleneck_.backward(acts.bneck_ctx, acts.fused, acts.bneck_out, gcur);

  Tensor gs_post;       // gradient into the deepest pooled spatial features
  Tensor gsecond;       // gradient into the second branch's final features
  const bool fused_has_second = acts.fused.dim(1) != acts.s_post[3].dim(1);
  if (fused_has_second) {
    auto [a, b] = split_channels(gfused, acts.s_post[3].dim(1));
    gs_post = std::move(a);
    gsecond = std::move(b);
  } else {
    gs_post = std::move(gfused);
  }

  if (cfg_.variant == Variant::ynet && gsecond.numel() > 0 && acts.f_l[4].numel() > 0) {
    auto [gl, gg] = split_channels(gsecond, acts.f_l[4].dim(1));
    for (int i = 3; i >= 0; --i) {
      auto [gxl, gxg] = fblocks_[static_cast<size_t>(i)].backward(
          acts.f_ctx[static_cast<size_t>(i)], acts.f_l[static_cast<size_t>(i)], acts.f_g[static_cast<size_t>(i)],
          gl, gg);
      gl = std::move(gxl);
      gg = std::move(gxg);
    }
  } else if (cfg_.variant == Variant::ynet_conv_branch && gsecond.numel() > 0 && acts.b_in[4].numel() > 0) {
    Tensor gb = std::move(gsecond);
    for (int i = 3; i >= 0; --i) {
      Tensor gpre = pool_.backward(acts.b_pool[static_cast<size_t>(i)], gb, B, acts.b_pre[static_cast<size_t>(i)].dim(1));
      gb = benc_[static_cast<size_t>(i)].backward(acts.b_ctx[static_cast<size_t>(i)],
                                                  acts.b_in[static_cast<size_t>(i)],
                                                  acts.b_pre[static_cast<size_t>(i)], gpre, i > 0);
    }
  }

  Tensor gpost = std::move(gs_post);
  for (int i = 3; i >= 0; --i) {
    Tensor gpre = pool_.backward(acts.s_pool[static_cast<size_t>(i)], gpost, B, acts.s_pre[static_cast<size_t>(i)].dim(1));
    if (!gpre.same_shape(skip_grad[static_cast<size_t>(i)])) {
      throw std::logic_error("backward: skip gradient shape mismatch at stage " + std::to_string(i));
    }
    kern::add_inplace(gpre.data(), skip_grad[static_cast<size_t>(i)].data(), gpre.numel());
    const Tensor& x_in = i == 0 ? acts.input : acts.s_post[static_cast<size_t>(i) - 1];
    gpost = enc_[static_cast<size_t>(i)].backward(acts.s_ctx[static_cast<size_t>(i)], x_in,
                                                  acts.s_pre[static_cast<size_t>(i)], gpre, i > 0);
  }
}

Tensor SegmentationModel::predict(const Tensor& x) {
  Activations acts;
  return forward(x, false, acts);
}

std::vector<Param> SegmentationModel::parameters() {
  std::vector<Param> params;
  std::vector<BufferRef> buffers;
  for (int i = 0; i < 4; ++i) {
    enc_[static_cast<size_t>(i)].collect("spatial.enc" + std::to_string(i + 1), params, &buffers);
  }
  if (cfg_.variant == Variant::ynet) {
    for (int i = 0; i < 4; ++i) {
      fblocks_[static_cast<size_t>(i)].collect("spectral.block" + std::to_string(i + 1), params, &buffers);
    }
  } else if (cfg_.variant == Variant::ynet_conv_branch) {
    for (int i = 0; i < 4; ++i) {
      benc_[static_cast<size_t>(i)].collect("branch.enc" + std::to_string(i + 1), params, &buffers);
    }
  }
  bottleneck_.collect("decoder.bottleneck", params, &buffers);
  for (int i = 0; i < 4; ++i) {
    up_[static_cast<size_t>(i)].collect("decoder.up" + std::to_string(4 - i), params);
    dec_[static_cast<size_t>(i)].collect("decoder.dec" + std::to_string(4 - i), params, &buffers);
  }
  head_.collect("head", params);
  return params;
}

std::vector<BufferRef> SegmentationModel::buffers() {
  std::vector<Param> params;
  std::vector<BufferRef> buffers;
  for (int i = 0; i < 4; ++i) {
    enc_[static_cast<size_t>(i)].collect("spatial.enc" + std::to_string(i + 1), params, &buffers);
  }
  if (cfg_.variant == Variant::ynet) {
    for (int i = 0; i < 4; ++i) {
      fblocks_[static_cast<size_t>(i)].collect("spectral.block" + std::to_string(i + 1), params, &buffers);
    }
  } else if (cfg_.variant == Variant::ynet_conv_branch) {
    for (int i = 0; i < 4; ++i) {
      benc_[static_cast<size_t>(i)].collect("branch.enc" + std::to_string(i + 1), params, &buffers);
    }
  }
  bottleneck_.collect("decoder.bottleneck", params, &buffers);
  for (int i = 0; i < 4; ++i) {
    up_[static_cast<size_t>(i)].collect("decoder.up" + std::to_string(4 - i), params);
    dec_[static_cast<size_t>(i)].collect("decoder.dec" + std::to_string(4 - i), params, &buffers);
  }
  head_.collect("head", params);
  return buffers;
}

void SegmentationModel::zero_grad() {
  for (auto& p : parameters()) p.grad->zero();
}

std::int64_t SegmentationModel::count_parameters() const {
  std::int64_t n = 0;
  for (const auto& e : enc_) n += e.param_count();
  if (cfg_.variant == Variant::ynet) {
    for (const auto& f : fblocks_) n += f.param_count();
  } else if (cfg_.variant == Variant::ynet_conv_branch) {
    for (const auto& e : benc_) n += e.param_count();
  }
  n += bottleneck_.param_count();
  for (const auto& u : up_) n += u.param_count();
  for (const auto& d : dec_) n += d.param_count();
  n += head_.param_count();
  return n;
}

}  // namespace spectralseg
