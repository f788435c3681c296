#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "downscale/errors.hpp"
#include "downscale/nn.hpp"

namespace dsc {

enum class Architecture { UNet, DeepESD, Pan };

inline Architecture parse_architecture(const std::string& s) {
  if (s == "unet") return Architecture::UNet;
  if (s == "deepesd") return Architecture::DeepESD;
  if (s == "pan") return Architecture::Pan;
  throw input_error("unknown architecture: " + s);
}

inline std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::UNet: return "unet";
    case Architecture::DeepESD: return "deepesd";
    case Architecture::Pan: return "pan";
  }
  throw input_error("bad architecture enum");
}

struct ArchitectureConfig {
  Architecture architecture = Architecture::DeepESD;
  std::size_t in_channels = 0, in_h = 0, in_w = 0;
  LandMask mask;                 // predictand mask; mask.count() is the output size
  double width_scale = 1.0;      // s in (0, 1]; s=1 reproduces full-size widths
  std::size_t upsample_factor = 1;  // predictand/predictor resolution ratio (UNET)

  std::size_t locations() const { return mask.count(); }

  void validate() const {
    if (in_channels == 0 || in_h == 0 || in_w == 0)
      throw build_error("architecture config: empty input shape");
    if (!(width_scale > 0.0 && width_scale <= 1.0))
      throw build_error("architecture config: width scale must be in (0, 1]");
    if (mask.count() == 0)
      throw build_error("architecture config: empty land mask");
    if (upsample_factor == 0)
      throw build_error("architecture config: upsample factor must be >= 1");
  }

  // Width scaling rounds up with a floor of 1 so every layer stays alive at
  // tiny scales.
  std::size_t scaled(std::size_t width) const {
    const std::size_t w =
        std::size_t(std::ceil(double(width) * width_scale));
    return w < 1 ? 1 : w;
  }
};

// conv(50s) -> ReLU -> conv(25s) -> ReLU -> conv(10s) -> ReLU -> flatten ->
// dense(linear, locations). All convolutions 3x3, same padding.
template <typename T>
ModelGraph<T> build_deepesd(const ArchitectureConfig& cfg) {
  cfg.validate();
  if (cfg.architecture != Architecture::DeepESD)
    throw build_error("build_deepesd: config is for another architecture");
  ModelGraph<T> m({cfg.in_channels, cfg.in_h, cfg.in_w});
  m.arch = "deepesd";
  const std::size_t widths[] = {cfg.scaled(50), cfg.scaled(25), cfg.scaled(10)};
  std::size_t prev = cfg.in_channels;
  for (int i = 0; i < 3; ++i) {
    m.add(std::make_unique<Conv2d<T>>(prev, widths[i], 3, 3, Padding::Same),
          "conv" + std::to_string(i + 1));
    m.add(std::make_unique<ReLU<T>>(), "relu" + std::to_string(i + 1));
    prev = widths[i];
  }
  m.add(std::make_unique<Flatten<T>>(), "flatten");
  auto* out = static_cast<Dense<T>*>(
      m.add(std::make_unique<Dense<T>>(prev * cfg.in_h * cfg.in_w,
                                       cfg.locations(), Activation::Linear),
            "dense_out"));
  out->zero_init = true;
  m.validate();
  return m;
}

// Five 3x3 same-padding convolutions (15,20,20,20,40 x s) with ReLU ->
// flatten -> dense(ReLU, ceil(locations/2)) -> dense(linear, locations).
// No pooling, dropout, or batch normalization.
template <typename T>
ModelGraph<T> build_pan(const ArchitectureConfig& cfg) {
  cfg.validate();
  if (cfg.architecture != Architecture::Pan)
    throw build_error("build_pan: config is for another architecture");
  ModelGraph<T> m({cfg.in_channels, cfg.in_h, cfg.in_w});
  m.arch = "pan";
  const std::size_t widths[] = {cfg.scaled(15), cfg.scaled(20), cfg.scaled(20),
                                cfg.scaled(20), cfg.scaled(40)};
  std::size_t prev = cfg.in_channels;
  for (int i = 0; i < 5; ++i) {
    m.add(std::make_unique<Conv2d<T>>(prev, widths[i], 3, 3, Padding::Same),
          "conv" + std::to_string(i + 1));
    m.add(std::make_unique<ReLU<T>>(), "relu" + std::to_string(i + 1));
    prev = widths[i];
  }
  m.add(std::make_unique<Flatten<T>>(), "flatten");
  const std::size_t hidden = (cfg.locations() + 1) / 2;  // 5435 = 10870/2
  m.add(std::make_unique<Dense<T>>(prev * cfg.in_h * cfg.in_w, hidden,
                                   Activation::Relu),
        "dense_hidden");
  auto* out = static_cast<Dense<T>*>(m.add(
      std::make_unique<Dense<T>>(hidden, cfg.locations(), Activation::Linear),
      "dense_out"));
  out->zero_init = true;
  m.validate();
  return m;
}

// Fully convolutional encoder/decoder with skip connections.
//   encoder: 5 x [conv3x3 + batchnorm + ReLU (+ maxpool2, except block 5)],
//            widths (64,128,256,512,1024) x s
//   decoder: 4 x [conv_transpose 2x2 stride 2 + concat skip + conv3x3 + ReLU],
//            widths (512,256,128,64) x s
//   head:    ceil(log2(upsample_factor)) x [conv_transpose 2x2 s2 + ReLU],
//            then 1x1 linear conv to one channel, crop/pad to the predictand
//            grid, and mask flattening to the location vector.
template <typename T>
ModelGraph<T> build_unet(const ArchitectureConfig& cfg) {
  cfg.validate();
  if (cfg.architecture != Architecture::UNet)
    throw build_error("build_unet: config is for another architecture");
  if (cfg.in_h % 16 != 0 || cfg.in_w % 16 != 0)
    throw build_error("build_unet: input spatial dims must be divisible by 16");

  ModelGraph<T> m({cfg.in_channels, cfg.in_h, cfg.in_w});
  m.arch = "unet";
  const std::size_t enc_w[] = {cfg.scaled(64), cfg.scaled(128), cfg.scaled(256),
                               cfg.scaled(512), cfg.scaled(1024)};
  const std::size_t dec_w[] = {cfg.scaled(512), cfg.scaled(256),
                               cfg.scaled(128), cfg.scaled(64)};

  int skip_layer[5];  // index of each encoder block's ReLU output
  std::size_t prev = cfg.in_channels;
  for (int i = 0; i < 5; ++i) {
    const std::string tag = "enc" + std::to_string(i + 1);
    m.add(std::make_unique<Conv2d<T>>(prev, enc_w[i], 3, 3, Padding::Same),
          tag + "_conv");
    m.add(std::make_unique<BatchNorm2d<T>>(enc_w[i]), tag + "_bn");
    m.add(std::make_unique<ReLU<T>>(), tag + "_relu");
    skip_layer[i] = int(m.layers.size()) - 1;
    if (i < 4) m.add(std::make_unique<MaxPool2<T>>(), tag + "_pool");
    prev = enc_w[i];
  }
  for (int j = 0; j < 4; ++j) {
    const std::string tag = "dec" + std::to_string(j + 1);
    m.add(std::make_unique<ConvTranspose2d<T>>(prev, dec_w[j], 2, 2),
          tag + "_up");
    // Skip from encoder level 4-j (decoder level j pairs with encoder 4-j);
    // concatenation doubles the channels entering the decoder conv.
    m.add(std::make_unique<ConcatSkip<T>>(skip_layer[3 - j]), tag + "_skip");
    m.add(std::make_unique<Conv2d<T>>(enc_w[3 - j] + dec_w[j], dec_w[j], 3, 3,
                                      Padding::Same),
          tag + "_conv");
    m.add(std::make_unique<ReLU<T>>(), tag + "_relu");
    prev = dec_w[j];
  }
  const std::size_t head_blocks =
      cfg.upsample_factor > 1
          ? std::size_t(std::ceil(std::log2(double(cfg.upsample_factor))))
          : 0;
  for (std::size_t u = 0; u < head_blocks; ++u) {
    const std::string tag = "head" + std::to_string(u + 1);
    m.add(std::make_unique<ConvTranspose2d<T>>(prev, prev, 2, 2), tag + "_up");
    m.add(std::make_unique<ReLU<T>>(), tag + "_relu");
  }
  m.add(std::make_unique<Conv2d<T>>(prev, 1, 1, 1, Padding::Same), "head_out");
  m.add(std::make_unique<CropPad2d<T>>(cfg.mask.rows, cfg.mask.cols),
        "croppad");
  m.add(std::make_unique<MaskSelect<T>>(cfg.mask), "mask_select");
  m.validate();
  return m;
}

template <typename T>
ModelGraph<T> build_model(const ArchitectureConfig& cfg) {
  switch (cfg.architecture) {
    case Architecture::DeepESD: return build_deepesd<T>(cfg);
    case Architecture::Pan: return build_pan<T>(cfg);
    case Architecture::UNet: return build_unet<T>(cfg);
  }
  throw build_error("build_model: bad architecture");
}

}  // namespace dsc
