// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shape-preserving U-Net over delay-compensated channel data. Channels in and
// out equal the element count, so DAS apodization applies to the output
// unchanged.
//
//   enc[0]: M -> c0, enc[l]: c(l-1) -> c(l) after 2x2 max pooling
//   dec[l]: upsample(c(l+1)) ++ skip c(l) -> c(l)
//   final:  c0 -> M (no activation)
//
// with c(l) = min(base * 2^l, cap). Every conv is 3x3 and every hidden conv
// is followed by a leaky ReLU.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "patchbf/error.hpp"
#include "patchbf/neural.hpp"
#include "patchbf/rng.hpp"

namespace patchbf::nn {

struct UNetArchitecture {
  std::size_t n_elements = 64;
  std::size_t depth_levels = 3;
  std::size_t base_channels = 64;
  std::size_t channel_cap = 128;
  double leaky_slope = 0.1;

  std::size_t channels(std::size_t level) const {
    std::size_t c = base_channels;
    for (std::size_t i = 0; i < level && c < channel_cap; ++i) c *= 2;
    return std::min(c, channel_cap);
  }

  void validate() const {
    require(n_elements >= 1 && depth_levels >= 1 && base_channels >= 1 &&
                channel_cap >= base_channels,
            ErrorKind::config, "invalid network architecture");
    require(leaky_slope >= 0.0 && leaky_slope < 1.0, ErrorKind::config,
            "network.leaky_slope must lie in [0, 1)");
  }

  bool operator==(const UNetArchitecture&) const = default;
};

struct ConvBlock {
  std::size_t in_ch = 0, out_ch = 0;
  std::size_t kernel_offset = 0, bias_offset = 0;

  std::size_t kernel_size() const { return out_ch * in_ch * kKernel * kKernel; }
};

/// Blocks in declaration order: enc[0..D-1], dec[D-2..0], final.
inline std::vector<ConvBlock> unet_layout(const UNetArchitecture& arch) {
  arch.validate();
  std::vector<ConvBlock> blocks;
  std::size_t offset = 0;
  auto add = [&](std::size_t in, std::size_t out) {
    ConvBlock b{in, out, offset, 0};
    offset += b.kernel_size();
    b.bias_offset = offset;
    offset += out;
    blocks.push_back(b);
  };
  const std::size_t d = arch.depth_levels;
  for (std::size_t l = 0; l < d; ++l) add(l == 0 ? arch.n_elements : arch.channels(l - 1), arch.channels(l));
  for (std::size_t l = d - 1; l-- > 0;) add(arch.channels(l + 1) + arch.channels(l), arch.channels(l));
  add(arch.channels(0), arch.n_elements);
  return blocks;
}

template <typename T>
struct UNetParams {
  UNetArchitecture arch;
  std::vector<ConvBlock> blocks;
  std::vector<T> values;  // flat, declaration order

  std::span<const T> kernel(std::size_t i) const {
    return {values.data() + blocks[i].kernel_offset, blocks[i].kernel_size()};
  }
  std::span<const T> bias(std::size_t i) const {
    return {values.data() + blocks[i].bias_offset, blocks[i].out_ch};
  }
  std::span<T> kernel(std::size_t i) {
    return {values.data() + blocks[i].kernel_offset, blocks[i].kernel_size()};
  }
  std::span<T> bias(std::size_t i) { return {values.data() + blocks[i].bias_offset, blocks[i].out_ch}; }
  std::size_t final_block() const { return blocks.size() - 1; }
};

/// He-style uniform fan-in initialisation, zero biases.
template <typename T>
UNetParams<T> init_unet(const UNetArchitecture& arch, std::uint64_t seed) {
  UNetParams<T> p;
  p.arch = arch;
  p.blocks = unet_layout(arch);
  const auto& last = p.blocks.back();
  p.values.assign(last.bias_offset + last.out_ch, T(0));
  Rng rng(seed);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const double bound = std::sqrt(6.0 / static_cast<double>(p.blocks[i].in_ch * kKernel * kKernel));
    for (T& v : p.kernel(i)) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return p;
}

/// Activations kept by the forward pass for the backward pass.
template <typename T>
struct UNetTape {
  std::vector<Tensor4<T>> conv_in;   // per block
  std::vector<Tensor4<T>> pre_act;   // per block (final block has none)
  std::vector<Tensor4<T>> skips;     // enc outputs
  std::vector<std::vector<std::size_t>> pool_argmax;  // per level >= 1
};

template <typename T>
Tensor4<T> unet_forward(const UNetParams<T>& p, const Tensor4<T>& input, UNetTape<T>* tape = nullptr) {
  const auto& arch = p.arch;
  const std::size_t d = arch.depth_levels;
  require(input.c == arch.n_elements, ErrorKind::shape, "unet: input channels != n_elements");
  const std::size_t scale = std::size_t{1} << (d - 1);
  require(input.h % scale == 0 && input.w % scale == 0 && input.h > 0 && input.w > 0,
          ErrorKind::shape, "unet: spatial dims not divisible by 2^(depth_levels-1)");
  const T slope = static_cast<T>(arch.leaky_slope);
  UNetTape<T> local;
  UNetTape<T>& t = tape ? *tape : local;
  t = UNetTape<T>{};
  t.conv_in.resize(p.blocks.size());
  t.pre_act.resize(p.blocks.size());
  t.skips.resize(d);
  t.pool_argmax.resize(d);

  auto conv = [&](std::size_t bi, Tensor4<T> x) {
    Tensor4<T> y = conv2d(x, p.kernel(bi), p.bias(bi), p.blocks[bi].out_ch);
    t.conv_in[bi] = std::move(x);
    return y;
  };

  Tensor4<T> cur = input;
  for (std::size_t l = 0; l < d; ++l) {
    Tensor4<T> x = l == 0 ? cur : maxpool2(t.skips[l - 1], t.pool_argmax[l]);
    Tensor4<T> a = conv(l, std::move(x));
    t.skips[l] = leaky_relu(a, slope);
    t.pre_act[l] = std::move(a);
  }
  cur = t.skips[d - 1];
  std::size_t bi = d;
  for (std::size_t l = d - 1; l-- > 0; ++bi) {
    Tensor4<T> cat = concat_channels(upsample2(cur), t.skips[l]);
    Tensor4<T> a = conv(bi, std::move(cat));
    cur = leaky_relu(a, slope);
    t.pre_act[bi] = std::move(a);
  }
  return conv(bi, std::move(cur));
}

/// Backpropagates grad_out through a recorded forward pass. Parameter
/// gradients are accumulated into `grad_params` (flat, same layout as
/// p.values); the input gradient is returned.
template <typename T>
Tensor4<T> unet_backward(const UNetParams<T>& p, const UNetTape<T>& t, const Tensor4<T>& grad_out,
                         std::span<T> grad_params) {
  require(grad_params.size() == p.values.size(), ErrorKind::shape,
          "unet_backward: gradient buffer size mismatch");
  const std::size_t d = p.arch.depth_levels;
  const T slope = static_cast<T>(p.arch.leaky_slope);
  auto conv_back = [&](std::size_t bi, const Tensor4<T>& g) {
    const auto& b = p.blocks[bi];
    return conv2d_backward(t.conv_in[bi], p.kernel(bi), g,
                           grad_params.subspan(b.kernel_offset, b.kernel_size()),
                           grad_params.subspan(b.bias_offset, b.out_ch));
  };

  std::vector<Tensor4<T>> skip_grad(d);
  for (std::size_t l = 0; l < d; ++l) {
    const auto& s = t.skips[l];
    skip_grad[l] = Tensor4<T>(s.n, s.c, s.h, s.w);
  }

  std::size_t bi = p.blocks.size() - 1;
  Tensor4<T> g = conv_back(bi, grad_out);
  for (std::size_t l = 0; l + 1 < d; ++l) {
    --bi;
    g = leaky_relu_backward(t.pre_act[bi], g, slope);
    Tensor4<T> gcat = conv_back(bi, g);
    Tensor4<T> gup, gskip;
    concat_channels_backward(gcat, t.conv_in[bi].c - t.skips[l].c, gup, gskip);
    for (std::size_t i = 0; i < gskip.size(); ++i) skip_grad[l].values[i] += gskip.values[i];
    g = upsample2_backward(gup);
  }
  // g is now the gradient w.r.t. the deepest encoder output.
  for (std::size_t i = 0; i < g.size(); ++i) skip_grad[d - 1].values[i] += g.values[i];

  Tensor4<T> gin;
  for (std::size_t l = d; l-- > 0;) {
    Tensor4<T> ga = leaky_relu_backward(t.pre_act[l], skip_grad[l], slope);
    Tensor4<T> gx = conv_back(l, ga);
    if (l == 0) {
      gin = std::move(gx);
    } else {
      Tensor4<T> gp = maxpool2_backward(t.skips[l - 1], t.pool_argmax[l], gx);
      for (std::size_t i = 0; i < gp.size(); ++i) skip_grad[l - 1].values[i] += gp.values[i];
    }
  }
  return gin;
}

}  // namespace patchbf::nn
