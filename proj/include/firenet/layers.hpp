#pragma once

// 3D building blocks: convolution, pooling, upsampling, normalisation,
// dropout and the residual unit used by the encoder/decoder backbone.

#include <array>
#include <optional>
#include <string>

#include "firenet/parameter.hpp"
#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

struct Conv3dSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  Extent3 kernel{3, 3, 3};
  Extent3 stride{1, 1, 1};
  Extent3 dilation{1, 1, 1};
  Extent3 padding{0, 0, 0};
  bool has_bias = false;

  int64_t effective_extent(int axis) const { return (kernel[axis] - 1) * dilation[axis] + 1; }
  /// floor((in + 2 pad - effective) / stride) + 1; may be < 1 for invalid inputs.
  int64_t output_extent(int axis, int64_t in) const;
  Extent3 output_extent(const Extent3& in) const;
  Shape weight_shape() const {
    return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
  }
  int64_t weight_count() const { return weight_shape().numel() + (has_bias ? out_channels : 0); }

  static Conv3dSpec same(int64_t in, int64_t out, int64_t dilation = 1);
  static Conv3dSpec pointwise(int64_t in, int64_t out, bool bias = true);
  static Conv3dSpec strided_down(int64_t in, int64_t out);
};

struct PoolSpec {
  int64_t rate = 2;
};

/// `bias`, when given, has shape (1, out_channels, 1, 1, 1).
Tensor5 conv3d(const Tensor5& x, const Conv3dSpec& spec, const Tensor5& weight,
               const Tensor5* bias = nullptr);

Tensor5 maxpool3d(const Tensor5& x, const PoolSpec& spec);

/// Trilinear interpolation with the half-pixel (align-corners = false) convention.
Tensor5 upsample_trilinear(const Tensor5& x, int64_t factor);

/// Per-(sample, channel) normalisation. gamma/beta have shape (1, C, 1, 1, 1).
Tensor5 instance_norm(const Tensor5& x, const Tensor5& gamma, const Tensor5& beta,
                      real eps = 1e-5f);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor5 dropout(const Tensor5& x, real rate, bool training, Rng* rng);

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  real dropout_rate = 0.5f;
};

/// Convolution with its own parameters.
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(ParameterStore& store, const std::string& name, const Conv3dSpec& spec,
         ParamGroup group, Rng& rng, double init_gain = 1.0);

  Tensor5 forward(const Tensor5& x) const;
  const Conv3dSpec& spec() const { return spec_; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Conv3dSpec spec_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(ParameterStore& store, const std::string& name, int64_t channels, ParamGroup group);
  Tensor5 forward(const Tensor5& x) const;
  Parameter* gamma() const { return gamma_; }
  Parameter* beta() const { return beta_; }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

/// conv -> instance norm -> relu -> dropout
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParameterStore& store, const std::string& name, const Conv3dSpec& spec,
            ParamGroup group, Rng& rng);
  Tensor5 forward(const Tensor5& x, const ForwardContext& ctx) const;
  const Conv3d& conv() const { return conv_; }
  const InstanceNorm& norm() const { return norm_; }

 private:
  Conv3d conv_;
  InstanceNorm norm_;
};

/// out = f2(f1(x)) + skip(x); skip is a 1x1x1 projection when channels differ.
class ResidualUnit {
 public:
  ResidualUnit() = default;
  ResidualUnit(ParameterStore& store, const std::string& name, int64_t in_channels,
               int64_t out_channels, ParamGroup group, Rng& rng);
  Tensor5 forward(const Tensor5& x, const ForwardContext& ctx) const;

  const ConvBlock& first() const { return first_; }
  const ConvBlock& second() const { return second_; }
  const std::optional<Conv3d>& projection() const { return projection_; }

 private:
  ConvBlock first_;
  ConvBlock second_;
  std::optional<Conv3d> projection_;
};

}  // namespace firenet
