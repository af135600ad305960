#pragma once

// The full segmentation network: residual-unit encoder with max-pooling, the
// Dense Residual Fabric at the deepest scale, and a mirrored decoder whose
// stages join their encoder shortcut through WRS. A 1x1x1 head and channel
// softmax produce per-voxel class probabilities.

#include <string>
#include <utility>
#include <vector>

#include "firenet/fabric.hpp"
#include "firenet/layers.hpp"
#include "firenet/parameter.hpp"
#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

struct NetworkConfig {
  int64_t in_channels = 1;
  std::vector<int64_t> encoder_channels{32, 64};
  FabricConfig fabric;  // fabric.C must equal encoder_channels.back()
  int num_classes = 2;
  real dropout_rate = 0.5f;
  int64_t pool_rate = 2;  // only 2: ISE repairs one voxel per axis

  void validate() const;
  /// Smallest admissible spatial extent per axis: 24, or more when the deepest
  /// fabric branch would otherwise fall below its own minimum.
  int64_t min_extent() const;

  /// `key = value` lines; see docs/config.md.
  std::string to_text() const;
  static NetworkConfig from_text(const std::string& text);

  /// Field names whose values differ, in declaration order.
  std::vector<std::string> differences(const NetworkConfig& other) const;
  bool operator==(const NetworkConfig&) const = default;
};

/// The full-size instance: encoder [32, 64], W=3, N=4, C=64, dilations {1,2,4}.
NetworkConfig reference_config(int num_classes);

class Network {
 public:
  /// All weights drawn from `seed`: convs He-initialised, WRS weights uniform
  /// in [-0.03, 0.03], head scaled down with zero bias.
  Network(const NetworkConfig& config, uint64_t seed);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  /// Class probabilities with x's spatial extents. Throws ShapeError when an
  /// axis is below min_extent() or the channel count is wrong.
  Tensor5 forward(const Tensor5& x, const ForwardContext& ctx) const;
  /// Inference-mode forward.
  Tensor5 predict(const Tensor5& x) const;

  /// Re-initialises the head for `num_classes` (always, even if unchanged);
  /// every other parameter keeps its value. Throws ConfigError for < 2.
  void replace_head(int num_classes, uint64_t seed);

  /// Inference-mode outputs of the requested fabric cells, named "cell_i_j".
  std::vector<std::pair<std::string, Tensor5>> export_feature_maps(
      const Tensor5& x, const std::vector<CellCoord>& coords) const;

  const NetworkConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const DenseResidualFabric& fabric() const { return fabric_; }
  const Conv3d& head() const { return head_; }

  /// Names of the head parameters.
  std::vector<std::string> head_parameter_names() const;

 private:
  struct DecoderStage {
    ResidualUnit unit;
    ConvBlock shortcut;
    Parameter* w_up = nullptr;
    Parameter* w_skip = nullptr;
  };

  void check_input(const Tensor5& x) const;
  Tensor5 encode(const Tensor5& x, const ForwardContext& ctx, std::vector<Tensor5>& skips) const;
  void build_head(uint64_t seed);

  NetworkConfig config_;
  ParameterStore store_;
  std::vector<ResidualUnit> encoder_;
  DenseResidualFabric fabric_;
  std::vector<DecoderStage> decoder_;  // deepest first
  Conv3d head_;
};

}  // namespace firenet
