#pragma once

// Dense Residual Fabric: a W x N grid of Feature-Cells. Branch j runs at
// scale s / 2^(j-1); column i is the depth position. Each cell fuses its
// predecessors (ISE -> WRS), extracts features with ASPP3D and adds the
// outputs of earlier same-branch cells with matching channel counts.

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "firenet/layers.hpp"
#include "firenet/parameter.hpp"
#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

struct FabricConfig {
  int W = 3;
  int N = 4;
  int64_t C = 64;
  std::vector<int64_t> dilations{1, 2, 4};

  /// Throws ConfigError. Odd N is rejected here and by channel_plan.
  void validate() const;
  /// Smallest spatial extent the deepest branch can be built from.
  int64_t min_extent() const { return int64_t{3} << (W - 1); }
  bool operator==(const FabricConfig&) const = default;
};

struct CellCoord {
  int i = 1;  // depth, 1..N
  int j = 1;  // branch, 1..W
  auto operator<=>(const CellCoord&) const = default;
  std::string str() const;
};

class ChannelPlan {
 public:
  ChannelPlan() = default;
  ChannelPlan(int W, int N, std::vector<int64_t> channels);
  int64_t at(const CellCoord& c) const;
  int W() const { return W_; }
  int N() const { return N_; }
  bool operator==(const ChannelPlan&) const = default;

 private:
  int W_ = 0, N_ = 0;
  std::vector<int64_t> channels_;  // row-major over (i, j)
};

/// c(i, j) = min(C 2^(i-1), C 2^(j-1)) for i <= N/2, mirrored for the rest.
ChannelPlan channel_plan(const FabricConfig& config);

enum class EdgeKind {
  Split,     // branch input -> column-1 cell, weighted
  Forward,   // (i-1, j') -> (i, j), |j - j'| <= 1, weighted
  Residual,  // (i', j) -> (i, j), i' <= i - 2, equal channels, unweighted
  Merge,     // (N, j) -> fabric output, weighted
};

struct FabricEdge {
  CellCoord from;  // i = 0 for split edges (the branch input j)
  CellCoord to;    // i = N + 1, j = 1 for merge edges
  EdgeKind kind = EdgeKind::Forward;
  bool operator==(const FabricEdge&) const = default;
  std::string str() const;
};

struct FabricGraph {
  FabricConfig config;
  ChannelPlan plan;
  std::vector<CellCoord> cells;  // column-major: i outer, j inner
  std::vector<FabricEdge> split_edges;
  std::vector<FabricEdge> forward_edges;
  std::vector<FabricEdge> residual_edges;
  std::vector<FabricEdge> merge_edges;

  /// Forward in-edges of `c` (split edge for column 1), ordered by source branch.
  std::vector<FabricEdge> in_edges(const CellCoord& c) const;
  std::vector<FabricEdge> residual_in_edges(const CellCoord& c) const;
  /// Forward in-edges plus residual pairs.
  std::size_t edge_count() const { return forward_edges.size() + residual_edges.size(); }
  bool contains(const CellCoord& c) const;
  bool operator==(const FabricGraph& o) const;
};

FabricGraph build_graph(const FabricConfig& config);

/// Pads (zero, high edge) or crops (high edge) each input to `target`. Every
/// axis may differ by at most one voxel; otherwise ShapeError names the axis.
Tensor5 ise_equalize(const Tensor5& x, const Extent3& target);
std::vector<Tensor5> ise_equalize(std::span<const Tensor5> inputs, const Extent3& target);

/// sum_k sigmoid(w_k) x_k. Each weight is a single-value tensor.
Tensor5 wrs_fuse(std::span<const Tensor5> inputs, std::span<const Tensor5> weights);

/// A trainable WRS edge weight, uniform in [-0.03, 0.03].
Parameter* add_wrs_weight(ParameterStore& store, const std::string& name, ParamGroup group,
                          Rng& rng);

enum class ExtentRule {
  Dilated,  // (k - 1) d + 1
  Ordinal,  // (k - 1) r + 1, r = 1-based rank of d in the dilation set
};

int64_t kernel_extent(int64_t dilation, int64_t rank, ExtentRule rule, int64_t k = 3);

/// { extent(d) 2^(j-1) : d in dilations, j in 1..W }.
std::set<int64_t> receptive_field_enumeration(const FabricConfig& config,
                                              ExtentRule rule = ExtentRule::Dilated);

/// Parallel dilated conv blocks, concatenated and fused by a 1x1x1 conv.
class Aspp3d {
 public:
  Aspp3d() = default;
  Aspp3d(ParameterStore& store, const std::string& name, int64_t in_channels,
         int64_t out_channels, const std::vector<int64_t>& dilations, ParamGroup group, Rng& rng);
  Tensor5 forward(const Tensor5& x, const ForwardContext& ctx) const;
  const std::vector<ConvBlock>& branches() const { return branches_; }
  const Conv3d& fuse() const { return fuse_; }

 private:
  std::vector<ConvBlock> branches_;
  Conv3d fuse_;
};

/// Resamples a predecessor output to the receiving cell's scale and channels.
struct EdgeAdapter {
  enum class Kind { Identity, Down, Up, Project };
  Kind kind = Kind::Identity;
  std::optional<Conv3d> conv;
  Tensor5 forward(const Tensor5& x) const;
};

class FeatureCell {
 public:
  FeatureCell() = default;
  FeatureCell(ParameterStore& store, const std::string& name, const FabricGraph& graph,
              const CellCoord& coord, Rng& rng);

  /// `inputs` align with graph.in_edges(coord), `residuals` with
  /// graph.residual_in_edges(coord); `extent` is this cell's branch extent.
  Tensor5 forward(std::span<const Tensor5> inputs, std::span<const Tensor5> residuals,
                  const Extent3& extent, const ForwardContext& ctx) const;

  const CellCoord& coord() const { return coord_; }
  int64_t channels() const { return channels_; }
  const std::vector<FabricEdge>& in_edges() const { return in_edges_; }
  const std::vector<EdgeAdapter>& adapters() const { return adapters_; }
  const std::vector<Parameter*>& wrs_weights() const { return wrs_; }
  const Aspp3d& aspp() const { return aspp_; }

 private:
  CellCoord coord_;
  int64_t channels_ = 0;
  std::vector<FabricEdge> in_edges_;
  std::vector<EdgeAdapter> adapters_;
  std::vector<Parameter*> wrs_;
  Aspp3d aspp_;
};

struct FabricForwardOptions {
  bool residual_edges = true;
  /// When set, receives every cell output.
  std::map<CellCoord, Tensor5>* cell_outputs = nullptr;
};

class DenseResidualFabric {
 public:
  DenseResidualFabric() = default;
  /// Parameters are registered under `name`: convs in group Fabric, edge
  /// weights in group WrsFabric.
  DenseResidualFabric(ParameterStore& store, const std::string& name, const FabricConfig& config,
                      Rng& rng);

  /// x has C channels; the result has C channels and x's spatial extents.
  Tensor5 forward(const Tensor5& x, const ForwardContext& ctx,
                  const FabricForwardOptions& opts = {}) const;

  /// Spatial extents of branch j for a fabric input of extent `in`.
  static Extent3 branch_extent(const Extent3& in, int j);

  const FabricGraph& graph() const { return graph_; }
  const FeatureCell& cell(const CellCoord& c) const;
  const std::vector<ConvBlock>& splits() const { return splits_; }
  const std::vector<Parameter*>& merge_weights() const { return merge_wrs_; }
  const Conv3d& merge_projection() const { return merge_proj_; }

 private:
  FabricGraph graph_;
  std::vector<ConvBlock> splits_;  // splits_[k] produces branch k + 2
  std::vector<FeatureCell> cells_;  // same order as graph_.cells
  std::vector<Parameter*> merge_wrs_;
  Conv3d merge_proj_;
};

}  // namespace firenet
