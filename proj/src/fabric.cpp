#include "firenet/fabric.hpp"

#include <algorithm>
#include <cmath>

#include "firenet/error.hpp"
#include "firenet/ops.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

const char* kAxisNames[3] = {"depth", "height", "width"};

std::string cell_name(const std::string& prefix, const CellCoord& c) {
  return prefix + ".cell_" + std::to_string(c.i) + "_" + std::to_string(c.j);
}

std::string edge_suffix(const FabricEdge& e) {
  if (e.kind == EdgeKind::Split) return "split";
  return "from_" + std::to_string(e.from.i) + "_" + std::to_string(e.from.j);
}

real sigmoid_of(real w) {
  if (w >= 0.0f) return 1.0f / (1.0f + std::exp(-w));
  const real e = std::exp(w);
  return e / (1.0f + e);
}

}  // namespace

void FabricConfig::validate() const {
  if (W < 1) throw ConfigError("fabric: W must be >= 1, got " + std::to_string(W));
  if (N < 2) throw ConfigError("fabric: N must be >= 2, got " + std::to_string(N));
  if (N % 2 != 0) {
    throw ConfigError("fabric: N must be even (the channel plan mirrors about N/2), got " +
                      std::to_string(N));
  }
  if (C < 1) throw ConfigError("fabric: C must be >= 1, got " + std::to_string(C));
  if (W > 16) throw ConfigError("fabric: W too large");
  if (dilations.empty()) throw ConfigError("fabric: dilation set is empty");
  for (std::size_t k = 0; k < dilations.size(); ++k) {
    if (dilations[k] < 1) throw ConfigError("fabric: dilations must be positive");
    if (k > 0 && dilations[k] <= dilations[k - 1]) {
      throw ConfigError("fabric: dilations must be strictly increasing");
    }
  }
}

std::string CellCoord::str() const {
  return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

std::string FabricEdge::str() const {
  switch (kind) {
    case EdgeKind::Split: return "in" + std::to_string(from.j) + " -> " + to.str() + " [split]";
    case EdgeKind::Forward: return from.str() + " -> " + to.str() + " [wrs]";
    case EdgeKind::Residual: return from.str() + " -> " + to.str() + " [residual]";
    case EdgeKind::Merge: return from.str() + " -> out [merge]";
  }
  return {};
}

ChannelPlan::ChannelPlan(int W, int N, std::vector<int64_t> channels)
    : W_(W), N_(N), channels_(std::move(channels)) {
  if (channels_.size() != static_cast<std::size_t>(W) * static_cast<std::size_t>(N)) {
    throw ConfigError("ChannelPlan: size mismatch");
  }
}

int64_t ChannelPlan::at(const CellCoord& c) const {
  if (c.i < 1 || c.i > N_ || c.j < 1 || c.j > W_) {
    throw ConfigError("ChannelPlan: cell " + c.str() + " outside the " + std::to_string(N_) +
                      "x" + std::to_string(W_) + " grid");
  }
  return channels_[static_cast<std::size_t>((c.i - 1) * W_ + (c.j - 1))];
}

ChannelPlan channel_plan(const FabricConfig& config) {
  config.validate();
  std::vector<int64_t> ch;
  ch.reserve(static_cast<std::size_t>(config.W * config.N));
  for (int i = 1; i <= config.N; ++i) {
    const int row = i <= config.N / 2 ? i : config.N + 1 - i;
    for (int j = 1; j <= config.W; ++j) {
      ch.push_back(std::min(config.C << (row - 1), config.C << (j - 1)));
    }
  }
  return ChannelPlan(config.W, config.N, std::move(ch));
}

FabricGraph build_graph(const FabricConfig& config) {
  FabricGraph g;
  g.config = config;
  g.plan = channel_plan(config);
  const int W = config.W, N = config.N;
  for (int i = 1; i <= N; ++i) {
    for (int j = 1; j <= W; ++j) g.cells.push_back({i, j});
  }
  for (int j = 1; j <= W; ++j) g.split_edges.push_back({{0, j}, {1, j}, EdgeKind::Split});
  for (int i = 2; i <= N; ++i) {
    for (int j = 1; j <= W; ++j) {
      for (int jj = std::max(1, j - 1); jj <= std::min(W, j + 1); ++jj) {
        g.forward_edges.push_back({{i - 1, jj}, {i, j}, EdgeKind::Forward});
      }
    }
  }
  for (int i = 3; i <= N; ++i) {
    for (int j = 1; j <= W; ++j) {
      for (int ii = 1; ii <= i - 2; ++ii) {
        if (g.plan.at({ii, j}) == g.plan.at({i, j})) {
          g.residual_edges.push_back({{ii, j}, {i, j}, EdgeKind::Residual});
        }
      }
    }
  }
  for (int j = 1; j <= W; ++j) g.merge_edges.push_back({{N, j}, {N + 1, 1}, EdgeKind::Merge});
  return g;
}

std::vector<FabricEdge> FabricGraph::in_edges(const CellCoord& c) const {
  std::vector<FabricEdge> out;
  const auto& src = c.i == 1 ? split_edges : forward_edges;
  for (const auto& e : src) {
    if (e.to == c) out.push_back(e);
  }
  return out;
}

std::vector<FabricEdge> FabricGraph::residual_in_edges(const CellCoord& c) const {
  std::vector<FabricEdge> out;
  for (const auto& e : residual_edges) {
    if (e.to == c) out.push_back(e);
  }
  return out;
}

bool FabricGraph::contains(const CellCoord& c) const {
  return c.i >= 1 && c.i <= config.N && c.j >= 1 && c.j <= config.W;
}

bool FabricGraph::operator==(const FabricGraph& o) const {
  return config == o.config && plan == o.plan && cells == o.cells &&
         split_edges == o.split_edges && forward_edges == o.forward_edges &&
         residual_edges == o.residual_edges && merge_edges == o.merge_edges;
}

Tensor5 ise_equalize(const Tensor5& x, const Extent3& target) {
  const Extent3 in = x.shape().spatial();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(in[a] - target[a]) > 1) {
      throw ShapeError(std::string("ise: ") + kAxisNames[a] + " extent " + std::to_string(in[a]) +
                       " is more than 1 voxel from target " + std::to_string(target[a]));
    }
  }
  return pad_crop_high(x, target);
}

std::vector<Tensor5> ise_equalize(std::span<const Tensor5> inputs, const Extent3& target) {
  std::vector<Tensor5> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(ise_equalize(x, target));
  return out;
}

Tensor5 wrs_fuse(std::span<const Tensor5> inputs, std::span<const Tensor5> weights) {
  if (inputs.empty()) throw ShapeError("wrs_fuse: no inputs");
  if (inputs.size() != weights.size()) {
    throw ShapeError("wrs_fuse: " + std::to_string(inputs.size()) + " inputs but " +
                     std::to_string(weights.size()) + " weights");
  }
  const Shape s = inputs[0].shape();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].shape() != s) {
      throw ShapeError("wrs_fuse: input " + std::to_string(k) + " has shape " +
                       inputs[k].shape().str() + ", expected " + s.str() +
                       " (inputs must be size-equalised first)");
    }
    if (weights[k].numel() != 1) throw ShapeError("wrs_fuse: weights must be single values");
  }
  std::vector<real> gate(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) gate[k] = sigmoid_of(weights[k].item());
  std::vector<real> out(static_cast<std::size_t>(s.numel()), 0.0f);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto x = inputs[k].data();
    const real gk = gate[k];
    for (std::size_t v = 0; v < out.size(); ++v) out[v] += gk * x[v];
  }
  std::vector<const Tensor5*> deps;
  std::vector<std::shared_ptr<TensorImpl>> xi, wi;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    deps.push_back(&inputs[k]);
    deps.push_back(&weights[k]);
    xi.push_back(inputs[k].impl());
    wi.push_back(weights[k].impl());
  }
  return make_result(s, std::move(out), "wrs_fuse", deps,
                     [xi, wi, gate](const TensorImpl& o) {
                       for (std::size_t k = 0; k < xi.size(); ++k) {
                         const real gk = gate[k];
                         if (xi[k]->requires_grad) {
                           auto& g = xi[k]->grad_buffer();
                           for (std::size_t v = 0; v < g.size(); ++v) g[v] += gk * o.grad[v];
                         }
                         if (wi[k]->requires_grad) {
                           double dot = 0.0;
                           for (std::size_t v = 0; v < o.grad.size(); ++v) {
                             dot += static_cast<double>(o.grad[v]) * xi[k]->data[v];
                           }
                           wi[k]->grad_buffer()[0] += static_cast<real>(gk * (1.0 - gk) * dot);
                         }
                       }
                     });
}

Parameter* add_wrs_weight(ParameterStore& store, const std::string& name, ParamGroup group,
                          Rng& rng) {
  const double w = -0.03 + 0.06 * uniform01(rng);
  return store.add(name, Tensor5::scalar(static_cast<real>(w)), group);
}

int64_t kernel_extent(int64_t dilation, int64_t rank, ExtentRule rule, int64_t k) {
  return (k - 1) * (rule == ExtentRule::Dilated ? dilation : rank) + 1;
}

std::set<int64_t> receptive_field_enumeration(const FabricConfig& config, ExtentRule rule) {
  config.validate();
  std::set<int64_t> out;
  for (std::size_t r = 0; r < config.dilations.size(); ++r) {
    const int64_t e = kernel_extent(config.dilations[r], static_cast<int64_t>(r + 1), rule);
    for (int j = 1; j <= config.W; ++j) out.insert(e << (j - 1));
  }
  return out;
}

Aspp3d::Aspp3d(ParameterStore& store, const std::string& name, int64_t in_channels,
               int64_t out_channels, const std::vector<int64_t>& dilations, ParamGroup group,
               Rng& rng) {
  for (int64_t d : dilations) {
    branches_.emplace_back(store, name + ".d" + std::to_string(d),
                           Conv3dSpec::same(in_channels, in_channels, d), group, rng);
  }
  const auto width = in_channels * static_cast<int64_t>(dilations.size());
  fuse_ = Conv3d(store, name + ".fuse", Conv3dSpec::pointwise(width, out_channels), group, rng);
}

Tensor5 Aspp3d::forward(const Tensor5& x, const ForwardContext& ctx) const {
  std::vector<Tensor5> outs;
  outs.reserve(branches_.size());
  for (const auto& b : branches_) outs.push_back(b.forward(x, ctx));
  return fuse_.forward(outs.size() == 1 ? outs[0] : concat_channels(outs));
}

Tensor5 EdgeAdapter::forward(const Tensor5& x) const {
  switch (kind) {
    case Kind::Identity: return x;
    case Kind::Down:
    case Kind::Project: return conv->forward(x);
    // Pointwise conv and trilinear upsampling commute (interpolation weights
    // sum to one), so the channel change runs at the coarse scale.
    case Kind::Up: return upsample_trilinear(conv->forward(x), 2);
  }
  return x;
}

FeatureCell::FeatureCell(ParameterStore& store, const std::string& name, const FabricGraph& graph,
                         const CellCoord& coord, Rng& rng)
    : coord_(coord), channels_(graph.plan.at(coord)), in_edges_(graph.in_edges(coord)) {
  for (const auto& e : in_edges_) {
    EdgeAdapter a;
    const std::string an = name + ".adapt_" + edge_suffix(e);
    const int64_t cin = e.kind == EdgeKind::Split ? graph.config.C : graph.plan.at(e.from);
    if (e.kind == EdgeKind::Forward && e.from.j == coord.j - 1) {
      a.kind = EdgeAdapter::Kind::Down;
      auto spec = Conv3dSpec::strided_down(cin, channels_);
      spec.has_bias = true;
      a.conv.emplace(store, an, spec, ParamGroup::Fabric, rng);
    } else if (e.kind == EdgeKind::Forward && e.from.j == coord.j + 1) {
      a.kind = EdgeAdapter::Kind::Up;
      a.conv.emplace(store, an, Conv3dSpec::pointwise(cin, channels_), ParamGroup::Fabric, rng);
    } else if (cin != channels_) {
      a.kind = EdgeAdapter::Kind::Project;
      a.conv.emplace(store, an, Conv3dSpec::pointwise(cin, channels_), ParamGroup::Fabric, rng);
    }
    adapters_.push_back(std::move(a));
    wrs_.push_back(add_wrs_weight(store, name + ".wrs." + edge_suffix(e), ParamGroup::WrsFabric, rng));
  }
  aspp_ = Aspp3d(store, name + ".aspp", channels_, channels_, graph.config.dilations,
                 ParamGroup::Fabric, rng);
}

Tensor5 FeatureCell::forward(std::span<const Tensor5> inputs, std::span<const Tensor5> residuals,
                             const Extent3& extent, const ForwardContext& ctx) const {
  if (inputs.size() != in_edges_.size()) {
    throw ShapeError("cell " + coord_.str() + ": expected " + std::to_string(in_edges_.size()) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  std::vector<Tensor5> adapted;
  std::vector<Tensor5> weights;
  adapted.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    adapted.push_back(ise_equalize(adapters_[k].forward(inputs[k]), extent));
    weights.push_back(wrs_[k]->value);
  }
  Tensor5 out = aspp_.forward(wrs_fuse(adapted, weights), ctx);
  if (out.shape().channels() != channels_) throw ShapeError("cell " + coord_.str() + ": channels");
  if (residuals.empty()) return out;
  std::vector<Tensor5> terms{out};
  terms.insert(terms.end(), residuals.begin(), residuals.end());
  return add_n(terms);
}

DenseResidualFabric::DenseResidualFabric(ParameterStore& store, const std::string& name,
                                         const FabricConfig& config, Rng& rng)
    : graph_(build_graph(config)) {
  for (int j = 2; j <= config.W; ++j) {
    splits_.emplace_back(store, name + ".split_" + std::to_string(j),
                         Conv3dSpec::strided_down(config.C, config.C), ParamGroup::Fabric, rng);
  }
  for (const auto& c : graph_.cells) {
    cells_.emplace_back(store, cell_name(name, c), graph_, c, rng);
  }
  for (const auto& e : graph_.merge_edges) {
    merge_wrs_.push_back(add_wrs_weight(store, name + ".merge.wrs.b" + std::to_string(e.from.j),
                                        ParamGroup::WrsFabric, rng));
  }
  merge_proj_ = Conv3d(store, name + ".merge.proj",
                       Conv3dSpec::pointwise(graph_.plan.at({config.N, 1}), config.C),
                       ParamGroup::Fabric, rng);
}

Extent3 DenseResidualFabric::branch_extent(const Extent3& in, int j) {
  Extent3 e = in;
  for (int k = 1; k < j; ++k) {
    for (auto& v : e) v = (v + 1) / 2;
  }
  return e;
}

const FeatureCell& DenseResidualFabric::cell(const CellCoord& c) const {
  if (!graph_.contains(c)) throw ConfigError("fabric: no cell " + c.str());
  return cells_[static_cast<std::size_t>((c.i - 1) * graph_.config.W + (c.j - 1))];
}

Tensor5 DenseResidualFabric::forward(const Tensor5& x, const ForwardContext& ctx,
                                     const FabricForwardOptions& opts) const {
  const auto& cfg = graph_.config;
  if (x.shape().channels() != cfg.C) {
    throw ShapeError("fabric: expected " + std::to_string(cfg.C) + " input channels, got " +
                     std::to_string(x.shape().channels()));
  }
  const Extent3 in = x.shape().spatial();
  for (int a = 0; a < 3; ++a) {
    if (in[a] < cfg.min_extent()) {
      throw ShapeError(std::string("fabric: input ") + kAxisNames[a] + " extent " +
                       std::to_string(in[a]) + " below minimum " +
                       std::to_string(cfg.min_extent()) + " for W=" + std::to_string(cfg.W));
    }
  }
  std::vector<Extent3> extent(static_cast<std::size_t>(cfg.W) + 1);
  for (int j = 1; j <= cfg.W; ++j) extent[j] = branch_extent(in, j);

  std::vector<Tensor5> branch_in{x};
  for (const auto& s : splits_) branch_in.push_back(s.forward(branch_in.back(), ctx));

  std::map<CellCoord, Tensor5> out;
  for (const auto& cell : cells_) {
    const CellCoord c = cell.coord();
    std::vector<Tensor5> inputs;
    for (const auto& e : cell.in_edges()) {
      inputs.push_back(e.kind == EdgeKind::Split ? branch_in[e.from.j - 1] : out.at(e.from));
    }
    std::vector<Tensor5> residuals;
    if (opts.residual_edges) {
      for (const auto& e : graph_.residual_in_edges(c)) residuals.push_back(out.at(e.from));
    }
    out.emplace(c, cell.forward(inputs, residuals, extent[c.j], ctx));
  }

  std::vector<Tensor5> merged;
  std::vector<Tensor5> weights;
  for (std::size_t k = 0; k < graph_.merge_edges.size(); ++k) {
    const auto& e = graph_.merge_edges[k];
    Tensor5 t = out.at(e.from);
    // One octave at a time so each step stays within ISE's one-voxel bound.
    for (int j = e.from.j - 1; j >= 1; --j) t = ise_equalize(upsample_trilinear(t, 2), extent[j]);
    merged.push_back(t);
    weights.push_back(merge_wrs_[k]->value);
  }
  if (opts.cell_outputs) *opts.cell_outputs = std::move(out);
  return merge_proj_.forward(wrs_fuse(merged, weights));
}

}  // namespace firenet
