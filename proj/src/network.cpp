#include "firenet/network.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/ops.hpp"
#include "firenet/textconfig.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

const char* kAxisNames[3] = {"depth", "height", "width"};

// Keeps initial logits small so the first predictions are close to uniform.
constexpr double kHeadGain = 0.1;

std::string name_of(const char* prefix, std::size_t level) {
  return prefix + std::to_string(level + 1);
}

}  // namespace

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
  if (encoder_channels.empty()) throw ConfigError("network: encoder_channels is empty");
  for (auto c : encoder_channels) {
    if (c < 1) throw ConfigError("network: encoder channel counts must be >= 1");
  }
  fabric.validate();
  if (fabric.C != encoder_channels.back()) {
    throw ConfigError("network: fabric.C (" + std::to_string(fabric.C) +
                      ") must equal the last encoder channel count (" +
                      std::to_string(encoder_channels.back()) + ")");
  }
  if (num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ConfigError("network: dropout_rate must be in [0, 1)");
  }
  if (pool_rate != 2) throw ConfigError("network: pool_rate must be 2");
}

int64_t NetworkConfig::min_extent() const {
  const int64_t pooled = int64_t{1} << encoder_channels.size();
  return std::max<int64_t>(24, pooled * fabric.min_extent());
}

std::string NetworkConfig::to_text() const {
  std::ostringstream os;
  os << "in_channels = " << in_channels << "\n";
  os << "encoder_channels = " << join_ints(encoder_channels) << "\n";
  os << "fabric.W = " << fabric.W << "\n";
  os << "fabric.N = " << fabric.N << "\n";
  os << "fabric.C = " << fabric.C << "\n";
  os << "fabric.dilations = " << join_ints(fabric.dilations) << "\n";
  os << "num_classes = " << num_classes << "\n";
  os << "dropout_rate = " << std::setprecision(std::numeric_limits<real>::max_digits10)
     << dropout_rate << "\n";
  os << "pool_rate = " << pool_rate << "\n";
  return os.str();
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
  NetworkConfig c;
  for (const auto& [key, v] : parse_key_values(text)) {
    if (key == "in_channels") c.in_channels = parse_int(key, v);
    else if (key == "encoder_channels") c.encoder_channels = parse_int_list(key, v);
    else if (key == "fabric.W") c.fabric.W = static_cast<int>(parse_int(key, v));
    else if (key == "fabric.N") c.fabric.N = static_cast<int>(parse_int(key, v));
    else if (key == "fabric.C") c.fabric.C = parse_int(key, v);
    else if (key == "fabric.dilations") c.fabric.dilations = parse_int_list(key, v);
    else if (key == "num_classes") c.num_classes = static_cast<int>(parse_int(key, v));
    else if (key == "dropout_rate") c.dropout_rate = static_cast<real>(parse_double(key, v));
    else if (key == "pool_rate") c.pool_rate = parse_int(key, v);
    else throw ConfigError("network config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

std::vector<std::string> NetworkConfig::differences(const NetworkConfig& o) const {
  std::vector<std::string> d;
  if (in_channels != o.in_channels) d.push_back("in_channels");
  if (encoder_channels != o.encoder_channels) d.push_back("encoder_channels");
  if (fabric.W != o.fabric.W) d.push_back("fabric.W");
  if (fabric.N != o.fabric.N) d.push_back("fabric.N");
  if (fabric.C != o.fabric.C) d.push_back("fabric.C");
  if (fabric.dilations != o.fabric.dilations) d.push_back("fabric.dilations");
  if (num_classes != o.num_classes) d.push_back("num_classes");
  if (dropout_rate != o.dropout_rate) d.push_back("dropout_rate");
  if (pool_rate != o.pool_rate) d.push_back("pool_rate");
  return d;
}

NetworkConfig reference_config(int num_classes) {
  NetworkConfig c;
  c.encoder_channels = {32, 64};
  c.fabric.W = 3;
  c.fabric.N = 4;
  c.fabric.C = 64;
  c.fabric.dilations = {1, 2, 4};
  c.num_classes = num_classes;
  return c;
}

Network::Network(const NetworkConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& enc = config_.encoder_channels;
  int64_t ch = config_.in_channels;
  for (std::size_t k = 0; k < enc.size(); ++k) {
    encoder_.emplace_back(store_, name_of("enc", k), ch, enc[k], ParamGroup::EncoderDecoder, rng);
    ch = enc[k];
  }
  fabric_ = DenseResidualFabric(store_, "fab", config_.fabric, rng);
  for (std::size_t k = enc.size(); k-- > 0;) {
    const std::string name = name_of("dec", k);
    DecoderStage s;
    s.unit = ResidualUnit(store_, name, ch, enc[k], ParamGroup::EncoderDecoder, rng);
    s.shortcut = ConvBlock(store_, name_of("short", k), Conv3dSpec::same(enc[k], enc[k]),
                           ParamGroup::EncoderDecoder, rng);
    s.w_up = add_wrs_weight(store_, name + ".wrs.up", ParamGroup::WrsOuter, rng);
    s.w_skip = add_wrs_weight(store_, name + ".wrs.skip", ParamGroup::WrsOuter, rng);
    decoder_.push_back(std::move(s));
    ch = enc[k];
  }
  build_head(seed);
}

void Network::build_head(uint64_t seed) {
  // Own stream so the head is reproducible on its own for head replacement.
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  head_ = Conv3d(store_, "head",
                 Conv3dSpec::pointwise(config_.encoder_channels.front(), config_.num_classes),
                 ParamGroup::Head, rng, kHeadGain);
}

std::vector<std::string> Network::head_parameter_names() const {
  std::vector<std::string> names{head_.weight()->name};
  if (head_.bias()) names.push_back(head_.bias()->name);
  return names;
}

void Network::replace_head(int num_classes, uint64_t seed) {
  if (num_classes < 2) throw ConfigError("replace_head: num_classes must be >= 2");
  for (const auto& n : head_parameter_names()) store_.remove(n);
  config_.num_classes = num_classes;
  build_head(seed);
}

void Network::check_input(const Tensor5& x) const {
  if (x.shape().channels() != config_.in_channels) {
    throw ShapeError("network: expected " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(x.shape().channels()));
  }
  const Extent3 e = x.shape().spatial();
  for (int a = 0; a < 3; ++a) {
    if (e[a] < config_.min_extent()) {
      throw ShapeError(std::string("network: input ") + kAxisNames[a] + " extent " +
                       std::to_string(e[a]) + " below minimum " +
                       std::to_string(config_.min_extent()));
    }
  }
}

Tensor5 Network::encode(const Tensor5& x, const ForwardContext& ctx,
                        std::vector<Tensor5>& skips) const {
  Tensor5 h = x;
  for (const auto& unit : encoder_) {
    h = unit.forward(h, ctx);
    skips.push_back(h);
    h = maxpool3d(h, PoolSpec{config_.pool_rate});
  }
  return h;
}

Tensor5 Network::forward(const Tensor5& x, const ForwardContext& outer) const {
  check_input(x);
  ForwardContext ctx = outer;
  ctx.dropout_rate = config_.dropout_rate;
  std::vector<Tensor5> skips;
  Tensor5 h = fabric_.forward(encode(x, ctx, skips), ctx);
  for (std::size_t s = 0; s < decoder_.size(); ++s) {
    const auto& stage = decoder_[s];
    const Tensor5& skip = skips[skips.size() - 1 - s];
    h = ise_equalize(upsample_trilinear(h, config_.pool_rate), skip.shape().spatial());
    h = stage.unit.forward(h, ctx);
    const Tensor5 inputs[2] = {h, stage.shortcut.forward(skip, ctx)};
    const Tensor5 weights[2] = {stage.w_up->value, stage.w_skip->value};
    h = wrs_fuse(inputs, weights);
  }
  return softmax_channels(head_.forward(h));
}

Tensor5 Network::predict(const Tensor5& x) const {
  NoGradGuard guard;
  return forward(x, ForwardContext{});
}

std::vector<std::pair<std::string, Tensor5>> Network::export_feature_maps(
    const Tensor5& x, const std::vector<CellCoord>& coords) const {
  for (const auto& c : coords) {
    if (!fabric_.graph().contains(c)) throw ConfigError("export: no fabric cell " + c.str());
  }
  check_input(x);
  NoGradGuard guard;
  ForwardContext ctx;
  std::vector<Tensor5> skips;
  std::map<CellCoord, Tensor5> cells;
  FabricForwardOptions opts;
  opts.cell_outputs = &cells;
  fabric_.forward(encode(x, ctx, skips), ctx, opts);
  std::vector<std::pair<std::string, Tensor5>> out;
  for (const auto& c : coords) {
    out.emplace_back("cell_" + std::to_string(c.i) + "_" + std::to_string(c.j), cells.at(c));
  }
  return out;
}

}  // namespace firenet
