#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

enum class ParamGroup { EncoderDecoder, Fabric, WrsFabric, WrsOuter, Head };

const char* group_name(ParamGroup g);
ParamGroup parse_group(const std::string& name);
const std::vector<ParamGroup>& all_groups();

struct Parameter {
  uint64_t id = 0;
  std::string name;
  Tensor5 value;
  bool trainable = true;
  ParamGroup group = ParamGroup::EncoderDecoder;
};

/// Owns every parameter of a network. Pointers handed out stay valid for the
/// lifetime of the store (including across moves of the store).
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  /// Registers a new parameter. Throws ConfigError on a duplicate name.
  Parameter* add(const std::string& name, Tensor5 value, ParamGroup group, bool trainable = true);

  /// Drops a parameter; pointers to it become invalid. Throws ConfigError if absent.
  void remove(const std::string& name);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  int64_t scalar_count() const;

  /// Only parameters whose group is in `groups` (and which are trainable)
  /// record gradients; the rest are frozen.
  void set_unfrozen(const std::set<ParamGroup>& groups);
  const std::set<ParamGroup>& unfrozen() const { return unfrozen_; }
  bool is_frozen(const Parameter& p) const;

  void zero_grad();

  /// Hash of the concatenated values of every parameter in `group`.
  uint64_t group_hash(ParamGroup group) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
  std::set<ParamGroup> unfrozen_{ParamGroup::EncoderDecoder, ParamGroup::Fabric,
                                 ParamGroup::WrsFabric, ParamGroup::WrsOuter, ParamGroup::Head};
  uint64_t next_id_ = 1;
};

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) using the top 53 bits of one generator output.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal draw (Marsaglia polar method on uniform01).
double standard_normal(Rng& rng);

}  // namespace firenet
