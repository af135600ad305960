#include "firenet/parameter.hpp"

#include <cmath>

#include "firenet/error.hpp"

namespace firenet::inline FIRENET_ABI {

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::EncoderDecoder: return "ENCODER_DECODER";
    case ParamGroup::Fabric: return "FABRIC";
    case ParamGroup::WrsFabric: return "WRS_FABRIC";
    case ParamGroup::WrsOuter: return "WRS_OUTER";
    case ParamGroup::Head: return "HEAD";
  }
  return "?";
}

ParamGroup parse_group(const std::string& name) {
  for (auto g : all_groups()) {
    if (name == group_name(g)) return g;
  }
  throw ConfigError("unknown parameter group '" + name + "'");
}

const std::vector<ParamGroup>& all_groups() {
  static const std::vector<ParamGroup> groups{ParamGroup::EncoderDecoder, ParamGroup::Fabric,
                                              ParamGroup::WrsFabric, ParamGroup::WrsOuter,
                                              ParamGroup::Head};
  return groups;
}

Parameter* ParameterStore::add(const std::string& name, Tensor5 value, ParamGroup group,
                               bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->id = next_id_++;
  p->name = name;
  p->value = std::move(value);
  p->trainable = trainable;
  p->group = group;
  p->value.set_requires_grad(trainable && unfrozen_.count(group) > 0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back().get();
}

void ParameterStore::remove(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  params_.erase(params_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (std::size_t k = 0; k < params_.size(); ++k) index_[params_[k]->name] = k;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

int64_t ParameterStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParameterStore::set_unfrozen(const std::set<ParamGroup>& groups) {
  unfrozen_ = groups;
  for (auto& p : params_) {
    p->value.set_requires_grad(p->trainable && unfrozen_.count(p->group) > 0);
    if (!p->value.requires_grad()) p->value.zero_grad();
  }
}

bool ParameterStore::is_frozen(const Parameter& p) const {
  return !p.trainable || unfrozen_.count(p.group) == 0;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->value.zero_grad();
}

uint64_t ParameterStore::group_hash(ParamGroup group) const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : params_) {
    if (p->group != group) continue;
    h ^= hash_values(p->value.data());
    h *= 1099511628211ull;
  }
  return h;
}

double standard_normal(Rng& rng) {
  for (;;) {
    const double u = 2.0 * uniform01(rng) - 1.0;
    const double v = 2.0 * uniform01(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

}  // namespace firenet
