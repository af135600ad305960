#include "firenet/data.hpp"

#include <algorithm>

#include "firenet/error.hpp"

namespace firenet::inline FIRENET_ABI {

void SamplePair::validate() const {
  const Shape& s = image.shape();
  if (s.batch() != 1 || s.channels() != 1) {
    throw ShapeError("sample '" + name + "': image must have shape (1, 1, D, H, W)");
  }
  if (static_cast<int64_t>(labels.size()) != s.voxels()) {
    throw ShapeError("sample '" + name + "': " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(s.voxels()) + " voxels");
  }
}

int DatasetBundle::num_classes() const {
  int k = 0;
  for (const auto& d : datasets) k = std::max(k, d.num_classes());
  return k;
}

std::size_t DatasetBundle::train_size() const {
  std::size_t n = 0;
  for (const auto& d : datasets) n += d.train.size();
  return n;
}

void DatasetBundle::validate() const {
  for (const auto& d : datasets) {
    for (const auto* split : {&d.train, &d.val}) {
      for (const auto& p : *split) {
        p.validate();
        for (int l : p.labels) {
          if (l < 0 || l >= d.num_classes()) {
            throw ConfigError("dataset '" + d.name + "', sample '" + p.name + "': label " +
                              std::to_string(l) + " outside [0, " +
                              std::to_string(d.num_classes()) + ")");
          }
        }
      }
    }
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  throw ConfigError("unknown split '" + s + "' (expected train or val)");
}

}  // namespace firenet
