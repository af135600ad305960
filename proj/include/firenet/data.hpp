#pragma once

// Image/label pairs and multi-dataset bundles.

#include <array>
#include <string>
#include <vector>

#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

using Spacing = std::array<double, 3>;  // mm per voxel along depth, height, width

struct SamplePair {
  std::string name;
  Tensor5 image;            // (1, 1, D, H, W)
  std::vector<int> labels;  // D*H*W, row-major, values in [0, K)
  Spacing spacing{1.0, 1.0, 1.0};

  Extent3 extent() const { return image.shape().spatial(); }
  /// Throws ShapeError if the image is not single-channel or labels do not
  /// cover the image.
  void validate() const;
};

struct Dataset {
  std::string name;
  std::vector<std::string> class_names;  // index = label value
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct DatasetBundle {
  std::vector<Dataset> datasets;

  int num_classes() const;  // max over datasets
  std::size_t train_size() const;
  /// Validates every pair and that every label is below its dataset's class count.
  void validate() const;
};

enum class Split { Train, Val };
Split parse_split(const std::string& s);

inline int64_t voxel_index(const Extent3& e, int64_t d, int64_t h, int64_t w) {
  return (d * e[1] + h) * e[2] + w;
}

}  // namespace firenet
