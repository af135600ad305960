#pragma once

// Synthetic multi-resolution segmentation datasets. Each foreground class is
// one analytic shape with its own intensity band; labels are the exact masks.

#include <string>
#include <utility>
#include <vector>

#include "firenet/data.hpp"
#include "firenet/parameter.hpp"

namespace firenet::inline FIRENET_ABI {

enum class ShapeKind { Ellipsoid, Box, Shell };
const char* shape_name(ShapeKind k);
ShapeKind parse_shape(const std::string& s);

struct SyntheticSpec {
  int n_datasets = 3;
  std::vector<std::pair<int64_t, int64_t>> resolutions{{24, 32}, {33, 40}, {41, 48}};
  int n_examples = 20;  // per dataset, train + val
  int n_val = 5;        // per dataset
  std::vector<int> classes{3};  // per dataset incl. background; one entry applies to all
  std::vector<ShapeKind> shapes{ShapeKind::Ellipsoid, ShapeKind::Box, ShapeKind::Shell};
  double noise = 0.1;  // Gaussian std, in units of the intensity step between classes
  uint64_t seed = 1;

  int classes_of(int dataset) const;
  void validate() const;
  /// `key = value` lines; resolutions as "24-32, 33-40", shapes as names.
  std::string to_text() const;
  static SyntheticSpec from_text(const std::string& text);
};

/// One shape instance in voxel coordinates.
struct ShapeInstance {
  ShapeKind kind = ShapeKind::Ellipsoid;
  std::array<double, 3> centre{0, 0, 0};
  std::array<double, 3> radii{1, 1, 1};  // semi-axes; half-sizes for boxes
  double inner = 0.6;                    // shells: inner surface at this fraction of the radii

  bool contains(double d, double h, double w) const;
};

/// Renders `shapes` (later ones on top) into labels 1..n and an image whose
/// class k voxels have intensity `bands[k]` plus Gaussian noise of std `noise`.
SamplePair render(const Extent3& extent, const std::vector<ShapeInstance>& shapes,
                  const std::vector<double>& bands, double noise, Rng& rng);

DatasetBundle generate(const SyntheticSpec& spec);

}  // namespace firenet
