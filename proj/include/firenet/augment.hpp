#pragma once

// Geometric augmentation of image/label pairs by backward warping. Images are
// sampled trilinearly, labels by nearest neighbour; anything that maps outside
// the volume becomes image 0 / label 0.

#include <array>
#include <string>

#include "firenet/data.hpp"
#include "firenet/parameter.hpp"

namespace firenet::inline FIRENET_ABI {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

struct AugmentSpec {
  double max_translation = 8.0;  // voxels per axis
  double max_rotation = 10.0;    // degrees per axis
  double affine_jitter = 0.1;    // per matrix entry, around identity
  double elastic_alpha = 10.0;   // field scale, voxels per unit of smoothed noise
  double elastic_sigma = 8.0;    // Gaussian std of the smoothing, voxels
  bool translation = true;
  bool rotation = true;
  bool affine = true;
  bool elastic = true;

  static AugmentSpec none();
  void validate() const;
  /// `key = value` lines with the field names above.
  std::string to_text() const;
  static AugmentSpec from_text(const std::string& text);
  bool operator==(const AugmentSpec&) const = default;
};

/// Parameters of one random augmentation. Scalars are u * max with u from
/// truncated_normal; disabled transforms keep their identity values.
struct AugmentParams {
  Vec3 translation{0, 0, 0};   // voxels
  Vec3 rotation_deg{0, 0, 0};  // about the depth, height and width axes
  Mat3 affine{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  double elastic_alpha = 0.0;
  double elastic_sigma = 0.0;
  uint64_t elastic_seed = 0;
};

/// Standard normal redrawn until it lies in [-1, 1].
double truncated_normal(Rng& rng);

AugmentParams sample_params(const AugmentSpec& spec, Rng& rng);

Mat3 identity3();
Mat3 matmul(const Mat3& a, const Mat3& b);
/// Throws ConfigError when |det| is below 1e-12.
Mat3 inverse(const Mat3& m);
/// Rotation by `degrees` about `axis` (0 = depth, 1 = height, 2 = width) in
/// voxel index space.
Mat3 rotation(int axis, double degrees);

/// Output voxel y takes the input at M^-1 (y - c - offset) + c, c the volume
/// centre; i.e. the content moves by M about the centre, then by offset.
SamplePair apply_affine(const SamplePair& pair, const Mat3& matrix, const Vec3& offset);

/// Per-axis displacement (voxels) for every voxel: uniform noise in [-1, 1]
/// smoothed by a unit-sum Gaussian of std sigma (zero outside the volume),
/// times alpha. Layout: axis-major, then row-major voxels.
std::vector<double> elastic_field(const Extent3& extent, double alpha, double sigma, Rng& rng);

/// Output voxel y takes the input at y + field(y).
SamplePair apply_elastic(const SamplePair& pair, double alpha, double sigma, Rng& rng);

/// Translation, rotation, affine and elastic, in that order, resampled once.
SamplePair apply_params(const SamplePair& pair, const AugmentParams& params);
SamplePair apply_random(const SamplePair& pair, const AugmentSpec& spec, Rng& rng);

}  // namespace firenet
