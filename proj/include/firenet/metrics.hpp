#pragma once

// Overlap and surface-distance metrics on integer label volumes.

#include <span>
#include <vector>

#include "firenet/data.hpp"

namespace firenet::inline FIRENET_ABI {

/// 2|A and B| / (|A| + |B|) for class k; 1 when both masks are empty.
double dsc(std::span<const int> pred, std::span<const int> gt, int k);

/// Surface voxels of class k: mask voxels with at least one six-connected
/// neighbour that is background or outside the volume.
std::vector<uint8_t> surface_mask(std::span<const int> labels, const Extent3& extent, int k);

/// Squared Euclidean distance (mm^2) from every voxel to the nearest set voxel
/// of `features`; infinity when there is none. Exact, separable per axis.
std::vector<double> squared_distance_transform(std::span<const uint8_t> features,
                                               const Extent3& extent, const Spacing& spacing);

/// Symmetric mean surface distance in mm: the mean, over the surface voxels of
/// both masks, of the distance to the nearest surface voxel of the other.
/// Throws Error when either mask is empty.
double msd(std::span<const int> pred, std::span<const int> gt, const Extent3& extent, int k,
           const Spacing& spacing);

double mean_of(std::span<const double> v);
/// Average of the two middle values for even counts.
double median_of(std::vector<double> v);

}  // namespace firenet
