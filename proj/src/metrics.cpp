#include "firenet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "firenet/error.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": volumes have " + std::to_string(a) + " and " +
                     std::to_string(b) + " voxels");
  }
}

// Lower envelope of parabolas (x - x_q)^2 + f(q), positions x_q = q * step.
// f and out may alias.
void distance_1d(const double* f, double* out, int64_t n, double step, std::vector<int64_t>& v,
                 std::vector<double>& z, std::vector<double>& tmp) {
  tmp.assign(f, f + n);
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (tmp[q] == kInf) continue;
    const double xq = static_cast<double>(q) * step;
    double s = -kInf;
    while (k >= 0) {
      const double xv = static_cast<double>(v[k]) * step;
      s = ((tmp[q] + xq * xq) - (tmp[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int64_t j = 0;
  for (int64_t p = 0; p < n; ++p) {
    const double xp = static_cast<double>(p) * step;
    while (z[j + 1] < xp) ++j;
    const double xv = static_cast<double>(v[j]) * step;
    out[p] = (xp - xv) * (xp - xv) + tmp[v[j]];
  }
}

}  // namespace

double dsc(std::span<const int> pred, std::span<const int> gt, int k) {
  check_sizes(pred.size(), gt.size(), "dsc");
  int64_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pa = pred[i] == k, gb = gt[i] == k;
    a += pa;
    b += gb;
    both += pa && gb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<uint8_t> surface_mask(std::span<const int> labels, const Extent3& e, int k) {
  check_sizes(labels.size(), static_cast<std::size_t>(e[0] * e[1] * e[2]), "surface");
  std::vector<uint8_t> out(labels.size(), 0);
  auto inside = [&](int64_t d, int64_t h, int64_t w) {
    return d >= 0 && h >= 0 && w >= 0 && d < e[0] && h < e[1] && w < e[2] &&
           labels[static_cast<std::size_t>(voxel_index(e, d, h, w))] == k;
  };
  for (int64_t d = 0; d < e[0]; ++d) {
    for (int64_t h = 0; h < e[1]; ++h) {
      for (int64_t w = 0; w < e[2]; ++w) {
        if (!inside(d, h, w)) continue;
        const bool interior = inside(d - 1, h, w) && inside(d + 1, h, w) && inside(d, h - 1, w) &&
                              inside(d, h + 1, w) && inside(d, h, w - 1) && inside(d, h, w + 1);
        out[static_cast<std::size_t>(voxel_index(e, d, h, w))] = !interior;
      }
    }
  }
  return out;
}

std::vector<double> squared_distance_transform(std::span<const uint8_t> features,
                                               const Extent3& e, const Spacing& spacing) {
  check_sizes(features.size(), static_cast<std::size_t>(e[0] * e[1] * e[2]), "distance");
  std::vector<double> g(features.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = features[i] ? 0.0 : kInf;
  std::vector<int64_t> v;
  std::vector<double> z, tmp, line;
  const int64_t strides[3] = {e[1] * e[2], e[2], 1};
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t n = e[axis];
    line.resize(static_cast<std::size_t>(n));
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int64_t u = 0; u < e[a1]; ++u) {
      for (int64_t t = 0; t < e[a2]; ++t) {
        const int64_t base = u * strides[a1] + t * strides[a2];
        for (int64_t p = 0; p < n; ++p) line[p] = g[base + p * strides[axis]];
        distance_1d(line.data(), line.data(), n, spacing[axis], v, z, tmp);
        for (int64_t p = 0; p < n; ++p) g[base + p * strides[axis]] = line[p];
      }
    }
  }
  return g;
}

double msd(std::span<const int> pred, std::span<const int> gt, const Extent3& e, int k,
           const Spacing& spacing) {
  check_sizes(pred.size(), gt.size(), "msd");
  const auto sa = surface_mask(pred, e, k);
  const auto sb = surface_mask(gt, e, k);
  const auto count = [](const std::vector<uint8_t>& m) {
    return std::count(m.begin(), m.end(), uint8_t{1});
  };
  const auto na = count(sa), nb = count(sb);
  if (na == 0 || nb == 0) throw Error("msd: class " + std::to_string(k) + " mask is empty");
  const auto da = squared_distance_transform(sa, e, spacing);
  const auto db = squared_distance_transform(sb, e, spacing);
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]) total += std::sqrt(db[i]);
    if (sb[i]) total += std::sqrt(da[i]);
  }
  return total / static_cast<double>(na + nb);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace firenet
