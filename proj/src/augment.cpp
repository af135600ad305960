#include "firenet/augment.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/textconfig.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

Vec3 mat_vec(const Mat3& m, const Vec3& v) {
  Vec3 out{};
  for (int r = 0; r < 3; ++r) out[r] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
  return out;
}

real sample_trilinear(const Tensor5& img, const Extent3& e, const Vec3& p) {
  const auto& data = img.data();
  double fl[3];
  int64_t i0[3];
  for (int a = 0; a < 3; ++a) {
    fl[a] = std::floor(p[a]);
    i0[a] = static_cast<int64_t>(fl[a]);
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int64_t idx[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> (2 - a)) & 1;
      const double t = p[a] - fl[a];
      w *= bit ? t : 1.0 - t;
      idx[a] = i0[a] + bit;
      inside &= idx[a] >= 0 && idx[a] < e[a];
    }
    if (w == 0.0 || !inside) continue;
    acc += w * data[static_cast<std::size_t>(voxel_index(e, idx[0], idx[1], idx[2]))];
  }
  return static_cast<real>(acc);
}

int sample_nearest(const std::vector<int>& labels, const Extent3& e, const Vec3& p) {
  int64_t idx[3];
  for (int a = 0; a < 3; ++a) {
    idx[a] = static_cast<int64_t>(std::lround(p[a]));
    if (idx[a] < 0 || idx[a] >= e[a]) return 0;
  }
  return labels[static_cast<std::size_t>(voxel_index(e, idx[0], idx[1], idx[2]))];
}

// Backward warp: output voxel (d, h, w) reads the input at source(d, h, w).
template <class Source>
SamplePair warp(const SamplePair& in, Source&& source) {
  in.validate();
  const Extent3 e = in.extent();
  SamplePair out;
  out.name = in.name;
  out.spacing = in.spacing;
  std::vector<real> img(static_cast<std::size_t>(e[0] * e[1] * e[2]));
  out.labels.resize(img.size());
  for (int64_t d = 0; d < e[0]; ++d) {
    for (int64_t h = 0; h < e[1]; ++h) {
      for (int64_t w = 0; w < e[2]; ++w) {
        const auto i = static_cast<std::size_t>(voxel_index(e, d, h, w));
        const Vec3 p = source(d, h, w, i);
        img[i] = sample_trilinear(in.image, e, p);
        out.labels[i] = sample_nearest(in.labels, e, p);
      }
    }
  }
  out.image = Tensor5(in.image.shape(), std::move(img));
  return out;
}

Vec3 centre(const Extent3& e) {
  return {0.5 * static_cast<double>(e[0] - 1), 0.5 * static_cast<double>(e[1] - 1),
          0.5 * static_cast<double>(e[2] - 1)};
}

// Unit-sum Gaussian of std sigma, truncated at 3 sigma; zero samples outside
// [0, n). In place on a strided line.
void smooth_line(double* v, int64_t n, int64_t stride, const std::vector<double>& kernel,
                 std::vector<double>& tmp) {
  const auto r = static_cast<int64_t>(kernel.size() / 2);
  tmp.assign(static_cast<std::size_t>(n), 0.0);
  for (int64_t p = 0; p < n; ++p) {
    double acc = 0.0;
    const int64_t lo = std::max<int64_t>(0, p - r), hi = std::min<int64_t>(n - 1, p + r);
    for (int64_t q = lo; q <= hi; ++q) acc += kernel[static_cast<std::size_t>(q - p + r)] * v[q * stride];
    tmp[p] = acc;
  }
  for (int64_t p = 0; p < n; ++p) v[p * stride] = tmp[p];
}

}  // namespace

AugmentSpec AugmentSpec::none() {
  AugmentSpec s;
  s.translation = s.rotation = s.affine = s.elastic = false;
  return s;
}

void AugmentSpec::validate() const {
  for (double v : {max_translation, max_rotation, affine_jitter, elastic_alpha, elastic_sigma}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("augment: maxima must be finite and >= 0");
  }
}

std::string AugmentSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "max_translation = " << max_translation << "\n"
     << "max_rotation = " << max_rotation << "\n"
     << "affine_jitter = " << affine_jitter << "\n"
     << "elastic_alpha = " << elastic_alpha << "\n"
     << "elastic_sigma = " << elastic_sigma << "\n"
     << "translation = " << (translation ? "true" : "false") << "\n"
     << "rotation = " << (rotation ? "true" : "false") << "\n"
     << "affine = " << (affine ? "true" : "false") << "\n"
     << "elastic = " << (elastic ? "true" : "false") << "\n";
  return os.str();
}

AugmentSpec AugmentSpec::from_text(const std::string& text) {
  AugmentSpec s;
  for (const auto& [key, v] : parse_key_values(text)) {
    if (key == "max_translation") s.max_translation = parse_double(key, v);
    else if (key == "max_rotation") s.max_rotation = parse_double(key, v);
    else if (key == "affine_jitter") s.affine_jitter = parse_double(key, v);
    else if (key == "elastic_alpha") s.elastic_alpha = parse_double(key, v);
    else if (key == "elastic_sigma") s.elastic_sigma = parse_double(key, v);
    else if (key == "translation") s.translation = parse_bool(key, v);
    else if (key == "rotation") s.rotation = parse_bool(key, v);
    else if (key == "affine") s.affine = parse_bool(key, v);
    else if (key == "elastic") s.elastic = parse_bool(key, v);
    else throw ConfigError("augment spec: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

double truncated_normal(Rng& rng) {
  for (;;) {
    const double z = standard_normal(rng);
    if (z >= -1.0 && z <= 1.0) return z;
  }
}

AugmentParams sample_params(const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  AugmentParams p;
  if (spec.translation) {
    for (auto& t : p.translation) t = truncated_normal(rng) * spec.max_translation;
  }
  if (spec.rotation) {
    for (auto& r : p.rotation_deg) r = truncated_normal(rng) * spec.max_rotation;
  }
  if (spec.affine) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.affine[r][c] += truncated_normal(rng) * spec.affine_jitter;
    }
  }
  if (spec.elastic) {
    p.elastic_alpha = truncated_normal(rng) * spec.elastic_alpha;
    p.elastic_sigma = spec.elastic_sigma;
    p.elastic_seed = rng();
  }
  return p;
}

Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
    }
  }
  return out;
}

Mat3 inverse(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (!(std::fabs(det) >= 1e-12)) throw ConfigError("augment: affine matrix is singular");
  Mat3 inv{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      // Cofactor of (c, r), which transposes the adjugate.
      const int r1 = (c + 1) % 3, r2 = (c + 2) % 3, c1 = (r + 1) % 3, c2 = (r + 2) % 3;
      inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
    }
  }
  return inv;
}

Mat3 rotation(int axis, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  Mat3 m = identity3();
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  m[a][a] = c;
  m[a][b] = -s;
  m[b][a] = s;
  m[b][b] = c;
  return m;
}

SamplePair apply_affine(const SamplePair& pair, const Mat3& matrix, const Vec3& offset) {
  const Mat3 inv = inverse(matrix);
  const Vec3 c = centre(pair.extent());
  return warp(pair, [&](int64_t d, int64_t h, int64_t w, std::size_t) {
    const Vec3 rel{d - c[0] - offset[0], h - c[1] - offset[1], w - c[2] - offset[2]};
    const Vec3 src = mat_vec(inv, rel);
    return Vec3{src[0] + c[0], src[1] + c[1], src[2] + c[2]};
  });
}

std::vector<double> elastic_field(const Extent3& e, double alpha, double sigma, Rng& rng) {
  const int64_t n = e[0] * e[1] * e[2];
  std::vector<double> field(static_cast<std::size_t>(3 * n));
  for (auto& v : field) v = 2.0 * uniform01(rng) - 1.0;
  if (sigma > 0.0) {
    const auto r = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int64_t k = -r; k <= r; ++k) {
      const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
      kernel[static_cast<std::size_t>(k + r)] = v;
      sum += v;
    }
    for (auto& v : kernel) v /= sum;
    std::vector<double> tmp;
    const int64_t strides[3] = {e[1] * e[2], e[2], 1};
    for (int comp = 0; comp < 3; ++comp) {
      double* f = field.data() + comp * n;
      for (int axis = 0; axis < 3; ++axis) {
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        for (int64_t u = 0; u < e[a1]; ++u) {
          for (int64_t t = 0; t < e[a2]; ++t) {
            smooth_line(f + u * strides[a1] + t * strides[a2], e[axis], strides[axis], kernel, tmp);
          }
        }
      }
    }
  }
  for (auto& v : field) v *= alpha;
  return field;
}

SamplePair apply_elastic(const SamplePair& pair, double alpha, double sigma, Rng& rng) {
  if (!std::isfinite(alpha) || !(sigma >= 0.0)) throw ConfigError("augment: invalid elastic parameters");
  const Extent3 e = pair.extent();
  const auto n = static_cast<std::size_t>(e[0] * e[1] * e[2]);
  const auto field = elastic_field(e, alpha, sigma, rng);
  return warp(pair, [&](int64_t d, int64_t h, int64_t w, std::size_t i) {
    return Vec3{d + field[i], h + field[n + i], w + field[2 * n + i]};
  });
}

SamplePair apply_params(const SamplePair& pair, const AugmentParams& p) {
  const Extent3 e = pair.extent();
  const Mat3 rot = matmul(rotation(2, p.rotation_deg[2]),
                          matmul(rotation(1, p.rotation_deg[1]), rotation(0, p.rotation_deg[0])));
  const Mat3 m = matmul(p.affine, rot);
  const Mat3 inv = inverse(m);
  const Vec3 c = centre(e);
  const auto n = static_cast<std::size_t>(e[0] * e[1] * e[2]);
  std::vector<double> field;
  if (p.elastic_alpha != 0.0) {
    Rng rng(p.elastic_seed);
    field = elastic_field(e, p.elastic_alpha, p.elastic_sigma, rng);
  }
  return warp(pair, [&](int64_t d, int64_t h, int64_t w, std::size_t i) {
    Vec3 y{static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};
    if (!field.empty()) {
      for (int a = 0; a < 3; ++a) y[a] += field[a * n + i];
    }
    // Undo affine and rotation about the centre, then the translation.
    const Vec3 src = mat_vec(inv, Vec3{y[0] - c[0], y[1] - c[1], y[2] - c[2]});
    return Vec3{src[0] + c[0] - p.translation[0], src[1] + c[1] - p.translation[1],
                src[2] + c[2] - p.translation[2]};
  });
}

SamplePair apply_random(const SamplePair& pair, const AugmentSpec& spec, Rng& rng) {
  return apply_params(pair, sample_params(spec, rng));
}

}  // namespace firenet
