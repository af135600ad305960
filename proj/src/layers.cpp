#include "firenet/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "firenet/error.hpp"
#include "firenet/ops.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using BlockMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer size in floats (64 MB).
constexpr int64_t kColumnBudget = int64_t{1} << 24;

struct ConvGeometry {
  Conv3dSpec spec;
  Extent3 in;
  Extent3 out;
  int64_t taps() const { return spec.kernel[0] * spec.kernel[1] * spec.kernel[2]; }
  int64_t rows() const { return spec.in_channels * taps(); }
  int64_t plane() const { return out[1] * out[2]; }
  bool pointwise() const {
    return taps() == 1 && spec.stride == Extent3{1, 1, 1} && spec.padding == Extent3{0, 0, 0};
  }
};

// Range [lo, hi) of output indices whose input index o*stride - pad + off lies
// inside [0, n).
std::pair<int64_t, int64_t> valid_range(int64_t n_out, int64_t n_in, int64_t stride, int64_t pad,
                                        int64_t off) {
  int64_t lo = 0;
  while (lo < n_out && lo * stride - pad + off < 0) ++lo;
  int64_t hi = n_out;
  while (hi > lo && (hi - 1) * stride - pad + off >= n_in) --hi;
  return {lo, hi};
}

// Expands input depth-rows [od0, od1) into a (rows x cols) column matrix.
void im2col(const real* x, const ConvGeometry& g, int64_t od0, int64_t od1, real* col) {
  const auto& s = g.spec;
  const int64_t cols = (od1 - od0) * g.plane();
  const int64_t in_plane = g.in[1] * g.in[2];
  const int64_t in_vol = g.in[0] * in_plane;
  int64_t r = 0;
  for (int64_t ci = 0; ci < s.in_channels; ++ci) {
    const real* xc = x + ci * in_vol;
    for (int64_t a = 0; a < s.kernel[0]; ++a) {
      for (int64_t b = 0; b < s.kernel[1]; ++b) {
        for (int64_t c = 0; c < s.kernel[2]; ++c, ++r) {
          real* dst = col + r * cols;
          const int64_t offw = c * s.dilation[2];
          auto [wlo, whi] = valid_range(g.out[2], g.in[2], s.stride[2], s.padding[2], offw);
          for (int64_t od = od0; od < od1; ++od) {
            const int64_t id = od * s.stride[0] - s.padding[0] + a * s.dilation[0];
            for (int64_t oh = 0; oh < g.out[1]; ++oh, dst += g.out[2]) {
              const int64_t ih = oh * s.stride[1] - s.padding[1] + b * s.dilation[1];
              if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) {
                std::fill_n(dst, g.out[2], 0.0f);
                continue;
              }
              const real* src = xc + id * in_plane + ih * g.in[2] - s.padding[2] + offw;
              std::fill_n(dst, wlo, 0.0f);
              if (s.stride[2] == 1) {
                std::copy(src + wlo, src + whi, dst + wlo);
              } else {
                for (int64_t ow = wlo; ow < whi; ++ow) dst[ow] = src[ow * s.stride[2]];
              }
              std::fill(dst + whi, dst + g.out[2], 0.0f);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back into the input gradient.
void col2im(const real* col, const ConvGeometry& g, int64_t od0, int64_t od1, real* dx) {
  const auto& s = g.spec;
  const int64_t cols = (od1 - od0) * g.plane();
  const int64_t in_plane = g.in[1] * g.in[2];
  const int64_t in_vol = g.in[0] * in_plane;
  int64_t r = 0;
  for (int64_t ci = 0; ci < s.in_channels; ++ci) {
    real* xc = dx + ci * in_vol;
    for (int64_t a = 0; a < s.kernel[0]; ++a) {
      for (int64_t b = 0; b < s.kernel[1]; ++b) {
        for (int64_t c = 0; c < s.kernel[2]; ++c, ++r) {
          const real* src = col + r * cols;
          const int64_t offw = c * s.dilation[2];
          auto [wlo, whi] = valid_range(g.out[2], g.in[2], s.stride[2], s.padding[2], offw);
          for (int64_t od = od0; od < od1; ++od) {
            const int64_t id = od * s.stride[0] - s.padding[0] + a * s.dilation[0];
            for (int64_t oh = 0; oh < g.out[1]; ++oh, src += g.out[2]) {
              const int64_t ih = oh * s.stride[1] - s.padding[1] + b * s.dilation[1];
              if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) continue;
              real* dst = xc + id * in_plane + ih * g.in[2] - s.padding[2] + offw;
              for (int64_t ow = wlo; ow < whi; ++ow) dst[ow * s.stride[2]] += src[ow];
            }
          }
        }
      }
    }
  }
}

int64_t rows_per_chunk(const ConvGeometry& g) {
  const int64_t per_row = std::max<int64_t>(1, g.rows() * g.plane());
  return std::clamp<int64_t>(kColumnBudget / per_row, 1, g.out[0]);
}

}  // namespace

int64_t Conv3dSpec::output_extent(int axis, int64_t in) const {
  const int64_t span = in + 2 * padding[axis] - effective_extent(axis);
  if (span < 0) return 0;
  return span / stride[axis] + 1;
}

Extent3 Conv3dSpec::output_extent(const Extent3& in) const {
  return {output_extent(0, in[0]), output_extent(1, in[1]), output_extent(2, in[2])};
}

Conv3dSpec Conv3dSpec::same(int64_t in, int64_t out, int64_t dilation) {
  Conv3dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.dilation = {dilation, dilation, dilation};
  s.padding = {dilation, dilation, dilation};
  return s;
}

Conv3dSpec Conv3dSpec::pointwise(int64_t in, int64_t out, bool bias) {
  Conv3dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {1, 1, 1};
  s.has_bias = bias;
  return s;
}

Conv3dSpec Conv3dSpec::strided_down(int64_t in, int64_t out) {
  Conv3dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.stride = {2, 2, 2};
  s.padding = {1, 1, 1};
  return s;
}

Tensor5 conv3d(const Tensor5& x, const Conv3dSpec& spec, const Tensor5& weight,
               const Tensor5* bias) {
  const auto& xs = x.shape();
  if (xs.channels() != spec.in_channels) {
    throw ShapeError("conv3d: input has " + std::to_string(xs.channels()) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv3d: weight shape " + weight.shape().str() + " does not match spec " +
                     spec.weight_shape().str());
  }
  if (bias && bias->shape() != Shape(1, spec.out_channels, 1, 1, 1)) {
    throw ShapeError("conv3d: bias shape " + bias->shape().str());
  }
  static const char* axis_names[3] = {"depth", "height", "width"};
  ConvGeometry g{spec, xs.spatial(), {}};
  for (int a = 0; a < 3; ++a) {
    g.out[a] = spec.output_extent(a, g.in[a]);
    if (g.out[a] < 1) {
      throw ShapeError(std::string("conv3d: output ") + axis_names[a] + " extent < 1 (input " +
                       std::to_string(g.in[a]) + ", effective kernel " +
                       std::to_string(spec.effective_extent(a)) + ", padding " +
                       std::to_string(spec.padding[a]) + ")");
    }
  }
  const int64_t B = xs.batch(), Ci = spec.in_channels, Co = spec.out_channels;
  const int64_t in_vol = xs.voxels();
  const int64_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const Shape os = Shape::from(B, Co, g.out);
  std::vector<real> out(static_cast<std::size_t>(os.numel()));
  ConstMatMap wm(weight.data().data(), Co, g.rows());
  const int64_t chunk = rows_per_chunk(g);
  std::vector<real> col;
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(g.rows() * chunk * g.plane()));

  for (int64_t n = 0; n < B; ++n) {
    const real* xn = x.data().data() + n * Ci * in_vol;
    real* on = out.data() + n * Co * out_vol;
    if (g.pointwise()) {
      MatMap(on, Co, out_vol).noalias() = wm * ConstMatMap(xn, Ci, in_vol);
    } else {
      for (int64_t od0 = 0; od0 < g.out[0]; od0 += chunk) {
        const int64_t od1 = std::min(g.out[0], od0 + chunk);
        const int64_t cols = (od1 - od0) * g.plane();
        im2col(xn, g, od0, od1, col.data());
        BlockMap ob(on + od0 * g.plane(), Co, cols, Eigen::OuterStride<>(out_vol));
        ob.noalias() = wm * ConstMatMap(col.data(), g.rows(), cols);
      }
    }
    if (bias) {
      const auto bd = bias->data();
      for (int64_t c = 0; c < Co; ++c) {
        real* p = on + c * out_vol;
        for (int64_t v = 0; v < out_vol; ++v) p[v] += bd[c];
      }
    }
  }

  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias ? bias->impl() : nullptr;
  std::vector<const Tensor5*> inputs{&x, &weight};
  if (bias) inputs.push_back(bias);
  return make_result(
      os, std::move(out), "conv3d", inputs, [xi, wi, bi, g, chunk](const TensorImpl& o) {
        const int64_t B = o.shape.batch(), Ci = g.spec.in_channels, Co = g.spec.out_channels;
        const int64_t in_vol = g.in[0] * g.in[1] * g.in[2];
        const int64_t out_vol = g.out[0] * g.out[1] * g.out[2];
        if (bi && bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (int64_t n = 0; n < B; ++n) {
            for (int64_t c = 0; c < Co; ++c) {
              const real* p = o.grad.data() + (n * Co + c) * out_vol;
              double acc = 0.0;
              for (int64_t v = 0; v < out_vol; ++v) acc += p[v];
              gb[c] += static_cast<real>(acc);
            }
          }
        }
        const bool need_w = wi->requires_grad, need_x = xi->requires_grad;
        if (!need_w && !need_x) return;
        ConstMatMap wm(wi->data.data(), Co, g.rows());
        real* gw = need_w ? wi->grad_buffer().data() : nullptr;
        real* gx = need_x ? xi->grad_buffer().data() : nullptr;
        std::vector<real> col, dcol;
        if (!g.pointwise()) {
          col.resize(static_cast<std::size_t>(g.rows() * chunk * g.plane()));
          if (need_x) dcol.resize(col.size());
        }
        for (int64_t n = 0; n < B; ++n) {
          const real* xn = xi->data.data() + n * Ci * in_vol;
          const real* gon = o.grad.data() + n * Co * out_vol;
          if (g.pointwise()) {
            ConstMatMap go(gon, Co, out_vol);
            if (need_w) MatMap(gw, Co, Ci).noalias() += go * ConstMatMap(xn, Ci, in_vol).transpose();
            if (need_x) MatMap(gx + n * Ci * in_vol, Ci, in_vol).noalias() += wm.transpose() * go;
            continue;
          }
          for (int64_t od0 = 0; od0 < g.out[0]; od0 += chunk) {
            const int64_t od1 = std::min(g.out[0], od0 + chunk);
            const int64_t cols = (od1 - od0) * g.plane();
            Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> go(gon + od0 * g.plane(), Co, cols,
                                                                 Eigen::OuterStride<>(out_vol));
            if (need_w) {
              im2col(xn, g, od0, od1, col.data());
              MatMap(gw, Co, g.rows()).noalias() +=
                  go * ConstMatMap(col.data(), g.rows(), cols).transpose();
            }
            if (need_x) {
              MatMap(dcol.data(), g.rows(), cols).noalias() = wm.transpose() * go;
              col2im(dcol.data(), g, od0, od1, gx + n * Ci * in_vol);
            }
          }
        }
      });
}

Tensor5 maxpool3d(const Tensor5& x, const PoolSpec& spec) {
  const auto& xs = x.shape();
  const int64_t r = spec.rate;
  if (r < 1) throw ShapeError("maxpool3d: rate must be positive");
  static const char* axis_names[3] = {"depth", "height", "width"};
  const Extent3 in = xs.spatial();
  Extent3 out{};
  for (int a = 0; a < 3; ++a) {
    if (in[a] < r) {
      throw ShapeError(std::string("maxpool3d: ") + axis_names[a] + " extent " +
                       std::to_string(in[a]) + " smaller than pool rate " + std::to_string(r));
    }
    out[a] = in[a] / r;
  }
  const Shape os = Shape::from(xs.batch(), xs.channels(), out);
  std::vector<real> values(static_cast<std::size_t>(os.numel()));
  std::vector<int64_t> argmax(values.size());
  const auto xd = x.data();
  const int64_t planes = xs.batch() * xs.channels();
  const int64_t in_vol = xs.voxels();
  std::size_t o = 0;
  for (int64_t p = 0; p < planes; ++p) {
    const int64_t base = p * in_vol;
    for (int64_t d = 0; d < out[0]; ++d) {
      for (int64_t h = 0; h < out[1]; ++h) {
        for (int64_t w = 0; w < out[2]; ++w, ++o) {
          int64_t best_i = -1;
          real best = 0.0f;
          // Scan order is increasing linear index, so strict '>' keeps the lowest on ties.
          for (int64_t a = 0; a < r; ++a) {
            for (int64_t b = 0; b < r; ++b) {
              const int64_t row = base + ((d * r + a) * in[1] + (h * r + b)) * in[2] + w * r;
              for (int64_t c = 0; c < r; ++c) {
                if (best_i < 0 || xd[row + c] > best) {
                  best = xd[row + c];
                  best_i = row + c;
                }
              }
            }
          }
          values[o] = best;
          argmax[o] = best_i;
        }
      }
    }
  }
  if (auto* trace = active_branch_trace()) {
    trace->pool_choice(argmax);
    for (std::size_t i = 0; i < argmax.size(); ++i) values[i] = xd[argmax[i]];
  }
  auto xi = x.impl();
  return make_result(os, std::move(values), "maxpool3d", {&x},
                     [xi, argmax = std::move(argmax)](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                     });
}

namespace {

struct LerpTable {
  std::vector<int64_t> lo, hi;
  std::vector<real> w;  // weight of `hi`
};

LerpTable lerp_table(int64_t n, int64_t factor) {
  LerpTable t;
  const int64_t m = n * factor;
  t.lo.resize(m);
  t.hi.resize(m);
  t.w.resize(m);
  for (int64_t i = 0; i < m; ++i) {
    double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t lo = static_cast<int64_t>(std::floor(src));
    if (lo > n - 1) lo = n - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, n - 1);
    t.w[i] = static_cast<real>(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

Tensor5 upsample_trilinear(const Tensor5& x, int64_t factor) {
  if (factor < 1) throw ShapeError("upsample_trilinear: factor must be >= 1");
  if (factor == 1) return x;
  const auto& xs = x.shape();
  const Extent3 in = xs.spatial();
  const Extent3 out{in[0] * factor, in[1] * factor, in[2] * factor};
  const Shape os = Shape::from(xs.batch(), xs.channels(), out);
  auto td = std::make_shared<std::array<LerpTable, 3>>();
  for (int a = 0; a < 3; ++a) (*td)[a] = lerp_table(in[a], factor);
  const auto& T = *td;
  std::vector<real> values(static_cast<std::size_t>(os.numel()));
  const auto xd = x.data();
  const int64_t planes = xs.batch() * xs.channels();
  const int64_t in_vol = xs.voxels(), out_vol = os.voxels();
  for (int64_t p = 0; p < planes; ++p) {
    const real* src = xd.data() + p * in_vol;
    real* dst = values.data() + p * out_vol;
    for (int64_t d = 0; d < out[0]; ++d) {
      const real wd = T[0].w[d];
      const real* s0 = src + T[0].lo[d] * in[1] * in[2];
      const real* s1 = src + T[0].hi[d] * in[1] * in[2];
      for (int64_t h = 0; h < out[1]; ++h) {
        const real wh = T[1].w[h];
        const int64_t h0 = T[1].lo[h] * in[2], h1 = T[1].hi[h] * in[2];
        for (int64_t w = 0; w < out[2]; ++w) {
          const real ww = T[2].w[w];
          const int64_t w0 = T[2].lo[w], w1 = T[2].hi[w];
          const real c00 = s0[h0 + w0] + ww * (s0[h0 + w1] - s0[h0 + w0]);
          const real c01 = s0[h1 + w0] + ww * (s0[h1 + w1] - s0[h1 + w0]);
          const real c10 = s1[h0 + w0] + ww * (s1[h0 + w1] - s1[h0 + w0]);
          const real c11 = s1[h1 + w0] + ww * (s1[h1 + w1] - s1[h1 + w0]);
          const real c0 = c00 + wh * (c01 - c00);
          const real c1 = c10 + wh * (c11 - c10);
          *dst++ = c0 + wd * (c1 - c0);
        }
      }
    }
  }
  auto xi = x.impl();
  return make_result(os, std::move(values), "upsample_trilinear", {&x},
                     [xi, td, in, out, planes, in_vol, out_vol](const TensorImpl& o) {
                       const auto& T = *td;
                       auto& g = xi->grad_buffer();
                       for (int64_t p = 0; p < planes; ++p) {
                         real* gsrc = g.data() + p * in_vol;
                         const real* gdst = o.grad.data() + p * out_vol;
                         for (int64_t d = 0; d < out[0]; ++d) {
                           const real wd = T[0].w[d];
                           real* s0 = gsrc + T[0].lo[d] * in[1] * in[2];
                           real* s1 = gsrc + T[0].hi[d] * in[1] * in[2];
                           for (int64_t h = 0; h < out[1]; ++h) {
                             const real wh = T[1].w[h];
                             const int64_t h0 = T[1].lo[h] * in[2], h1 = T[1].hi[h] * in[2];
                             for (int64_t w = 0; w < out[2]; ++w) {
                               const real ww = T[2].w[w];
                               const int64_t w0 = T[2].lo[w], w1 = T[2].hi[w];
                               const real gv = *gdst++;
                               const real g0 = gv * (1.0f - wd), g1 = gv * wd;
                               const real g00 = g0 * (1.0f - wh), g01 = g0 * wh;
                               const real g10 = g1 * (1.0f - wh), g11 = g1 * wh;
                               s0[h0 + w0] += g00 * (1.0f - ww);
                               s0[h0 + w1] += g00 * ww;
                               s0[h1 + w0] += g01 * (1.0f - ww);
                               s0[h1 + w1] += g01 * ww;
                               s1[h0 + w0] += g10 * (1.0f - ww);
                               s1[h0 + w1] += g10 * ww;
                               s1[h1 + w0] += g11 * (1.0f - ww);
                               s1[h1 + w1] += g11 * ww;
                             }
                           }
                         }
                       }
                     });
}

Tensor5 instance_norm(const Tensor5& x, const Tensor5& gamma, const Tensor5& beta, real eps) {
  const auto& xs = x.shape();
  const int64_t C = xs.channels(), V = xs.voxels(), B = xs.batch();
  if (gamma.shape() != Shape(1, C, 1, 1, 1) || beta.shape() != Shape(1, C, 1, 1, 1)) {
    throw ShapeError("instance_norm: affine parameters must be (1," + std::to_string(C) +
                     ",1,1,1)");
  }
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<real> values(xd.size());
  auto xhat = std::make_shared<std::vector<real>>(xd.size());
  auto inv_std = std::make_shared<std::vector<real>>(static_cast<std::size_t>(B * C));
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const int64_t base = (n * C + c) * V;
      double m = 0.0;
      for (int64_t v = 0; v < V; ++v) m += xd[base + v];
      m /= static_cast<double>(V);
      double var = 0.0;
      for (int64_t v = 0; v < V; ++v) {
        const double dv = xd[base + v] - m;
        var += dv * dv;
      }
      var /= static_cast<double>(V);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[n * C + c] = static_cast<real>(is);
      for (int64_t v = 0; v < V; ++v) {
        const real xh = static_cast<real>((xd[base + v] - m) * is);
        (*xhat)[base + v] = xh;
        values[base + v] = gd[c] * xh + bd[c];
      }
    }
  }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(
      xs, std::move(values), "instance_norm", {&x, &gamma, &beta},
      [xi, gi, bi, xhat, inv_std, B, C, V](const TensorImpl& o) {
        real* gg = gi->requires_grad ? gi->grad_buffer().data() : nullptr;
        real* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
        real* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
        for (int64_t n = 0; n < B; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (n * C + c) * V;
            const real* dy = o.grad.data() + base;
            const real* xh = xhat->data() + base;
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int64_t v = 0; v < V; ++v) {
              sum_dy += dy[v];
              sum_dy_xh += static_cast<double>(dy[v]) * xh[v];
            }
            if (gg) gg[c] += static_cast<real>(sum_dy_xh);
            if (gb) gb[c] += static_cast<real>(sum_dy);
            if (gx) {
              const real gam = gi->data[c];
              const real is = (*inv_std)[n * C + c];
              const double mean_dy = sum_dy / static_cast<double>(V);
              const double mean_dy_xh = sum_dy_xh / static_cast<double>(V);
              for (int64_t v = 0; v < V; ++v) {
                gx[base + v] += gam * is *
                                static_cast<real>(dy[v] - mean_dy - xh[v] * mean_dy_xh);
              }
            }
          }
        }
      });
}

Tensor5 dropout(const Tensor5& x, real rate, bool training, Rng* rng) {
  if (rate < 0.0f || rate >= 1.0f) throw Error("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0f) return x;
  if (!rng) throw Error("dropout: training mode requires a random generator");
  const auto xd = x.data();
  const real keep_scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<real>>(xd.size());
  std::vector<real> values(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const real m = uniform01(*rng) < rate ? 0.0f : keep_scale;
    (*mask)[i] = m;
    values[i] = xd[i] * m;
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(values), "dropout", {&x}, [xi, mask](const TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
  });
}

// ---- parameterised modules ----

Conv3d::Conv3d(ParameterStore& store, const std::string& name, const Conv3dSpec& spec,
               ParamGroup group, Rng& rng, double init_gain)
    : spec_(spec) {
  const Shape ws = spec.weight_shape();
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel[0] * spec.kernel[1] *
                                            spec.kernel[2]);
  const double stddev = init_gain * std::sqrt(2.0 / fan_in);
  std::vector<real> w(static_cast<std::size_t>(ws.numel()));
  for (auto& v : w) v = static_cast<real>(stddev * standard_normal(rng));
  weight_ = store.add(name + ".weight", Tensor5(ws, std::move(w)), group);
  if (spec.has_bias) {
    bias_ = store.add(name + ".bias", Tensor5::zeros(Shape(1, spec.out_channels, 1, 1, 1)), group);
  }
}

Tensor5 Conv3d::forward(const Tensor5& x) const {
  return conv3d(x, spec_, weight_->value, bias_ ? &bias_->value : nullptr);
}

InstanceNorm::InstanceNorm(ParameterStore& store, const std::string& name, int64_t channels,
                           ParamGroup group) {
  gamma_ = store.add(name + ".gamma", Tensor5::full(Shape(1, channels, 1, 1, 1), 1.0f), group);
  beta_ = store.add(name + ".beta", Tensor5::zeros(Shape(1, channels, 1, 1, 1)), group);
}

Tensor5 InstanceNorm::forward(const Tensor5& x) const {
  return instance_norm(x, gamma_->value, beta_->value);
}

ConvBlock::ConvBlock(ParameterStore& store, const std::string& name, const Conv3dSpec& spec,
                     ParamGroup group, Rng& rng)
    : conv_(store, name + ".conv", spec, group, rng),
      norm_(store, name + ".norm", spec.out_channels, group) {}

Tensor5 ConvBlock::forward(const Tensor5& x, const ForwardContext& ctx) const {
  return dropout(relu(norm_.forward(conv_.forward(x))), ctx.dropout_rate, ctx.training, ctx.rng);
}

ResidualUnit::ResidualUnit(ParameterStore& store, const std::string& name, int64_t in_channels,
                           int64_t out_channels, ParamGroup group, Rng& rng)
    : first_(store, name + ".f1", Conv3dSpec::same(in_channels, out_channels), group, rng),
      second_(store, name + ".f2", Conv3dSpec::same(out_channels, out_channels), group, rng) {
  if (in_channels != out_channels) {
    projection_.emplace(store, name + ".skip", Conv3dSpec::pointwise(in_channels, out_channels),
                        group, rng);
  }
}

Tensor5 ResidualUnit::forward(const Tensor5& x, const ForwardContext& ctx) const {
  Tensor5 branch = second_.forward(first_.forward(x, ctx), ctx);
  return add(branch, projection_ ? projection_->forward(x) : x);
}

}  // namespace firenet
