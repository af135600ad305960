#include "firenet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "firenet/error.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

void require_same_shape(const char* op, const Tensor5& a, const Tensor5& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

template <class Fwd, class Dfdx>
Tensor5 unary(const char* name, const Tensor5& a, Fwd fwd, Dfdx dfdx) {
  const auto in = a.data();
  std::vector<real> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto ai = a.impl();
  return make_result(a.shape(), std::move(out), name, {&a},
                     [ai, dfdx](const TensorImpl& o) {
                       if (!ai->requires_grad) return;
                       auto& g = ai->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += o.grad[i] * dfdx(ai->data[i], o.data[i]);
                       }
                     });
}

real sigmoid_scalar(real x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const real e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor5 add(const Tensor5& a, const Tensor5& b) {
  require_same_shape("add", a, b);
  const auto x = a.data(), y = b.data();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "add", {&a, &b}, [ai, bi](const TensorImpl& o) {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto& g = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor5 sub(const Tensor5& a, const Tensor5& b) {
  require_same_shape("sub", a, b);
  const auto x = a.data(), y = b.data();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "sub", {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor5 mul(const Tensor5& a, const Tensor5& b) {
  require_same_shape("mul", a, b);
  const auto x = a.data(), y = b.data();
  std::vector<real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "mul", {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor5 scale(const Tensor5& a, real s) {
  return unary("scale", a, [s](real x) { return s * x; }, [s](real, real) { return s; });
}

Tensor5 sigmoid(const Tensor5& a) {
  return unary("sigmoid", a, sigmoid_scalar, [](real, real y) { return y * (1.0f - y); });
}

Tensor5 relu(const Tensor5& a) {
  if (auto* trace = active_branch_trace()) {
    const auto mask = trace->relu_mask(a.data());
    const auto in = a.data();
    std::vector<real> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = mask[i] ? in[i] : 0.0f;
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), "relu", {&a},
                       [ai, mask](const TensorImpl& o) {
                         auto& g = ai->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           if (mask[i]) g[i] += o.grad[i];
                         }
                       });
  }
  return unary(
      "relu", a, [](real x) { return x > 0.0f ? x : 0.0f; },
      [](real x, real) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor5 exp(const Tensor5& a) {
  return unary(
      "exp", a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

Tensor5 log(const Tensor5& a) {
  return unary(
      "log", a, [](real x) { return std::log(x); }, [](real x, real) { return 1.0f / x; });
}

Tensor5 elementwise(ElementwiseOp op, const Tensor5& a,
                    std::optional<std::variant<Tensor5, real>> b) {
  auto tensor_arg = [&]() -> const Tensor5& {
    if (!b || !std::holds_alternative<Tensor5>(*b)) {
      throw Error("elementwise: binary op requires a tensor operand");
    }
    return std::get<Tensor5>(*b);
  };
  switch (op) {
    case ElementwiseOp::Add: return add(a, tensor_arg());
    case ElementwiseOp::Sub: return sub(a, tensor_arg());
    case ElementwiseOp::Mul: return mul(a, tensor_arg());
    case ElementwiseOp::Scale: {
      if (!b) throw Error("elementwise: scale requires a scalar operand");
      if (std::holds_alternative<real>(*b)) return scale(a, std::get<real>(*b));
      return scale(a, std::get<Tensor5>(*b).item());
    }
    case ElementwiseOp::Sigmoid: return sigmoid(a);
    case ElementwiseOp::Relu: return relu(a);
    case ElementwiseOp::Exp: return exp(a);
    case ElementwiseOp::Log: return log(a);
  }
  throw Error("elementwise: unknown op");
}

Tensor5 add_n(std::span<const Tensor5> xs) {
  if (xs.empty()) throw Error("add_n: no inputs");
  for (const auto& x : xs) require_same_shape("add_n", xs[0], x);
  std::vector<real> out(xs[0].data().begin(), xs[0].data().end());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto d = xs[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  std::vector<const Tensor5*> ins;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& x : xs) {
    ins.push_back(&x);
    impls.push_back(x.impl());
  }
  return make_result(xs[0].shape(), std::move(out), "add_n", ins, [impls](const TensorImpl& o) {
    for (const auto& t : impls) {
      if (!t->requires_grad) continue;
      auto& g = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor5 sum(const Tensor5& a) {
  double acc = 0.0;
  for (real v : a.data()) acc += v;
  auto ai = a.impl();
  return make_result(Shape::scalar(), {static_cast<real>(acc)}, "sum", {&a},
                     [ai](const TensorImpl& o) {
                       auto& g = ai->grad_buffer();
                       for (auto& v : g) v += o.grad[0];
                     });
}

Tensor5 mean(const Tensor5& a) {
  double acc = 0.0;
  for (real v : a.data()) acc += v;
  const auto n = static_cast<double>(a.numel());
  auto ai = a.impl();
  return make_result(Shape::scalar(), {static_cast<real>(acc / n)}, "mean", {&a},
                     [ai, n](const TensorImpl& o) {
                       auto& g = ai->grad_buffer();
                       const real s = static_cast<real>(o.grad[0] / n);
                       for (auto& v : g) v += s;
                     });
}

Tensor5 softmax_channels(const Tensor5& logits) {
  const auto& s = logits.shape();
  if (s.channels() < 1) throw ShapeError("softmax_channels: no channels");
  const int64_t C = s.channels(), V = s.voxels();
  const auto x = logits.data();
  std::vector<real> out(x.size());
  for (int64_t n = 0; n < s.batch(); ++n) {
    const std::size_t base = static_cast<std::size_t>(n * C * V);
    for (int64_t v = 0; v < V; ++v) {
      real mx = x[base + v];
      for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x[base + c * V + v]);
      double z = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        const real e = std::exp(x[base + c * V + v] - mx);
        out[base + c * V + v] = e;
        z += e;
      }
      const real inv = static_cast<real>(1.0 / z);
      for (int64_t c = 0; c < C; ++c) out[base + c * V + v] *= inv;
    }
  }
  auto li = logits.impl();
  return make_result(s, std::move(out), "softmax_channels", {&logits},
                     [li, C, V](const TensorImpl& o) {
                       auto& g = li->grad_buffer();
                       const int64_t B = o.shape.batch();
                       for (int64_t n = 0; n < B; ++n) {
                         const std::size_t base = static_cast<std::size_t>(n * C * V);
                         for (int64_t v = 0; v < V; ++v) {
                           double dot = 0.0;
                           for (int64_t c = 0; c < C; ++c) {
                             const auto i = base + c * V + v;
                             dot += static_cast<double>(o.grad[i]) * o.data[i];
                           }
                           for (int64_t c = 0; c < C; ++c) {
                             const auto i = base + c * V + v;
                             g[i] += o.data[i] * static_cast<real>(o.grad[i] - dot);
                           }
                         }
                       }
                     });
}

Tensor5 cross_entropy(const Tensor5& prob, const Tensor5& target, real eps) {
  require_same_shape("cross_entropy", prob, target);
  const auto& s = prob.shape();
  const int64_t C = s.channels(), V = s.voxels();
  const auto p = prob.data(), t = target.data();
  double acc = 0.0;
  for (int64_t n = 0; n < s.batch(); ++n) {
    const std::size_t base = static_cast<std::size_t>(n * C * V);
    for (int64_t v = 0; v < V; ++v) {
      int ones = 0;
      for (int64_t c = 0; c < C; ++c) {
        const real tv = t[base + c * V + v];
        if (tv == 1.0f) {
          ++ones;
          acc -= std::log(static_cast<double>(p[base + c * V + v]) + eps);
        } else if (tv != 0.0f) {
          ones = -1;
          break;
        }
      }
      if (ones != 1) throw Error("cross_entropy: target is not one-hot over channels");
    }
  }
  const double count = static_cast<double>(s.batch() * V);
  auto pi = prob.impl(), ti = target.impl();
  return make_result(Shape::scalar(), {static_cast<real>(acc / count)}, "cross_entropy",
                     {&prob}, [pi, ti, eps, count](const TensorImpl& o) {
                       auto& g = pi->grad_buffer();
                       const real scale = static_cast<real>(o.grad[0] / count);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (ti->data[i] != 0.0f) g[i] -= scale * ti->data[i] / (pi->data[i] + eps);
                       }
                     });
}

Tensor5 one_hot(std::span<const int> labels, const Extent3& extent, int classes) {
  const int64_t V = extent[0] * extent[1] * extent[2];
  if (static_cast<int64_t>(labels.size()) != V) {
    throw ShapeError("one_hot: label count does not match extent " + to_string(extent));
  }
  Tensor5 out(Shape::from(1, classes, extent));
  auto d = out.mutable_data();
  for (int64_t v = 0; v < V; ++v) {
    const int k = labels[static_cast<std::size_t>(v)];
    if (k < 0 || k >= classes) {
      throw Error("one_hot: label " + std::to_string(k) + " outside [0," +
                  std::to_string(classes) + ")");
    }
    d[static_cast<std::size_t>(k * V + v)] = 1.0f;
  }
  return out;
}

Tensor5 concat_channels(std::span<const Tensor5> xs) {
  if (xs.empty()) throw Error("concat_channels: no inputs");
  const auto& s0 = xs[0].shape();
  int64_t C = 0;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    if (s.batch() != s0.batch() || s.spatial() != s0.spatial()) {
      throw ShapeError("concat_channels: shape mismatch " + s0.str() + " vs " + s.str());
    }
    C += s.channels();
  }
  const int64_t V = s0.voxels(), B = s0.batch();
  Shape out_shape = Shape::from(B, C, s0.spatial());
  std::vector<real> out(static_cast<std::size_t>(out_shape.numel()));
  int64_t offset = 0;
  std::vector<int64_t> offsets;
  for (const auto& x : xs) {
    const int64_t c = x.shape().channels();
    const auto d = x.data();
    for (int64_t n = 0; n < B; ++n) {
      std::copy_n(d.begin() + n * c * V, c * V, out.begin() + (n * C + offset) * V);
    }
    offsets.push_back(offset);
    offset += c;
  }
  std::vector<const Tensor5*> ins;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& x : xs) {
    ins.push_back(&x);
    impls.push_back(x.impl());
  }
  return make_result(out_shape, std::move(out), "concat_channels", ins,
                     [impls, offsets, C, V, B](const TensorImpl& o) {
                       for (std::size_t k = 0; k < impls.size(); ++k) {
                         auto& t = impls[k];
                         if (!t->requires_grad) continue;
                         auto& g = t->grad_buffer();
                         const int64_t c = t->shape.channels();
                         for (int64_t n = 0; n < B; ++n) {
                           const real* src = o.grad.data() + (n * C + offsets[k]) * V;
                           real* dst = g.data() + n * c * V;
                           for (int64_t i = 0; i < c * V; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor5 pad_crop_high(const Tensor5& x, const Extent3& target) {
  const Shape s = x.shape();
  for (int a = 0; a < 3; ++a) {
    if (target[a] < 1) throw ShapeError("pad_crop_high: non-positive target " + to_string(target));
  }
  if (s.spatial() == target) return x;
  const Shape os = Shape::from(s.batch(), s.channels(), target);
  const int64_t cd = std::min(s.depth(), target[0]), ch = std::min(s.height(), target[1]),
                cw = std::min(s.width(), target[2]);
  std::vector<real> out(static_cast<std::size_t>(os.numel()), 0.0f);
  const auto in = x.data();
  const int64_t planes = s.batch() * s.channels();
  auto copy_region = [=](const real* src, real* dst, bool forward) {
    for (int64_t p = 0; p < planes; ++p) {
      for (int64_t d = 0; d < cd; ++d) {
        for (int64_t h = 0; h < ch; ++h) {
          const int64_t si = ((p * s.depth() + d) * s.height() + h) * s.width();
          const int64_t di = ((p * target[0] + d) * target[1] + h) * target[2];
          if (forward) {
            std::copy_n(src + si, cw, dst + di);
          } else {
            // src is the output gradient, dst the input gradient
            for (int64_t w = 0; w < cw; ++w) dst[si + w] += src[di + w];
          }
        }
      }
    }
  };
  copy_region(in.data(), out.data(), true);
  auto xi = x.impl();
  return make_result(os, std::move(out), "pad_crop_high", {&x},
                     [xi, copy_region](const TensorImpl& o) {
                       auto& g = xi->grad_buffer();
                       copy_region(o.grad.data(), g.data(), false);
                     });
}

std::vector<int> argmax_channels(const Tensor5& x, int64_t batch) {
  const auto& s = x.shape();
  const int64_t C = s.channels(), V = s.voxels();
  const auto d = x.data();
  const std::size_t base = static_cast<std::size_t>(batch * C * V);
  std::vector<int> out(static_cast<std::size_t>(V), 0);
  for (int64_t v = 0; v < V; ++v) {
    real best = d[base + v];
    for (int64_t c = 1; c < C; ++c) {
      const real val = d[base + c * V + v];
      if (val > best) {
        best = val;
        out[static_cast<std::size_t>(v)] = static_cast<int>(c);
      }
    }
  }
  return out;
}

}  // namespace firenet
