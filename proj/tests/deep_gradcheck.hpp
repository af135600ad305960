#pragma once

// Gradient check of a float model against the double-precision oracle.

#include <functional>
#include <span>
#include <vector>

#include "firenet/gradcheck.hpp"
#include "firenet/ops.hpp"
#include "firenet/parameter.hpp"
#include "oracle/precision_oracle.hpp"

namespace firenet::testing {

struct DeepCheckOptions {
  int64_t max_coords = 200;  // per checked tensor
  uint64_t seed = 1234;
  double h = 1e-4;  // double-precision step
  bool check_input = true;
  // Cross-entropy against these labels instead of a random projection.
  const std::vector<int>* labels = nullptr;
  int classes = 0;
  // Also compare the double model's own reverse-mode gradient with the same
  // differences (DeepCheckResult::double_report).
  bool double_reverse = false;
};

struct DeepCheckResult {
  GradcheckReport report;
  double loss_f32 = 0.0;
  double loss_f64 = 0.0;  // same model and point in double; confirms the copy is exact
  int64_t divergent_evaluations = 0;
  GradcheckReport double_report;
};

inline std::array<int64_t, 5> dims(const Shape& s) {
  return {s.batch(), s.channels(), s.depth(), s.height(), s.width()};
}

/// `store` holds every parameter of the model (all are copied to the
/// oracle); `params` are the ones checked. `f` maps the input to the output.
inline DeepCheckResult deep_gradcheck(const std::function<Tensor5(const Tensor5&)>& f,
                                      const Tensor5& x, const ParameterStore& store,
                                      std::span<Parameter* const> params,
                                      oracle::PrecisionOracle& oracle, double tol,
                                      const DeepCheckOptions& opts = {}) {
  DeepCheckResult out;
  out.report.tolerance = tol;
  out.double_report.tolerance = tol;
  Rng rng(opts.seed);
  for (const auto& p : store.all()) oracle.set_parameter(p->name, p->value.data());
  oracle.set_input(dims(x.shape()), x.data());

  Tensor5 leaf = x.clone();
  leaf.set_requires_grad(opts.check_input);
  for (const auto& p : store.all()) p->value.zero_grad();
  std::vector<float> r;
  auto scalar_loss = [&](const Tensor5& y) {
    if (opts.labels) {
      return cross_entropy(y, one_hot(*opts.labels, y.shape().spatial(), opts.classes));
    }
    return sum(mul(y, Tensor5(y.shape(), r)));
  };
  {
    Tensor5 y = f(leaf);
    if (opts.labels) {
      oracle.set_labels(*opts.labels, opts.classes);
    } else {
      r = random_projection(y.numel(), rng);
      oracle.set_projection(r);
    }
    Tensor5 l = scalar_loss(y);
    out.loss_f32 = l.item();
    backward(l);
  }
  auto eval = [&] {
    NoGradGuard guard;
    return static_cast<double>(scalar_loss(f(leaf)).item());
  };
  BranchRecord rec = record_branch_decisions(eval);
  oracle.freeze({rec.masks, rec.choices});
  out.loss_f64 = oracle.loss();

  auto check = [&](const std::string& label, const Tensor5& t, const std::string& target) {
    if (!t.has_grad()) return;
    const auto g = t.grad();
    std::vector<double> g64;
    if (opts.double_reverse) g64 = oracle.reverse_gradient(target);
    for (int64_t i : sample_coordinates(t.numel(), opts.max_coords, rng)) {
      const double fd = oracle.derivative(target, i, opts.h);
      const bool diverged = oracle.last_divergences() > 0;
      out.divergent_evaluations += diverged;
      out.report.add(label, i, g[static_cast<std::size_t>(i)], fd, diverged);
      if (opts.double_reverse) out.double_report.add(label, i, g64[static_cast<std::size_t>(i)], fd, diverged);
    }
  };
  if (opts.check_input) check("x", leaf, "x");
  for (auto* p : params) check(p->name, p->value, p->name);
  for (const auto& p : store.all()) p->value.zero_grad();
  return out;
}

}  // namespace firenet::testing
