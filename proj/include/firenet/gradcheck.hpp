#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "firenet/parameter.hpp"
#include "firenet/tensor.hpp"

namespace firenet::inline FIRENET_ABI {

enum class Stencil {
  TwoPoint,   // (f(x+h) - f(x-h)) / 2h
  FivePoint,  // fourth order
  Ridders,    // extrapolated from h downwards; for deep real compositions
};

struct GradcheckOptions {
  int64_t max_coords = 200;  // sampled per checked tensor
  uint64_t seed = 1234;
  Stencil stencil = Stencil::FivePoint;
  // Stencil evaluations replay the relu masks and pool argmaxes taken at the
  // unperturbed input, so differences see the smooth piece containing it and
  // large steps are not polluted by kinks. Off: branches are re-decided live.
  bool freeze_branches = true;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  int64_t coords_checked = 0;
  int64_t kinks_straddled = 0;  // coordinates whose stencil crossed a live kink
  std::string worst;            // description of the worst coordinate
  double tolerance = 0.0;
  bool passed() const { return coords_checked > 0 && max_rel_error <= tolerance; }
  void add(const std::string& label, int64_t index, double analytic, double numeric,
           bool straddled = false);
};

/// |a - n| / (|a| + |n| + 1e-8)
double relative_error(double analytic, double numeric);

/// The first min(n, k) entries of a seeded permutation of [0, n).
std::vector<int64_t> sample_coordinates(int64_t n, int64_t k, Rng& rng);

/// Entries uniform in [-1, 1].
std::vector<real> random_projection(int64_t n, Rng& rng);

/// sum(r * y), accumulated in double.
double project(const Tensor5& y, std::span<const real> r);

/// Relu masks and pool argmaxes taken by one call of `loss`.
BranchRecord record_branch_decisions(const std::function<double()>& loss);

struct NumericDerivative {
  double value = 0.0;
  int64_t divergences = 0;  // replayed branch decisions that differ from live ones
};

/// d loss / d target[index] by central differences with step h max(1, |x|).
/// target[index] is restored. With `frozen`, every evaluation replays it.
NumericDerivative numeric_derivative(Tensor5& target, std::size_t index,
                                     const std::function<double()>& loss,
                                     const BranchRecord* frozen, real h, Stencil stencil);

/// Compares reverse-mode gradients of L = sum(r * f(x)) (r a fixed random
/// projection) against central differences with step h * max(1, |x_i|).
/// Float rounding in f dominates two-point differences at small h, so the
/// default stencil is fourth order, which tolerates a larger step.
/// Relative error per coordinate: |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-8).
GradcheckReport gradcheck(const std::function<Tensor5(const Tensor5&)>& f, const Tensor5& x,
                          real h, double tol, const GradcheckOptions& opts = {});

/// Same check over parameters of a closed-over computation. `f` must rebuild
/// its graph from the current parameter values on every call.
GradcheckReport gradcheck_parameters(const std::function<Tensor5()>& f,
                                     std::span<Parameter* const> params, real h, double tol,
                                     const GradcheckOptions& opts = {});

}  // namespace firenet
