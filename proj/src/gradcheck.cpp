#include "firenet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/ops.hpp"

namespace firenet::inline FIRENET_ABI {

void GradcheckReport::add(const std::string& label, int64_t index, double analytic,
                          double numeric, bool straddled) {
  ++coords_checked;
  kinks_straddled += straddled;
  const double rel = relative_error(analytic, numeric);
  if (rel > max_rel_error || coords_checked == 1) {
    max_rel_error = std::max(max_rel_error, rel);
    std::ostringstream os;
    os << label << "[" << index << "]: analytic " << analytic << ", numeric " << numeric;
    worst = os.str();
  }
}

double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / (std::fabs(analytic) + std::fabs(numeric) + 1e-8);
}

std::vector<int64_t> sample_coordinates(int64_t n, int64_t k, Rng& rng) {
  std::vector<int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(uniform01(rng) * static_cast<double>(i + 1));
    std::swap(idx[i], idx[std::min(j, i)]);
  }
  idx.resize(static_cast<std::size_t>(std::min(n, k)));
  return idx;
}

std::vector<real> random_projection(int64_t n, Rng& rng) {
  std::vector<real> r(static_cast<std::size_t>(n));
  for (auto& v : r) v = static_cast<real>(2.0 * uniform01(rng) - 1.0);
  return r;
}

double project(const Tensor5& y, std::span<const real> r) {
  const auto d = y.data();
  if (d.size() != r.size()) throw ShapeError("project: projection size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<double>(d[i]) * r[i];
  return acc;
}

BranchRecord record_branch_decisions(const std::function<double()>& loss) {
  BranchTrace trace;
  loss();
  return trace.take();
}

NumericDerivative numeric_derivative(Tensor5& target, std::size_t index,
                                     const std::function<double()>& loss,
                                     const BranchRecord* frozen, real h, Stencil stencil) {
  auto data = target.mutable_data();
  const real orig = data[index];
  const real step = h * std::max(real{1}, std::fabs(orig));
  NumericDerivative out;
  auto eval_at = [&](real value) {
    data[index] = value;
    if (!frozen) return loss();
    BranchTrace replay(*frozen);
    const double v = loss();
    out.divergences += replay.divergences();
    return v;
  };
  // Differences use the offsets actually representable in `real`.
  auto central = [&](real hh) {
    const real up_x = orig + hh, down_x = orig - hh;
    const double up = eval_at(up_x), down = eval_at(down_x);
    return (up - down) / (static_cast<double>(up_x) - down_x);
  };
  switch (stencil) {
    case Stencil::TwoPoint: out.value = central(step); break;
    case Stencil::FivePoint: {
      // [8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))] / 12h
      const double f1 = eval_at(orig + step), b1 = eval_at(orig - step);
      const double f2 = eval_at(orig + 2 * step), b2 = eval_at(orig - 2 * step);
      out.value = (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * static_cast<double>(step));
      break;
    }
    case Stencil::Ridders: {
      // Central differences at steps shrinking by `con`, extrapolated to zero
      // step in a Neville tableau; the estimate with the smallest internal
      // error wins, and the tableau stops once it diverges.
      constexpr int kLevels = 10;
      constexpr double con = 1.4, con2 = con * con, safe = 2.0;
      double a[kLevels][kLevels];
      double err = 1e300;
      real hh = step;
      a[0][0] = central(hh);
      out.value = a[0][0];
      for (int k = 1; k < kLevels; ++k) {
        hh = static_cast<real>(hh / con);
        a[0][k] = central(hh);
        double fac = con2;
        for (int m = 1; m <= k; ++m) {
          a[m][k] = (a[m - 1][k] * fac - a[m - 1][k - 1]) / (fac - 1.0);
          fac *= con2;
          const double e =
              std::max(std::fabs(a[m][k] - a[m - 1][k]), std::fabs(a[m][k] - a[m - 1][k - 1]));
          if (e <= err) {
            err = e;
            out.value = a[m][k];
          }
        }
        if (std::fabs(a[k][k] - a[k - 1][k - 1]) >= safe * err) break;
      }
      break;
    }
  }
  data[index] = orig;
  return out;
}

namespace {

void check_coords(Tensor5& target, const std::string& label, const std::vector<real>& analytic,
                  const std::function<double()>& loss, const BranchRecord* frozen, real h,
                  Rng& rng, const GradcheckOptions& opts, GradcheckReport& report) {
  for (int64_t i : sample_coordinates(target.numel(), opts.max_coords, rng)) {
    const auto nd =
        numeric_derivative(target, static_cast<std::size_t>(i), loss, frozen, h, opts.stencil);
    report.add(label, i, analytic.empty() ? 0.0 : analytic[static_cast<std::size_t>(i)],
               nd.value, nd.divergences > 0);
  }
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor5(const Tensor5&)>& f, const Tensor5& x,
                          real h, double tol, const GradcheckOptions& opts) {
  GradcheckReport report;
  report.tolerance = tol;
  Rng rng(opts.seed);
  Tensor5 leaf = x.clone();
  leaf.set_requires_grad(true);
  std::vector<real> r;
  {
    Tensor5 y = f(leaf);
    r = random_projection(y.numel(), rng);
    backward(sum(mul(y, Tensor5(y.shape(), r))));
  }
  std::vector<real> analytic(leaf.grad().begin(), leaf.grad().end());
  Tensor5 probe = leaf.clone();
  auto loss = [&]() {
    NoGradGuard guard;
    return project(f(probe), r);
  };
  std::optional<BranchRecord> frozen;
  if (opts.freeze_branches) frozen = record_branch_decisions(loss);
  check_coords(probe, "x", analytic, loss, frozen ? &*frozen : nullptr, h, rng, opts, report);
  return report;
}

GradcheckReport gradcheck_parameters(const std::function<Tensor5()>& f,
                                     std::span<Parameter* const> params, real h, double tol,
                                     const GradcheckOptions& opts) {
  GradcheckReport report;
  report.tolerance = tol;
  Rng rng(opts.seed);
  for (auto* p : params) p->value.zero_grad();
  std::vector<real> r;
  {
    Tensor5 y = f();
    r = random_projection(y.numel(), rng);
    backward(sum(mul(y, Tensor5(y.shape(), r))));
  }
  std::vector<std::vector<real>> analytic;
  for (auto* p : params) {
    analytic.emplace_back(p->value.grad().begin(), p->value.grad().end());
    p->value.zero_grad();
  }
  auto loss = [&]() {
    NoGradGuard guard;
    return project(f(), r);
  };
  std::optional<BranchRecord> frozen;
  if (opts.freeze_branches) frozen = record_branch_decisions(loss);
  for (std::size_t k = 0; k < params.size(); ++k) {
    check_coords(params[k]->value, params[k]->name, analytic[k], loss,
                 frozen ? &*frozen : nullptr, h, rng, opts, report);
  }
  return report;
}

}  // namespace firenet
