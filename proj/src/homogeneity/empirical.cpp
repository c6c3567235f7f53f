#include <algorithm>
#include <cmath>
#include <limits>

#include "normlab/error.hpp"
#include "normlab/homogeneity.hpp"
#include "normlab/stats.hpp"

namespace normlab::homog {

namespace {

constexpr double kRoundingSlack = 8 * std::numeric_limits<double>::epsilon();

}  // namespace

double estimate_degree_empirical(const VectorFunction& f, const ParameterSet& theta, double c) {
  if (!(c > 1.0)) throw ContractError("estimate_degree_empirical: c must exceed 1");
  const double base = f(theta).norm();
  if (base == 0.0) throw DegenerateError("estimate_degree_empirical: f(theta) is zero");
  const double scaled = f(theta.scaled(c)).norm();
  return std::log(scaled / base) / std::log(c);
}

ScalingErrorCurve scaling_error_curve(const VectorFunction& f, const ParameterSet& direction, int k,
                                      double c, const std::vector<double>& norm_grid) {
  if (!(c >= 1.0)) throw ContractError("scaling_error_curve: c must be at least 1");
  if (norm_grid.size() < 2) throw ContractError("scaling_error_curve: need at least two grid points");
  for (std::size_t i = 1; i < norm_grid.size(); ++i) {
    if (!(norm_grid[i] > norm_grid[i - 1])) throw ContractError("scaling_error_curve: grid must increase");
  }
  const double dn = direction.norm();
  if (dn == 0.0) throw DegenerateError("scaling_error_curve: zero direction");
  const double ck = std::pow(c, k);

  ScalingErrorCurve curve;
  for (double r : norm_grid) {
    const ParameterSet theta = direction.scaled(r / dn);
    const Tensor a = f(theta);
    const Tensor b = f(theta.scaled(c));
    if (a.shape() != b.shape()) throw StructuralError("scaling_error_curve: output shape changed with scale");
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(b[i] - ck * a[i]));
    ScalingErrorPoint p{r, err, false};
    if (err < kErrorFloor) {
      p.error = kErrorFloor;
      p.clipped = true;
      curve.any_clipped = true;
    }
    curve.points.push_back(p);
  }

  const std::size_t start = curve.points.size() / 2;
  std::vector<double> xs, ys;
  for (std::size_t i = start; i < curve.points.size(); ++i) {
    xs.push_back(curve.points[i].norm);
    ys.push_back(std::log(curve.points[i].error));
  }
  const LinearFit fit = fit_line(xs, ys);
  curve.slope = fit.slope;
  curve.decay = -fit.slope;
  curve.r2 = fit.r2;
  return curve;
}

double euler_residual(const ValueGradFunction& f, const ParameterSet& theta, int k) {
  const GradProgram::Result r = f(theta);
  const double kf = static_cast<double>(k) * r.value;
  return std::abs(theta.dot(r.grad) - kf) / (1.0 + std::abs(kf));
}

ScalingBound activation_scaling_bound(Activation kind, const Tensor& x, double c) {
  if (!(c > 1.0)) throw ContractError("activation_scaling_bound: c must exceed 1");
  Tensor scaled = x;
  for (auto& v : scaled.data()) v *= c;
  ScalingBound out;
  switch (kind) {
    case Activation::sigmoid:
    case Activation::tanh: {
      const Tensor a = activate(kind, x);
      const Tensor b = activate(kind, scaled);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double ax = std::abs(x[i]);
        const double bound =
            kind == Activation::sigmoid ? 1.0 / (std::exp(ax) + 1.0) : 2.0 / (std::exp(2.0 * ax) + 1.0);
        const double err = std::abs(b[i] - a[i]);
        out.error = std::max(out.error, err);
        out.bound = std::max(out.bound, bound);
        // Outputs lie in [-1, 1], so the subtraction is exact to a few ulps of 1.
        if (err > bound + kRoundingSlack) out.holds = false;
      }
      return out;
    }
    case Activation::softmax: {
      const Tensor flat = x.reshaped({x.size()});
      const Tensor a = activate(kind, flat, 0);
      const Tensor b = activate(kind, scaled.reshaped({x.size()}), 0);
      double top = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        out.error = std::max(out.error, std::abs(b[i] - a[i]));
        top = std::max(top, a[i]);
      }
      out.bound = 1.0 - top;
      out.holds = out.error <= out.bound + kRoundingSlack;
      return out;
    }
    case Activation::relu:
      break;
  }
  throw ContractError("activation_scaling_bound: relu has no scaling error");
}

}  // namespace normlab::homog
