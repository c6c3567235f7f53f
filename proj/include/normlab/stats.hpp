#pragma once

#include <span>
#include <vector>

namespace normlab {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares y ~ slope * x + intercept. r2 is 1 when y is
/// constant and perfectly fitted. Needs at least two distinct x values.
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

/// Median of a non-empty sample (mean of the middle pair for even sizes).
double median(std::vector<double> values);

double mean(std::span<const double> values);

}  // namespace normlab
