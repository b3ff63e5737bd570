#pragma once

#include <span>
#include <string>
#include <vector>

namespace reve::kde {

/// Silverman bandwidth 1.06 * sigma_hat * n^(-1/5), floored at
/// 1e-3 * data range (or 1e-3 * max(1, |value|) for a constant column so a
/// degenerate spike still has positive width).
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE of `samples` with bandwidth `bw` evaluated at `x`.
double evaluate(std::span<const double> samples, double bw, double x);

struct DensityColumn {
  std::string name;
  std::vector<double> samples;
  double bandwidth = 0.0;  // filled by estimate_columns
};

struct DensityTable {
  std::vector<double> grid;                   // shared 512-point grid
  std::vector<std::string> names;             // per density column
  std::vector<std::vector<double>> densities; // per column, grid-aligned
};

/// Evaluates every column on one uniform 512-point grid spanning the union
/// of the per-column [min - 4b, max + 4b] ranges (wide enough that even a
/// degenerate one-point column keeps 1 - 1e-4 of its kernel mass on the
/// grid). Bandwidths are lifted to at least the grid spacing so each
/// column stays integrable on the grid.
DensityTable estimate_columns(std::vector<DensityColumn> columns, std::size_t grid_points = 512);

/// Trapezoid integral of a grid-aligned density.
double trapezoid(std::span<const double> grid, std::span<const double> density);

}  // namespace reve::kde
