#include "reve/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace reve::kde {

namespace {
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;
}

double silverman_bandwidth(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("silverman_bandwidth: no samples");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double var = 0.0;
  double lo = samples[0], hi = samples[0];
  for (double v : samples) {
    var += (v - mean) * (v - mean);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  var /= n;
  const double sigma = std::sqrt(var);
  const double range = hi - lo;
  const double floor =
      range > 0.0 ? 1e-3 * range : 1e-3 * std::max(1.0, std::fabs(samples[0]));
  return std::max(1.06 * sigma * std::pow(n, -0.2), floor);
}

double evaluate(std::span<const double> samples, double bw, double x) {
  double acc = 0.0;
  for (double s : samples) {
    const double u = (x - s) / bw;
    acc += std::exp(-0.5 * u * u);
  }
  return acc * kInvSqrt2Pi / (bw * static_cast<double>(samples.size()));
}

DensityTable estimate_columns(std::vector<DensityColumn> columns, std::size_t grid_points) {
  if (columns.empty()) throw std::invalid_argument("estimate_columns: no columns");
  if (grid_points < 2) throw std::invalid_argument("estimate_columns: grid too small");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (DensityColumn& col : columns) {
    if (col.samples.empty()) throw std::invalid_argument("estimate_columns: empty column");
    col.bandwidth = silverman_bandwidth(col.samples);
    const auto [mn, mx] = std::minmax_element(col.samples.begin(), col.samples.end());
    // four bandwidths of margin: +-3 truncates a lone Gaussian kernel to
    // 0.9973 mass, which misses the 1e-3 normalization budget
    lo = std::min(lo, *mn - 4.0 * col.bandwidth);
    hi = std::max(hi, *mx + 4.0 * col.bandwidth);
  }

  DensityTable table;
  table.grid.resize(grid_points);
  const double step = (hi - lo) / static_cast<double>(grid_points - 1);
  for (std::size_t i = 0; i < grid_points; ++i) table.grid[i] = lo + step * static_cast<double>(i);

  for (DensityColumn& col : columns) {
    // a kernel narrower than the grid cannot be integrated on it
    const double bw = std::max(col.bandwidth, step);
    std::vector<double> density(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i)
      density[i] = evaluate(col.samples, bw, table.grid[i]);
    table.names.push_back(col.name);
    table.densities.push_back(std::move(density));
  }
  return table;
}

double trapezoid(std::span<const double> grid, std::span<const double> density) {
  if (grid.size() != density.size() || grid.size() < 2) {
    throw std::invalid_argument("trapezoid: bad grid");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    acc += 0.5 * (density[i] + density[i + 1]) * (grid[i + 1] - grid[i]);
  }
  return acc;
}

}  // namespace reve::kde
