#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace qtb {

/// Threshold grid for the outcome. Strictly ascending.
class ThresholdGrid {
 public:
  ThresholdGrid() = default;
  explicit ThresholdGrid(std::vector<double> values);

  static ThresholdGrid uniform(double lo, double hi, std::size_t size);

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t g) const { return values_[g]; }
  /// Smallest g with values[g] >= y; size() when y is above the grid.
  std::size_t index_at_or_above(double y) const;
  /// Median spacing between consecutive points.
  double spacing() const;

 private:
  std::vector<double> values_;
};

struct CovariateCells {
  std::vector<double> target_weight;  // P^X_0(x)
  std::vector<double> source_weight;  // P^X_1(x)
  std::vector<double> omega;          // P^X_0(x) / P^X_1(x); 0 where the target weight is 0

  std::size_t size() const noexcept { return target_weight.size(); }
  /// Fills omega from the two weight vectors and checks absolute continuity.
  void finalize();
};

/// Source-arm CDFs p_a(y, x) on a grid, propensities e_a(x) and covariate
/// laws. p[a] is cell-major: p[a][x * G + g].
struct NuisanceSet {
  ThresholdGrid grid;
  CovariateCells cells;
  std::array<std::vector<double>, 2> e;
  std::array<std::vector<double>, 2> p;
  double pi0 = 0.5;
  double pi1 = 0.5;

  std::size_t n_cells() const noexcept { return cells.size(); }
  double cdf(int a, std::size_t x, std::size_t g) const { return p[a][x * grid.size() + g]; }
  /// Throws MissingCellError when a positively weighted target cell lacks values.
  void validate() const;
};

}  // namespace qtb
