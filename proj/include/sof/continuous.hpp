#pragma once

// Constraints over real variables: a satisfying region of finite, nonzero
// area, the uniform density 1/A on it, and the objectives that compare a
// density with that uniform density by quadrature.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sof/autodiff.hpp"
#include "sof/models.hpp"

namespace sof {

struct Box {
    double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
    double area() const { return (x_max - x_min) * (y_max - y_min); }
};

struct PolarRanges {
    double r_min = 0.0, r_max = 1.0, theta_min = 0.0, theta_max = 0.0;
};

using PointPredicate = std::function<bool(double, double)>;
using PointFunction = std::function<double(double, double)>;

struct Region {
    std::string name;
    PointPredicate contains;
    double measure = 0.0;
    Box bounds;
    std::optional<PolarRanges> polar;

    /// Throws unless 0 < measure < infinity and the indicator is set.
    void validate() const;
};

/// x^2 + y^2 <= 1 with x >= 0 and y >= 0; area pi/4.
Region quarter_disc_region();

/// Region given by a bounding box and inequalities over x and y, e.g.
/// "x^2 + y^2 <= 1". Operators: + - * / ^, parentheses, sqrt abs exp log sin
/// cos; comparisons <=, <, >=, >. The area is a Monte Carlo estimate.
Region region_from_constraints(const std::string& name, Box bounds, const std::vector<std::string>& inequalities,
                               std::size_t mc_samples = 1'000'000, std::uint64_t seed = 0);

enum class QuadratureRule { midpoint, gauss_legendre };

struct QuadratureGrid {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> weights; // include the change-of-variables Jacobian
    std::size_t n_first = 0;     // N_r or N_x
    std::size_t n_second = 0;    // N_theta or N_y

    std::size_t size() const noexcept { return weights.size(); }
    double total_weight() const;
};

/// Tensor grid for the integral over r in [r_min, r_max], theta in
/// [theta_min, theta_max] of (.) r dtheta dr. Defaults to the quarter disc.
QuadratureGrid polar_quadrature(std::size_t n_r, std::size_t n_theta, QuadratureRule rule = QuadratureRule::midpoint,
                                PolarRanges ranges = {0.0, 1.0, 0.0, 1.5707963267948966});

/// Midpoint grid over the bounding box keeping only nodes inside the region.
QuadratureGrid box_quadrature(const Region& region, std::size_t n_x, std::size_t n_y);

/// Polar grid when the region has a polar parametrization, box grid otherwise.
QuadratureGrid region_quadrature(const Region& region, std::size_t n_first, std::size_t n_second,
                                 QuadratureRule rule = QuadratureRule::midpoint);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

/// Sum of fn(node) * weight with pairwise summation.
double integrate(const PointFunction& fn, const QuadratureGrid& grid);

/// Mass a density places on the region covered by the grid.
double w_integral(const PointFunction& density, const QuadratureGrid& grid);

/// KL(rho || f) = -log A - (1/A) * integral over the region of log f.
double kl_continuous(const Region& region, const PointFunction& density, const QuadratureGrid& grid);
double kl_continuous(const Region& region, const BivariateNormal& f, const QuadratureGrid& grid);

/// Total variation between rho and a normalized density:
/// (1/2) * (integral over the region of |1/A - f| + (1 - mass of f on the region)).
double tv_continuous(const Region& region, const PointFunction& density, const QuadratureGrid& grid);
double tv_continuous(const Region& region, const BivariateNormal& f, const QuadratureGrid& grid);

struct MonteCarloEstimate {
    double estimate = 0.0;
    double standard_error = 0.0;
};

/// Integral of fn over the region from uniform samples in its bounding box.
MonteCarloEstimate monte_carlo_integrate(const PointFunction& fn, const Region& region, std::size_t n_samples,
                                         std::uint64_t seed);

/// Centroid of the quarter disc, (4/(3 pi), 4/(3 pi)).
inline constexpr double kQuarterDiscCentroid = 0.42441318157838759;

namespace ad {

/// Normal density at every grid node (1 x K); `mean` is a 2x1 Var.
Var normal_density(Var mean, double sigma, const QuadratureGrid& grid);
Var normal_log_density(Var mean, double sigma, const QuadratureGrid& grid);
/// Quadrature of a density given at the nodes (1 x K).
Var w_integral(Var density_at_nodes, const QuadratureGrid& grid);
Var kl_continuous(const Region& region, Var log_density_at_nodes, const QuadratureGrid& grid);

} // namespace ad

} // namespace sof
