#pragma once

// Slow, direct reference implementations used to check the library. None of
// these call into calm beyond its plain data types.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "calm/alignment.hpp"
#include "calm/trajectory.hpp"

namespace calm::oracle {

/// Minimum over every monotone warping path, found by explicit enumeration.
/// Exponential; keep both sequences short.
double dtw_enumerate(const std::vector<Point>& a, const std::vector<Point>& b);

/// Number of monotone warping paths between sequences of these lengths.
std::size_t count_warping_paths(std::size_t n, std::size_t m);

/// Multivariate normal density from the textbook formula.
double gaussian_density(const Point& x, const Point& mu, const Eigen::MatrixXd& cov);

/// theta(j -> i) written out case by case from the kernel definitions.
std::vector<std::vector<double>> transition_matrix(const align::TransitionKernel& kernel, std::size_t f);

struct ForwardResult {
  std::vector<double> posterior;
  double log_marginal = 0.0;
};

/// Sums the joint probability of every hidden index path of length
/// observations.size() (uniform prior over the first index).
ForwardResult forward_enumerate(const std::vector<Point>& means, const Eigen::MatrixXd& cov,
                                const align::TransitionKernel& kernel, const std::vector<Point>& observations);

/// Fourth-order central difference (Richardson extrapolation of two steps).
Point numeric_gradient(const std::function<double(const Point&)>& f, const Point& x, double h);

/// 2D tensor-product trapezoid rule over [lo, hi]^2 with n points per axis.
double integrate_2d(const std::function<double(double, double)>& f, const Eigen::Vector2d& lo,
                    const Eigen::Vector2d& hi, std::size_t n);

/// Proper intersection of segments p1p2 and q1q2 (2D).
bool segments_intersect(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& q1,
                        const Eigen::Vector2d& q2);

/// Pairs (i, j), i + 1 < j, whose polyline segments [i, i+1] and [j, j+1]
/// intersect.
std::vector<std::pair<std::size_t, std::size_t>> self_intersections(const std::vector<Point>& path);

/// Whether any segment of a crosses any segment of b.
bool polylines_cross(const std::vector<Point>& a, const std::vector<Point>& b);

/// Random SPD matrix with eigenvalues in [lo, hi].
Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index dim, double lo, double hi);

}  // namespace calm::oracle
