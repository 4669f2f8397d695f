#pragma once

// Configuration footprint: a 2-D map of evaluated, border and random
// configurations built from mixed-type distances and classical MDS.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "trialscope/run_model.hpp"

namespace trialscope {

/// Dense symmetric n x n matrix, row-major.
class DistanceMatrix {
public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

  void set(std::size_t i, std::size_t j, double d) {
    data_[i * n_ + j] = d;
    data_[j * n_ + i] = d;
  }

private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

using Point2 = std::array<double, 2>;

/// Gower-style mean of per-hyperparameter distances in [0,1]. Numeric and
/// ordinal: difference of encodings; categorical: 0/1 mismatch; active versus
/// inactive: 1; both inactive: 0.
double config_distance(const Configuration& a, const Configuration& b,
                       const ConfigurationSpace& space);

/// Same rule on rows produced by encode().
double encoded_distance(std::span<const double> a, std::span<const double> b,
                        const ConfigurationSpace& space);

DistanceMatrix distance_matrix(const std::vector<std::vector<double>>& encoded,
                               const ConfigurationSpace& space);

/// Corner configurations: every active numeric hyperparameter at a bound and
/// every active categorical/ordinal at its first or last choice. All corners
/// when there are at most `cap`, otherwise `cap` distinct corners drawn with `seed`.
std::vector<Configuration> border_configs(const ConfigurationSpace& space, std::size_t cap,
                                          std::uint64_t seed = 0);

/// Uniform per hyperparameter (log-uniform on log scales), conditions respected.
std::vector<Configuration> random_configs(const ConfigurationSpace& space, std::size_t n,
                                          std::uint64_t seed);

/// Classical (Torgerson) MDS into two dimensions. Each output column's entry of
/// largest magnitude is made nonnegative.
std::vector<Point2> mds_project(const DistanceMatrix& d);

/// Raw stress: sum over pairs of (d_ij - |x_i - x_j|)^2.
double stress(const DistanceMatrix& d, const std::vector<Point2>& x);

/// SMACOF majorization started from `init`; stops after `max_iterations` or when
/// the relative stress decrease falls below `tolerance`.
std::vector<Point2> smacof_refine(const DistanceMatrix& d, std::vector<Point2> init,
                                  int max_iterations = 300, double tolerance = 1e-6);

enum class PointKind { evaluated, incumbent, border, random };

std::string_view to_string(PointKind kind);

struct FootprintPoint {
  Point2 xy{0.0, 0.0};
  PointKind kind = PointKind::evaluated;
  std::optional<std::size_t> config_id;  // evaluated and incumbent points
  Configuration config;
  std::optional<double> cost;  // evaluated and incumbent points
};

struct FootprintOptions {
  std::size_t n_border = 100;
  std::size_t n_random = 100;
  std::uint64_t seed = 0;
  bool refine = false;
};

std::vector<FootprintPoint> build_footprint(const Run& run, std::string_view objective,
                                            double budget, const FootprintOptions& options = {});

}  // namespace trialscope
