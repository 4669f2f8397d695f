#include "trialscope/footprint.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <unordered_set>

#include <Eigen/Eigenvalues>

namespace trialscope {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

bool is_active(const Hyperparameter& hp, const Configuration& partial) {
  if (!hp.condition) return true;
  auto it = partial.values.find(hp.condition->parent);
  if (it == partial.values.end()) return false;
  return std::any_of(hp.condition->values.begin(), hp.condition->values.end(),
                     [&](const Value& v) { return values_equal(v, it->second); });
}

std::vector<Value> corner_values(const Hyperparameter& hp) {
  if (hp.is_numeric())
    return {hp.normalize(Value(hp.lower)), hp.normalize(Value(hp.upper))};
  if (hp.choices.size() == 1) return {hp.choices.front()};
  return {hp.choices.front(), hp.choices.back()};
}

std::string config_key(const Configuration& c) { return to_json(c).dump(); }

}  // namespace

// ---------------------------------------------------------------------------
// Distances

double encoded_distance(std::span<const double> a, std::span<const double> b,
                        const ConfigurationSpace& space) {
  if (space.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const bool ia = a[i] == kInactive;
    const bool ib = b[i] == kInactive;
    if (ia || ib) {
      sum += (ia == ib) ? 0.0 : 1.0;
    } else if (space[i].kind == HpKind::categorical) {
      sum += a[i] == b[i] ? 0.0 : 1.0;
    } else {
      sum += std::fabs(a[i] - b[i]);
    }
  }
  return sum / static_cast<double>(space.size());
}

double config_distance(const Configuration& a, const Configuration& b,
                       const ConfigurationSpace& space) {
  validate_configuration(a, space);
  validate_configuration(b, space);
  return encoded_distance(encode(a, space), encode(b, space), space);
}

DistanceMatrix distance_matrix(const std::vector<std::vector<double>>& encoded,
                               const ConfigurationSpace& space) {
  DistanceMatrix d(encoded.size());
  for (std::size_t i = 0; i < encoded.size(); ++i)
    for (std::size_t j = i + 1; j < encoded.size(); ++j)
      d.set(i, j, encoded_distance(encoded[i], encoded[j], space));
  return d;
}

// ---------------------------------------------------------------------------
// Generated configurations

std::vector<Configuration> border_configs(const ConfigurationSpace& space, std::size_t cap,
                                          std::uint64_t seed) {
  if (cap == 0) throw ValidationError("border configuration cap must be at least 1");
  const auto order = space.topological_order();

  // Enumerate until more than `cap` corners exist.
  std::vector<Configuration> corners;
  Configuration partial;
  std::function<void(std::size_t)> visit = [&](std::size_t pos) {
    if (corners.size() > cap) return;
    if (pos == order.size()) {
      corners.push_back(partial);
      return;
    }
    const auto& hp = space[order[pos]];
    if (!is_active(hp, partial)) {
      visit(pos + 1);
      return;
    }
    for (const auto& v : corner_values(hp)) {
      partial.values[hp.name] = v;
      visit(pos + 1);
      partial.values.erase(hp.name);
    }
  };
  visit(0);
  if (corners.size() <= cap) return corners;

  // Too many: pick each active hyperparameter's end independently.
  std::mt19937_64 rng(seed);
  std::vector<Configuration> out;
  std::unordered_set<std::string> seen;
  while (out.size() < cap) {
    Configuration c;
    for (auto idx : order) {
      const auto& hp = space[idx];
      if (!is_active(hp, c)) continue;
      auto ends = corner_values(hp);
      c.values[hp.name] = ends[ends.size() == 1 ? 0 : (rng() >> 63)];
    }
    if (seen.insert(config_key(c)).second) out.push_back(std::move(c));
  }
  return out;
}

std::vector<Configuration> random_configs(const ConfigurationSpace& space, std::size_t n,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Configuration> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Configuration c;
    for (auto idx : space.topological_order()) {
      const auto& hp = space[idx];
      if (!is_active(hp, c)) continue;
      const double u = unit_uniform(rng);
      switch (hp.kind) {
        case HpKind::continuous:
          c.values[hp.name] = std::get<double>(hp.decode(u));
          break;
        case HpKind::integer: {
          double x = hp.log_scale
                         ? std::exp(std::log(hp.lower) +
                                    u * (std::log(hp.upper + 1.0) - std::log(hp.lower)))
                         : hp.lower + u * (hp.upper - hp.lower + 1.0);
          x = std::clamp(std::floor(x), hp.lower, hp.upper);
          c.values[hp.name] = static_cast<std::int64_t>(x);
          break;
        }
        default: {
          auto i = std::min(static_cast<std::size_t>(u * static_cast<double>(hp.choices.size())),
                            hp.choices.size() - 1);
          c.values[hp.name] = hp.choices[i];
        }
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projection

std::vector<Point2> mds_project(const DistanceMatrix& d) {
  const std::size_t n = d.size();
  if (n < 2) throw ValidationError("MDS needs at least two points");
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::fabs(d(i, j)));
  const double tol = 1e-12 * (1.0 + scale);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::fabs(d(i, i)) > tol) throw ValidationError("distance matrix diagonal must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(d(i, j)) || d(i, j) < 0)
        throw ValidationError("distances must be finite and nonnegative");
      if (std::fabs(d(i, j) - d(j, i)) > tol)
        throw ValidationError("distance matrix is not symmetric");
    }
  }

  // B = -1/2 J D^2 J with J the centering matrix.
  Eigen::MatrixXd b(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b(i, j) = -0.5 * d(i, j) * d(i, j);
  const Eigen::VectorXd row_mean = b.rowwise().mean();
  const Eigen::RowVectorXd col_mean = b.colwise().mean();
  const double grand_mean = b.mean();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      b(i, j) += grand_mean - row_mean(i) - col_mean(j);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(b);
  if (solver.info() != Eigen::Success) throw Error("MDS eigendecomposition failed");
  const auto& values = solver.eigenvalues();  // ascending
  const auto& vectors = solver.eigenvectors();

  std::vector<Point2> out(n, Point2{0.0, 0.0});
  for (int k = 0; k < 2 && k < static_cast<int>(n); ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(n) - 1 - k;
    const double lambda = std::max(values(col), 0.0);
    Eigen::VectorXd v = vectors.col(col) * std::sqrt(lambda);
    double biggest = v.cwiseAbs().maxCoeff();
    Eigen::Index pivot = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (std::fabs(v(i)) >= biggest * (1.0 - 1e-9)) {
        pivot = i;
        break;
      }
    if (v(pivot) < 0) v = -v;
    for (std::size_t i = 0; i < n; ++i) out[i][k] = v(static_cast<Eigen::Index>(i));
  }
  return out;
}

double stress(const DistanceMatrix& d, const std::vector<Point2>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double e = std::hypot(x[i][0] - x[j][0], x[i][1] - x[j][1]);
      s += (d(i, j) - e) * (d(i, j) - e);
    }
  return s;
}

std::vector<Point2> smacof_refine(const DistanceMatrix& d, std::vector<Point2> x,
                                  int max_iterations, double tolerance) {
  const std::size_t n = d.size();
  if (x.size() != n) throw ValidationError("initial layout size does not match distances");
  double previous = stress(d, x);
  for (int it = 0; it < max_iterations && previous > 0; ++it) {
    // Guttman transform with unit weights: X' = B(X) X / n.
    std::vector<Point2> next(n, Point2{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
      double diag = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double e = std::hypot(x[i][0] - x[j][0], x[i][1] - x[j][1]);
        const double bij = e > 0 ? -d(i, j) / e : 0.0;
        diag -= bij;
        next[i][0] += bij * x[j][0];
        next[i][1] += bij * x[j][1];
      }
      next[i][0] = (next[i][0] + diag * x[i][0]) / static_cast<double>(n);
      next[i][1] = (next[i][1] + diag * x[i][1]) / static_cast<double>(n);
    }
    const double current = stress(d, next);
    x = std::move(next);
    if ((previous - current) / previous < tolerance) break;
    previous = current;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Footprint

std::string_view to_string(PointKind kind) {
  switch (kind) {
    case PointKind::evaluated: return "evaluated";
    case PointKind::incumbent: return "incumbent";
    case PointKind::border: return "border";
    case PointKind::random: return "random";
  }
  return "?";
}

std::vector<FootprintPoint> build_footprint(const Run& run, std::string_view objective,
                                            double budget, const FootprintOptions& options) {
  auto costs = costs_at_budget(run, objective, budget, CostMode::highest_seen);
  if (costs.empty())
    throw ValidationError("run '" + run.id + "' has no evaluated configuration at budget " +
                          nlohmann::json(budget).dump());
  auto best = incumbent(run, objective, budget, CostMode::highest_seen);

  std::vector<FootprintPoint> points;
  for (const auto& [id, cost] : costs) {
    FootprintPoint p;
    p.kind = (best && best->config_id == id) ? PointKind::incumbent : PointKind::evaluated;
    p.config_id = id;
    p.config = run.configs[id];
    p.cost = cost;
    points.push_back(std::move(p));
  }
  if (options.n_border > 0)
    for (auto& c : border_configs(run.space, options.n_border, options.seed))
      points.push_back({{0.0, 0.0}, PointKind::border, std::nullopt, std::move(c), std::nullopt});
  for (auto& c : random_configs(run.space, options.n_random, options.seed))
    points.push_back({{0.0, 0.0}, PointKind::random, std::nullopt, std::move(c), std::nullopt});

  if (points.size() == 1) return points;

  std::vector<std::vector<double>> encoded;
  encoded.reserve(points.size());
  for (const auto& p : points) encoded.push_back(encode(p.config, run.space));
  auto d = distance_matrix(encoded, run.space);
  auto xy = mds_project(d);
  if (options.refine) xy = smacof_refine(d, std::move(xy));
  for (std::size_t i = 0; i < points.size(); ++i) points[i].xy = xy[i];
  return points;
}

}  // namespace trialscope
