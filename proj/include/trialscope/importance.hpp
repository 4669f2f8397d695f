#pragma once

// Hyperparameter importance from a random-forest surrogate.
//
// The forest is fitted on encoded configurations (inactive slots at -1).
// fANOVA decomposes the variance of each tree's piecewise-constant function
// under a product measure over the feature domains; LPI measures how much the
// prediction varies along one dimension while the others stay at the incumbent.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialscope/run_model.hpp"

namespace trialscope {

/// Measure on one encoded dimension: uniform on an interval, or equal weight
/// on a finite set of atoms.
class FeatureDomain {
public:
  static FeatureDomain interval(double lower, double upper);
  static FeatureDomain discrete(std::vector<double> atoms);

  bool is_interval() const noexcept { return atoms_.empty(); }
  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  const std::vector<double>& atoms() const noexcept { return atoms_; }

  /// Share of the measure inside the half-open box (lo, hi].
  double fraction(double lo, double hi) const;

  /// Evaluation points, equally weighted: `resolution` cell midpoints for an
  /// interval, the atoms otherwise.
  std::vector<double> grid(std::size_t resolution = 100) const;

  nlohmann::json to_json() const;

private:
  double lower_ = 0.0;
  double upper_ = 1.0;
  std::vector<double> atoms_;
};

/// Numeric hyperparameters: the unit interval. Categorical and ordinal: their
/// choice encodings, plus the inactive sentinel when the hyperparameter is conditional.
std::vector<FeatureDomain> feature_domains(const ConfigurationSpace& space);

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // mean response of the node's rows
};

struct LeafBox {
  std::vector<double> lower;  // exclusive
  std::vector<double> upper;  // inclusive
  double value;
};

class RegressionTree {
public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  /// Leaf with `value`.
  static RegressionTree constant(double value);

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t leaf_count() const;
  std::size_t depth() const;

  double predict(std::span<const double> x) const;

  /// The axis-aligned cell of every leaf over `dims` features.
  std::vector<LeafBox> leaves(std::size_t dims) const;

  RegressionTree map_values(const std::function<double(double)>& f) const;

private:
  std::vector<TreeNode> nodes_;
};

struct ForestOptions {
  std::size_t n_trees = 16;
  std::uint64_t seed = 0;
  std::size_t min_leaf = 3;
  std::size_t max_features = 0;  // 0 considers every feature at each split
  bool bootstrap = true;
};

class ImportanceForest {
public:
  ImportanceForest() = default;
  ImportanceForest(std::vector<RegressionTree> trees, std::vector<FeatureDomain> domains);

  /// Fits on rows `x` and targets `y`. Empty `domains` means the unit interval
  /// for every feature.
  static ImportanceForest fit(const std::vector<std::vector<double>>& x,
                              std::span<const double> y, const ForestOptions& options = {},
                              std::vector<FeatureDomain> domains = {});

  std::size_t n_trees() const noexcept { return trees_.size(); }
  std::size_t n_features() const noexcept { return domains_.size(); }
  const RegressionTree& tree(std::size_t t) const { return trees_.at(t); }
  const std::vector<FeatureDomain>& domains() const noexcept { return domains_; }

  double predict_tree(std::size_t t, std::span<const double> x) const {
    return trees_[t].predict(x);
  }
  double predict(std::span<const double> x) const;

  /// Copy with every node value passed through `f`.
  ImportanceForest map_leaf_values(const std::function<double(double)>& f) const;

  nlohmann::json to_json() const;

private:
  std::vector<RegressionTree> trees_;
  std::vector<FeatureDomain> domains_;
};

ImportanceForest fit_forest(const std::vector<std::vector<double>>& x, std::span<const double> y,
                            std::size_t n_trees = 16, std::uint64_t seed = 0,
                            std::size_t min_leaf = 3);

/// Mean prediction of `tree` with the dimensions in `dims` fixed to `values`
/// and every other dimension integrated out under `domains`.
double tree_marginal(const RegressionTree& tree, const std::vector<FeatureDomain>& domains,
                     std::span<const std::size_t> dims, std::span<const double> values);

struct ImportanceScore {
  std::vector<std::size_t> dims;
  std::vector<std::string> names;
  double mean = 0.0;
  double std = 0.0;
};

/// Per-tree variance components of one tree on the discretized measure.
struct TreeDecomposition {
  double total_variance = 0.0;
  std::vector<double> singles;                 // V_i
  std::map<std::pair<std::size_t, std::size_t>, double> pairs;  // V_ij, i < j
};

TreeDecomposition decompose_tree(const RegressionTree& tree,
                                 const std::vector<FeatureDomain>& domains, bool with_pairs,
                                 std::size_t resolution = 100);

/// Singleton (and, for order_max = 2, pairwise) importances V_U / V, averaged
/// over trees. `names` defaults to x0, x1, ...
std::vector<ImportanceScore> fanova(const ImportanceForest& forest, int order_max = 1,
                                    std::span<const std::string> names = {},
                                    std::size_t resolution = 100);

// ---------------------------------------------------------------------------
// Local parameter importance

/// Anything that predicts per tree: ImportanceForest or a test double.
template <class M>
concept TreeEnsemble = requires(const M& m, std::size_t t, std::span<const double> x) {
  { m.n_trees() } -> std::convertible_to<std::size_t>;
  { m.predict_tree(t, x) } -> std::convertible_to<double>;
};

struct LpiDimension {
  std::string name;
  bool active = true;
  std::vector<double> probes;  // encoded values to try
};

struct LpiResult {
  std::vector<ImportanceScore> scores;
  /// Per dimension: variance over the probes of the ensemble-mean prediction.
  std::vector<double> variances;
  /// Every variance was zero; all scores are zero.
  bool flat = false;
};

namespace detail {

inline double population_variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

inline void mean_std(std::span<const double> v, double& mean, double& std) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  std = std::sqrt(population_variance(v));
}

}  // namespace detail

/// Varies one dimension at a time around `incumbent` and normalizes the
/// prediction variances to sum to one, per tree.
template <TreeEnsemble Model>
LpiResult lpi(const Model& model, std::span<const double> incumbent,
              std::span<const LpiDimension> dims) {
  const std::size_t n_trees = model.n_trees();
  const std::size_t d = dims.size();
  if (incumbent.size() != d) throw ValidationError("incumbent and dimensions differ in size");

  std::vector<std::vector<double>> per_tree(n_trees, std::vector<double>(d, 0.0));
  LpiResult result;
  result.variances.assign(d, 0.0);
  std::vector<double> probe(incumbent.begin(), incumbent.end());
  for (std::size_t h = 0; h < d; ++h) {
    if (!dims[h].active) continue;
    std::vector<double> ensemble(dims[h].probes.size(), 0.0);
    std::vector<double> preds(dims[h].probes.size());
    for (std::size_t t = 0; t < n_trees; ++t) {
      for (std::size_t k = 0; k < dims[h].probes.size(); ++k) {
        probe[h] = dims[h].probes[k];
        preds[k] = model.predict_tree(t, probe);
        ensemble[k] += preds[k] / static_cast<double>(n_trees);
      }
      per_tree[t][h] = detail::population_variance(preds);
    }
    probe[h] = incumbent[h];
    result.variances[h] = detail::population_variance(ensemble);
  }

  result.flat = true;
  for (auto& row : per_tree) {
    double sum = 0.0;
    for (double v : row) sum += v;
    if (sum > 0) {
      result.flat = false;
      for (double& v : row) v /= sum;
    } else {
      std::fill(row.begin(), row.end(), 0.0);
    }
  }

  std::vector<double> column(n_trees);
  for (std::size_t h = 0; h < d; ++h) {
    ImportanceScore s;
    s.dims = {h};
    s.names = {dims[h].name};
    for (std::size_t t = 0; t < n_trees; ++t) column[t] = per_tree[t][h];
    if (n_trees) detail::mean_std(column, s.mean, s.std);
    result.scores.push_back(std::move(s));
  }
  return result;
}

/// Probes for every hyperparameter: `grid` evenly spaced encodings over [0,1]
/// for numeric kinds, every choice otherwise. Inactive at the incumbent means
/// no probes and a zero score.
std::vector<LpiDimension> lpi_dimensions(const Configuration& incumbent,
                                         const ConfigurationSpace& space, std::size_t grid);

LpiResult lpi(const ImportanceForest& forest, const Configuration& incumbent,
              const ConfigurationSpace& space, std::size_t grid = 100);

}  // namespace trialscope
