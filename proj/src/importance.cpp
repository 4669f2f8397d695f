#include "trialscope/importance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace trialscope {

// ---------------------------------------------------------------------------
// Feature domains

FeatureDomain FeatureDomain::interval(double lower, double upper) {
  if (!(lower < upper)) throw ValidationError("feature interval must have lower < upper");
  FeatureDomain d;
  d.lower_ = lower;
  d.upper_ = upper;
  return d;
}

FeatureDomain FeatureDomain::discrete(std::vector<double> atoms) {
  if (atoms.empty()) throw ValidationError("discrete feature domain needs at least one atom");
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  FeatureDomain d;
  d.lower_ = atoms.front();
  d.upper_ = atoms.back();
  d.atoms_ = std::move(atoms);
  return d;
}

double FeatureDomain::fraction(double lo, double hi) const {
  if (is_interval()) {
    const double overlap = std::min(hi, upper_) - std::max(lo, lower_);
    return overlap > 0 ? overlap / (upper_ - lower_) : 0.0;
  }
  auto first = std::upper_bound(atoms_.begin(), atoms_.end(), lo);
  auto last = std::upper_bound(atoms_.begin(), atoms_.end(), hi);
  return last > first ? static_cast<double>(last - first) / static_cast<double>(atoms_.size())
                      : 0.0;
}

std::vector<double> FeatureDomain::grid(std::size_t resolution) const {
  if (!is_interval()) return atoms_;
  std::vector<double> g(resolution);
  for (std::size_t k = 0; k < resolution; ++k)
    g[k] = lower_ + (upper_ - lower_) * (static_cast<double>(k) + 0.5) /
                        static_cast<double>(resolution);
  return g;
}

nlohmann::json FeatureDomain::to_json() const {
  if (is_interval()) return {{"interval", {lower_, upper_}}};
  return {{"atoms", atoms_}};
}

std::vector<FeatureDomain> feature_domains(const ConfigurationSpace& space) {
  std::vector<FeatureDomain> out;
  for (const auto& hp : space.hyperparameters()) {
    if (hp.is_numeric()) {
      out.push_back(FeatureDomain::interval(0.0, 1.0));
      continue;
    }
    std::vector<double> atoms;
    for (const auto& c : hp.choices) atoms.push_back(hp.encode(c));
    if (hp.condition) atoms.push_back(kInactive);
    out.push_back(FeatureDomain::discrete(std::move(atoms)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trees

RegressionTree RegressionTree::constant(double value) {
  TreeNode leaf;
  leaf.value = value;
  return RegressionTree({leaf});
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                      : n.right);
  }
  return nodes_[i].value;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const auto& n) { return n.feature < 0; }));
}

std::size_t RegressionTree::depth() const {
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (nodes_[i].feature >= 0) {
      stack.push_back({static_cast<std::size_t>(nodes_[i].left), d + 1});
      stack.push_back({static_cast<std::size_t>(nodes_[i].right), d + 1});
    }
  }
  return best;
}

std::vector<LeafBox> RegressionTree::leaves(std::size_t dims) const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<LeafBox> out;
  struct Item {
    std::size_t node;
    std::vector<double> lo, hi;
  };
  std::vector<Item> stack{{0, std::vector<double>(dims, -inf), std::vector<double>(dims, inf)}};
  while (!stack.empty()) {
    Item item = std::move(stack.back());
    stack.pop_back();
    const auto& n = nodes_[item.node];
    if (n.feature < 0) {
      out.push_back({std::move(item.lo), std::move(item.hi), n.value});
      continue;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    Item right{static_cast<std::size_t>(n.right), item.lo, item.hi};
    right.lo[f] = std::max(right.lo[f], n.threshold);
    item.hi[f] = std::min(item.hi[f], n.threshold);
    item.node = static_cast<std::size_t>(n.left);
    stack.push_back(std::move(right));
    stack.push_back(std::move(item));
  }
  return out;
}

RegressionTree RegressionTree::map_values(const std::function<double(double)>& f) const {
  auto nodes = nodes_;
  for (auto& n : nodes) n.value = f(n.value);
  return RegressionTree(std::move(nodes));
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

class TreeBuilder {
public:
  TreeBuilder(const std::vector<std::vector<double>>& x, std::span<const double> y,
              const ForestOptions& options, std::mt19937_64& rng)
      : x_(x), y_(y), options_(options), rng_(rng), dims_(x.empty() ? 0 : x.front().size()) {}

  RegressionTree build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(std::move(rows));
    return RegressionTree(std::move(nodes_));
  }

private:
  std::int32_t grow(std::vector<std::size_t> rows) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    double mean = 0.0;
    for (auto r : rows) mean += y_[r];
    mean /= static_cast<double>(rows.size());
    nodes_[id].value = mean;

    auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
                                        [&](auto a, auto b) { return y_[a] < y_[b]; });
    if (rows.size() <= options_.min_leaf || y_[*lo] == y_[*hi]) return id;

    Split best = find_split(rows, mean);
    if (best.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows)
      (x_[r][static_cast<std::size_t>(best.feature)] <= best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    nodes_[id].feature = best.feature;
    nodes_[id].threshold = best.threshold;
    const auto l = grow(std::move(left));
    const auto r = grow(std::move(right));
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  Split find_split(const std::vector<std::size_t>& rows, double mean) {
    std::vector<std::size_t> features(dims_);
    std::iota(features.begin(), features.end(), 0);
    if (options_.max_features > 0 && options_.max_features < dims_) {
      std::shuffle(features.begin(), features.end(), rng_);
      features.resize(options_.max_features);
      std::sort(features.begin(), features.end());
    }

    Split best;
    std::vector<std::pair<double, double>> column(rows.size());
    for (auto f : features) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        column[i] = {x_[rows[i]][f], y_[rows[i]] - mean};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;

      double total = 0.0, total_sq = 0.0;
      for (const auto& [v, t] : column) {
        total += t;
        total_sq += t * t;
      }
      double left = 0.0, left_sq = 0.0;
      const auto n = static_cast<double>(column.size());
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left += column[i].second;
        left_sq += column[i].second * column[i].second;
        if (column[i].first == column[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = n - nl;
        const double right = total - left;
        const double sse = (left_sq - left * left / nl) + (total_sq - left_sq - right * right / nr);
        if (sse < best.sse) {
          const double a = column[i].first, b = column[i + 1].first;
          double threshold = a + (b - a) / 2.0;
          if (!(threshold < b)) threshold = a;
          best = {static_cast<int>(f), threshold, sse};
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<double>>& x_;
  std::span<const double> y_;
  const ForestOptions& options_;
  std::mt19937_64& rng_;
  std::size_t dims_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Forest

ImportanceForest::ImportanceForest(std::vector<RegressionTree> trees,
                                   std::vector<FeatureDomain> domains)
    : trees_(std::move(trees)), domains_(std::move(domains)) {}

ImportanceForest ImportanceForest::fit(const std::vector<std::vector<double>>& x,
                                       std::span<const double> y, const ForestOptions& options,
                                       std::vector<FeatureDomain> domains) {
  if (x.size() != y.size()) throw ValidationError("forest: rows and targets differ in count");
  if (x.size() < 2) throw ValidationError("forest: at least two rows are required");
  if (options.n_trees == 0) throw ValidationError("forest: n_trees must be at least 1");
  if (options.min_leaf == 0) throw ValidationError("forest: min_leaf must be at least 1");
  const std::size_t dims = x.front().size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != dims) throw ValidationError("forest: row " + std::to_string(i) +
                                                   " has the wrong number of features");
    if (!std::isfinite(y[i]))
      throw ValidationError("forest: non-finite target in row " + std::to_string(i));
  }
  if (domains.empty()) domains.assign(dims, FeatureDomain::interval(0.0, 1.0));
  if (domains.size() != dims) throw ValidationError("forest: one domain per feature is required");

  std::mt19937_64 master(options.seed);
  std::vector<RegressionTree> trees;
  trees.reserve(options.n_trees);
  for (std::size_t t = 0; t < options.n_trees; ++t) {
    std::mt19937_64 rng(master());
    std::vector<std::size_t> rows(x.size());
    if (options.bootstrap) {
      for (auto& r : rows) r = static_cast<std::size_t>(rng() % x.size());
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    TreeBuilder builder(x, y, options, rng);
    trees.push_back(builder.build(std::move(rows)));
  }
  return ImportanceForest(std::move(trees), std::move(domains));
}

ImportanceForest fit_forest(const std::vector<std::vector<double>>& x, std::span<const double> y,
                            std::size_t n_trees, std::uint64_t seed, std::size_t min_leaf) {
  ForestOptions options;
  options.n_trees = n_trees;
  options.seed = seed;
  options.min_leaf = min_leaf;
  return ImportanceForest::fit(x, y, options);
}

double ImportanceForest::predict(std::span<const double> x) const {
  double s = 0.0;
  for (const auto& t : trees_) s += t.predict(x);
  return trees_.empty() ? 0.0 : s / static_cast<double>(trees_.size());
}

ImportanceForest ImportanceForest::map_leaf_values(const std::function<double(double)>& f) const {
  std::vector<RegressionTree> trees;
  for (const auto& t : trees_) trees.push_back(t.map_values(f));
  return ImportanceForest(std::move(trees), domains_);
}

nlohmann::json ImportanceForest::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes())
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(std::move(nodes));
  }
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : domains_) domains.push_back(d.to_json());
  return {{"trees", trees}, {"domains", domains}};
}

// ---------------------------------------------------------------------------
// Marginals and variance decomposition

double tree_marginal(const RegressionTree& tree, const std::vector<FeatureDomain>& domains,
                     std::span<const std::size_t> dims, std::span<const double> values) {
  if (dims.size() != values.size()) throw ValidationError("tree_marginal: dims/values mismatch");
  std::vector<bool> fixed(domains.size(), false);
  for (auto d : dims) fixed.at(d) = true;
  double total = 0.0;
  for (const auto& leaf : tree.leaves(domains.size())) {
    bool compatible = true;
    for (std::size_t k = 0; k < dims.size() && compatible; ++k)
      compatible = values[k] > leaf.lower[dims[k]] && values[k] <= leaf.upper[dims[k]];
    if (!compatible) continue;
    double weight = 1.0;
    for (std::size_t d = 0; d < domains.size() && weight > 0; ++d)
      if (!fixed[d]) weight *= domains[d].fraction(leaf.lower[d], leaf.upper[d]);
    total += weight * leaf.value;
  }
  return total;
}

TreeDecomposition decompose_tree(const RegressionTree& tree,
                                 const std::vector<FeatureDomain>& domains, bool with_pairs,
                                 std::size_t resolution) {
  const std::size_t d = domains.size();
  std::vector<std::vector<double>> grids;
  for (const auto& dom : domains) grids.push_back(dom.grid(resolution));

  // Each leaf covers a contiguous index range of every grid.
  struct Cell {
    std::vector<std::size_t> begin, end;
    std::vector<double> frac;
    double value;
  };
  std::vector<Cell> cells;
  for (auto& leaf : tree.leaves(d)) {
    Cell c{std::vector<std::size_t>(d), std::vector<std::size_t>(d), std::vector<double>(d),
           leaf.value};
    bool empty = false;
    for (std::size_t i = 0; i < d; ++i) {
      const auto& g = grids[i];
      c.begin[i] = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), leaf.lower[i]) - g.begin());
      c.end[i] = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), leaf.upper[i]) - g.begin());
      if (c.end[i] <= c.begin[i]) empty = true;
      c.frac[i] = empty ? 0.0
                        : static_cast<double>(c.end[i] - c.begin[i]) / static_cast<double>(g.size());
    }
    if (!empty) cells.push_back(std::move(c));
  }

  auto weight_without = [&](const Cell& c, std::size_t a, std::size_t b) {
    double w = 1.0;
    for (std::size_t i = 0; i < d; ++i)
      if (i != a && i != b) w *= c.frac[i];
    return w;
  };

  TreeDecomposition out;
  out.singles.assign(d, 0.0);
  const std::size_t none = d;
  double mean = 0.0, peak = 0.0;
  for (const auto& c : cells) {
    mean += weight_without(c, none, none) * c.value;
    peak = std::max(peak, std::fabs(c.value));
  }
  double total = 0.0;
  for (const auto& c : cells) total += weight_without(c, none, none) * (c.value - mean) * (c.value - mean);
  // Rounding noise on a constant function is not variance.
  const double floor = 1e-12 * peak;
  if (total <= floor * floor) return out;
  out.total_variance = total;

  std::vector<std::vector<double>> marginal(d);
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t g = grids[i].size();
    std::vector<double> diff(g + 1, 0.0);
    for (const auto& c : cells) {
      const double w = weight_without(c, i, none) * c.value;
      diff[c.begin[i]] += w;
      diff[c.end[i]] -= w;
    }
    marginal[i].resize(g);
    double run = 0.0, v = 0.0;
    for (std::size_t k = 0; k < g; ++k) {
      run += diff[k];
      marginal[i][k] = run;
      v += (run - mean) * (run - mean);
    }
    out.singles[i] = v / static_cast<double>(g);
  }

  if (!with_pairs) return out;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const std::size_t gi = grids[i].size(), gj = grids[j].size();
      std::vector<double> diff((gi + 1) * (gj + 1), 0.0);
      auto at = [&](std::size_t a, std::size_t b) -> double& { return diff[a * (gj + 1) + b]; };
      for (const auto& c : cells) {
        const double w = weight_without(c, i, j) * c.value;
        at(c.begin[i], c.begin[j]) += w;
        at(c.end[i], c.begin[j]) -= w;
        at(c.begin[i], c.end[j]) -= w;
        at(c.end[i], c.end[j]) += w;
      }
      // 2-D prefix sums recover the pairwise marginal on the grid.
      double v = 0.0;
      for (std::size_t a = 0; a < gi; ++a)
        for (std::size_t b = 0; b < gj; ++b) {
          double s = at(a, b);
          if (a > 0) s += at(a - 1, b);
          if (b > 0) s += at(a, b - 1);
          if (a > 0 && b > 0) s -= at(a - 1, b - 1);
          at(a, b) = s;
          v += (s - mean) * (s - mean);
        }
      v /= static_cast<double>(gi * gj);
      out.pairs[{i, j}] = std::max(0.0, v - out.singles[i] - out.singles[j]);
    }
  return out;
}

std::vector<ImportanceScore> fanova(const ImportanceForest& forest, int order_max,
                                    std::span<const std::string> names, std::size_t resolution) {
  if (order_max != 1 && order_max != 2) throw ValidationError("fanova order must be 1 or 2");
  const std::size_t d = forest.n_features();
  auto name_of = [&](std::size_t i) {
    return i < names.size() ? names[i] : "x" + std::to_string(i);
  };

  std::vector<ImportanceScore> scores;
  for (std::size_t i = 0; i < d; ++i) scores.push_back({{i}, {name_of(i)}, 0.0, 0.0});
  if (order_max == 2)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        scores.push_back({{i, j}, {name_of(i), name_of(j)}, 0.0, 0.0});

  const std::size_t n_trees = forest.n_trees();
  std::vector<std::vector<double>> per_score(scores.size(), std::vector<double>(n_trees, 0.0));
  for (std::size_t t = 0; t < n_trees; ++t) {
    auto dec = decompose_tree(forest.tree(t), forest.domains(), order_max == 2, resolution);
    if (dec.total_variance <= 0) continue;
    for (std::size_t s = 0; s < scores.size(); ++s) {
      const auto& dims = scores[s].dims;
      const double v = dims.size() == 1 ? dec.singles[dims[0]] : dec.pairs.at({dims[0], dims[1]});
      per_score[s][t] = std::clamp(v / dec.total_variance, 0.0, 1.0);
    }
  }
  for (std::size_t s = 0; s < scores.size(); ++s)
    if (n_trees) detail::mean_std(per_score[s], scores[s].mean, scores[s].std);
  return scores;
}

// ---------------------------------------------------------------------------
// LPI

std::vector<LpiDimension> lpi_dimensions(const Configuration& incumbent,
                                         const ConfigurationSpace& space, std::size_t grid) {
  if (grid < 2) throw ValidationError("LPI grid must have at least two points");
  auto active = active_hyperparameters(incumbent, space);
  std::vector<LpiDimension> dims;
  for (const auto& hp : space.hyperparameters()) {
    LpiDimension dim{hp.name, active.count(hp.name) > 0, {}};
    if (dim.active) {
      if (hp.is_numeric()) {
        for (std::size_t k = 0; k < grid; ++k)
          dim.probes.push_back(static_cast<double>(k) / static_cast<double>(grid - 1));
      } else {
        for (const auto& c : hp.choices) dim.probes.push_back(hp.encode(c));
      }
    }
    dims.push_back(std::move(dim));
  }
  return dims;
}

LpiResult lpi(const ImportanceForest& forest, const Configuration& incumbent,
              const ConfigurationSpace& space, std::size_t grid) {
  validate_configuration(incumbent, space);
  auto dims = lpi_dimensions(incumbent, space, grid);
  auto row = encode(incumbent, space);
  return lpi(forest, std::span<const double>(row), std::span<const LpiDimension>(dims));
}

}  // namespace trialscope
