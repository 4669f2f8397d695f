#include "trialscope/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace trialscope {

// ---------------------------------------------------------------------------
// Status

StatusBreakdown status_breakdown(const Run& run, std::optional<double> budget_filter) {
  StatusBreakdown out;
  for (auto s : {TrialStatus::success, TrialStatus::crashed, TrialStatus::timeout,
                 TrialStatus::memout, TrialStatus::running})
    out.counts[s] = 0;

  std::map<double, std::set<std::size_t>> configs_at;
  for (const auto& t : run.trials) {
    if (budget_filter && t.budget != *budget_filter) continue;
    ++out.counts[t.status];
    ++out.total_trials;
    configs_at[t.budget].insert(t.config_id);
    if (is_failure(t.status)) {
      FailedTrial f{t.config_id, t.budget, t.status, std::nullopt, t.source_run};
      if (auto it = t.additional.find("traceback"); it != t.additional.end())
        f.traceback = it->is_string() ? it->get<std::string>() : it->dump();
      out.failures.push_back(std::move(f));
    }
  }
  for (double b : run.budgets) {
    if (budget_filter && b != *budget_filter) continue;
    auto it = configs_at.find(b);
    out.per_budget.push_back({b, it == configs_at.end() ? 0 : it->second.size(),
                              run.configs.size()});
  }
  return out;
}

std::string format_percent(std::size_t numerator, std::size_t denominator) {
  if (denominator == 0) return "0.00";
  // round(numerator * 10000 / denominator), halves away from zero.
  const unsigned long long scaled =
      (2ULL * numerator * 10000ULL + denominator) / (2ULL * denominator);
  auto frac = std::to_string(scaled % 100);
  if (frac.size() < 2) frac.insert(frac.begin(), '0');
  return std::to_string(scaled / 100) + "." + frac;
}

std::string format_budget(double budget) {
  const double rounded = std::round(budget * 100.0) / 100.0;
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, rounded);
  std::string s(buf, end);
  if (s.find_first_of(".enia") == std::string::npos) s += ".0";
  return s;
}

std::string render_status_report(const StatusBreakdown& b) {
  if (b.total_trials == 0) return "No trials have been evaluated yet.";

  auto count = [&](TrialStatus s) {
    auto it = b.counts.find(s);
    return it == b.counts.end() ? std::size_t{0} : it->second;
  };

  std::string text = "Taking all evaluated trials into account, " +
                     format_percent(count(TrialStatus::success), b.total_trials) +
                     "% have been successful.";

  std::vector<std::string> others;
  for (auto s : {TrialStatus::crashed, TrialStatus::timeout, TrialStatus::memout})
    if (auto n = count(s))
      others.push_back(std::string(to_string(s)) + " (" + format_percent(n, b.total_trials) + "%)");
  if (!others.empty()) {
    text += " The other trials are ";
    for (std::size_t i = 0; i < others.size(); ++i) {
      if (i > 0) text += (i + 1 == others.size()) ? " and " : ", ";
      text += others[i];
    }
    text += ".";
  }

  if (!b.per_budget.empty()) {
    std::string fractions;
    std::string budgets;
    for (std::size_t i = 0; i < b.per_budget.size(); ++i) {
      const auto& c = b.per_budget[i];
      if (i > 0) {
        fractions += "/";
        budgets += "/";
      }
      fractions += format_percent(c.configs_evaluated, c.configs_total) + "%";
      budgets += format_budget(c.budget);
    }
    text += " Moreover, " + fractions + " of the configurations were evaluated on budget " +
            budgets + (b.per_budget.size() > 1 ? ", respectively." : ".");
  }
  return text;
}

StatusMatrix status_matrix(const Run& run) {
  StatusMatrix m;
  m.budgets = run.budgets;
  std::map<std::size_t, std::size_t> row_of;
  for (const auto& t : run.trials) {
    auto [it, inserted] = row_of.emplace(t.config_id, m.config_ids.size());
    if (inserted) {
      m.config_ids.push_back(t.config_id);
      m.cells.emplace_back(m.budgets.size(), TrialStatus::not_evaluated);
    }
    auto col = std::lower_bound(m.budgets.begin(), m.budgets.end(), t.budget) - m.budgets.begin();
    m.cells[it->second][static_cast<std::size_t>(col)] = t.status;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Correlation

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  // Both rank vectors share the mean (n+1)/2.
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  if (vx == 0 || vy == 0) return std::nullopt;
  const double rho = vx == vy ? cov / vx : cov / std::sqrt(vx * vy);
  return std::clamp(rho, -1.0, 1.0);
}

std::string_view correlation_strength(double rho) {
  const double a = std::fabs(rho);
  if (a >= 0.8) return "very strong";
  if (a >= 0.6) return "strong";
  if (a >= 0.4) return "moderate";
  if (a >= 0.2) return "weak";
  return "not";
}

CorrelationMatrix budget_correlation(const Run& run, std::string_view objective) {
  if (run.budgets.size() < 2)
    throw ValidationError("budget correlation needs at least two budgets");
  CorrelationMatrix m;
  m.budgets = run.budgets;
  const std::size_t nb = m.budgets.size();
  std::vector<std::map<std::size_t, double>> costs;
  for (double b : m.budgets) costs.push_back(costs_at_budget(run, objective, b, CostMode::exact));

  m.coefficient.assign(nb, std::vector<std::optional<double>>(nb));
  m.support.assign(nb, std::vector<std::size_t>(nb, 0));
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = i; j < nb; ++j) {
      std::vector<double> x, y;
      for (const auto& [id, c] : costs[i]) {
        auto it = costs[j].find(id);
        if (it == costs[j].end()) continue;
        x.push_back(c);
        y.push_back(it->second);
      }
      std::optional<double> rho;
      if (x.size() >= 2) rho = (i == j) ? std::optional<double>(1.0) : spearman(x, y);
      m.support[i][j] = m.support[j][i] = x.size();
      m.coefficient[i][j] = m.coefficient[j][i] = rho;
    }
  }
  return m;
}

namespace {

std::string strength_phrase(double rho) {
  auto label = correlation_strength(rho);
  return label == "not" ? std::string("no correlation")
                        : "a " + std::string(label) + " correlation";
}

std::string two_decimals(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_correlation_report(const CorrelationMatrix& m) {
  const std::size_t nb = m.budgets.size();
  std::vector<std::string> labels;
  bool all_defined = true;
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = i + 1; j < nb; ++j) {
      if (m.coefficient[i][j]) labels.emplace_back(correlation_strength(*m.coefficient[i][j]));
      else all_defined = false;
    }
  if (labels.empty())
    return "Not enough configurations were evaluated on several budgets to compute correlations.";
  if (all_defined && std::all_of(labels.begin(), labels.end(),
                                 [&](const auto& l) { return l == labels.front(); })) {
    return "All budget combinations have " + strength_phrase(*m.coefficient[0][1]) + ".";
  }
  std::string text;
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = i + 1; j < nb; ++j) {
      if (!text.empty()) text += " ";
      text += "Budgets " + format_budget(m.budgets[i]) + " and " + format_budget(m.budgets[j]);
      if (m.coefficient[i][j])
        text += " have " + strength_phrase(*m.coefficient[i][j]) + " (" +
                two_decimals(*m.coefficient[i][j]) + ").";
      else
        text += " share fewer than two evaluated configurations.";
    }
  return text;
}

// ---------------------------------------------------------------------------
// Pareto

std::vector<bool> pareto_front(std::span<const ParetoPoint> points, Direction x_direction,
                               Direction y_direction) {
  const std::size_t n = points.size();
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y))
      throw ValidationError("non-finite objective value for config " +
                            std::to_string(points[i].config_id));
    xs[i] = x_direction == Direction::minimize ? points[i].x : -points[i].x;
    ys[i] = y_direction == Direction::minimize ? points[i].y : -points[i].y;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return xs[a] != xs[b] ? xs[a] < xs[b] : ys[a] < ys[b];
  });

  std::vector<bool> dominated(n, false);
  double best_y = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n;) {
    // Group of equal x; sorted by y, so the group's best y comes first.
    std::size_t j = i;
    while (j < n && xs[order[j]] == xs[order[i]]) ++j;
    const double group_y = ys[order[i]];
    for (std::size_t k = i; k < j; ++k) {
      const double y = ys[order[k]];
      // Same x with a better y, or a strictly smaller x with y no worse.
      dominated[order[k]] = y > group_y || best_y <= y;
    }
    best_y = std::min(best_y, group_y);
    i = j;
  }
  return dominated;
}

ParetoResult pareto_compare(std::span<const Run* const> sources, std::string_view objective_x,
                            std::string_view objective_y, double budget) {
  ParetoResult result;
  for (const Run* run : sources) {
    Direction dx, dy;
    try {
      dx = run->objective(objective_x).direction;
      dy = run->objective(objective_y).direction;
    } catch (const NotFoundError& e) {
      throw NotFoundError("source '" + run->id + "': " + e.what());
    }
    auto cx = costs_at_budget(*run, objective_x, budget, CostMode::highest_seen);
    auto cy = costs_at_budget(*run, objective_y, budget, CostMode::highest_seen);
    std::vector<ParetoPoint> pts;
    for (const auto& [id, x] : cx) pts.push_back({id, x, cy.at(id)});
    auto dominated = pareto_front(pts, dx, dy);

    ParetoSource src{run->id, {}};
    for (std::size_t i = 0; i < pts.size(); ++i)
      src.points.push_back({pts[i].config_id, pts[i].x, pts[i].y, dominated[i]});
    result.push_back(std::move(src));
  }
  return result;
}

}  // namespace trialscope
