#pragma once

// Non-surrogate analyses: status summary and report text, status heatmap,
// budget rank correlation and Pareto fronts.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trialscope/run_model.hpp"

namespace trialscope {

// ---------------------------------------------------------------------------
// Status

struct BudgetCoverage {
  double budget;
  std::size_t configs_evaluated;  // distinct configs with a trial at this budget
  std::size_t configs_total;      // size of the run's configuration table

  double fraction() const {
    return configs_total ? static_cast<double>(configs_evaluated) / configs_total : 0.0;
  }
};

struct FailedTrial {
  std::size_t config_id;
  double budget;
  TrialStatus status;
  std::optional<std::string> traceback;
  std::string source_run;
};

struct StatusBreakdown {
  /// Every recordable status appears, zero counts included.
  std::map<TrialStatus, std::size_t> counts;
  std::size_t total_trials = 0;
  std::vector<BudgetCoverage> per_budget;
  std::vector<FailedTrial> failures;

  double fraction(TrialStatus s) const {
    auto it = counts.find(s);
    return total_trials && it != counts.end() ? static_cast<double>(it->second) / total_trials
                                              : 0.0;
  }
};

StatusBreakdown status_breakdown(const Run& run, std::optional<double> budget_filter = {});

/// 100 * numerator / denominator rounded half away from zero to two decimals,
/// e.g. "96.66". Exact integer arithmetic.
std::string format_percent(std::size_t numerator, std::size_t denominator);

/// Budget rounded to two decimals in shortest form, keeping one fractional
/// digit for integral values: 100/9 -> "11.11", 100 -> "100.0".
std::string format_budget(double budget);

/// Three-sentence plain-English summary of a breakdown.
std::string render_status_report(const StatusBreakdown& breakdown);

struct StatusMatrix {
  std::vector<double> budgets;
  std::vector<std::size_t> config_ids;  // first-seen order
  std::vector<std::vector<TrialStatus>> cells;  // [row][budget]
};

StatusMatrix status_matrix(const Run& run);

// ---------------------------------------------------------------------------
// Budget correlation

/// Ranks starting at 1; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman's rho as Pearson correlation of average ranks. Empty when fewer
/// than two pairs are given or either side is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// "very strong", "strong", "moderate", "weak" or "not" by |rho|.
std::string_view correlation_strength(double rho);

struct CorrelationMatrix {
  std::vector<double> budgets;
  std::vector<std::vector<std::optional<double>>> coefficient;
  std::vector<std::vector<std::size_t>> support;
};

CorrelationMatrix budget_correlation(const Run& run, std::string_view objective);

/// Summary sentence(s) describing correlation strength between budget pairs.
std::string render_correlation_report(const CorrelationMatrix& matrix);

// ---------------------------------------------------------------------------
// Pareto fronts

struct ParetoPoint {
  std::size_t config_id;
  double x;
  double y;
};

/// dominated[i] for every input point. O(n log n).
std::vector<bool> pareto_front(std::span<const ParetoPoint> points, Direction x_direction,
                               Direction y_direction);

struct ParetoEntry {
  std::size_t config_id;
  double x;
  double y;
  bool dominated;
};

struct ParetoSource {
  std::string source;
  std::vector<ParetoEntry> points;
};

using ParetoResult = std::vector<ParetoSource>;

/// One independent front per source over highest-seen costs at `budget`.
ParetoResult pareto_compare(std::span<const Run* const> sources, std::string_view objective_x,
                            std::string_view objective_y, double budget);

}  // namespace trialscope
