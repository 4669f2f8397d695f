#pragma once

// Canonical in-memory model of an optimization run: configuration spaces,
// configurations, objectives, trials, runs and groups of runs.
//
// All types here are plain values. A Run is treated as immutable once it has
// been validated and published; re-ingestion replaces whole Run objects.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "trialscope/error.hpp"

namespace trialscope {

/// A hyperparameter value. Integers and floats are kept apart so that
/// serialization round-trips; comparisons treat them numerically.
using Value = std::variant<bool, std::int64_t, double, std::string>;

bool values_equal(const Value& a, const Value& b);
std::optional<double> as_number(const Value& v);
std::string to_string(const Value& v);
nlohmann::json to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

/// Encoded slot used for hyperparameters that are inactive under the conditions.
inline constexpr double kInactive = -1.0;

enum class HpKind { continuous, integer, categorical, ordinal };

std::string_view to_string(HpKind kind);
HpKind parse_hp_kind(std::string_view s);

/// Child is active iff `parent` is active and takes one of `values`.
struct Condition {
  std::string parent;
  std::vector<Value> values;
};

struct Hyperparameter {
  std::string name;
  HpKind kind = HpKind::continuous;
  double lower = 0.0;
  double upper = 1.0;
  bool log_scale = false;
  std::vector<Value> choices;
  Value default_value = 0.0;
  std::optional<Condition> condition;

  static Hyperparameter continuous(std::string name, double lower, double upper,
                                   bool log_scale = false);
  static Hyperparameter integer(std::string name, std::int64_t lower, std::int64_t upper,
                                bool log_scale = false);
  static Hyperparameter categorical(std::string name, std::vector<Value> choices);
  static Hyperparameter ordinal(std::string name, std::vector<Value> choices);

  /// Returns a copy that is only active when `parent` takes one of `values`.
  Hyperparameter when(std::string parent, std::vector<Value> values) const;

  bool is_numeric() const noexcept {
    return kind == HpKind::continuous || kind == HpKind::integer;
  }

  /// Throws ValidationError if the hyperparameter's own invariants are violated.
  void check() const;

  bool in_domain(const Value& v) const;
  std::optional<std::size_t> choice_index(const Value& v) const;

  /// Coerces `v` to the canonical representation for this hyperparameter
  /// (double for continuous, int64 for integer, the stored choice otherwise).
  Value normalize(const Value& v) const;

  /// Maps an in-domain value to [0,1].
  double encode(const Value& v) const;

  /// Inverse of encode for numeric kinds, and choice lookup for the others.
  Value decode(double unit) const;
};

class ConfigurationSpace {
public:
  ConfigurationSpace() = default;
  explicit ConfigurationSpace(std::vector<Hyperparameter> hyperparameters);

  const std::vector<Hyperparameter>& hyperparameters() const noexcept { return hps_; }
  std::size_t size() const noexcept { return hps_.size(); }
  bool empty() const noexcept { return hps_.empty(); }

  const Hyperparameter& operator[](std::size_t i) const { return hps_.at(i); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  const Hyperparameter& at(std::string_view name) const;

  /// Hyperparameter indices ordered so that every parent precedes its children.
  std::span<const std::size_t> topological_order() const noexcept { return topo_; }

  /// Same names, kinds, domains and conditions, in the same order.
  /// On mismatch, fills `why` with a description of the first difference.
  bool same_structure(const ConfigurationSpace& other, std::string* why = nullptr) const;

private:
  std::vector<Hyperparameter> hps_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::size_t> topo_;
};

struct Configuration {
  std::map<std::string, Value, std::less<>> values;

  bool contains(std::string_view name) const { return values.find(name) != values.end(); }
  bool operator==(const Configuration& other) const;
};

/// Names of hyperparameters that are active for `config`.
std::set<std::string> active_hyperparameters(const Configuration& config,
                                             const ConfigurationSpace& space);

/// Throws ValidationError unless every active hyperparameter has an in-domain
/// value and every inactive one is absent.
void validate_configuration(const Configuration& config, const ConfigurationSpace& space);

/// Validates and coerces values to their canonical representation.
Configuration normalize_configuration(const Configuration& config,
                                      const ConfigurationSpace& space);

/// One slot per hyperparameter in space order; kInactive for inactive slots.
std::vector<double> encode(const Configuration& config, const ConfigurationSpace& space);

nlohmann::json to_json(const Configuration& config);
Configuration configuration_from_json(const nlohmann::json& values);

enum class Direction { minimize, maximize };

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view s);

struct Objective {
  std::string name;
  Direction direction = Direction::minimize;
  std::optional<double> lower;
  std::optional<double> upper;

  bool operator==(const Objective& other) const {
    return name == other.name && direction == other.direction;
  }
};

enum class TrialStatus { success, crashed, timeout, memout, running, not_evaluated };

std::string_view to_string(TrialStatus s);
TrialStatus parse_status(std::string_view s);

/// crashed, timeout and memout.
bool is_failure(TrialStatus s) noexcept;

struct Trial {
  std::size_t config_id = 0;
  double budget = 0.0;
  std::optional<std::vector<double>> costs;
  TrialStatus status = TrialStatus::success;
  double start = 0.0;
  std::optional<double> end;
  nlohmann::json additional = nlohmann::json::object();
  /// Run the trial came from; only set in merged group views.
  std::string source_run;
};

struct Run {
  std::string id;
  nlohmann::json meta = nlohmann::json::object();
  ConfigurationSpace space;
  std::vector<Objective> objectives;
  std::vector<double> budgets;
  std::vector<Configuration> configs;
  std::vector<Trial> trials;
  std::string content_hash;
  /// Seconds since the epoch of the newest source file; stamps plugin output.
  std::int64_t modified_at = 0;
  /// Per-config source run id; only set in merged group views.
  std::vector<std::string> config_origin;

  std::size_t objective_index(std::string_view name) const;
  const Objective& objective(std::string_view name) const {
    return objectives[objective_index(name)];
  }
  double highest_budget() const;
  bool has_budget(double b) const;
};

/// Checks one trial against the run's configs, budgets and objectives.
/// Uniqueness of (config_id, budget) is checked by validate_run only.
void validate_trial(const Run& run, const Trial& trial);

/// Throws ValidationError describing the first broken invariant.
void validate_run(const Run& run);

struct Group {
  std::string name;
  std::vector<std::string> members;
};

enum class CostMode { exact, highest_seen };

struct CostEntry {
  double cost;
  double budget;
  /// Position in run.trials of the trial that supplied the cost.
  std::size_t trial_index;
};

/// Successful costs per config for one objective. Raw values, whatever the direction.
std::map<std::size_t, CostEntry> cost_entries_at_budget(const Run& run,
                                                        std::string_view objective,
                                                        double budget, CostMode mode);

std::map<std::size_t, double> costs_at_budget(const Run& run, std::string_view objective,
                                              double budget, CostMode mode);

struct Incumbent {
  std::size_t config_id;
  double cost;
};

/// Best config for the objective at the budget; ties go to the earliest trial.
std::optional<Incumbent> incumbent(const Run& run, std::string_view objective, double budget,
                                   CostMode mode = CostMode::exact);

/// Concatenates member runs into one read-only view. Config ids are re-indexed,
/// every trial keeps its source run id and budgets become the sorted union.
Run merge_group(const Group& group, std::span<const Run* const> runs);

}  // namespace trialscope
