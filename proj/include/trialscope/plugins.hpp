#pragma once

// Analysis plugins and the JSON envelope they produce.
//
// Envelope: {"plugin", "target", "inputs", "computed_at", "data", "warnings"}.
// `inputs` is the normalized parameter map (defaults filled in, keys sorted),
// and `computed_at` is the modification time of the newest source run, so the
// envelope is a pure function of run content and inputs.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialscope/run_model.hpp"

namespace trialscope {

/// Invalid plugin input. `field` names the offending input key.
class InputError : public ValidationError {
public:
  InputError(std::string field, const std::string& what)
      : ValidationError("inputs." + field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

struct PluginOutput {
  nlohmann::json data;
  std::vector<std::string> warnings;
};

struct PluginContext {
  std::string target;
  std::shared_ptr<const Run> run;
  /// Extra targets named by the inputs (see Plugin::referenced_targets).
  std::map<std::string, std::shared_ptr<const Run>> sources;
  nlohmann::json inputs;  // normalized
};

class Plugin {
public:
  virtual ~Plugin() = default;

  virtual std::string name() const = 0;

  /// Validates raw inputs against the target and fills defaults. Throws InputError.
  virtual nlohmann::json normalize_inputs(const Run& target, const nlohmann::json& inputs) const = 0;

  /// Ids of further runs or groups the normalized inputs refer to.
  virtual std::vector<std::string> referenced_targets(const nlohmann::json& /*inputs*/) const {
    return {};
  }

  virtual PluginOutput compute(const PluginContext& context) const = 0;
};

class PluginRegistry {
public:
  /// overview, footprint, budget_correlation, pareto, importance.
  static PluginRegistry with_defaults();

  void add(std::shared_ptr<const Plugin> plugin);
  std::shared_ptr<const Plugin> find(std::string_view name) const;
  /// Throws NotFoundError listing the registered names.
  std::shared_ptr<const Plugin> get(std::string_view name) const;
  std::vector<std::string> names() const;

private:
  std::vector<std::shared_ptr<const Plugin>> plugins_;
};

/// UTC timestamp, e.g. "2024-05-01T12:00:00Z".
std::string iso8601(std::int64_t epoch_seconds);

/// Runs the plugin and wraps the output in the envelope.
nlohmann::json evaluate_plugin(const Plugin& plugin, const PluginContext& context);

std::shared_ptr<const Plugin> make_overview_plugin();
std::shared_ptr<const Plugin> make_footprint_plugin();
std::shared_ptr<const Plugin> make_budget_correlation_plugin();
std::shared_ptr<const Plugin> make_pareto_plugin();
std::shared_ptr<const Plugin> make_importance_plugin();

}  // namespace trialscope
