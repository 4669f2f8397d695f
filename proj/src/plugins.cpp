#include "trialscope/plugins.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <limits>
#include <set>

#include "trialscope/analysis.hpp"
#include "trialscope/footprint.hpp"
#include "trialscope/importance.hpp"
#include "trialscope/native_format.hpp"

namespace trialscope {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Registry and envelope

PluginRegistry PluginRegistry::with_defaults() {
  PluginRegistry r;
  r.add(make_overview_plugin());
  r.add(make_footprint_plugin());
  r.add(make_budget_correlation_plugin());
  r.add(make_pareto_plugin());
  r.add(make_importance_plugin());
  return r;
}

void PluginRegistry::add(std::shared_ptr<const Plugin> plugin) {
  if (find(plugin->name())) throw ValidationError("plugin '" + plugin->name() + "' already registered");
  plugins_.push_back(std::move(plugin));
}

std::shared_ptr<const Plugin> PluginRegistry::find(std::string_view name) const {
  for (const auto& p : plugins_)
    if (p->name() == name) return p;
  return nullptr;
}

std::shared_ptr<const Plugin> PluginRegistry::get(std::string_view name) const {
  if (auto p = find(name)) return p;
  std::string known;
  for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
  throw NotFoundError("unknown plugin '" + std::string(name) + "' (valid plugins: " + known + ")");
}

std::vector<std::string> PluginRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& p : plugins_) out.push_back(p->name());
  return out;
}

std::string iso8601(std::int64_t epoch_seconds) {
  std::time_t t = static_cast<std::time_t>(epoch_seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json evaluate_plugin(const Plugin& plugin, const PluginContext& context) {
  std::int64_t stamp = context.run->modified_at;
  for (const auto& [id, run] : context.sources) stamp = std::max(stamp, run->modified_at);
  auto out = plugin.compute(context);
  return {{"plugin", plugin.name()},
          {"target", context.target},
          {"inputs", context.inputs},
          {"computed_at", iso8601(stamp)},
          {"data", std::move(out.data)},
          {"warnings", out.warnings}};
}

namespace {

// ---------------------------------------------------------------------------
// Input normalization

class InputReader {
public:
  explicit InputReader(const json& raw) {
    if (raw.is_null()) return;
    if (!raw.is_object()) throw InputError("*", "inputs must be a JSON object");
    raw_ = raw;
  }

  std::string objective(const Run& run, const std::string& key, std::size_t fallback) {
    seen_.insert(key);
    std::string name;
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_string()) throw InputError(key, "expected an objective name");
      name = it->get<std::string>();
      if (std::none_of(run.objectives.begin(), run.objectives.end(),
                       [&](const auto& o) { return o.name == name; }))
        throw InputError(key, "unknown objective '" + name + "'");
    } else {
      if (fallback >= run.objectives.size())
        throw InputError(key, "run '" + run.id + "' has only " +
                                  std::to_string(run.objectives.size()) + " objective(s)");
      name = run.objectives[fallback].name;
    }
    out_[key] = name;
    return name;
  }

  double budget(const Run& run, const std::string& key) {
    seen_.insert(key);
    double b = run.highest_budget();
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_number()) throw InputError(key, "expected a number");
      b = it->get<double>();
      if (!run.has_budget(b)) throw InputError(key, "budget " + it->dump() + " is not one of the run's budgets");
    }
    out_[key] = b;
    return b;
  }

  std::optional<double> optional_budget(const Run& run, const std::string& key) {
    seen_.insert(key);
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_number()) throw InputError(key, "expected a number");
      double b = it->get<double>();
      if (!run.has_budget(b)) throw InputError(key, "budget " + it->dump() + " is not one of the run's budgets");
      out_[key] = b;
      return b;
    }
    out_[key] = nullptr;
    return std::nullopt;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min,
                       std::int64_t max) {
    seen_.insert(key);
    std::int64_t v = fallback;
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_number()) throw InputError(key, "expected an integer");
      const double d = it->get<double>();
      if (std::floor(d) != d) throw InputError(key, "expected an integer");
      if (d < static_cast<double>(min) || d > static_cast<double>(max))
        throw InputError(key, "must be between " + std::to_string(min) + " and " + std::to_string(max));
      v = it->is_number_float() ? static_cast<std::int64_t>(d) : it->get<std::int64_t>();
    }
    out_[key] = v;
    return v;
  }

  bool boolean(const std::string& key, bool fallback) {
    seen_.insert(key);
    bool v = fallback;
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_boolean()) throw InputError(key, "expected true or false");
      v = it->get<bool>();
    }
    out_[key] = v;
    return v;
  }

  std::string choice(const std::string& key, const std::string& fallback,
                     const std::vector<std::string>& allowed) {
    seen_.insert(key);
    std::string v = fallback;
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_string()) throw InputError(key, "expected a string");
      v = it->get<std::string>();
      if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw InputError(key, "must be one of " + list);
      }
    }
    out_[key] = v;
    return v;
  }

  std::vector<std::string> string_list(const std::string& key) {
    seen_.insert(key);
    std::vector<std::string> v;
    if (auto it = raw_.find(key); it != raw_.end() && !it->is_null()) {
      if (!it->is_array()) throw InputError(key, "expected a list of ids");
      for (const auto& e : *it) {
        if (!e.is_string()) throw InputError(key, "expected a list of ids");
        v.push_back(e.get<std::string>());
      }
    }
    out_[key] = v;
    return v;
  }

  json finish() {
    for (const auto& [k, v] : raw_.items())
      if (!seen_.count(k)) throw InputError(k, "unknown input");
    return out_;
  }

private:
  json raw_ = json::object();
  json out_ = json::object();
  std::set<std::string> seen_;
};

json objective_json(const Objective& o) {
  return {{"name", o.name},
          {"direction", to_string(o.direction)},
          {"lower", o.lower ? json(*o.lower) : json(nullptr)},
          {"upper", o.upper ? json(*o.upper) : json(nullptr)}};
}

json origin_of(const Run& run, std::size_t config_id) {
  return config_id < run.config_origin.size() ? json(run.config_origin[config_id]) : json(run.id);
}

// ---------------------------------------------------------------------------
// overview

class OverviewPlugin final : public Plugin {
public:
  std::string name() const override { return "overview"; }

  json normalize_inputs(const Run& target, const json& inputs) const override {
    InputReader r(inputs);
    r.optional_budget(target, "budget");
    return r.finish();
  }

  PluginOutput compute(const PluginContext& ctx) const override {
    const Run& run = *ctx.run;
    std::optional<double> filter;
    if (!ctx.inputs.at("budget").is_null()) filter = ctx.inputs.at("budget").get<double>();
    auto breakdown = status_breakdown(run, filter);

    json counts = json::object();
    for (const auto& [s, n] : breakdown.counts) counts[std::string(to_string(s))] = n;
    json per_budget = json::array();
    for (const auto& c : breakdown.per_budget)
      per_budget.push_back({{"budget", c.budget},
                            {"evaluated", c.configs_evaluated},
                            {"total", c.configs_total},
                            {"fraction", c.fraction()}});
    json failures = json::array();
    for (const auto& f : breakdown.failures)
      failures.push_back({{"config_id", f.config_id},
                          {"budget", f.budget},
                          {"status", to_string(f.status)},
                          {"traceback", f.traceback ? json(*f.traceback) : json(nullptr)},
                          {"source", f.source_run.empty() ? run.id : f.source_run}});

    auto matrix = status_matrix(run);
    json cells = json::array();
    for (const auto& row : matrix.cells) {
      json r = json::array();
      for (auto s : row) r.push_back(to_string(s));
      cells.push_back(std::move(r));
    }

    json objectives = json::array();
    for (const auto& o : run.objectives) objectives.push_back(objective_json(o));

    PluginOutput out;
    out.data = {{"meta", run.meta},
                {"objectives", objectives},
                {"budgets", run.budgets},
                {"n_configs", run.configs.size()},
                {"n_trials", run.trials.size()},
                {"report", render_status_report(breakdown)},
                {"status",
                 {{"counts", counts},
                  {"total", breakdown.total_trials},
                  {"per_budget", per_budget},
                  {"failures", failures}}},
                {"matrix",
                 {{"budgets", matrix.budgets},
                  {"config_ids", matrix.config_ids},
                  {"statuses", cells}}}};
    return out;
  }
};

// ---------------------------------------------------------------------------
// budget_correlation

class BudgetCorrelationPlugin final : public Plugin {
public:
  std::string name() const override { return "budget_correlation"; }

  json normalize_inputs(const Run& target, const json& inputs) const override {
    InputReader r(inputs);
    r.objective(target, "objective", 0);
    auto out = r.finish();
    if (target.budgets.size() < 2)
      throw InputError("objective", "budget correlation needs a run with at least two budgets");
    return out;
  }

  PluginOutput compute(const PluginContext& ctx) const override {
    auto m = budget_correlation(*ctx.run, ctx.inputs.at("objective").get<std::string>());
    json coef = json::array(), labels = json::array();
    for (const auto& row : m.coefficient) {
      json c = json::array(), l = json::array();
      for (const auto& v : row) {
        c.push_back(v ? json(*v) : json(nullptr));
        l.push_back(v ? json(std::string(correlation_strength(*v))) : json(nullptr));
      }
      coef.push_back(std::move(c));
      labels.push_back(std::move(l));
    }
    PluginOutput out;
    out.data = {{"budgets", m.budgets},
                {"coefficients", coef},
                {"labels", labels},
                {"support", m.support},
                {"report", render_correlation_report(m)}};
    for (std::size_t i = 0; i < m.budgets.size(); ++i)
      for (std::size_t j = i + 1; j < m.budgets.size(); ++j)
        if (!m.coefficient[i][j])
          out.warnings.push_back("correlation between budgets " + format_budget(m.budgets[i]) +
                                 " and " + format_budget(m.budgets[j]) + " is undefined");
    return out;
  }
};

// ---------------------------------------------------------------------------
// pareto

class ParetoPlugin final : public Plugin {
public:
  std::string name() const override { return "pareto"; }

  json normalize_inputs(const Run& target, const json& inputs) const override {
    InputReader r(inputs);
    auto x = r.objective(target, "objective_x", 0);
    auto y = r.objective(target, "objective_y", 1);
    if (x == y) throw InputError("objective_y", "must differ from objective_x");
    r.budget(target, "budget");
    r.string_list("compare");
    return r.finish();
  }

  std::vector<std::string> referenced_targets(const json& inputs) const override {
    return inputs.at("compare").get<std::vector<std::string>>();
  }

  PluginOutput compute(const PluginContext& ctx) const override {
    std::vector<const Run*> sources{ctx.run.get()};
    for (const auto& id : ctx.inputs.at("compare").get<std::vector<std::string>>())
      sources.push_back(ctx.sources.at(id).get());
    const auto x = ctx.inputs.at("objective_x").get<std::string>();
    const auto y = ctx.inputs.at("objective_y").get<std::string>();
    const double budget = ctx.inputs.at("budget").get<double>();
    auto result = pareto_compare(sources, x, y, budget);

    PluginOutput out;
    json fronts = json::array();
    for (std::size_t s = 0; s < result.size(); ++s) {
      const Run& run = *sources[s];
      json points = json::array();
      std::size_t on_front = 0;
      for (const auto& p : result[s].points) {
        on_front += !p.dominated;
        points.push_back({{"config_id", p.config_id},
                          {"x", p.x},
                          {"y", p.y},
                          {"dominated", p.dominated},
                          {"origin", origin_of(run, p.config_id)},
                          {"config", to_json(run.configs[p.config_id])}});
      }
      if (points.empty())
        out.warnings.push_back("source '" + result[s].source + "' has no successful trial");
      fronts.push_back({{"source", result[s].source},
                        {"direction_x", to_string(run.objective(x).direction)},
                        {"direction_y", to_string(run.objective(y).direction)},
                        {"front_size", on_front},
                        {"points", points}});
    }
    out.data = {{"objective_x", x}, {"objective_y", y}, {"budget", budget}, {"sources", fronts}};
    return out;
  }
};

// ---------------------------------------------------------------------------
// footprint

class FootprintPlugin final : public Plugin {
public:
  std::string name() const override { return "footprint"; }

  json normalize_inputs(const Run& target, const json& inputs) const override {
    InputReader r(inputs);
    r.objective(target, "objective", 0);
    r.budget(target, "budget");
    r.integer("n_border", 100, 0, 2000);
    r.integer("n_random", 100, 0, 2000);
    r.integer("seed", 0, 0, std::numeric_limits<std::int64_t>::max());
    r.boolean("refine", false);
    return r.finish();
  }

  PluginOutput compute(const PluginContext& ctx) const override {
    const Run& run = *ctx.run;
    FootprintOptions options;
    options.n_border = ctx.inputs.at("n_border").get<std::size_t>();
    options.n_random = ctx.inputs.at("n_random").get<std::size_t>();
    options.seed = ctx.inputs.at("seed").get<std::uint64_t>();
    options.refine = ctx.inputs.at("refine").get<bool>();
    const auto objective = ctx.inputs.at("objective").get<std::string>();
    const double budget = ctx.inputs.at("budget").get<double>();
    auto points = build_footprint(run, objective, budget, options);

    json arr = json::array();
    json incumbent = nullptr;
    for (const auto& p : points) {
      if (p.kind == PointKind::incumbent) incumbent = *p.config_id;
      arr.push_back({{"x", p.xy[0]},
                     {"y", p.xy[1]},
                     {"kind", to_string(p.kind)},
                     {"config_id", p.config_id ? json(*p.config_id) : json(nullptr)},
                     {"cost", p.cost ? json(*p.cost) : json(nullptr)},
                     {"config", to_json(p.config)}});
    }
    PluginOutput out;
    out.data = {{"points", arr}, {"incumbent", incumbent}};
    return out;
  }
};

// ---------------------------------------------------------------------------
// importance

class ImportancePlugin final : public Plugin {
public:
  std::string name() const override { return "importance"; }

  json normalize_inputs(const Run& target, const json& inputs) const override {
    InputReader r(inputs);
    r.choice("method", "fanova", {"fanova", "lpi"});
    r.objective(target, "objective", 0);
    r.budget(target, "budget");
    r.integer("n_trees", 16, 1, 1000);
    r.integer("seed", 0, 0, std::numeric_limits<std::int64_t>::max());
    r.integer("min_leaf", 3, 1, 1000000);
    r.integer("order", 1, 1, 2);
    r.integer("grid", 100, 2, 10000);
    return r.finish();
  }

  PluginOutput compute(const PluginContext& ctx) const override {
    const Run& run = *ctx.run;
    const auto objective = ctx.inputs.at("objective").get<std::string>();
    const double budget = ctx.inputs.at("budget").get<double>();
    const bool maximize = run.objective(objective).direction == Direction::maximize;

    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& [id, cost] : costs_at_budget(run, objective, budget, CostMode::highest_seen)) {
      x.push_back(encode(run.configs[id], run.space));
      y.push_back(maximize ? -cost : cost);
    }
    if (x.size() < 2)
      throw ValidationError("importance needs at least two evaluated configurations, found " +
                            std::to_string(x.size()));

    ForestOptions options;
    options.n_trees = ctx.inputs.at("n_trees").get<std::size_t>();
    options.seed = ctx.inputs.at("seed").get<std::uint64_t>();
    options.min_leaf = ctx.inputs.at("min_leaf").get<std::size_t>();
    auto forest = ImportanceForest::fit(x, y, options, feature_domains(run.space));

    std::vector<std::string> names;
    for (const auto& hp : run.space.hyperparameters()) names.push_back(hp.name);

    PluginOutput out;
    const auto method = ctx.inputs.at("method").get<std::string>();
    json scores = json::array();
    auto push = [&](const ImportanceScore& s) {
      scores.push_back({{"names", s.names}, {"mean", s.mean}, {"std", s.std}});
    };
    out.data = {{"method", method}, {"n_samples", x.size()}};
    if (method == "fanova") {
      for (const auto& s : fanova(forest, ctx.inputs.at("order").get<int>(), names)) push(s);
    } else {
      auto best = incumbent(run, objective, budget, CostMode::highest_seen);
      auto result = lpi(forest, run.configs[best->config_id], run.space,
                        ctx.inputs.at("grid").get<std::size_t>());
      for (const auto& s : result.scores) push(s);
      json variances = json::object();
      for (std::size_t i = 0; i < names.size(); ++i) variances[names[i]] = result.variances[i];
      out.data["variances"] = variances;
      out.data["flat"] = result.flat;
      out.data["incumbent"] = best->config_id;
      if (result.flat) out.warnings.push_back("flat neighborhood: no hyperparameter changes the prediction");
    }
    out.data["scores"] = scores;
    return out;
  }
};

}  // namespace

std::shared_ptr<const Plugin> make_overview_plugin() { return std::make_shared<OverviewPlugin>(); }
std::shared_ptr<const Plugin> make_footprint_plugin() { return std::make_shared<FootprintPlugin>(); }
std::shared_ptr<const Plugin> make_budget_correlation_plugin() {
  return std::make_shared<BudgetCorrelationPlugin>();
}
std::shared_ptr<const Plugin> make_pareto_plugin() { return std::make_shared<ParetoPlugin>(); }
std::shared_ptr<const Plugin> make_importance_plugin() {
  return std::make_shared<ImportancePlugin>();
}

}  // namespace trialscope
