#include "trialscope/run_model.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace trialscope {

// ---------------------------------------------------------------------------
// Values

std::optional<double> as_number(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::nullopt;
}

bool values_equal(const Value& a, const Value& b) {
  auto na = as_number(a);
  auto nb = as_number(b);
  if (na && nb) return *na == *nb;
  return a == b;
}

std::string to_string(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return x;
        } else if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else {
          return nlohmann::json(x).dump();
        }
      },
      v);
}

nlohmann::json to_json(const Value& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ValidationError("unsupported hyperparameter value: " + j.dump());
}

// ---------------------------------------------------------------------------
// Hyperparameter

std::string_view to_string(HpKind kind) {
  switch (kind) {
    case HpKind::continuous: return "continuous";
    case HpKind::integer: return "integer";
    case HpKind::categorical: return "categorical";
    case HpKind::ordinal: return "ordinal";
  }
  return "?";
}

HpKind parse_hp_kind(std::string_view s) {
  if (s == "continuous") return HpKind::continuous;
  if (s == "integer") return HpKind::integer;
  if (s == "categorical") return HpKind::categorical;
  if (s == "ordinal") return HpKind::ordinal;
  throw ValidationError("unknown hyperparameter kind '" + std::string(s) + "'");
}

Hyperparameter Hyperparameter::continuous(std::string name, double lower, double upper,
                                          bool log_scale) {
  Hyperparameter hp;
  hp.name = std::move(name);
  hp.kind = HpKind::continuous;
  hp.lower = lower;
  hp.upper = upper;
  hp.log_scale = log_scale;
  hp.default_value = lower;
  hp.check();
  return hp;
}

Hyperparameter Hyperparameter::integer(std::string name, std::int64_t lower, std::int64_t upper,
                                       bool log_scale) {
  Hyperparameter hp;
  hp.name = std::move(name);
  hp.kind = HpKind::integer;
  hp.lower = static_cast<double>(lower);
  hp.upper = static_cast<double>(upper);
  hp.log_scale = log_scale;
  hp.default_value = lower;
  hp.check();
  return hp;
}

Hyperparameter Hyperparameter::categorical(std::string name, std::vector<Value> choices) {
  Hyperparameter hp;
  hp.name = std::move(name);
  hp.kind = HpKind::categorical;
  hp.choices = std::move(choices);
  if (!hp.choices.empty()) hp.default_value = hp.choices.front();
  hp.check();
  return hp;
}

Hyperparameter Hyperparameter::ordinal(std::string name, std::vector<Value> choices) {
  auto hp = categorical(std::move(name), std::move(choices));
  hp.kind = HpKind::ordinal;
  return hp;
}

Hyperparameter Hyperparameter::when(std::string parent, std::vector<Value> values) const {
  Hyperparameter hp = *this;
  hp.condition = Condition{std::move(parent), std::move(values)};
  return hp;
}

void Hyperparameter::check() const {
  if (name.empty()) throw ValidationError("hyperparameter name must not be empty");
  if (is_numeric()) {
    if (!std::isfinite(lower) || !std::isfinite(upper) || !(lower < upper))
      throw ValidationError("hyperparameter '" + name + "': lower must be < upper");
    if (log_scale && lower <= 0)
      throw ValidationError("hyperparameter '" + name + "': log scale requires lower > 0");
    if (kind == HpKind::integer &&
        (std::floor(lower) != lower || std::floor(upper) != upper))
      throw ValidationError("hyperparameter '" + name + "': integer bounds must be integral");
  } else {
    if (choices.empty())
      throw ValidationError("hyperparameter '" + name + "': choices must not be empty");
    for (std::size_t i = 0; i < choices.size(); ++i)
      for (std::size_t j = i + 1; j < choices.size(); ++j)
        if (values_equal(choices[i], choices[j]))
          throw ValidationError("hyperparameter '" + name + "': duplicate choice " +
                                to_string(choices[i]));
  }
  if (!in_domain(default_value))
    throw ValidationError("hyperparameter '" + name + "': default " +
                          to_string(default_value) + " is outside the domain");
  if (condition && condition->values.empty())
    throw ValidationError("hyperparameter '" + name + "': condition has no activating values");
}

std::optional<std::size_t> Hyperparameter::choice_index(const Value& v) const {
  for (std::size_t i = 0; i < choices.size(); ++i)
    if (values_equal(choices[i], v)) return i;
  return std::nullopt;
}

bool Hyperparameter::in_domain(const Value& v) const {
  if (is_numeric()) {
    auto x = as_number(v);
    if (!x || !std::isfinite(*x) || *x < lower || *x > upper) return false;
    return kind != HpKind::integer || std::floor(*x) == *x;
  }
  return choice_index(v).has_value();
}

Value Hyperparameter::normalize(const Value& v) const {
  if (!in_domain(v))
    throw ValidationError("hyperparameter '" + name + "': value " + to_string(v) +
                          " is outside the domain");
  switch (kind) {
    case HpKind::continuous: return *as_number(v);
    case HpKind::integer: return static_cast<std::int64_t>(*as_number(v));
    default: return choices[*choice_index(v)];
  }
}

double Hyperparameter::encode(const Value& v) const {
  if (!in_domain(v))
    throw ValidationError("hyperparameter '" + name + "': value " + to_string(v) +
                          " is outside the domain");
  if (is_numeric()) {
    double x = *as_number(v);
    if (log_scale) return (std::log(x) - std::log(lower)) / (std::log(upper) - std::log(lower));
    return (x - lower) / (upper - lower);
  }
  if (choices.size() == 1) return 0.0;
  return static_cast<double>(*choice_index(v)) / static_cast<double>(choices.size() - 1);
}

Value Hyperparameter::decode(double unit) const {
  unit = std::clamp(unit, 0.0, 1.0);
  if (is_numeric()) {
    double x = log_scale ? std::exp(std::log(lower) + unit * (std::log(upper) - std::log(lower)))
                         : lower + unit * (upper - lower);
    x = std::clamp(x, lower, upper);
    if (kind == HpKind::integer) return static_cast<std::int64_t>(std::llround(x));
    return x;
  }
  auto idx = static_cast<std::size_t>(std::llround(unit * static_cast<double>(choices.size() - 1)));
  return choices[std::min(idx, choices.size() - 1)];
}

// ---------------------------------------------------------------------------
// ConfigurationSpace

ConfigurationSpace::ConfigurationSpace(std::vector<Hyperparameter> hyperparameters)
    : hps_(std::move(hyperparameters)) {
  for (std::size_t i = 0; i < hps_.size(); ++i) {
    hps_[i].check();
    if (!index_.emplace(hps_[i].name, i).second)
      throw ValidationError("duplicate hyperparameter name '" + hps_[i].name + "'");
  }

  std::vector<std::vector<std::size_t>> children(hps_.size());
  std::vector<std::size_t> indegree(hps_.size(), 0);
  for (std::size_t i = 0; i < hps_.size(); ++i) {
    const auto& cond = hps_[i].condition;
    if (!cond) continue;
    auto parent = index_.find(cond->parent);
    if (parent == index_.end())
      throw ValidationError("hyperparameter '" + hps_[i].name + "': condition parent '" +
                            cond->parent + "' does not exist");
    const auto& p = hps_[parent->second];
    for (const auto& v : cond->values)
      if (!p.in_domain(v))
        throw ValidationError("hyperparameter '" + hps_[i].name + "': activating value " +
                              to_string(v) + " is outside the domain of '" + p.name + "'");
    children[parent->second].push_back(i);
    ++indegree[i];
  }

  // Kahn's algorithm; the min-heap keeps declaration order among ready nodes.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < hps_.size(); ++i)
    if (indegree[i] == 0) ready.push(i);
  while (!ready.empty()) {
    auto i = ready.top();
    ready.pop();
    topo_.push_back(i);
    for (auto c : children[i])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (topo_.size() != hps_.size())
    throw ValidationError("condition graph of the configuration space contains a cycle");
}

std::optional<std::size_t> ConfigurationSpace::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const Hyperparameter& ConfigurationSpace::at(std::string_view name) const {
  auto i = index_of(name);
  if (!i) throw ValidationError("unknown hyperparameter '" + std::string(name) + "'");
  return hps_[*i];
}

namespace {

bool same_values(const std::vector<Value>& a, const std::vector<Value>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!values_equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

bool ConfigurationSpace::same_structure(const ConfigurationSpace& other, std::string* why) const {
  auto fail = [&](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  if (size() != other.size())
    return fail("spaces have " + std::to_string(size()) + " and " +
                std::to_string(other.size()) + " hyperparameters");
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = hps_[i];
    const auto& b = other.hps_[i];
    if (a.name != b.name) return fail("hyperparameter " + std::to_string(i) + " is '" + a.name +
                                      "' vs '" + b.name + "'");
    if (a.kind != b.kind) return fail("hyperparameter '" + a.name + "' differs in kind");
    if (a.is_numeric() &&
        (a.lower != b.lower || a.upper != b.upper || a.log_scale != b.log_scale))
      return fail("hyperparameter '" + a.name + "' differs in bounds");
    if (!a.is_numeric() && !same_values(a.choices, b.choices))
      return fail("hyperparameter '" + a.name + "' differs in choices");
    if (a.condition.has_value() != b.condition.has_value() ||
        (a.condition && (a.condition->parent != b.condition->parent ||
                         !same_values(a.condition->values, b.condition->values))))
      return fail("hyperparameter '" + a.name + "' differs in condition");
  }
  return true;
}

// ---------------------------------------------------------------------------
// Configurations

bool Configuration::operator==(const Configuration& other) const {
  if (values.size() != other.values.size()) return false;
  auto it = other.values.begin();
  for (const auto& [k, v] : values) {
    if (k != it->first || !values_equal(v, it->second)) return false;
    ++it;
  }
  return true;
}

namespace {

std::vector<bool> activity(const Configuration& config, const ConfigurationSpace& space) {
  for (const auto& [name, value] : config.values)
    if (!space.index_of(name))
      throw ValidationError("configuration references unknown hyperparameter '" + name + "'");

  std::vector<bool> active(space.size(), false);
  for (auto i : space.topological_order()) {
    const auto& hp = space[i];
    if (!hp.condition) {
      active[i] = true;
      continue;
    }
    auto p = *space.index_of(hp.condition->parent);
    if (!active[p]) continue;
    auto it = config.values.find(hp.condition->parent);
    if (it == config.values.end()) continue;
    for (const auto& v : hp.condition->values)
      if (values_equal(v, it->second)) {
        active[i] = true;
        break;
      }
  }
  return active;
}

}  // namespace

std::set<std::string> active_hyperparameters(const Configuration& config,
                                             const ConfigurationSpace& space) {
  auto active = activity(config, space);
  std::set<std::string> names;
  for (std::size_t i = 0; i < space.size(); ++i)
    if (active[i]) names.insert(space[i].name);
  return names;
}

void validate_configuration(const Configuration& config, const ConfigurationSpace& space) {
  auto active = activity(config, space);
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& hp = space[i];
    auto it = config.values.find(hp.name);
    if (active[i]) {
      if (it == config.values.end())
        throw ValidationError("active hyperparameter '" + hp.name + "' has no value");
      if (!hp.in_domain(it->second))
        throw ValidationError("hyperparameter '" + hp.name + "': value " +
                              to_string(it->second) + " is outside the domain");
    } else if (it != config.values.end()) {
      throw ValidationError("inactive hyperparameter '" + hp.name + "' must not have a value");
    }
  }
}

Configuration normalize_configuration(const Configuration& config,
                                      const ConfigurationSpace& space) {
  validate_configuration(config, space);
  Configuration out;
  for (const auto& [name, value] : config.values)
    out.values.emplace(name, space.at(name).normalize(value));
  return out;
}

std::vector<double> encode(const Configuration& config, const ConfigurationSpace& space) {
  auto active = activity(config, space);
  std::vector<double> row(space.size(), kInactive);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (!active[i]) continue;
    auto it = config.values.find(space[i].name);
    if (it == config.values.end())
      throw ValidationError("active hyperparameter '" + space[i].name + "' has no value");
    row[i] = space[i].encode(it->second);
  }
  return row;
}

nlohmann::json to_json(const Configuration& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : config.values) j[k] = to_json(v);
  return j;
}

Configuration configuration_from_json(const nlohmann::json& values) {
  if (!values.is_object()) throw ValidationError("configuration values must be an object");
  Configuration c;
  for (const auto& [k, v] : values.items()) c.values.emplace(k, value_from_json(v));
  return c;
}

// ---------------------------------------------------------------------------
// Objectives, statuses

std::string_view to_string(Direction d) {
  return d == Direction::minimize ? "minimize" : "maximize";
}

Direction parse_direction(std::string_view s) {
  if (s == "minimize") return Direction::minimize;
  if (s == "maximize") return Direction::maximize;
  throw ValidationError("unknown objective direction '" + std::string(s) + "'");
}

std::string_view to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::success: return "success";
    case TrialStatus::crashed: return "crashed";
    case TrialStatus::timeout: return "timeout";
    case TrialStatus::memout: return "memout";
    case TrialStatus::running: return "running";
    case TrialStatus::not_evaluated: return "not_evaluated";
  }
  return "?";
}

TrialStatus parse_status(std::string_view s) {
  if (s == "success") return TrialStatus::success;
  if (s == "crashed") return TrialStatus::crashed;
  if (s == "timeout") return TrialStatus::timeout;
  if (s == "memout") return TrialStatus::memout;
  if (s == "running") return TrialStatus::running;
  if (s == "not_evaluated") return TrialStatus::not_evaluated;
  throw ValidationError("unknown trial status '" + std::string(s) + "'");
}

bool is_failure(TrialStatus s) noexcept {
  return s == TrialStatus::crashed || s == TrialStatus::timeout || s == TrialStatus::memout;
}

// ---------------------------------------------------------------------------
// Run

std::size_t Run::objective_index(std::string_view name) const {
  for (std::size_t i = 0; i < objectives.size(); ++i)
    if (objectives[i].name == name) return i;
  throw NotFoundError("run '" + id + "' has no objective '" + std::string(name) + "'");
}

double Run::highest_budget() const {
  if (budgets.empty()) throw ValidationError("run '" + id + "' has no budgets");
  return budgets.back();
}

bool Run::has_budget(double b) const {
  return std::binary_search(budgets.begin(), budgets.end(), b);
}

void validate_run(const Run& run) {
  if (run.objectives.empty()) throw ValidationError("run must declare at least one objective");
  std::set<std::string> names;
  for (const auto& o : run.objectives) {
    if (o.name.empty()) throw ValidationError("objective name must not be empty");
    if (!names.insert(o.name).second)
      throw ValidationError("duplicate objective '" + o.name + "'");
    if (o.lower && o.upper && *o.lower > *o.upper)
      throw ValidationError("objective '" + o.name + "': lower bound exceeds upper bound");
  }
  if (run.budgets.empty()) throw ValidationError("run must declare at least one budget");
  for (std::size_t i = 0; i < run.budgets.size(); ++i) {
    if (!std::isfinite(run.budgets[i])) throw ValidationError("budgets must be finite");
    if (i > 0 && !(run.budgets[i - 1] < run.budgets[i]))
      throw ValidationError("budgets must be strictly ascending");
  }
  for (std::size_t c = 0; c < run.configs.size(); ++c) {
    try {
      validate_configuration(run.configs[c], run.space);
    } catch (const ValidationError& e) {
      throw ValidationError("config " + std::to_string(c) + ": " + e.what());
    }
  }
  std::set<std::pair<std::size_t, double>> seen;
  for (std::size_t t = 0; t < run.trials.size(); ++t) {
    const auto& trial = run.trials[t];
    try {
      validate_trial(run, trial);
    } catch (const ValidationError& e) {
      throw ValidationError("trial " + std::to_string(t) + ": " + e.what());
    }
    if (!seen.emplace(trial.config_id, trial.budget).second)
      throw ValidationError("trial " + std::to_string(t) + ": duplicate (config_id, budget) pair");
  }
}

void validate_trial(const Run& run, const Trial& trial) {
  if (trial.config_id >= run.configs.size())
    throw ValidationError("unknown config_id " + std::to_string(trial.config_id));
  if (!run.has_budget(trial.budget))
    throw ValidationError("budget " + nlohmann::json(trial.budget).dump() +
                          " is not one of the run's budgets");
  if (trial.status == TrialStatus::not_evaluated)
    throw ValidationError("status not_evaluated cannot be recorded");
  if (trial.status == TrialStatus::success) {
    if (!trial.costs || trial.costs->size() != run.objectives.size())
      throw ValidationError("successful trial needs one cost per objective");
    for (double c : *trial.costs)
      if (!std::isfinite(c)) throw ValidationError("costs must be finite");
  } else if (trial.costs) {
    throw ValidationError("only successful trials carry costs");
  }
}

// ---------------------------------------------------------------------------
// Queries

std::map<std::size_t, CostEntry> cost_entries_at_budget(const Run& run,
                                                        std::string_view objective,
                                                        double budget, CostMode mode) {
  const auto k = run.objective_index(objective);
  if (mode == CostMode::exact && !run.has_budget(budget))
    throw ValidationError("budget " + nlohmann::json(budget).dump() + " is not one of run '" +
                          run.id + "' budgets");
  std::map<std::size_t, CostEntry> out;
  for (std::size_t t = 0; t < run.trials.size(); ++t) {
    const auto& trial = run.trials[t];
    if (trial.status != TrialStatus::success || !trial.costs) continue;
    if (mode == CostMode::exact ? trial.budget != budget : trial.budget > budget) continue;
    CostEntry entry{(*trial.costs)[k], trial.budget, t};
    auto [it, inserted] = out.emplace(trial.config_id, entry);
    if (!inserted && trial.budget > it->second.budget) it->second = entry;
  }
  return out;
}

std::map<std::size_t, double> costs_at_budget(const Run& run, std::string_view objective,
                                              double budget, CostMode mode) {
  std::map<std::size_t, double> out;
  for (const auto& [id, e] : cost_entries_at_budget(run, objective, budget, mode))
    out.emplace(id, e.cost);
  return out;
}

std::optional<Incumbent> incumbent(const Run& run, std::string_view objective, double budget,
                                   CostMode mode) {
  const bool maximize = run.objective(objective).direction == Direction::maximize;
  std::optional<Incumbent> best;
  std::size_t best_trial = 0;
  for (const auto& [id, e] : cost_entries_at_budget(run, objective, budget, mode)) {
    bool better = !best || (maximize ? e.cost > best->cost : e.cost < best->cost) ||
                  (e.cost == best->cost && e.trial_index < best_trial);
    if (better) {
      best = Incumbent{id, e.cost};
      best_trial = e.trial_index;
    }
  }
  return best;
}

Run merge_group(const Group& group, std::span<const Run* const> runs) {
  if (runs.empty()) throw ValidationError("group '" + group.name + "' has no members");
  const Run& first = *runs.front();
  Run view;
  view.id = group.name;
  view.space = first.space;
  view.objectives = first.objectives;
  view.meta = {{"group", group.name}, {"members", nlohmann::json::array()}};

  std::set<double> budgets;
  std::string hashes;
  for (const Run* run : runs) {
    if (run->objectives.size() != first.objectives.size() ||
        !std::equal(run->objectives.begin(), run->objectives.end(), first.objectives.begin()))
      throw ValidationError("objective mismatch: run '" + run->id +
                            "' does not share the objectives of run '" + first.id + "'");
    std::string why;
    if (!run->space.same_structure(first.space, &why))
      throw ValidationError("configuration space mismatch between runs '" + first.id + "' and '" +
                            run->id + "': " + why);

    view.meta["members"].push_back(run->id);
    budgets.insert(run->budgets.begin(), run->budgets.end());
    const std::size_t offset = view.configs.size();
    for (std::size_t c = 0; c < run->configs.size(); ++c) {
      view.configs.push_back(run->configs[c]);
      view.config_origin.push_back(run->config_origin.empty() ? run->id : run->config_origin[c]);
    }
    for (const auto& trial : run->trials) {
      Trial t = trial;
      t.config_id += offset;
      if (t.source_run.empty()) t.source_run = run->id;
      view.trials.push_back(std::move(t));
    }
    if (!hashes.empty()) hashes += ':';
    hashes += run->content_hash;
    view.modified_at = std::max(view.modified_at, run->modified_at);
  }
  view.budgets.assign(budgets.begin(), budgets.end());
  view.content_hash = std::move(hashes);
  return view;
}

}  // namespace trialscope
