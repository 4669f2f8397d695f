#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"
#include "trialscope/run_model.hpp"

using namespace trialscope;
using testing_support::str;

namespace {

ConfigurationSpace ae_space() {
  return ConfigurationSpace({
      Hyperparameter::categorical("model", {str("ae"), str("vae")}),
      Hyperparameter::integer("latent_dim", 2, 64).when("model", {str("vae")}),
  });
}

Configuration cfg(std::initializer_list<std::pair<const std::string, Value>> v) {
  Configuration c;
  for (const auto& [k, x] : v) c.values.emplace(k, x);
  return c;
}

Run tiny_run(std::string id = "r", std::vector<Objective> objectives = {{"cost", Direction::minimize}}) {
  Run run;
  run.id = std::move(id);
  run.space = ConfigurationSpace({Hyperparameter::continuous("x", 0.0, 1.0)});
  run.objectives = std::move(objectives);
  run.budgets = {11.0, 33.0, 100.0};
  return run;
}

Trial ok(std::size_t config, double budget, double cost, std::size_t n_obj = 1) {
  Trial t;
  t.config_id = config;
  t.budget = budget;
  t.costs = std::vector<double>(n_obj, cost);
  return t;
}

Trial failed(std::size_t config, double budget, TrialStatus s = TrialStatus::crashed) {
  Trial t;
  t.config_id = config;
  t.budget = budget;
  t.status = s;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Hyperparameters and spaces

TEST(Hyperparameter, RejectsBrokenDomains) {
  EXPECT_THROW(Hyperparameter::continuous("x", 1.0, 1.0).check(), ValidationError);
  EXPECT_THROW(Hyperparameter::continuous("x", 0.0, 1.0, true).check(), ValidationError);
  EXPECT_THROW(Hyperparameter::categorical("c", {}).check(), ValidationError);
  EXPECT_THROW(Hyperparameter::categorical("c", {str("a"), str("a")}).check(), ValidationError);
  auto hp = Hyperparameter::continuous("x", 0.0, 1.0);
  hp.default_value = 2.0;
  EXPECT_THROW(hp.check(), ValidationError);
  EXPECT_NO_THROW(Hyperparameter::integer("n", 1, 8, true).check());
}

TEST(Hyperparameter, NumericValuesCompareAcrossRepresentations) {
  EXPECT_TRUE(values_equal(Value(std::int64_t{3}), Value(3.0)));
  EXPECT_FALSE(values_equal(Value(std::string("3")), Value(3.0)));
  auto hp = Hyperparameter::integer("n", 1, 8);
  EXPECT_TRUE(hp.in_domain(Value(4.0)));
  EXPECT_FALSE(hp.in_domain(Value(4.5)));
  EXPECT_EQ(std::get<std::int64_t>(hp.normalize(Value(4.0))), 4);
}

TEST(ConfigurationSpace, RejectsDuplicatesMissingParentsAndCycles) {
  auto x = Hyperparameter::continuous("x", 0.0, 1.0);
  EXPECT_THROW(ConfigurationSpace({x, x}), ValidationError);
  EXPECT_THROW(ConfigurationSpace({x.when("nope", {Value(1.0)})}), ValidationError);

  auto a = Hyperparameter::categorical("a", {str("u"), str("v")}).when("b", {str("u")});
  auto b = Hyperparameter::categorical("b", {str("u"), str("v")}).when("a", {str("u")});
  EXPECT_THROW(ConfigurationSpace({a, b}), ValidationError);
}

TEST(ConfigurationSpace, TopologicalOrderPutsParentsFirst) {
  ConfigurationSpace space({
      Hyperparameter::integer("child", 1, 4).when("parent", {str("on")}),
      Hyperparameter::categorical("parent", {str("on"), str("off")}),
  });
  auto order = space.topological_order();
  ASSERT_EQ(order.size(), 2u);
  EXPECT_EQ(space[order[0]].name, "parent");
  EXPECT_EQ(space[order[1]].name, "child");
}

TEST(ActiveHyperparameters, FollowConditions) {
  ConfigurationSpace plain({Hyperparameter::continuous("x", 0.0, 1.0)});
  EXPECT_EQ(active_hyperparameters(cfg({{"x", 0.3}}), plain), std::set<std::string>{"x"});

  auto space = ae_space();
  EXPECT_EQ(active_hyperparameters(cfg({{"model", str("ae")}}), space),
            std::set<std::string>{"model"});
  EXPECT_EQ(active_hyperparameters(cfg({{"model", str("vae")}, {"latent_dim", std::int64_t{8}}}), space),
            (std::set<std::string>{"model", "latent_dim"}));
  EXPECT_THROW(active_hyperparameters(cfg({{"model", str("ae")}, {"bogus", 1.0}}), space),
               ValidationError);
}

TEST(ActiveHyperparameters, ChildInactiveWhenParentInactive) {
  ConfigurationSpace space({
      Hyperparameter::categorical("a", {str("on"), str("off")}),
      Hyperparameter::categorical("b", {str("on"), str("off")}).when("a", {str("on")}),
      Hyperparameter::continuous("c", 0.0, 1.0).when("b", {str("on")}),
  });
  auto active = active_hyperparameters(cfg({{"a", str("off")}}), space);
  EXPECT_EQ(active, std::set<std::string>{"a"});
  active = active_hyperparameters(cfg({{"a", str("on")}, {"b", str("on")}, {"c", 0.5}}), space);
  EXPECT_EQ(active.size(), 3u);
}

TEST(ValidateConfiguration, ActiveNeedsValueInactiveMustBeAbsent) {
  auto space = ae_space();
  EXPECT_NO_THROW(validate_configuration(cfg({{"model", str("ae")}}), space));
  EXPECT_THROW(validate_configuration(cfg({{"model", str("vae")}}), space), ValidationError);
  EXPECT_THROW(validate_configuration(cfg({{"model", str("ae")}, {"latent_dim", std::int64_t{8}}}), space),
               ValidationError);
  EXPECT_THROW(validate_configuration(cfg({{"model", str("vae")}, {"latent_dim", std::int64_t{99}}}), space),
               ValidationError);
}

TEST(Encode, MapsDomainsToUnitInterval) {
  ConfigurationSpace space({
      Hyperparameter::continuous("x", 0.0, 10.0),
      Hyperparameter::continuous("lr", 1e-4, 1.0, true),
      Hyperparameter::ordinal("size", {str("s"), str("m"), str("l")}),
      Hyperparameter::categorical("one", {str("only")}),
  });
  auto e = encode(cfg({{"x", 5.0}, {"lr", 1e-2}, {"size", str("m")}, {"one", str("only")}}), space);
  ASSERT_EQ(e.size(), 4u);
  EXPECT_DOUBLE_EQ(e[0], 0.5);
  EXPECT_NEAR(e[1], 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(e[2], 0.5);
  EXPECT_DOUBLE_EQ(e[3], 0.0);
}

TEST(Encode, InactiveSlotIsSentinel) {
  auto e = encode(cfg({{"model", str("ae")}}), ae_space());
  EXPECT_EQ(e, (std::vector<double>{0.0, kInactive}));
}

TEST(Encode, OutOfDomainIsRejected) {
  ConfigurationSpace space({Hyperparameter::continuous("x", 0.0, 10.0)});
  EXPECT_THROW(encode(cfg({{"x", 11.0}}), space), ValidationError);
}

TEST(Encode, StrictlyMonotoneForNumericKinds) {
  auto hp = Hyperparameter::integer("n", 1, 1000, true);
  double prev = -1.0;
  for (std::int64_t v = 1; v <= 1000; ++v) {
    const double e = hp.encode(Value(v));
    EXPECT_GT(e, prev);
    prev = e;
  }
}

// ---------------------------------------------------------------------------
// Runs

TEST(ValidateRun, ChecksTrialInvariants) {
  auto run = tiny_run();
  run.configs = {cfg({{"x", 0.1}})};
  run.trials = {ok(0, 11.0, 0.5)};
  EXPECT_NO_THROW(validate_run(run));

  auto bad = run;
  bad.trials.push_back(ok(0, 11.0, 0.4));
  EXPECT_THROW(validate_run(bad), ValidationError);  // duplicate (config, budget)

  bad = run;
  bad.trials = {ok(0, 12.0, 0.4)};
  EXPECT_THROW(validate_run(bad), ValidationError);  // budget not in B

  bad = run;
  bad.trials = {ok(0, 11.0, 0.4, 2)};
  EXPECT_THROW(validate_run(bad), ValidationError);  // cost count

  bad = run;
  bad.trials = {ok(0, 11.0, std::nan(""))};
  EXPECT_THROW(validate_run(bad), ValidationError);

  bad = run;
  auto crashed = failed(0, 11.0);
  crashed.costs = std::vector<double>{1.0};
  bad.trials = {crashed};
  EXPECT_THROW(validate_run(bad), ValidationError);

  bad = run;
  bad.budgets = {33.0, 11.0};
  EXPECT_THROW(validate_run(bad), ValidationError);

  bad = run;
  bad.objectives = {{"a", Direction::minimize, 2.0, 1.0}};
  EXPECT_THROW(validate_run(bad), ValidationError);
}

TEST(CostsAtBudget, ExactAndHighestSeen) {
  auto run = tiny_run();
  run.configs = {cfg({{"x", 0.1}}), cfg({{"x", 0.2}})};
  run.trials = {ok(0, 11.0, 0.5), ok(0, 33.0, 0.3), failed(1, 11.0), failed(1, 33.0)};
  auto exact = costs_at_budget(run, "cost", 33.0, CostMode::exact);
  EXPECT_EQ(exact, (std::map<std::size_t, double>{{0, 0.3}}));
  auto seen = costs_at_budget(run, "cost", 100.0, CostMode::highest_seen);
  EXPECT_EQ(seen, (std::map<std::size_t, double>{{0, 0.3}}));
  auto low = costs_at_budget(run, "cost", 11.0, CostMode::highest_seen);
  EXPECT_EQ(low, (std::map<std::size_t, double>{{0, 0.5}}));
  EXPECT_THROW(costs_at_budget(run, "nope", 11.0, CostMode::exact), NotFoundError);
}

TEST(Incumbent, ArgminArgmaxAndTies) {
  auto run = tiny_run();
  run.configs = {cfg({{"x", 0.1}}), cfg({{"x", 0.2}}), cfg({{"x", 0.3}})};
  run.trials = {ok(0, 11.0, 0.4), ok(1, 11.0, 0.2), ok(2, 11.0, 0.9)};
  auto best = incumbent(run, "cost", 11.0);
  ASSERT_TRUE(best);
  EXPECT_EQ(best->config_id, 1u);
  EXPECT_DOUBLE_EQ(best->cost, 0.2);

  run.objectives[0].direction = Direction::maximize;
  EXPECT_EQ(incumbent(run, "cost", 11.0)->config_id, 2u);

  run.objectives[0].direction = Direction::minimize;
  run.trials = {ok(1, 11.0, 0.2), ok(0, 11.0, 0.2)};
  EXPECT_EQ(incumbent(run, "cost", 11.0)->config_id, 1u);  // evaluated first

  run.trials = {failed(0, 11.0), failed(1, 11.0, TrialStatus::timeout)};
  EXPECT_FALSE(incumbent(run, "cost", 11.0).has_value());
}

TEST(Incumbent, MatchesExhaustiveMinimumOnRandomRuns) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto run = tiny_run();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int c = 0; c < 300; ++c) {
      run.configs.push_back(cfg({{"x", u(rng)}}));
      // Few distinct values so ties occur.
      run.trials.push_back(ok(run.configs.size() - 1, 33.0, std::floor(u(rng) * 20) / 20));
    }
    auto costs = costs_at_budget(run, "cost", 33.0, CostMode::exact);
    double best = 1e9;
    for (const auto& [id, c] : costs) best = std::min(best, c);
    auto inc = incumbent(run, "cost", 33.0);
    ASSERT_TRUE(inc);
    EXPECT_EQ(inc->cost, best);
    for (std::size_t t = 0; t < run.trials.size(); ++t)
      if ((*run.trials[t].costs)[0] == best) {
        EXPECT_EQ(inc->config_id, run.trials[t].config_id);
        break;
      }
  }
}

TEST(MergeGroup, ConcatenatesAndReindexes) {
  auto a = tiny_run("a");
  a.configs = {cfg({{"x", 0.1}}), cfg({{"x", 0.2}})};
  a.trials = {ok(0, 11.0, 1), ok(1, 11.0, 2), ok(0, 33.0, 3)};
  a.content_hash = "ha";
  auto b = tiny_run("b");
  b.budgets = {11.0, 50.0};
  b.configs = {cfg({{"x", 0.3}})};
  b.trials = {ok(0, 11.0, 4), ok(0, 50.0, 5)};
  b.content_hash = "hb";

  std::vector<const trialscope::Run*> members{&a, &b};
  auto view = merge_group({"g", {"a", "b"}}, members);
  EXPECT_EQ(view.trials.size(), a.trials.size() + b.trials.size());
  EXPECT_EQ(view.configs.size(), 3u);
  EXPECT_EQ(view.trials[3].config_id, 2u);
  EXPECT_EQ(view.trials[3].source_run, "b");
  EXPECT_EQ(view.trials[0].source_run, "a");
  EXPECT_EQ(view.config_origin, (std::vector<std::string>{"a", "a", "b"}));
  EXPECT_EQ(view.budgets, (std::vector<double>{11.0, 33.0, 50.0, 100.0}));
  EXPECT_EQ(view.content_hash, "ha:hb");
  EXPECT_NO_THROW(validate_run(view));
}

TEST(MergeGroup, SingletonEqualsMember) {
  auto a = tiny_run("a");
  a.configs = {cfg({{"x", 0.1}})};
  a.trials = {ok(0, 11.0, 1)};
  std::vector<const trialscope::Run*> members{&a};
  auto view = merge_group({"g", {"a"}}, members);
  EXPECT_EQ(view.configs.size(), 1u);
  EXPECT_EQ(view.trials.size(), 1u);
  EXPECT_EQ(view.budgets, a.budgets);
  EXPECT_EQ(*view.trials[0].costs, *a.trials[0].costs);
}

TEST(MergeGroup, RejectsObjectiveAndSpaceMismatch) {
  auto a = tiny_run("a");
  auto b = tiny_run("b", {{"cost", Direction::minimize}, {"time", Direction::minimize}});
  std::vector<const trialscope::Run*> members{&a, &b};
  try {
    merge_group({"g", {"a", "b"}}, members);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("objective mismatch"), std::string::npos);
  }

  auto c = tiny_run("c");
  c.space = ConfigurationSpace({Hyperparameter::continuous("x", 0.0, 2.0)});
  std::vector<const trialscope::Run*> mixed{&a, &c};
  EXPECT_THROW(merge_group({"g", {"a", "c"}}, mixed), ValidationError);
  EXPECT_THROW(merge_group({"g", {}}, std::span<const trialscope::Run* const>{}), ValidationError);
}

TEST(Serialization, ConfigurationRoundTrips) {
  auto c = cfg({{"model", str("vae")}, {"latent_dim", std::int64_t{8}}, {"lr", 0.001}, {"flag", true}});
  auto back = configuration_from_json(to_json(c));
  EXPECT_EQ(back, c);
  EXPECT_TRUE(std::holds_alternative<std::int64_t>(back.values.at("latent_dim")));
  EXPECT_TRUE(std::holds_alternative<bool>(back.values.at("flag")));
}
