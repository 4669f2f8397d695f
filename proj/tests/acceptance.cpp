// Acceptance suite: one line per criterion, nonzero exit when any fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "test_support.hpp"
#include "trialscope/analysis.hpp"
#include "trialscope/footprint.hpp"
#include "trialscope/http_api.hpp"
#include "trialscope/importance.hpp"
#include "trialscope/service.hpp"

using namespace trialscope;
using namespace std::chrono_literals;
using nlohmann::json;
using testing_support::str;

namespace {

// Collects the first few failed checks of one criterion.
class Check {
public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_.size() < 5) failures_.push_back(what);
    ++count_;
  }
  bool ok() const { return count_ == 0; }
  std::string summary() const {
    std::string s;
    for (const auto& f : failures_) s += "\n    " + f;
    if (count_ > failures_.size())
      s += "\n    ... and " + std::to_string(count_ - failures_.size()) + " more";
    return s;
  }

private:
  std::vector<std::string> failures_;
  std::size_t count_ = 0;
};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

// ---------------------------------------------------------------------------

void status_report(Check& c) {
  const std::string expected =
      "Taking all evaluated trials into account, 96.66% have been successful. The other trials "
      "are crashed (3.24%). Moreover, 47.96%/30.11%/21.78% of the configurations were evaluated "
      "on budget 11.11/33.33/100.0, respectively.";
  const auto got = render_status_report(status_breakdown(testing_support::status_report_run()));
  c.expect(got == expected, "got: " + got);
}

void pareto_oracle(Check& c) {
  const std::array<Direction, 2> dirs = {Direction::minimize, Direction::maximize};
  std::size_t sets = 0;
  for (auto dx : dirs)
    for (auto dy : dirs)
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed * 4 + (dx == Direction::maximize) * 2 + (dy == Direction::maximize));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<ParetoPoint> pts;
        for (std::size_t i = 0; i < 500; ++i) {
          double x = u(rng), y = u(rng);
          // Every other set is coarsened so that ties and duplicates occur.
          if (seed % 2) {
            x = std::round(x * 20) / 20;
            y = std::round(y * 20) / 20;
          }
          pts.push_back({i, x, y});
        }
        auto got = pareto_front(pts, dx, dy);
        auto better_eq = [](double a, double b, Direction d) {
          return d == Direction::minimize ? a <= b : a >= b;
        };
        for (std::size_t i = 0; i < pts.size(); ++i) {
          bool dominated = false;
          for (std::size_t j = 0; j < pts.size() && !dominated; ++j)
            dominated = better_eq(pts[j].x, pts[i].x, dx) && better_eq(pts[j].y, pts[i].y, dy) &&
                        (pts[j].x != pts[i].x || pts[j].y != pts[i].y);
          c.expect(got[i] == dominated, "seed " + std::to_string(seed) + " point " +
                                            std::to_string(i) + " flag differs from oracle");
        }
        ++sets;
      }
  c.expect(sets == 80, "expected 80 point sets");
}

TreeNode node(int feature, double threshold, int left, int right, double value = 0.0) {
  TreeNode n;
  n.feature = feature;
  n.threshold = threshold;
  n.left = left;
  n.right = right;
  n.value = value;
  return n;
}

void fanova_analytic(Check& c) {
  const double f[2][2] = {{3.0, -1.0}, {0.5, 2.0}};
  RegressionTree tree({node(0, 0.5, 1, 4), node(1, 0.5, 2, 3), node(-1, 0, -1, -1, f[0][0]),
                       node(-1, 0, -1, -1, f[0][1]), node(1, 0.5, 5, 6),
                       node(-1, 0, -1, -1, f[1][0]), node(-1, 0, -1, -1, f[1][1])});
  ImportanceForest forest({tree}, std::vector<FeatureDomain>(2, FeatureDomain::discrete({0, 1})));
  auto scores = fanova(forest, 2);

  // Exhaustive two-way ANOVA on the 4-cell table.
  double mean = 0;
  for (auto& row : f)
    for (double v : row) mean += v / 4;
  double total = 0, v0 = 0, v1 = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) total += (f[a][b] - mean) * (f[a][b] - mean) / 4;
  for (int a = 0; a < 2; ++a) v0 += std::pow((f[a][0] + f[a][1]) / 2 - mean, 2) / 2;
  for (int b = 0; b < 2; ++b) v1 += std::pow((f[0][b] + f[1][b]) / 2 - mean, 2) / 2;
  const double want[3] = {v0 / total, v1 / total, (total - v0 - v1) / total};

  c.expect(scores.size() == 3, "expected 2 singletons and 1 pair");
  for (std::size_t i = 0; i < 3 && i < scores.size(); ++i)
    c.expect(std::fabs(scores[i].mean - want[i]) <= 1e-9,
             "component " + std::to_string(i) + ": " + fmt(scores[i].mean) + " vs " + fmt(want[i]));
}

void fanova_recovery(Check& c) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> row(5);
    for (auto& v : row) v = u(rng);
    y.push_back(row[0]);
    x.push_back(std::move(row));
  }
  auto scores = fanova(fit_forest(x, y, 16, 2024), 1);
  c.expect(scores[0].mean >= 0.85, "importance(x) = " + fmt(scores[0].mean));
  for (std::size_t i = 1; i < 5; ++i)
    c.expect(scores[i].mean <= 0.05, "importance(y" + std::to_string(i) + ") = " + fmt(scores[i].mean));
}

struct QuadraticSurrogate {
  std::size_t n_trees() const { return 1; }
  double predict_tree(std::size_t, std::span<const double> v) const {
    return (v[0] - 0.5) * (v[0] - 0.5) + 0.01 * (v[1] - 0.5) * (v[1] - 0.5);
  }
};

void lpi_ratio(Check& c) {
  ConfigurationSpace space({Hyperparameter::continuous("x", 0.0, 1.0),
                            Hyperparameter::continuous("y", 0.0, 1.0)});
  const std::size_t grid = 100;
  auto dims = lpi_dimensions(Configuration{{{"x", 0.5}, {"y", 0.5}}}, space, grid);
  const double incumbent[] = {0.5, 0.5};
  auto result = lpi(QuadraticSurrogate{}, std::span<const double>(incumbent),
                    std::span<const LpiDimension>(dims));

  // The analytic function on the same evenly spaced grid.
  auto analytic = [&](double weight) {
    std::vector<double> v(grid);
    for (std::size_t k = 0; k < grid; ++k) {
      const double p = static_cast<double>(k) / static_cast<double>(grid - 1);
      v[k] = weight * (p - 0.5) * (p - 0.5);
    }
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / grid;
    double s = 0;
    for (double e : v) s += (e - m) * (e - m);
    return s / grid;
  };
  const double vx = analytic(1.0), vy = analytic(0.01);
  c.expect(std::fabs(result.variances[0] - vx) <= 0.1 * vx,
           "variance(x) " + fmt(result.variances[0]) + " vs " + fmt(vx));
  c.expect(std::fabs(result.variances[1] - vy) <= 0.1 * vy,
           "variance(y) " + fmt(result.variances[1]) + " vs " + fmt(vy));
  c.expect(result.scores[0].mean > result.scores[1].mean, "importance(x) <= importance(y)");
}

trialscope::Run two_budget_run(const std::vector<double>& low, const std::vector<double>& high) {
  trialscope::Run run;
  run.id = "corr";
  run.space = ConfigurationSpace({Hyperparameter::continuous("x", 0.0, 1.0)});
  run.objectives = {{"cost", Direction::minimize}};
  run.budgets = {1.0, 2.0};
  for (std::size_t i = 0; i < low.size(); ++i) {
    run.configs.push_back(Configuration{{{"x", static_cast<double>(i) / static_cast<double>(low.size())}}});
    for (auto [budget, cost] : {std::pair{1.0, low[i]}, std::pair{2.0, high[i]}}) {
      Trial t;
      t.config_id = i;
      t.budget = budget;
      t.costs = std::vector<double>{cost};
      run.trials.push_back(t);
    }
  }
  validate_run(run);
  return run;
}

void budget_correlation_oracle(Check& c) {
  auto rho = [](const trialscope::Run& run) { return budget_correlation(run, "cost").coefficient[0][1]; };

  const std::vector<double> base = {0.3, 0.9, 0.1, 0.7, 0.5, 0.2};
  auto same = rho(two_budget_run(base, {3.0, 9.0, 1.0, 7.0, 5.0, 2.0}));
  c.expect(same && *same == 1.0, "identical ranking is not exactly 1.0");
  auto reversed = rho(two_budget_run(base, {-3.0, -9.0, -1.0, -7.0, -5.0, -2.0}));
  c.expect(reversed && *reversed == -1.0, "reversed ranking is not exactly -1.0");

  // Hand fixture with a tie. Average ranks: low {3, 1.5, 4, 1.5, 5}, high
  // {2, 1, 3, 4, 5}; centred products sum to 5.5, squares to 9.5 and 10.
  auto hand = rho(two_budget_run({0.3, 0.1, 0.4, 0.1, 0.5}, {2.0, 1.0, 3.0, 4.0, 5.0}));
  const double oracle = 5.5 / std::sqrt(9.5 * 10.0);
  c.expect(hand && std::fabs(*hand - oracle) <= 1e-12,
           "hand fixture " + (hand ? fmt(*hand) : "undefined") + " vs " + fmt(oracle));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(40), b(40), ea(40), eb(40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = n(rng);
    b[i] = a[i] + n(rng);
    ea[i] = std::exp(a[i]);
    eb[i] = std::exp(b[i]);
  }
  auto raw = rho(two_budget_run(a, b)), transformed = rho(two_budget_run(ea, eb));
  c.expect(raw && transformed && *raw == *transformed, "exp() changed the coefficient");
}

double planar(const Point2& a, const Point2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

DistanceMatrix planar_distances(const std::vector<Point2>& pts) {
  DistanceMatrix d(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.set(i, j, planar(pts[i], pts[j]));
  return d;
}

void mds_reconstruction(Check& c) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Point2> pts;
  for (int i = 0; i < 10; ++i) pts.push_back({u(rng), 0.4 * u(rng)});
  auto d = planar_distances(pts);
  auto x = mds_project(d);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double e = planar(x[i], x[j]);
      c.expect(std::fabs(e - d(i, j)) <= 1e-6 * d(i, j),
               "pair " + std::to_string(i) + "," + std::to_string(j) + ": " + fmt(e) + " vs " +
                   fmt(d(i, j)));
    }

  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Point2> permuted;
  for (auto p : perm) permuted.push_back(pts[p]);
  auto y = mds_project(planar_distances(permuted));
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (int k = 0; k < 2; ++k)
      c.expect(std::fabs(y[i][k] - x[perm[i]][k]) <= 1e-9,
               "row " + std::to_string(i) + " is not the permuted embedding");
}

void liveness(Check& c) {
  testing_support::TempDir tmp;
  auto run = testing_support::demo_run(120);
  testing_support::write_run(run, tmp / "live");

  const auto interval = 500ms;
  RunMonitor monitor;
  monitor.add_directory(tmp.path());
  Service service(monitor, PluginRegistry::with_defaults(), {2, 300s, {}});
  HttpApi api(service);
  const int port = api.bind("127.0.0.1", 0);
  api.start();
  monitor.start(interval);
  httplib::Client client("127.0.0.1", port);

  auto hash = [&]() -> std::string {
    auto res = client.Get("/api/runs");
    if (!res || res->status != 200) return "";
    return json::parse(res->body).at(0).at("hash").get<std::string>();
  };
  const json body = {{"target", "live"}, {"inputs", json::object()}};
  auto submit = [&]() { return json::parse(client.Post("/api/plugins/overview/submit", body.dump(), "application/json")->body); };
  auto finish = [&](const json& reply) -> json {
    if (reply.contains("cached")) return reply["cached"];
    const auto id = reply.at("job_id").get<std::string>();
    for (int i = 0; i < 1000; ++i) {
      auto record = json::parse(client.Get("/api/jobs/" + id)->body);
      if (record["state"] == "done") return record["result"];
      if (record["state"] == "failed") return json();
      std::this_thread::sleep_for(10ms);
    }
    return json();
  };

  const auto before_hash = hash();
  auto first = finish(submit());
  c.expect(first.is_object(), "first overview job did not finish");
  c.expect(submit().contains("cached"), "second identical submission was not served from cache");

  testing_support::append_trial(tmp / "live", run);
  const auto appended = std::chrono::steady_clock::now();
  std::string after_hash = before_hash;
  while (after_hash == before_hash && std::chrono::steady_clock::now() - appended < 10s) {
    std::this_thread::sleep_for(10ms);
    after_hash = hash();
  }
  const auto seen = std::chrono::steady_clock::now() - appended;
  c.expect(after_hash != before_hash, "hash never changed");
  c.expect(seen <= interval + 100ms,
           "new hash took " + std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(seen).count()) +
               " ms with a " + std::to_string(interval.count()) + " ms poll interval");

  auto reply = submit();
  c.expect(reply.contains("job_id"), "stale cached result was served after the append");
  auto second = finish(reply);
  c.expect(second.is_object(), "recomputed overview job did not finish");
  if (first.is_object() && second.is_object()) {
    const int n1 = first["data"]["n_trials"], n2 = second["data"]["n_trials"];
    c.expect(n2 == n1 + 1, "trial count " + std::to_string(n1) + " -> " + std::to_string(n2));
    const int t1 = first["data"]["status"]["total"], t2 = second["data"]["status"]["total"];
    c.expect(t2 == t1 + 1, "status total did not grow");
    c.expect(first["data"]["report"] != second["data"]["report"] ||
                 first["data"]["status"] != second["data"]["status"],
             "report unchanged");
  }
  monitor.stop();
  api.stop();
}

void border_conditional(Check& c) {
  ConfigurationSpace space({
      Hyperparameter::categorical("model", {str("ae"), str("vae")}),
      Hyperparameter::integer("latent_dim", 2, 128).when("model", {str("vae")}),
  });
  auto corners = border_configs(space, 100);
  std::set<std::string> got;
  for (const auto& cfg : corners) got.insert(to_json(cfg).dump());
  const std::set<std::string> want = {
      to_json(Configuration{{{"model", str("ae")}}}).dump(),
      to_json(Configuration{{{"model", str("vae")}, {"latent_dim", std::int64_t{2}}}}).dump(),
      to_json(Configuration{{{"model", str("vae")}, {"latent_dim", std::int64_t{128}}}}).dump(),
  };
  c.expect(corners.size() == 3, "expected 3 border configurations, got " + std::to_string(corners.size()));
  c.expect(got == want, "border configurations differ from the hand enumeration");
  for (const auto& cfg : corners)
    for (const auto& name : active_hyperparameters(cfg, space)) {
      const auto& hp = space.at(name);
      const auto& v = cfg.values.at(name);
      const bool corner = hp.is_numeric()
                              ? (values_equal(v, hp.normalize(Value(hp.lower))) ||
                                 values_equal(v, hp.normalize(Value(hp.upper))))
                              : (values_equal(v, hp.choices.front()) || values_equal(v, hp.choices.back()));
      c.expect(corner, to_json(cfg).dump() + ": " + name + " is not at a bound");
    }
}

std::pair<int, std::string> run_command(const std::string& cmd) {
  std::string out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::array<char, 65536> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  return {::pclose(pipe), out};
}

void headless_determinism(Check& c) {
  testing_support::TempDir tmp;
  testing_support::write_run(testing_support::demo_run(200), tmp / "fixture");
  const std::vector<std::pair<std::string, std::string>> reports = {
      {"overview", "{}"},
      {"footprint", R"({"seed": 11})"},
      {"budget_correlation", "{}"},
      {"pareto", "{}"},
      {"importance", R"({"seed": 11})"},
  };
  for (const auto& [plugin, inputs] : reports) {
    const std::string cmd = std::string("'") + TRIALSCOPE_CLI + "' report '" +
                            (tmp / "fixture").string() + "' " + plugin + " --inputs '" + inputs +
                            "' 2>/dev/null";
    auto [code1, out1] = run_command(cmd);
    auto [code2, out2] = run_command(cmd);
    c.expect(code1 == 0 && code2 == 0, plugin + ": nonzero exit");
    c.expect(!out1.empty() && out1 == out2, plugin + ": envelopes differ between invocations");
    c.expect(json::accept(out1) && json::parse(out1)["plugin"] == plugin, plugin + ": not an envelope");
  }
}

struct Criterion {
  int id;
  std::string name;
  std::chrono::milliseconds limit;
  std::function<void(Check&)> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "status report fidelity", 1s, status_report},
      {2, "Pareto front vs all-pairs oracle", 2s, pareto_oracle},
      {3, "fANOVA analytic 2x2 oracle", 1s, fanova_analytic},
      {4, "fANOVA recovery of f = x", 30s, fanova_recovery},
      {5, "LPI grid variances and ordering", 1s, lpi_ratio},
      {6, "budget correlation oracle", 1s, budget_correlation_oracle},
      {7, "MDS reconstruction and equivariance", 1s, mds_reconstruction},
      {8, "liveness and staleness end to end", 30s, liveness},
      {9, "border configurations of a conditional space", 1s, border_conditional},
      {10, "headless report determinism", 60s, headless_determinism},
  };

  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.body(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    check.expect(ms <= cr.limit, "took " + std::to_string(ms.count()) + " ms, limit " +
                                     std::to_string(cr.limit.count()) + " ms");
    const bool ok = check.ok();
    failed += ok ? 0 : 1;
    std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << cr.id << ": " << cr.name << " ("
              << ms.count() << " ms, limit " << cr.limit.count() << " ms)"
              << (ok ? "" : check.summary()) << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
