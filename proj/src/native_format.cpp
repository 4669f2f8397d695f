#include "trialscope/native_format.hpp"

#include <fstream>
#include <sstream>

namespace trialscope::native {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return ss.str();
}

std::optional<double> optional_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

struct Line {
  std::size_t number;
  json value;
};

// Splits JSON-lines text. A trailing fragment without '\n' that does not parse
// is dropped with a warning; every other bad line raises.
std::vector<Line> parse_lines(const std::string& text, const std::string& file,
                              std::vector<std::string>* warnings) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  std::size_t number = 0;
  while (pos < text.size()) {
    ++number;
    auto nl = text.find('\n', pos);
    const bool terminated = nl != std::string::npos;
    std::string_view raw(text.data() + pos, (terminated ? nl : text.size()) - pos);
    pos = terminated ? nl + 1 : text.size();
    if (raw.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      lines.push_back({number, json::parse(raw)});
    } catch (const json::parse_error& e) {
      if (!terminated) {
        if (warnings)
          warnings->push_back(file + ":" + std::to_string(number) +
                              ": ignoring incomplete trailing line");
        break;
      }
      throw ParseError(file, number, std::string("malformed JSON: ") + e.what());
    }
  }
  return lines;
}

template <class F>
auto at_line(const std::string& file, std::size_t line, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(file, line, e.what());
  } catch (const Error& e) {
    throw ParseError(file, line, e.what());
  }
}

}  // namespace

bool looks_native(const fs::path& dir) {
  std::error_code ec;
  return fs::is_regular_file(dir / kManifestFile, ec) && fs::is_regular_file(dir / kTrialsFile, ec);
}

json hyperparameter_to_json(const Hyperparameter& hp) {
  json j = {{"name", hp.name}, {"kind", to_string(hp.kind)}};
  if (hp.kind == HpKind::integer) {
    j["lower"] = static_cast<std::int64_t>(hp.lower);
    j["upper"] = static_cast<std::int64_t>(hp.upper);
    j["log"] = hp.log_scale;
  } else if (hp.kind == HpKind::continuous) {
    j["lower"] = hp.lower;
    j["upper"] = hp.upper;
    j["log"] = hp.log_scale;
  } else {
    j["choices"] = json::array();
    for (const auto& c : hp.choices) j["choices"].push_back(to_json(c));
  }
  j["default"] = to_json(hp.normalize(hp.default_value));
  if (hp.condition) {
    json values = json::array();
    for (const auto& v : hp.condition->values) values.push_back(to_json(v));
    j["condition"] = {{"parent", hp.condition->parent}, {"values", values}};
  }
  return j;
}

Hyperparameter hyperparameter_from_json(const json& j) {
  Hyperparameter hp;
  hp.name = j.at("name").get<std::string>();
  hp.kind = parse_hp_kind(j.at("kind").get<std::string>());
  if (hp.is_numeric()) {
    hp.lower = j.at("lower").get<double>();
    hp.upper = j.at("upper").get<double>();
    hp.log_scale = j.value("log", false);
    hp.default_value = hp.lower;
  } else {
    for (const auto& c : j.at("choices")) hp.choices.push_back(value_from_json(c));
    if (!hp.choices.empty()) hp.default_value = hp.choices.front();
  }
  if (auto it = j.find("default"); it != j.end() && !it->is_null())
    hp.default_value = value_from_json(*it);
  if (auto it = j.find("condition"); it != j.end() && !it->is_null()) {
    Condition c;
    c.parent = it->at("parent").get<std::string>();
    for (const auto& v : it->at("values")) c.values.push_back(value_from_json(v));
    hp.condition = std::move(c);
  }
  hp.check();
  hp.default_value = hp.normalize(hp.default_value);
  return hp;
}

json space_to_json(const ConfigurationSpace& space) {
  json hps = json::array();
  for (const auto& hp : space.hyperparameters()) hps.push_back(hyperparameter_to_json(hp));
  return {{"hyperparameters", hps}};
}

ConfigurationSpace space_from_json(const json& j) {
  std::vector<Hyperparameter> hps;
  for (const auto& h : j.at("hyperparameters")) hps.push_back(hyperparameter_from_json(h));
  return ConfigurationSpace(std::move(hps));
}

Run load(const fs::path& dir, std::vector<std::string>* warnings) {
  Run run;
  const std::string manifest_name = (dir / kManifestFile).string();
  {
    json m;
    try {
      m = json::parse(read_file(dir / kManifestFile));
    } catch (const json::parse_error& e) {
      throw ParseError(manifest_name, 0, std::string("malformed JSON: ") + e.what());
    }
    at_line(manifest_name, 0, [&] {
      if (m.at("version").get<int>() != kVersion)
        throw ValidationError("unsupported manifest version " + m.at("version").dump());
      if (auto it = m.find("meta"); it != m.end() && it->is_object()) run.meta = *it;
      for (const auto& o : m.at("objectives")) {
        Objective obj;
        obj.name = o.at("name").get<std::string>();
        obj.direction = parse_direction(o.value("direction", std::string("minimize")));
        obj.lower = optional_number(o, "lower");
        obj.upper = optional_number(o, "upper");
        run.objectives.push_back(std::move(obj));
      }
      for (const auto& b : m.at("budgets")) run.budgets.push_back(b.get<double>());
      run.space = space_from_json(m.at("space"));
      return 0;
    });
  }

  const std::string configs_name = (dir / kConfigsFile).string();
  std::error_code ec;
  if (fs::exists(dir / kConfigsFile, ec)) {
    for (auto& line : parse_lines(read_file(dir / kConfigsFile), configs_name, warnings)) {
      at_line(configs_name, line.number, [&] {
        auto id = line.value.at("id").get<std::int64_t>();
        if (id != static_cast<std::int64_t>(run.configs.size()))
          throw ValidationError("expected config id " + std::to_string(run.configs.size()) +
                                ", found " + std::to_string(id));
        run.configs.push_back(
            normalize_configuration(configuration_from_json(line.value.at("values")), run.space));
        return 0;
      });
    }
  }

  const std::string trials_name = (dir / kTrialsFile).string();
  std::set<std::pair<std::size_t, double>> seen;
  for (auto& line : parse_lines(read_file(dir / kTrialsFile), trials_name, warnings)) {
    at_line(trials_name, line.number, [&] {
      const auto& v = line.value;
      Trial t;
      auto cid = v.at("config_id").get<std::int64_t>();
      if (cid < 0) throw ValidationError("negative config_id");
      t.config_id = static_cast<std::size_t>(cid);
      t.budget = v.at("budget").get<double>();
      t.status = parse_status(v.at("status").get<std::string>());
      if (auto it = v.find("costs"); it != v.end() && !it->is_null())
        t.costs = it->get<std::vector<double>>();
      t.start = v.value("start", 0.0);
      t.end = optional_number(v, "end");
      if (auto it = v.find("additional"); it != v.end() && it->is_object()) t.additional = *it;
      validate_trial(run, t);
      if (!seen.emplace(t.config_id, t.budget).second)
        throw ValidationError("duplicate trial for config " + std::to_string(t.config_id) +
                              " at budget " + json(t.budget).dump());
      run.trials.push_back(std::move(t));
      return 0;
    });
  }

  at_line(manifest_name, 0, [&] {
    validate_run(run);
    return 0;
  });
  return run;
}

json config_record(std::size_t id, const Configuration& config) {
  return {{"id", id}, {"values", to_json(config)}};
}

json trial_record(const Trial& t) {
  return {{"config_id", t.config_id},
          {"budget", t.budget},
          {"costs", t.costs ? json(*t.costs) : json(nullptr)},
          {"status", to_string(t.status)},
          {"start", t.start},
          {"end", t.end ? json(*t.end) : json(nullptr)},
          {"additional", t.additional}};
}

std::string manifest_text(const Run& run) {
  json objectives = json::array();
  for (const auto& o : run.objectives)
    objectives.push_back({{"name", o.name},
                          {"direction", to_string(o.direction)},
                          {"lower", o.lower ? json(*o.lower) : json(nullptr)},
                          {"upper", o.upper ? json(*o.upper) : json(nullptr)}});
  json m = {{"version", kVersion},
            {"meta", run.meta},
            {"objectives", objectives},
            {"budgets", run.budgets},
            {"space", space_to_json(run.space)}};
  return m.dump(2) + "\n";
}

std::string configs_text(const Run& run) {
  std::string out;
  for (std::size_t i = 0; i < run.configs.size(); ++i)
    out += config_record(i, run.configs[i]).dump() + "\n";
  return out;
}

std::string trials_text(const Run& run) {
  std::string out;
  for (const auto& t : run.trials) out += trial_record(t).dump() + "\n";
  return out;
}

std::string canonical_serialization(const Run& run) {
  return manifest_text(run) + configs_text(run) + trials_text(run);
}

void write(const Run& run, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw IoError("cannot write " + (dir / name).string());
  };
  put(kManifestFile, manifest_text(run));
  put(kConfigsFile, configs_text(run));
  put(kTrialsFile, trials_text(run));
}

}  // namespace trialscope::native
