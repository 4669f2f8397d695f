#include "trialscope/service.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <random>
#include <sstream>

#include "trialscope/digest.hpp"
#include "trialscope/native_format.hpp"

namespace trialscope {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string timestamp(std::chrono::system_clock::time_point t) {
  return iso8601(std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count());
}

json hashes_json(const std::vector<std::pair<std::string, std::string>>& hashes) {
  json out = json::array();
  for (const auto& [id, hash] : hashes) out.push_back({id, hash});
  return out;
}

}  // namespace

std::size_t default_worker_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n > 1 ? n - 1 : 1;
}

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "?";
}

std::string JobRecord::to_json_text() const {
  json j = {{"job_id", job_id},
            {"plugin", plugin},
            {"target", target},
            {"inputs", inputs},
            {"run_hashes", hashes_json(run_hashes)},
            {"state", to_string(state)},
            {"error", state == JobState::failed ? json(error) : json(nullptr)},
            {"submitted_at", timestamp(submitted_at)},
            {"started_at", started_at ? json(timestamp(*started_at)) : json(nullptr)},
            {"finished_at", finished_at ? json(timestamp(*finished_at)) : json(nullptr)},
            {"result", nullptr}};
  std::string text = j.dump();
  if (state != JobState::done) return text;
  // Splice the envelope in as-is rather than re-serializing it.
  const std::string placeholder = "\"result\":null";
  const auto at = text.rfind(placeholder);
  return text.substr(0, at) + "\"result\":" + result + text.substr(at + placeholder.size());
}

// ---------------------------------------------------------------------------

void Service::Cache::evict(const std::string& run_id, const std::string& new_hash) {
  std::lock_guard lock(mutex);
  for (auto it = entries.begin(); it != entries.end();) {
    const bool stale = std::any_of(it->second.run_hashes.begin(), it->second.run_hashes.end(),
                                   [&](const auto& p) { return p.first == run_id && p.second != new_hash; });
    it = stale ? entries.erase(it) : std::next(it);
  }
}

Service::Service(RunMonitor& monitor, PluginRegistry plugins, ServiceOptions options)
    : monitor_(monitor), plugins_(std::move(plugins)), options_(std::move(options)),
      cache_(std::make_shared<Cache>()) {
  if (options_.workers == 0) throw ValidationError("worker count must be at least 1");
  std::random_device rd;
  std::ostringstream prefix;
  prefix << std::hex << rd() << rd();
  job_prefix_ = prefix.str();

  load_groups();
  std::weak_ptr<Cache> weak = cache_;
  monitor_.on_invalidate([weak](const std::string& run_id, const std::string& hash) {
    if (auto cache = weak.lock()) cache->evict(run_id, hash);
  });
  for (std::size_t i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(jobs_mutex_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  for (auto& w : workers_) w.join();
}

// ---------------------------------------------------------------------------
// Targets

Snapshot Service::resolve(const std::string& target) const {
  if (auto run = monitor_.get(target)) return {run, {{run->id, run->content_hash}}};

  std::lock_guard lock(groups_mutex_);
  auto g = groups_.find(target);
  if (g == groups_.end()) throw NotFoundError("unknown run or group '" + target + "'");

  std::vector<std::shared_ptr<const Run>> members;
  Snapshot snap;
  std::string joined;
  for (const auto& id : g->second) {
    auto run = monitor_.get(id);
    if (!run) throw NotFoundError("group '" + target + "' member '" + id + "' is not loaded");
    snap.run_hashes.emplace_back(id, run->content_hash);
    joined += (joined.empty() ? "" : ":") + run->content_hash;
    members.push_back(std::move(run));
  }
  auto& merged = merged_[target];
  if (!merged || merged->content_hash != joined) {
    std::vector<const Run*> ptrs;
    for (const auto& m : members) ptrs.push_back(m.get());
    merged = std::make_shared<const Run>(merge_group({target, g->second}, ptrs));
  }
  snap.run = merged;
  return snap;
}

Service::Prepared Service::prepare(const std::string& plugin, const std::string& target,
                                   const json& inputs) const {
  Prepared p;
  p.plugin = plugins_.get(plugin);
  auto snap = resolve(target);
  p.context.target = target;
  p.context.run = snap.run;
  p.context.inputs = p.plugin->normalize_inputs(*snap.run, inputs);
  p.run_hashes = snap.run_hashes;
  for (const auto& id : p.plugin->referenced_targets(p.context.inputs)) {
    Snapshot other;
    try {
      other = resolve(id);
    } catch (const NotFoundError& e) {
      throw InputError("compare", e.what());
    }
    p.context.sources[id] = other.run;
    p.run_hashes.insert(p.run_hashes.end(), other.run_hashes.begin(), other.run_hashes.end());
  }
  const json key = {{"plugin", plugin},
                    {"target", target},
                    {"runs", hashes_json(p.run_hashes)},
                    {"inputs", sha256_hex(p.context.inputs.dump())}};
  p.key = key.dump();
  return p;
}

// ---------------------------------------------------------------------------
// Jobs

SubmitResult Service::submit(const std::string& plugin, const std::string& target,
                             const json& inputs) {
  auto prepared = prepare(plugin, target, inputs);
  auto lookup = [&]() -> std::optional<std::string> {
    std::lock_guard lock(cache_->mutex);
    auto it = cache_->entries.find(prepared.key);
    if (it == cache_->entries.end()) return std::nullopt;
    return it->second.envelope;
  };
  if (auto hit = lookup()) return {std::move(hit), {}};

  std::lock_guard lock(jobs_mutex_);
  // A job may have finished between the lookup above and taking the lock.
  if (auto hit = lookup()) return {std::move(hit), {}};
  if (auto it = in_flight_.find(prepared.key); it != in_flight_.end()) return {std::nullopt, it->second};

  auto job = std::make_shared<Job>();
  job->record.job_id = job_prefix_ + "-" + std::to_string(++next_job_);
  job->record.plugin = plugin;
  job->record.target = target;
  job->record.inputs = prepared.context.inputs;
  job->record.run_hashes = prepared.run_hashes;
  job->record.submitted_at = std::chrono::system_clock::now();
  job->key = prepared.key;
  job->plugin = prepared.plugin;
  job->context = std::move(prepared.context);

  const auto id = job->record.job_id;
  jobs_[id] = job;
  in_flight_[job->key] = id;
  queue_.push_back(id);
  jobs_cv_.notify_one();
  return {std::nullopt, id};
}

JobRecord Service::poll(const std::string& job_id) const {
  std::lock_guard lock(jobs_mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw NotFoundError("unknown job '" + job_id + "'");
  return it->second->record;
}

std::string Service::compute_now(const std::string& plugin, const std::string& target,
                                 const json& inputs) const {
  auto prepared = prepare(plugin, target, inputs);
  return evaluate_plugin(*prepared.plugin, prepared.context).dump();
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(jobs_mutex_);
      jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      ++busy_;
    }
    execute(id);
    {
      std::lock_guard lock(jobs_mutex_);
      --busy_;
    }
    idle_cv_.notify_all();
  }
}

void Service::execute(const std::string& job_id) {
  std::shared_ptr<Job> job;
  {
    std::lock_guard lock(jobs_mutex_);
    job = jobs_.at(job_id);
    job->record.state = JobState::running;
    job->record.started_at = std::chrono::system_clock::now();
  }

  std::packaged_task<std::string()> task(
      [plugin = job->plugin, context = job->context] {
        return evaluate_plugin(*plugin, context).dump();
      });
  auto future = task.get_future();
  std::thread runner(std::move(task));

  std::string envelope, error;
  bool ok = false;
  if (future.wait_for(options_.job_timeout) == std::future_status::timeout) {
    runner.detach();
    error = "timeout";
  } else {
    runner.join();
    try {
      envelope = future.get();
      ok = true;
    } catch (const std::exception& e) {
      error = e.what();
    } catch (...) {
      error = "unknown error";
    }
  }

  if (ok) {
    std::lock_guard lock(cache_->mutex);
    cache_->entries[job->key] = {envelope, job->record.run_hashes};
  }
  std::lock_guard lock(jobs_mutex_);
  job->record.state = ok ? JobState::done : JobState::failed;
  job->record.result = std::move(envelope);
  job->record.error = std::move(error);
  job->record.finished_at = std::chrono::system_clock::now();
  job->context = {};
  if (auto it = in_flight_.find(job->key); it != in_flight_.end() && it->second == job_id)
    in_flight_.erase(it);
}

std::size_t Service::cache_size() const {
  std::lock_guard lock(cache_->mutex);
  return cache_->entries.size();
}

void Service::wait_idle() const {
  std::unique_lock lock(jobs_mutex_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && busy_ == 0; });
}

// ---------------------------------------------------------------------------
// Runs and groups

json Service::list_runs() const {
  json out = json::array();
  for (const auto& e : monitor_.entries()) {
    if (!e.run) continue;
    json objectives = json::array();
    for (const auto& o : e.run->objectives)
      objectives.push_back({{"name", o.name}, {"direction", to_string(o.direction)}});
    out.push_back({{"id", e.id},
                   {"meta", e.run->meta},
                   {"budgets", e.run->budgets},
                   {"objectives", objectives},
                   {"n_configs", e.run->configs.size()},
                   {"n_trials", e.run->trials.size()},
                   {"hash", e.run->content_hash},
                   {"last_refresh", timestamp(e.last_refresh)},
                   {"error", e.last_error.empty() ? json(nullptr) : json(e.last_error)},
                   {"warnings", e.warnings}});
  }
  return out;
}

json Service::list_groups() const {
  std::lock_guard lock(groups_mutex_);
  json out = json::array();
  for (const auto& [name, members] : groups_) out.push_back({{"name", name}, {"members", members}});
  return out;
}

void Service::create_group(const std::string& name, const std::vector<std::string>& run_ids) {
  if (name.empty()) throw ValidationError("group name must not be empty");
  if (name.find('/') != std::string::npos) throw ValidationError("group name must not contain '/'");
  if (monitor_.contains(name)) throw ValidationError("'" + name + "' is already a run id");
  if (run_ids.empty()) throw ValidationError("group '" + name + "' has no members");

  std::vector<std::shared_ptr<const Run>> members;
  std::vector<const Run*> ptrs;
  for (const auto& id : run_ids) {
    auto run = monitor_.get(id);
    if (!run) throw NotFoundError("unknown run '" + id + "'");
    ptrs.push_back(run.get());
    members.push_back(std::move(run));
  }
  auto merged = std::make_shared<const Run>(merge_group({name, run_ids}, ptrs));

  std::lock_guard lock(groups_mutex_);
  if (groups_.count(name)) throw ValidationError("group '" + name + "' already exists");
  groups_[name] = run_ids;
  merged_[name] = std::move(merged);
  save_groups();
}

void Service::delete_group(const std::string& name) {
  std::lock_guard lock(groups_mutex_);
  if (!groups_.erase(name)) throw NotFoundError("unknown group '" + name + "'");
  merged_.erase(name);
  save_groups();
}

void Service::load_groups() {
  const auto& path = options_.groups_file;
  if (path.empty() || !fs::exists(path)) return;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    const json j = json::parse(in);
    for (const auto& [name, members] : j.at("groups").items())
      groups_[name] = members.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void Service::save_groups() const {
  const auto& path = options_.groups_file;
  if (path.empty()) return;
  json j = {{"groups", json::object()}};
  for (const auto& [name, members] : groups_) j["groups"][name] = members;
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

json Service::config_detail(const std::string& target, std::size_t config_id) const {
  auto snap = resolve(target);
  const Run& run = *snap.run;
  if (config_id >= run.configs.size())
    throw NotFoundError("run '" + target + "' has no configuration " + std::to_string(config_id));

  json trials = json::array();
  for (const auto& t : run.trials) {
    if (t.config_id != config_id) continue;
    json costs = json::object();
    for (std::size_t k = 0; k < run.objectives.size(); ++k)
      costs[run.objectives[k].name] = t.costs ? json((*t.costs)[k]) : json(nullptr);
    trials.push_back({{"budget", t.budget},
                      {"status", to_string(t.status)},
                      {"costs", costs},
                      {"start", t.start},
                      {"end", t.end ? json(*t.end) : json(nullptr)},
                      {"additional", t.additional}});
  }
  const auto& config = run.configs[config_id];
  return {{"target", target},
          {"config_id", config_id},
          {"origin", config_id < run.config_origin.size() ? run.config_origin[config_id] : run.id},
          {"config", to_json(config)},
          {"trials", trials},
          {"snippet", native::config_record(config_id, config).dump()}};
}

}  // namespace trialscope
