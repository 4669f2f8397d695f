#pragma once

// Job queue, result cache and group registry behind the HTTP API.
//
// Cache entries are keyed by plugin, target, normalized inputs and the content
// hash of every run involved, so a changed run can never be served a stale
// result. Invalidation events from the monitor only evict superseded entries.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trialscope/ingest.hpp"
#include "trialscope/plugins.hpp"

namespace trialscope {

/// One less than the number of cores, at least 1.
std::size_t default_worker_count();

struct ServiceOptions {
  std::size_t workers = default_worker_count();
  std::chrono::milliseconds job_timeout{std::chrono::seconds(300)};
  /// Where groups are persisted; empty keeps them in memory only.
  std::filesystem::path groups_file;
};

enum class JobState { queued, running, done, failed };

std::string_view to_string(JobState s);

struct JobRecord {
  std::string job_id;
  std::string plugin;
  std::string target;
  nlohmann::json inputs;
  /// [[run id, content hash], ...] pinned at submission.
  std::vector<std::pair<std::string, std::string>> run_hashes;
  JobState state = JobState::queued;
  std::string result;  // envelope text, done only
  std::string error;   // failed only
  std::chrono::system_clock::time_point submitted_at;
  std::optional<std::chrono::system_clock::time_point> started_at;
  std::optional<std::chrono::system_clock::time_point> finished_at;

  /// Snapshot as JSON text with the envelope embedded verbatim.
  std::string to_json_text() const;
};

struct SubmitResult {
  std::optional<std::string> cached;  // envelope text
  std::string job_id;
};

/// A target resolved to one consistent set of run versions.
struct Snapshot {
  std::shared_ptr<const Run> run;
  std::vector<std::pair<std::string, std::string>> run_hashes;
};

class Service {
public:
  Service(RunMonitor& monitor, PluginRegistry plugins = PluginRegistry::with_defaults(),
          ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Cached envelope when one exists for the current run state, otherwise the
  /// id of a new or already pending identical job.
  SubmitResult submit(const std::string& plugin, const std::string& target,
                      const nlohmann::json& inputs);

  JobRecord poll(const std::string& job_id) const;

  /// Computes on the calling thread, bypassing queue and cache.
  std::string compute_now(const std::string& plugin, const std::string& target,
                          const nlohmann::json& inputs) const;

  nlohmann::json list_runs() const;
  nlohmann::json list_groups() const;
  /// Throws NotFoundError for unknown members and the merge error for mismatches.
  void create_group(const std::string& name, const std::vector<std::string>& run_ids);
  void delete_group(const std::string& name);

  /// Configuration, per-budget trial results and origin for one config of a run or group.
  nlohmann::json config_detail(const std::string& target, std::size_t config_id) const;

  /// The current version of a run, or a merged view of a group.
  Snapshot resolve(const std::string& target) const;

  const PluginRegistry& plugins() const noexcept { return plugins_; }
  std::size_t cache_size() const;
  /// Blocks until no job is queued or running.
  void wait_idle() const;

private:
  struct CacheEntry {
    std::string envelope;
    std::vector<std::pair<std::string, std::string>> run_hashes;
  };
  struct Cache {
    mutable std::mutex mutex;
    std::map<std::string, CacheEntry> entries;
    void evict(const std::string& run_id, const std::string& new_hash);
  };
  struct Job {
    JobRecord record;
    std::string key;
    std::shared_ptr<const Plugin> plugin;
    PluginContext context;
  };
  struct Prepared {
    std::shared_ptr<const Plugin> plugin;
    PluginContext context;
    std::vector<std::pair<std::string, std::string>> run_hashes;
    std::string key;
  };

  Prepared prepare(const std::string& plugin, const std::string& target,
                   const nlohmann::json& inputs) const;
  void worker_loop();
  void execute(const std::string& job_id);
  void load_groups();
  void save_groups() const;

  RunMonitor& monitor_;
  PluginRegistry plugins_;
  ServiceOptions options_;
  std::shared_ptr<Cache> cache_;

  mutable std::mutex groups_mutex_;
  std::map<std::string, std::vector<std::string>> groups_;
  mutable std::map<std::string, std::shared_ptr<const Run>> merged_;  // by joined hash

  mutable std::mutex jobs_mutex_;
  mutable std::condition_variable jobs_cv_;
  mutable std::condition_variable idle_cv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::map<std::string, std::string> in_flight_;  // cache key -> job id
  std::deque<std::string> queue_;
  std::size_t busy_ = 0;
  std::uint64_t next_job_ = 0;
  std::string job_prefix_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace trialscope
