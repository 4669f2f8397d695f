#pragma once

// Converters, content hashing and live refresh of runs that optimizers may
// still be writing to.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "trialscope/run_model.hpp"

namespace trialscope {

struct ConverterDescriptor {
  std::string format_name;
  std::function<bool(const std::filesystem::path&)> detect;
  /// Parses a run; may append non-fatal warnings.
  std::function<Run(const std::filesystem::path&, std::vector<std::string>&)> load;
};

/// Registration order is detection priority.
class ConverterRegistry {
public:
  /// A registry holding only the "native" converter.
  static ConverterRegistry with_defaults();

  void add(ConverterDescriptor converter);
  const ConverterDescriptor& get(std::string_view format_name) const;
  bool contains(std::string_view format_name) const;
  std::vector<std::string> formats() const;

  /// First converter whose detect predicate passes.
  /// Throws ValidationError("unsupported format ...") listing the registered formats.
  std::string detect_format(const std::filesystem::path& path) const;

private:
  std::vector<ConverterDescriptor> converters_;
};

/// SHA-256 over the sorted relative file list and every file's bytes.
std::string compute_hash(const std::filesystem::path& path);

/// Newest modification time of any regular file below `path`, as epoch seconds.
std::int64_t newest_mtime(const std::filesystem::path& path);

/// Loads a run and stamps id (directory name), content hash and modification time.
Run load_run(const std::filesystem::path& path, const ConverterRegistry& registry,
             const std::string& format_name, std::vector<std::string>* warnings = nullptr);

struct RunSource {
  std::filesystem::path path;
  std::string format_name;
  std::string last_hash;
  std::chrono::system_clock::time_point last_loaded{};
};

struct RefreshResult {
  enum class Kind { unchanged, reloaded, failed };
  Kind kind = Kind::unchanged;
  std::shared_ptr<const Run> run;  // reloaded only
  std::string error;               // failed only
  std::vector<std::string> warnings;
};

/// Reloads the source if its content hash changed. A failure leaves
/// `source.last_hash` untouched so that the next call retries.
RefreshResult refresh(RunSource& source, const ConverterRegistry& registry);

/// Keeps the current Run of every registered source and republishes it when the
/// files change. Readers always see a complete Run: either the old or the new one.
class RunMonitor {
public:
  using InvalidationHandler =
      std::function<void(const std::string& run_id, const std::string& new_hash)>;

  struct Entry {
    std::string id;
    std::shared_ptr<const Run> run;
    std::chrono::system_clock::time_point last_refresh;
    std::string last_error;
    std::vector<std::string> warnings;
  };

  explicit RunMonitor(ConverterRegistry registry = ConverterRegistry::with_defaults());
  ~RunMonitor();
  RunMonitor(const RunMonitor&) = delete;
  RunMonitor& operator=(const RunMonitor&) = delete;

  /// Registers and loads one run directory. Returns its run id.
  std::string add_source(const std::filesystem::path& path);

  /// Registers every subdirectory with a detectable format. Directories that fail
  /// to detect or load are skipped and reported in the returned warnings.
  std::vector<std::string> add_directory(const std::filesystem::path& runs_dir);

  void on_invalidate(InvalidationHandler handler);

  /// Refreshes every source once; returns the ids that were reloaded.
  std::vector<std::string> refresh_all();

  /// Starts a polling thread calling refresh_all every `interval`.
  void start(std::chrono::milliseconds interval);
  void stop();

  std::shared_ptr<const Run> get(std::string_view id) const;
  bool contains(std::string_view id) const;
  std::vector<Entry> entries() const;

private:
  struct Slot {
    RunSource source;
    Entry entry;
  };

  ConverterRegistry registry_;
  std::mutex refresh_mutex_;  // serializes refreshers
  mutable std::mutex mutex_;  // guards published entries and handlers
  std::vector<std::shared_ptr<Slot>> slots_;
  std::vector<InvalidationHandler> handlers_;

  std::mutex poll_mutex_;
  std::condition_variable poll_cv_;
  bool stopping_ = false;
  std::thread poller_;
};

}  // namespace trialscope
