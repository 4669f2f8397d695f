#include "trialscope/ingest.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "trialscope/digest.hpp"
#include "trialscope/native_format.hpp"

namespace trialscope {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Converters

ConverterRegistry ConverterRegistry::with_defaults() {
  ConverterRegistry r;
  r.add({"native", [](const fs::path& p) { return native::looks_native(p); },
         [](const fs::path& p, std::vector<std::string>& warnings) {
           return native::load(p, &warnings);
         }});
  return r;
}

void ConverterRegistry::add(ConverterDescriptor converter) {
  if (contains(converter.format_name))
    throw ValidationError("converter '" + converter.format_name + "' is already registered");
  converters_.push_back(std::move(converter));
}

bool ConverterRegistry::contains(std::string_view format_name) const {
  return std::any_of(converters_.begin(), converters_.end(),
                     [&](const auto& c) { return c.format_name == format_name; });
}

const ConverterDescriptor& ConverterRegistry::get(std::string_view format_name) const {
  for (const auto& c : converters_)
    if (c.format_name == format_name) return c;
  std::string known;
  for (const auto& f : formats()) known += (known.empty() ? "" : ", ") + f;
  throw NotFoundError("unknown format '" + std::string(format_name) + "' (known formats: " +
                      known + ")");
}

std::vector<std::string> ConverterRegistry::formats() const {
  std::vector<std::string> out;
  for (const auto& c : converters_) out.push_back(c.format_name);
  return out;
}

std::string ConverterRegistry::detect_format(const fs::path& path) const {
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw IoError("cannot read directory " + path.string());
  for (const auto& c : converters_)
    if (c.detect(path)) return c.format_name;
  std::string known;
  for (const auto& f : formats()) known += (known.empty() ? "" : ", ") + f;
  throw ValidationError("unsupported format in " + path.string() + " (registered formats: " +
                        known + ")");
}

// ---------------------------------------------------------------------------
// Hashing

std::string compute_hash(const fs::path& path) {
  std::vector<std::pair<std::string, fs::path>> files;
  std::error_code ec;
  for (fs::recursive_directory_iterator it(path, ec), end; !ec && it != end; it.increment(ec))
    if (it->is_regular_file()) files.emplace_back(fs::relative(it->path(), path).generic_string(),
                                                  it->path());
  if (ec) throw IoError("cannot list " + path.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  Sha256 hash;
  std::vector<char> buffer(1 << 16);
  for (const auto& [rel, full] : files) {
    std::ifstream in(full, std::ios::binary);
    if (!in) throw IoError("cannot read " + full.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("cannot read " + full.string());
    // Name and length prefix keep the encoding unambiguous.
    hash.update(rel);
    hash.update(std::string_view("\0", 1));
    std::uint64_t size = content.size();
    char size_bytes[8];
    for (int i = 0; i < 8; ++i) size_bytes[i] = static_cast<char>((size >> (8 * i)) & 0xff);
    hash.update(std::string_view(size_bytes, 8));
    hash.update(content);
  }
  return hash.hex_digest();
}

std::int64_t newest_mtime(const fs::path& path) {
  std::int64_t newest = 0;
  std::error_code ec;
  for (fs::recursive_directory_iterator it(path, ec), end; !ec && it != end; it.increment(ec)) {
    if (!it->is_regular_file()) continue;
    auto t = std::chrono::file_clock::to_sys(it->last_write_time());
    newest = std::max<std::int64_t>(
        newest, std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count());
  }
  return newest;
}

Run load_run(const fs::path& path, const ConverterRegistry& registry,
             const std::string& format_name, std::vector<std::string>* warnings) {
  const auto& converter = registry.get(format_name);
  // Hash first: if the optimizer writes in between, the next refresh sees a
  // different hash and reloads.
  auto hash = compute_hash(path);
  auto mtime = newest_mtime(path);
  std::vector<std::string> local;
  Run run = converter.load(path, local);
  run.id = fs::absolute(path).lexically_normal().filename().string();
  if (run.id.empty()) run.id = fs::absolute(path).lexically_normal().parent_path().filename().string();
  run.content_hash = std::move(hash);
  run.modified_at = mtime;
  if (warnings) warnings->insert(warnings->end(), local.begin(), local.end());
  return run;
}

RefreshResult refresh(RunSource& source, const ConverterRegistry& registry) {
  RefreshResult result;
  try {
    auto hash = compute_hash(source.path);
    if (hash == source.last_hash) return result;
    auto run = std::make_shared<Run>(load_run(source.path, registry, source.format_name,
                                              &result.warnings));
    source.last_hash = run->content_hash;
    source.last_loaded = std::chrono::system_clock::now();
    result.kind = RefreshResult::Kind::reloaded;
    result.run = std::move(run);
  } catch (const std::exception& e) {
    result.kind = RefreshResult::Kind::failed;
    result.error = e.what();
  }
  return result;
}

// ---------------------------------------------------------------------------
// RunMonitor

RunMonitor::RunMonitor(ConverterRegistry registry) : registry_(std::move(registry)) {}

RunMonitor::~RunMonitor() { stop(); }

std::string RunMonitor::add_source(const fs::path& path) {
  auto slot = std::make_shared<Slot>();
  slot->source.path = path;
  slot->source.format_name = registry_.detect_format(path);
  std::lock_guard refresh_lock(refresh_mutex_);
  auto result = refresh(slot->source, registry_);
  if (result.kind != RefreshResult::Kind::reloaded) throw Error(result.error);
  slot->entry.id = result.run->id;
  slot->entry.run = result.run;
  slot->entry.last_refresh = std::chrono::system_clock::now();
  slot->entry.warnings = std::move(result.warnings);

  std::lock_guard lock(mutex_);
  for (const auto& s : slots_)
    if (s->entry.id == slot->entry.id)
      throw ValidationError("a run with id '" + slot->entry.id + "' is already registered");
  slots_.push_back(slot);
  return slot->entry.id;
}

std::vector<std::string> RunMonitor::add_directory(const fs::path& runs_dir) {
  std::error_code ec;
  if (!fs::is_directory(runs_dir, ec)) throw IoError("cannot read runs directory " + runs_dir.string());
  std::vector<fs::path> dirs;
  for (fs::directory_iterator it(runs_dir, ec), end; !ec && it != end; it.increment(ec))
    if (it->is_directory()) dirs.push_back(it->path());
  if (ec) throw IoError("cannot read runs directory " + runs_dir.string() + ": " + ec.message());
  std::sort(dirs.begin(), dirs.end());

  std::vector<std::string> warnings;
  for (const auto& d : dirs) {
    try {
      add_source(d);
    } catch (const std::exception& e) {
      warnings.push_back("skipping " + d.string() + ": " + e.what());
    }
  }
  return warnings;
}

void RunMonitor::on_invalidate(InvalidationHandler handler) {
  std::lock_guard lock(mutex_);
  handlers_.push_back(std::move(handler));
}

std::vector<std::string> RunMonitor::refresh_all() {
  std::lock_guard refresh_lock(refresh_mutex_);
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::lock_guard lock(mutex_);
    slots = slots_;
  }
  std::vector<std::string> reloaded;
  for (const auto& slot : slots) {
    auto result = refresh(slot->source, registry_);
    std::vector<InvalidationHandler> handlers;
    {
      std::lock_guard lock(mutex_);
      slot->entry.last_refresh = std::chrono::system_clock::now();
      switch (result.kind) {
        case RefreshResult::Kind::unchanged:
          slot->entry.last_error.clear();
          break;
        case RefreshResult::Kind::failed:
          slot->entry.last_error = result.error;
          break;
        case RefreshResult::Kind::reloaded: {
          // Keep the id stable even if the converter would derive another one.
          auto run = std::make_shared<Run>(*result.run);
          run->id = slot->entry.id;
          slot->entry.run = std::move(run);
          slot->entry.last_error.clear();
          slot->entry.warnings = std::move(result.warnings);
          handlers = handlers_;
          reloaded.push_back(slot->entry.id);
          break;
        }
      }
    }
    for (const auto& h : handlers) h(slot->entry.id, slot->source.last_hash);
  }
  return reloaded;
}

void RunMonitor::start(std::chrono::milliseconds interval) {
  stop();
  {
    std::lock_guard lock(poll_mutex_);
    stopping_ = false;
  }
  poller_ = std::thread([this, interval] {
    std::unique_lock lock(poll_mutex_);
    while (!poll_cv_.wait_for(lock, interval, [this] { return stopping_; })) {
      lock.unlock();
      refresh_all();
      lock.lock();
    }
  });
}

void RunMonitor::stop() {
  {
    std::lock_guard lock(poll_mutex_);
    stopping_ = true;
  }
  poll_cv_.notify_all();
  if (poller_.joinable()) poller_.join();
}

std::shared_ptr<const Run> RunMonitor::get(std::string_view id) const {
  std::lock_guard lock(mutex_);
  for (const auto& s : slots_)
    if (s->entry.id == id) return s->entry.run;
  return nullptr;
}

bool RunMonitor::contains(std::string_view id) const { return get(id) != nullptr; }

std::vector<RunMonitor::Entry> RunMonitor::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<Entry> out;
  for (const auto& s : slots_) out.push_back(s->entry);
  return out;
}

}  // namespace trialscope
