#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "test_support.hpp"
#include "trialscope/ingest.hpp"
#include "trialscope/native_format.hpp"

using namespace trialscope;
using namespace testing_support;

namespace {

std::string trial_line(std::size_t config, double budget, double cost) {
  Trial t;
  t.config_id = config;
  t.budget = budget;
  t.costs = std::vector<double>{cost, 1.0};
  return native::trial_record(t).dump() + "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Native format

TEST(NativeFormat, RoundTripIsByteIdentical) {
  TempDir tmp;
  auto run = demo_run(60);
  write_run(run, tmp / "a");
  auto loaded = native::load(tmp / "a");
  EXPECT_EQ(native::canonical_serialization(loaded), native::canonical_serialization(run));
  write_run(loaded, tmp / "b");
  EXPECT_EQ(read_text(tmp / "a" / "trials.jsonl"), read_text(tmp / "b" / "trials.jsonl"));
  EXPECT_EQ(read_text(tmp / "a" / "manifest.json"), read_text(tmp / "b" / "manifest.json"));
}

TEST(NativeFormat, LoadIsDeterministic) {
  TempDir tmp;
  write_run(demo_run(40), tmp / "r");
  EXPECT_EQ(native::canonical_serialization(native::load(tmp / "r")),
            native::canonical_serialization(native::load(tmp / "r")));
}

TEST(NativeFormat, IncompleteTrailingLineIsDroppedWithWarning) {
  TempDir tmp;
  auto run = demo_run(30);
  write_run(run, tmp / "r");
  append_text(tmp / "r" / "trials.jsonl", "{\"config_id\": 0, \"bud");
  std::vector<std::string> warnings;
  auto loaded = native::load(tmp / "r", &warnings);
  EXPECT_EQ(loaded.trials.size(), run.trials.size());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find(":31:"), std::string::npos);
}

TEST(NativeFormat, MalformedLineNamesFileAndLine) {
  TempDir tmp;
  auto run = demo_run(10);
  write_run(run, tmp / "r");
  auto text = read_text(tmp / "r" / "trials.jsonl");
  std::vector<std::string> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  lines[6] = "{not json";
  std::string rebuilt;
  for (const auto& l : lines) rebuilt += l + "\n";
  std::ofstream(tmp / "r" / "trials.jsonl", std::ios::trunc) << rebuilt;
  try {
    native::load(tmp / "r");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
    EXPECT_NE(e.file().find("trials.jsonl"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("trials.jsonl:7"), std::string::npos);
  }
}

TEST(NativeFormat, SemanticErrorsCarryLineNumbers) {
  TempDir tmp;
  auto run = demo_run(10);
  write_run(run, tmp / "r");
  append_text(tmp / "r" / "trials.jsonl", trial_line(0, 5.0, 0.1));  // unknown budget
  try {
    native::load(tmp / "r");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 11u);
  }
}

TEST(NativeFormat, ConfigIdsMustFollowLineOrder) {
  TempDir tmp;
  auto run = demo_run(10);
  write_run(run, tmp / "r");
  std::ofstream(tmp / "r" / "configs.jsonl", std::ios::app)
      << native::config_record(99, run.configs[0]).dump() << "\n";
  EXPECT_THROW(native::load(tmp / "r"), ParseError);
}

TEST(NativeFormat, UnknownKeysAreIgnored) {
  TempDir tmp;
  auto run = demo_run(10);
  write_run(run, tmp / "r");
  append_text(tmp / "r" / "trials.jsonl",
              "{\"config_id\":" + std::to_string(config_without_trial(run, 100.0)) +
                  ",\"budget\":100.0,\"costs\":null,\"status\":\"running\",\"start\":1,"
              "\"end\":null,\"additional\":{},\"future_field\":[1,2]}\n");
  auto loaded = native::load(tmp / "r");
  EXPECT_EQ(loaded.trials.back().status, TrialStatus::running);
}

// ---------------------------------------------------------------------------
// Detection and hashing

TEST(DetectFormat, NativeMarkersEmptyDirAndPriority) {
  TempDir tmp;
  write_run(demo_run(5), tmp / "r");
  fs::create_directories(tmp / "empty");
  auto registry = ConverterRegistry::with_defaults();
  EXPECT_EQ(registry.detect_format(tmp / "r"), "native");
  try {
    registry.detect_format(tmp / "empty");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported format"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("native"), std::string::npos);
  }

  ConverterRegistry custom;
  auto always = [](const fs::path&) { return true; };
  auto never_load = [](const fs::path&, std::vector<std::string>&) -> trialscope::Run { throw Error("x"); };
  custom.add({"first", always, never_load});
  custom.add({"second", always, never_load});
  EXPECT_EQ(custom.detect_format(tmp / "r"), "first");
  EXPECT_THROW(custom.add({"first", always, never_load}), ValidationError);
  EXPECT_THROW(custom.get("third"), NotFoundError);
}

TEST(ComputeHash, SensitiveToContentAndNamesNotToListingOrder) {
  TempDir tmp;
  auto run = demo_run(20);
  write_run(run, tmp / "r");
  const auto h1 = compute_hash(tmp / "r");
  EXPECT_EQ(h1, compute_hash(tmp / "r"));
  EXPECT_EQ(h1.size(), 64u);

  append_text(tmp / "r" / "trials.jsonl", trial_line(config_without_trial(run, 100.0), 100.0, 0.3));
  const auto h2 = compute_hash(tmp / "r");
  EXPECT_NE(h1, h2);

  std::ofstream(tmp / "r" / "notes.txt") << "hello";
  const auto h3 = compute_hash(tmp / "r");
  fs::rename(tmp / "r" / "notes.txt", tmp / "r" / "notes2.txt");
  EXPECT_NE(compute_hash(tmp / "r"), h3);
  fs::remove(tmp / "r" / "notes2.txt");
  EXPECT_EQ(compute_hash(tmp / "r"), h2);

  // Same files created in a different order hash equally.
  fs::create_directories(tmp / "x");
  fs::create_directories(tmp / "y");
  for (const char* n : {"a", "b", "c"}) std::ofstream(tmp / "x" / n) << n;
  for (const char* n : {"c", "a", "b"}) std::ofstream(tmp / "y" / n) << n;
  EXPECT_EQ(compute_hash(tmp / "x"), compute_hash(tmp / "y"));
}

TEST(LoadRun, StampsIdHashAndMtime) {
  TempDir tmp;
  write_run(demo_run(20), tmp / "my-run");
  auto run = load_run(tmp / "my-run", ConverterRegistry::with_defaults(), "native");
  EXPECT_EQ(run.id, "my-run");
  EXPECT_EQ(run.content_hash, compute_hash(tmp / "my-run"));
  EXPECT_GT(run.modified_at, 0);
  auto trailing = load_run((tmp / "my-run").string() + "/", ConverterRegistry::with_defaults(), "native");
  EXPECT_EQ(trailing.id, "my-run");
}

// ---------------------------------------------------------------------------
// Refresh

TEST(Refresh, UnchangedReloadedAndFailed) {
  TempDir tmp;
  auto run = demo_run(20);
  write_run(run, tmp / "r");
  const auto registry = ConverterRegistry::with_defaults();
  RunSource source{tmp / "r", "native", "", {}};

  auto first = refresh(source, registry);
  ASSERT_EQ(first.kind, RefreshResult::Kind::reloaded);
  EXPECT_EQ(first.run->trials.size(), 20u);
  EXPECT_EQ(refresh(source, registry).kind, RefreshResult::Kind::unchanged);
  EXPECT_EQ(refresh(source, registry).kind, RefreshResult::Kind::unchanged);

  append_text(tmp / "r" / "trials.jsonl", trial_line(config_without_trial(run, 100.0), 100.0, 0.25));
  auto second = refresh(source, registry);
  ASSERT_EQ(second.kind, RefreshResult::Kind::reloaded);
  EXPECT_EQ(second.run->trials.size(), 21u);

  const auto good_hash = source.last_hash;
  append_text(tmp / "r" / "trials.jsonl", "{\"config_id\": 2, \"budg\n");
  auto third = refresh(source, registry);
  EXPECT_EQ(third.kind, RefreshResult::Kind::failed);
  EXPECT_NE(third.error.find("trials.jsonl:22"), std::string::npos);
  EXPECT_EQ(source.last_hash, good_hash);
  // Still failing: retried, not marked unchanged.
  EXPECT_EQ(refresh(source, registry).kind, RefreshResult::Kind::failed);
}

TEST(RunMonitor, KeepsServingPreviousRunOnFailureAndNotifiesOnReload) {
  TempDir tmp;
  auto a = demo_run(20, 1, "a");
  write_run(a, tmp / "runs" / "a");
  write_run(demo_run(15, 2, "b"), tmp / "runs" / "b");
  fs::create_directories(tmp / "runs" / "junk");

  RunMonitor monitor;
  auto warnings = monitor.add_directory(tmp / "runs");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("junk"), std::string::npos);
  ASSERT_TRUE(monitor.contains("a"));
  ASSERT_TRUE(monitor.contains("b"));

  std::vector<std::pair<std::string, std::string>> events;
  monitor.on_invalidate([&](const std::string& id, const std::string& hash) { events.emplace_back(id, hash); });
  EXPECT_TRUE(monitor.refresh_all().empty());

  append_text(tmp / "runs" / "a" / "trials.jsonl", trial_line(config_without_trial(a, 100.0), 100.0, 0.2));
  EXPECT_EQ(monitor.refresh_all(), std::vector<std::string>{"a"});
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].first, "a");
  EXPECT_EQ(events[0].second, monitor.get("a")->content_hash);
  EXPECT_EQ(monitor.get("a")->trials.size(), 21u);

  append_text(tmp / "runs" / "a" / "trials.jsonl", "garbage\n");
  EXPECT_TRUE(monitor.refresh_all().empty());
  EXPECT_EQ(monitor.get("a")->trials.size(), 21u);
  auto entries = monitor.entries();
  auto it = std::find_if(entries.begin(), entries.end(), [](const auto& e) { return e.id == "a"; });
  ASSERT_NE(it, entries.end());
  EXPECT_FALSE(it->last_error.empty());
  EXPECT_EQ(events.size(), 1u);
  EXPECT_THROW(monitor.add_directory(tmp / "missing"), IoError);
}

TEST(RunMonitor, ReadersNeverSeePartialRuns) {
  TempDir tmp;
  write_run(demo_run(20, 1, "a"), tmp / "a");
  RunMonitor monitor;
  monitor.add_source(tmp / "a");
  monitor.start(std::chrono::milliseconds(1));

  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    while (!stop) {
      auto run = monitor.get("a");
      // Every published version is a fully validated run.
      try {
        validate_run(*run);
      } catch (...) {
        ++bad;
      }
    }
  });
  const auto base = native::load(tmp / "a");
  std::size_t appended = 0;
  for (; appended < 10; ++appended) {
    const auto c = config_without_trial(base, 100.0, appended);
    append_text(tmp / "a" / "trials.jsonl", trial_line(c, 100.0, 0.1 * static_cast<double>(c)));
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  stop = true;
  reader.join();
  monitor.stop();
  EXPECT_EQ(bad.load(), 0);
  monitor.refresh_all();
  EXPECT_EQ(monitor.get("a")->trials.size(), base.trials.size() + appended);
}
