#include "trialscope/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>

#include <CLI11.hpp>

#include "trialscope/http_api.hpp"
#include "trialscope/ingest.hpp"
#include "trialscope/native_format.hpp"
#include "trialscope/plugins.hpp"
#include "trialscope/service.hpp"

namespace trialscope {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::shared_ptr<const Run> load_any(const fs::path& path, const ConverterRegistry& registry,
                                    std::ostream& log) {
  const auto format = registry.detect_format(path);
  std::vector<std::string> warnings;
  auto run = std::make_shared<const Run>(load_run(path, registry, format, &warnings));
  for (const auto& w : warnings) log << "warning: " << path.string() << ": " << w << '\n';
  return run;
}

}  // namespace

void ServeConfig::validate() const {
  if (port < 1 || port > 65535)
    throw ValidationError("port must be between 1 and 65535, got " + std::to_string(port));
  if (!(poll_interval_s > 0)) throw ValidationError("poll interval must be positive");
  if (workers < 1) throw ValidationError("workers must be at least 1");
}

// ---------------------------------------------------------------------------
// serve

int cmd_serve(const ServeConfig& config, std::ostream& log) {
  try {
    config.validate();
  } catch (const ValidationError& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  }
  std::error_code ec;
  if (!fs::is_directory(config.runs_dir, ec)) {
    log << "error: runs directory " << config.runs_dir.string() << " is not readable\n";
    return 1;
  }

  // Threads started below inherit the blocked mask; only the waiter receives them.
  sigset_t signals, previous;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, &previous);
  struct RestoreMask {
    sigset_t mask;
    ~RestoreMask() { pthread_sigmask(SIG_SETMASK, &mask, nullptr); }
  } restore{previous};

  try {
    RunMonitor monitor;
    for (const auto& w : monitor.add_directory(config.runs_dir)) log << "warning: " << w << '\n';

    ServiceOptions options;
    options.workers = static_cast<std::size_t>(config.workers);
    options.groups_file = config.groups_file.empty()
                              ? config.runs_dir / ".trialscope-groups.json"
                              : config.groups_file;
    Service service(monitor, PluginRegistry::with_defaults(), options);
    HttpApi api(service, config.assets_dir);
    try {
      api.bind(config.host, config.port);
    } catch (const IoError& e) {
      log << "error: " << e.what() << " (port " << config.port << " unavailable)\n";
      return 1;
    }

    monitor.start(std::chrono::milliseconds(
        static_cast<std::int64_t>(std::max(1.0, config.poll_interval_s * 1000.0))));
    log << "serving " << monitor.entries().size() << " run(s) from " << config.runs_dir.string()
        << " on http://" << config.host << ":" << config.port << '\n';

    std::atomic<bool> done{false};
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      if (!done) log << "shutting down\n";
      api.stop();
    });
    api.serve();
    done = true;
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    monitor.stop();
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const fs::path& run_path, const std::string& plugin_name,
               const std::string& inputs_json, const std::string& out_path, std::ostream& out,
               std::ostream& log) {
  const auto plugins = PluginRegistry::with_defaults();
  auto plugin = plugins.find(plugin_name);
  if (!plugin) {
    log << "error: unknown plugin '" << plugin_name << "' (valid plugins: " << join(plugins.names())
        << ")\n";
    return 2;
  }

  json raw_inputs;
  try {
    const std::string text = !inputs_json.empty() && inputs_json.front() == '@'
                                 ? read_file(inputs_json.substr(1))
                                 : inputs_json;
    raw_inputs = text.empty() ? json::object() : json::parse(text);
  } catch (const std::exception& e) {
    log << "error: invalid inputs: " << e.what() << '\n';
    return 2;
  }

  const auto registry = ConverterRegistry::with_defaults();
  PluginContext context;
  try {
    context.run = load_any(run_path, registry, log);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
  context.target = context.run->id;
  log << "loaded run '" << context.run->id << "' (" << context.run->trials.size() << " trials)\n";

  try {
    context.inputs = plugin->normalize_inputs(*context.run, raw_inputs);
    // Other targets are sibling run directories.
    for (const auto& id : plugin->referenced_targets(context.inputs)) {
      const auto path = run_path.parent_path() / id;
      if (id.empty() || id.find('/') != std::string::npos || !fs::is_directory(path))
        throw InputError("compare", "unknown run '" + id + "'");
      context.sources[id] = load_any(path, registry, log);
    }
  } catch (const ValidationError& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }

  std::string envelope;
  try {
    envelope = evaluate_plugin(*plugin, context).dump();
  } catch (const std::exception& e) {
    log << "error: " << plugin_name << " failed: " << e.what() << '\n';
    return 1;
  }

  if (out_path == "-") {
    out << envelope << '\n';
    out.flush();
  } else {
    std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
    if (!(file << envelope << '\n')) {
      log << "error: cannot write " << out_path << '\n';
      return 1;
    }
    log << "wrote " << out_path << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// convert

int cmd_convert(const fs::path& in_path, const std::string& format, const fs::path& out_path,
                std::ostream& log) {
  const auto registry = ConverterRegistry::with_defaults();
  if (!format.empty() && !registry.contains(format)) {
    log << "error: unknown format '" << format << "' (registered formats: "
        << join(registry.formats()) << ")\n";
    return 2;
  }
  try {
    const auto name = format.empty() ? registry.detect_format(in_path) : format;
    std::vector<std::string> warnings;
    const Run run = load_run(in_path, registry, name, &warnings);
    for (const auto& w : warnings) log << "warning: " << w << '\n';
    native::write(run, out_path);
    log << "converted " << in_path.string() << " (" << name << ", " << run.trials.size()
        << " trials) to " << out_path.string() << '\n';
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  CLI::App app{"Analyze and monitor hyperparameter optimization runs", "trialscope"};
  app.require_subcommand(1);

  ServeConfig serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the API and dashboard over a runs directory");
  serve_cmd->add_option("--runs-dir", serve.runs_dir, "Directory holding one subdirectory per run")
      ->envname("TRIALSCOPE_RUNS_DIR")
      ->required();
  serve_cmd->add_option("--port", serve.port, "TCP port")->envname("TRIALSCOPE_PORT")->capture_default_str();
  serve_cmd->add_option("--host", serve.host, "Address to bind")->capture_default_str();
  serve_cmd->add_option("--poll-interval", serve.poll_interval_s, "Seconds between refresh scans")
      ->envname("TRIALSCOPE_POLL_INTERVAL")
      ->capture_default_str();
  serve.workers = static_cast<int>(default_worker_count());
  serve_cmd->add_option("--workers", serve.workers, "Background job workers")
      ->envname("TRIALSCOPE_WORKERS")
      ->capture_default_str();
  serve_cmd->add_option("--assets", serve.assets_dir, "Built dashboard directory");
  serve_cmd->add_option("--groups-file", serve.groups_file, "Group registry file");

  std::string run_path, plugin, inputs = "{}", report_out = "-";
  auto* report_cmd = app.add_subcommand("report", "Compute one plugin for a run and print its envelope");
  report_cmd->add_option("run", run_path, "Run directory")->required();
  report_cmd->add_option("plugin", plugin, "Plugin name")->required();
  report_cmd->add_option("--inputs", inputs, "Inputs as JSON, or @file")->capture_default_str();
  report_cmd->add_option("-o,--out", report_out, "Output file, - for stdout")->capture_default_str();

  std::string in_path, convert_out, format;
  auto* convert_cmd = app.add_subcommand("convert", "Convert a run into the native format");
  convert_cmd->add_option("input", in_path, "Source run")->required();
  convert_cmd->add_option("output", convert_out, "Destination directory")->required();
  convert_cmd->add_option("--format", format, "Source format; detected when omitted");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, log);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, log);
    return 2;
  }

  if (*serve_cmd) return cmd_serve(serve, log);
  if (*report_cmd) return cmd_report(run_path, plugin, inputs, report_out, out, log);
  return cmd_convert(in_path, format, convert_out, log);
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace trialscope
