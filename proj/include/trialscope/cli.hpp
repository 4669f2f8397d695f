#pragma once

// Command-line entry points: serve, report and convert.
//
// Exit codes: 0 success, 1 data error, 2 usage error. Machine output goes to
// `out`, diagnostics to `log`.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace trialscope {

struct ServeConfig {
  std::filesystem::path runs_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  double poll_interval_s = 10.0;
  int workers = 1;
  std::filesystem::path assets_dir;
  /// Defaults to <runs_dir>/.trialscope-groups.json.
  std::filesystem::path groups_file;

  /// Throws ValidationError for an out-of-range port, interval or worker count.
  void validate() const;
};

int cmd_serve(const ServeConfig& config, std::ostream& log);

/// Writes the envelope to `out_path`, or to `out` when it is "-".
int cmd_report(const std::filesystem::path& run_path, const std::string& plugin,
               const std::string& inputs_json, const std::string& out_path, std::ostream& out,
               std::ostream& log);

/// Empty `format` means detect.
int cmd_convert(const std::filesystem::path& in_path, const std::string& format,
                const std::filesystem::path& out_path, std::ostream& log);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);
int run_cli(int argc, char** argv);

}  // namespace trialscope
