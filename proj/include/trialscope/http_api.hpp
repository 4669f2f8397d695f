#pragma once

// JSON over HTTP for the service, plus static dashboard assets.
//
//   GET    /api/runs
//   GET    /api/groups                 POST /api/groups {name, run_ids}
//   DELETE /api/groups/{name}
//   GET    /api/runs/{id}/config/{config_id}
//   GET    /api/plugins
//   POST   /api/plugins/{plugin}/submit {target, inputs} -> {cached} | {job_id}
//   GET    /api/jobs/{job_id}
//
// Errors are {"error": message} with 404 for unknown ids, 400 for invalid input
// and 500 otherwise.

#include <filesystem>
#include <memory>
#include <string>

#include "trialscope/service.hpp"

namespace trialscope {

class HttpApi {
public:
  /// `assets_dir` is served at "/" when set; otherwise "/" returns a short placeholder page.
  explicit HttpApi(Service& service, std::filesystem::path assets_dir = {});
  ~HttpApi();
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  /// Binds the listening socket; port 0 picks a free one. Returns the bound
  /// port. Throws IoError naming the port on failure.
  int bind(const std::string& host, int port);

  /// Serves until stop(). Requires bind().
  void serve();
  /// serve() on a background thread.
  void start();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trialscope
