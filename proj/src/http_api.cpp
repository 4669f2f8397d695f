#include "trialscope/http_api.hpp"

#include <thread>

#include <httplib.h>

namespace trialscope {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json; charset=utf-8";

constexpr const char* kPlaceholder =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>trialscope</title></head>"
    "<body><p>trialscope API is running. Dashboard assets are not installed; "
    "see <a href=\"/api/runs\">/api/runs</a>.</p></body></html>";

void send_json(httplib::Response& res, const std::string& body, int status = 200) {
  res.status = status;
  res.set_content(body, kJson);
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, json{{"error", message}}.dump(), status);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
  }
}

// Maps library errors onto status codes.
template <class F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

}  // namespace

struct HttpApi::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;
  bool bound = false;

  explicit Impl(Service& s) : service(s) {}
};

HttpApi::HttpApi(Service& service, std::filesystem::path assets_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  Service& svc = service;
  // httplib's default adds SO_REUSEPORT, which lets a second server share a busy port.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  svr.Get("/api/runs", guarded([&svc](const auto&, auto& res) { send_json(res, svc.list_runs().dump()); }));

  svr.Get("/api/groups",
          guarded([&svc](const auto&, auto& res) { send_json(res, svc.list_groups().dump()); }));

  svr.Post("/api/groups", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.contains("name") || !body["name"].is_string())
               throw ValidationError("name: expected a string");
             if (!body.contains("run_ids") || !body["run_ids"].is_array())
               throw ValidationError("run_ids: expected a list of run ids");
             const auto name = body["name"].get<std::string>();
             const auto ids = body["run_ids"].get<std::vector<std::string>>();
             svc.create_group(name, ids);
             send_json(res, json{{"name", name}, {"members", ids}}.dump(), 201);
           }));

  svr.Delete("/api/groups/:name", guarded([&svc](const httplib::Request& req, auto& res) {
               svc.delete_group(req.path_params.at("name"));
               send_json(res, json{{"deleted", req.path_params.at("name")}}.dump());
             }));

  svr.Get("/api/runs/:id/config/:config_id",
          guarded([&svc](const httplib::Request& req, auto& res) {
            const auto& raw = req.path_params.at("config_id");
            std::size_t pos = 0;
            unsigned long long id = 0;
            try {
              id = std::stoull(raw, &pos);
            } catch (const std::exception&) {
              pos = 0;
            }
            if (pos == 0 || pos != raw.size() || raw.front() == '-')
              throw ValidationError("config_id: expected a nonnegative integer");
            send_json(res, svc.config_detail(req.path_params.at("id"), id).dump());
          }));

  svr.Get("/api/plugins", guarded([&svc](const auto&, auto& res) {
            send_json(res, json(svc.plugins().names()).dump());
          }));

  svr.Post("/api/plugins/:plugin/submit",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.contains("target") || !body["target"].is_string())
               throw ValidationError("target: expected a run or group id");
             const json inputs = body.value("inputs", json::object());
             auto r = svc.submit(req.path_params.at("plugin"), body["target"].get<std::string>(), inputs);
             if (r.cached)
               send_json(res, "{\"cached\":" + *r.cached + "}");
             else
               send_json(res, json{{"job_id", r.job_id}}.dump(), 202);
           }));

  svr.Get("/api/jobs/:id", guarded([&svc](const httplib::Request& req, auto& res) {
            send_json(res, svc.poll(req.path_params.at("id")).to_json_text());
          }));

  if (!assets_dir.empty() && std::filesystem::is_directory(assets_dir)) {
    svr.set_mount_point("/", assets_dir.string());
  } else {
    svr.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholder, "text/html; charset=utf-8");
    });
  }
}

HttpApi::~HttpApi() { stop(); }

int HttpApi::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  int bound = port;
  bool ok;
  if (port == 0) {
    bound = svr.bind_to_any_port(host);
    ok = bound > 0;
  } else {
    ok = svr.bind_to_port(host, port);
  }
  if (!ok) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound;
}

void HttpApi::serve() {
  if (!impl_->bound) throw Error("serve() called before bind()");
  impl_->server.listen_after_bind();
}

void HttpApi::start() {
  if (!impl_->bound) throw Error("start() called before bind()");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpApi::stop() {
  if (impl_->bound) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace trialscope
