#include "wordflow/service.hpp"

#include "wordflow/error.hpp"

#include <httplib.h>

namespace wordflow {

struct HttpServer::Impl {
  explicit Impl(std::shared_ptr<const MeasureStore> store) : engine(std::move(store)) {}

  QueryEngine engine;
  httplib::Server server;
};

HttpServer::HttpServer(std::shared_ptr<const MeasureStore> store)
    : impl_(std::make_unique<Impl>(std::move(store))) {
  auto& engine = impl_->engine;
  impl_->server.Get(R"(/api/v1/.*)", [&engine](const httplib::Request& req, httplib::Response& res) {
    // The raw target keeps percent escapes inside path segments, so ids and
    // words containing '/' survive routing.
    const std::string& target = req.target;
    const std::string path = target.substr(0, target.find('?'));
    QueryParams params;
    for (const auto& [key, value] : req.params) params[key] = value;
    const ApiResponse out = engine.handle(path, params);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  });
  impl_->server.set_error_handler([&engine](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const nlohmann::json body{{"error", {{"code", "NotFound"}, {"message", "unknown endpoint"}}},
                              {"manifest_hash", engine.store().manifest().content_hash}};
    res.set_content(body.dump(), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw InvalidInput("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw InvalidInput("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace wordflow
