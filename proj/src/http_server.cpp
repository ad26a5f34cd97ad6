#include "zonedesign/service.hpp"

#include <httplib.h>

#include <thread>

namespace zonedesign::service {

struct HttpServer::Impl {
  ServiceCore& core;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ServiceCore& c) : core(c) {}
};

HttpServer::HttpServer(ServiceCore& core, std::optional<std::string> static_dir)
    : impl_(std::make_unique<Impl>(core)) {
  auto& svr = impl_->server;
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type, Idempotency-Key"}});
  if (static_dir && !svr.set_mount_point("/ui", *static_dir)) {
    throw std::runtime_error("static directory not found: " + *static_dir);
  }
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = impl_->core.handle(req.method, req.path, req.body, req.get_header_value("Idempotency-Key"));
    res.status = r.status;
    if (!r.body.empty()) res.set_content(r.body, r.content_type);
  };
  svr.Get(".*", handler);
  svr.Post(".*", handler);
  svr.Options(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    port = svr.bind_to_any_port(host);
    if (port < 0) throw std::runtime_error("cannot bind " + host);
  } else if (!svr.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace zonedesign::service
