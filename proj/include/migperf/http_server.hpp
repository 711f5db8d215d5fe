#pragma once

#include <memory>
#include <string>

#include "migperf/engine.hpp"

namespace httplib {
class Server;
}

namespace migperf::api {

// JSON-over-HTTP surface on top of the engine. Routes:
//   GET    /v1/devices
//   POST   /v1/devices/{id}/mig                {"enabled": bool}
//   GET    /v1/devices/{id}/instances
//   POST   /v1/devices/{id}/instances          {"profile": ..., "start"?: int}
//   DELETE /v1/devices/{id}/instances/{gi}
//   POST   /v1/devices/{id}/partitions         {"target": [...], "strategy"?: ...}
//   POST   /v1/benchmarks                      run | sweep | compare config
//   GET    /v1/benchmarks/{run_id}
//   GET    /v1/export/csv?runs=a,b&kind=summaries|raw
//   GET    /v1/export/figure?id=...&runs=...
//   GET    /metrics
class HttpServer {
 public:
  explicit HttpServer(Engine& engine);
  ~HttpServer();

  // Blocks serving requests until stop().
  bool listen(const std::string& host, int port);
  // Binds to an ephemeral port and returns it; serving continues on a
  // caller-managed thread via listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();

 private:
  void install_routes();

  Engine& engine_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace migperf::api
