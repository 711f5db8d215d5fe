#include "migperf/http_server.hpp"

#include <httplib.h>

#include <json.hpp>

namespace migperf::api {

using nlohmann::json;

namespace {

void reply_json(httplib::Response& res, const json& payload, int status = 200) {
  res.status = status;
  res.set_content(payload.dump(2) + "\n", "application/json");
}

void reply_error(httplib::Response& res, const MigError& e) {
  reply_json(res, json{{"code", error_code_name(e.code())}, {"message", e.what()}},
             http_status_for(e.code()));
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const MigError& e) {
    reply_error(res, e);
  } catch (const std::exception& e) {
    reply_json(res, json{{"code", "Internal"}, {"message", e.what()}}, 500);
  }
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body.empty() ? "{}" : req.body);
  } catch (const json::parse_error& e) {
    throw_error(ErrorCode::InvalidSpec, std::string("bad JSON body: ") + e.what());
  }
}

}  // namespace

HttpServer::HttpServer(Engine& engine)
    : engine_(engine), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& s = *server_;

  s.Get("/v1/devices", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply_json(res, engine_.devices_json()); });
  });

  s.Post(R"(/v1/devices/(\d+)/mig)", [this](const httplib::Request& req,
                                            httplib::Response& res) {
    guarded(res, [&] {
      int id = std::stoi(req.matches[1]);
      json body = parse_body(req);
      bool enable = body.value("enabled", true);
      reply_json(res, enable ? engine_.enable_mig_json(id) : engine_.disable_mig_json(id));
    });
  });

  s.Get(R"(/v1/devices/(\d+)/instances)", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
    guarded(res, [&] { reply_json(res, engine_.instances_json(std::stoi(req.matches[1]))); });
  });

  s.Post(R"(/v1/devices/(\d+)/instances)", [this](const httplib::Request& req,
                                                  httplib::Response& res) {
    guarded(res, [&] {
      int id = std::stoi(req.matches[1]);
      json body = parse_body(req);
      if (!body.contains("profile"))
        throw_error(ErrorCode::InvalidSpec, "body needs {\"profile\": ...}");
      std::optional<int> start;
      if (body.contains("start") && !body["start"].is_null())
        start = body["start"].get<int>();
      reply_json(res, engine_.create_gi_json(id, body["profile"].get<std::string>(), start));
    });
  });

  s.Delete(R"(/v1/devices/(\d+)/instances/(\d+))", [this](const httplib::Request& req,
                                                          httplib::Response& res) {
    guarded(res, [&] {
      reply_json(res, engine_.destroy_gi_json(std::stoi(req.matches[1]),
                                              std::stoi(req.matches[2])));
    });
  });

  s.Post(R"(/v1/devices/(\d+)/partitions)", [this](const httplib::Request& req,
                                                   httplib::Response& res) {
    guarded(res, [&] {
      int id = std::stoi(req.matches[1]);
      json body = parse_body(req);
      if (!body.contains("target") || !body["target"].is_array())
        throw_error(ErrorCode::InvalidSpec, "body needs {\"target\": [profiles...]}");
      auto target = body["target"].get<std::vector<std::string>>();
      std::string strategy = body.value("strategy", std::string("strict"));
      reply_json(res, engine_.apply_plan_json(id, target, strategy));
    });
  });

  s.Post("/v1/benchmarks", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply_json(res, engine_.submit_benchmark_json(parse_body(req))); });
  });

  s.Get(R"(/v1/benchmarks/([^/]+))", [this](const httplib::Request& req,
                                            httplib::Response& res) {
    guarded(res, [&] { reply_json(res, engine_.run_status_json(req.matches[1])); });
  });

  s.Get("/v1/export/csv", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto runs = split_csv_list(req.get_param_value("runs"));
      std::string kind = req.has_param("kind") ? req.get_param_value("kind") : "summaries";
      res.set_content(engine_.export_csv(runs, kind), "text/csv");
    });
  });

  s.Get("/v1/export/figure", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.has_param("id"))
        throw_error(ErrorCode::InvalidArgument, "missing ?id=<figure id>");
      auto runs = split_csv_list(req.get_param_value("runs"));
      res.set_content(engine_.figure_csv(req.get_param_value("id"), runs), "text/csv");
    });
  });

  s.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      res.set_content(engine_.export_prometheus(), "text/plain; version=0.0.4; charset=utf-8");
    });
  });
}

bool HttpServer::listen(const std::string& host, int port) {
  return server_->listen(host, port);
}

int HttpServer::bind_any_port(const std::string& host) {
  return server_->bind_to_any_port(host);
}

bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

}  // namespace migperf::api
