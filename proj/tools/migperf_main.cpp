#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "migperf/engine.hpp"
#include "migperf/export.hpp"
#include "migperf/http_server.hpp"

using nlohmann::json;
using namespace migperf;

namespace {

struct Context {
  bool as_json = false;
  std::string remote;
  std::string data_dir = "migperf-data";
  std::string catalog;

  std::unique_ptr<Engine> engine_;

  bool is_remote() const { return !remote.empty(); }

  Engine& engine() {
    if (!engine_) {
      EngineOptions opts;
      opts.data_dir = data_dir;
      opts.catalog_path = catalog;
      engine_ = std::make_unique<Engine>(opts);
    }
    return *engine_;
  }

  httplib::Client client() const {
    httplib::Client cli(remote);
    cli.set_read_timeout(60, 0);
    return cli;
  }

  [[noreturn]] static void fail_http(const httplib::Result& res) {
    if (!res)
      throw_error(ErrorCode::NotFound, "cannot reach daemon: " + httplib::to_string(res.error()));
    std::string message = "HTTP " + std::to_string(res->status);
    try {
      json err = json::parse(res->body);
      message = err.value("message", message);
    } catch (...) {
    }
    throw_error(ErrorCode::InvalidArgument, message);
  }

  json http_get_json(const std::string& path) {
    auto cli = client();
    auto res = cli.Get(path);
    if (!res || res->status >= 400) fail_http(res);
    return json::parse(res->body);
  }

  std::string http_get_text(const std::string& path) {
    auto cli = client();
    auto res = cli.Get(path);
    if (!res || res->status >= 400) fail_http(res);
    return res->body;
  }

  json http_post_json(const std::string& path, const json& body) {
    auto cli = client();
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res || res->status >= 400) fail_http(res);
    return json::parse(res->body);
  }

  json http_delete_json(const std::string& path) {
    auto cli = client();
    auto res = cli.Delete(path);
    if (!res || res->status >= 400) fail_http(res);
    return json::parse(res->body);
  }
};

void print_table(const std::vector<std::vector<std::string>>& table) {
  std::vector<size_t> widths;
  for (const auto& row : table) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  for (const auto& row : table) {
    std::string line;
    for (size_t i = 0; i < row.size(); ++i) {
      line += row[i];
      if (i + 1 < row.size()) line += std::string(widths[i] - row[i].size() + 2, ' ');
    }
    std::cout << line << "\n";
  }
}

std::string fmt3(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << v;
  return os.str();
}

void emit_json(const json& payload) { std::cout << payload.dump(2) << "\n"; }

void write_output(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw_error(ErrorCode::InvalidArgument, "cannot write '" + out_path + "'");
  out << text;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorCode::InvalidSpec, "cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw_error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
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

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

void render_devices(Context& ctx, const json& payload) {
  if (ctx.as_json) return emit_json(payload);
  std::vector<std::vector<std::string>> table = {
      {"DEVICE", "MODEL", "SLICES", "MEM_GIB", "MODE", "MIG", "INSTANCES"}};
  for (const auto& d : payload["devices"]) {
    table.push_back({std::to_string(d["device_id"].get<int>()),
                     d["model_name"].get<std::string>(),
                     std::to_string(d["total_compute_slices"].get<int>()),
                     std::to_string(d["total_memory_gib"].get<int>()),
                     d["sharing_mode"].get<std::string>(),
                     d["mig_enabled"].get<bool>() ? "on" : "off",
                     std::to_string(d["instance_count"].get<size_t>())});
  }
  print_table(table);
}

void render_instances(Context& ctx, const json& payload) {
  if (ctx.as_json) return emit_json(payload);
  std::vector<std::vector<std::string>> table = {{"GI", "PROFILE", "START", "BOUND"}};
  for (const auto& r : payload["instances"]) {
    table.push_back({std::to_string(r["gi_id"].get<int>()),
                     r["profile"].get<std::string>(),
                     std::to_string(r["start_slice"].get<int>()),
                     r["bound_workload"].get<std::string>().empty()
                         ? "-"
                         : r["bound_workload"].get<std::string>()});
  }
  print_table(table);
}

void render_plan(Context& ctx, const json& payload) {
  if (ctx.as_json) return emit_json(payload);
  for (const auto& s : payload["steps"]) {
    if (s["op"] == "destroy") {
      std::cout << "destroy gi " << s["gi_id"].get<int>() << "\n";
    } else {
      std::cout << "create " << s["profile"].get<std::string>() << " -> gi "
                << s["gi_id"].get<int>() << " @ slice " << s["start_slice"].get<int>()
                << "\n";
    }
  }
  if (payload.contains("dropped"))
    std::cout << "dropped (best effort): "
              << join_list(payload["dropped"].get<std::vector<std::string>>()) << "\n";
  render_instances(ctx, json{{"instances", payload["instances"]}});
}

// Runs a benchmark document (run/sweep/compare) and renders the finished runs.
void do_bench(Context& ctx, json doc) {
  json submit;
  std::vector<std::string> ids;
  if (ctx.is_remote()) {
    submit = ctx.http_post_json("/v1/benchmarks", doc);
    ids = submit["run_ids"].get<std::vector<std::string>>();
    // Poll until every run reaches a terminal state.
    for (bool done = false; !done;) {
      done = true;
      for (const auto& id : ids) {
        json st = ctx.http_get_json("/v1/benchmarks/" + id);
        std::string status = st["status"].get<std::string>();
        if (status != "complete" && status != "failed") {
          done = false;
          break;
        }
      }
      if (!done) std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
  } else {
    submit = ctx.engine().submit_benchmark_json(doc);
    ids = submit["run_ids"].get<std::vector<std::string>>();
    ctx.engine().wait_idle();
  }

  json runs = json::array();
  std::string first_error;
  for (const auto& id : ids) {
    json st = ctx.is_remote() ? ctx.http_get_json("/v1/benchmarks/" + id)
                              : ctx.engine().run_status_json(id);
    if (st["status"] == "failed" && first_error.empty())
      first_error = id + ": " + st.value("error", std::string("failed"));
    runs.push_back(std::move(st));
  }

  if (ctx.as_json) {
    emit_json(json{{"run_ids", ids}, {"runs", runs}});
  } else {
    std::vector<std::vector<std::string>> table = {
        {"RUN", "STATUS", "AVG_MS", "P99_MS", "BATCH/S", "GRACT", "FB_MIB", "ENERGY_MJ"}};
    for (const auto& st : runs) {
      std::vector<std::string> row{st["run_id"].get<std::string>(),
                                   st["status"].get<std::string>()};
      if (st.contains("summary")) {
        const auto& s = st["summary"];
        row.insert(row.end(), {fmt3(s["avg_latency_ms"].get<double>()),
                               fmt3(s["p99_latency_ms"].get<double>()),
                               fmt3(s["throughput_batch_per_s"].get<double>()),
                               fmt3(s["mean_gract_frac"].get<double>()),
                               fmt3(s["peak_fb_mib"].get<double>()),
                               fmt3(s["energy_mj"].get<double>())});
      } else {
        row.insert(row.end(), {st.value("error", std::string("-")), "", "", "", "", ""});
      }
      table.push_back(std::move(row));
    }
    print_table(table);
  }
  if (!first_error.empty()) throw_error(ErrorCode::InvalidSpec, first_error);
}

json force_kind(json doc, const std::string& kind) {
  if (!doc.contains("spec") || !doc["spec"].is_object())
    throw_error(ErrorCode::InvalidSpec, "run config needs a \"spec\" object");
  if (doc["spec"].contains("kind") && doc["spec"]["kind"] != kind)
    throw_error(ErrorCode::InvalidSpec,
                "config kind '" + doc["spec"]["kind"].get<std::string>() +
                    "' conflicts with the subcommand");
  doc["spec"]["kind"] = kind;
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  CLI::App app{"MIG partition and benchmark orchestrator"};
  app.require_subcommand(1);
  app.add_flag("--json", ctx.as_json, "machine-readable JSON output");
  app.add_option("--remote", ctx.remote, "daemon base URL (default: in-process engine)");
  app.add_option("--data-dir", ctx.data_dir, "state directory (default: migperf-data)");
  app.add_option("--catalog", ctx.catalog,
                 "device catalog file (default: $MIGPERF_CATALOG or <data-dir>/catalog.json)");

  // device
  auto* device = app.add_subcommand("device", "device inventory");
  device->require_subcommand(1);
  device->add_subcommand("list", "list catalog devices")->callback([&] {
    render_devices(ctx, ctx.is_remote() ? ctx.http_get_json("/v1/devices")
                                        : ctx.engine().devices_json());
  });

  // mig
  auto* mig = app.add_subcommand("mig", "partition control");
  mig->require_subcommand(1);
  int dev = 0, gi = -1, start = -1;
  std::string profile, target, strategy = "strict";

  auto* mig_enable = mig->add_subcommand("enable", "enable MIG mode");
  mig_enable->add_option("--device", dev)->required();
  mig_enable->callback([&] {
    json payload = ctx.is_remote()
                       ? ctx.http_post_json("/v1/devices/" + std::to_string(dev) + "/mig",
                                            json{{"enabled", true}})
                       : ctx.engine().enable_mig_json(dev);
    if (ctx.as_json) emit_json(payload);
    else std::cout << "MIG enabled on device " << dev << "\n";
  });

  auto* mig_disable = mig->add_subcommand("disable", "disable MIG mode");
  mig_disable->add_option("--device", dev)->required();
  mig_disable->callback([&] {
    json payload = ctx.is_remote()
                       ? ctx.http_post_json("/v1/devices/" + std::to_string(dev) + "/mig",
                                            json{{"enabled", false}})
                       : ctx.engine().disable_mig_json(dev);
    if (ctx.as_json) emit_json(payload);
    else std::cout << "MIG disabled on device " << dev << "\n";
  });

  auto* mig_create = mig->add_subcommand("create", "create a GPU instance");
  mig_create->add_option("--device", dev)->required();
  mig_create->add_option("--profile", profile)->required();
  mig_create->add_option("--start", start, "explicit start slice");
  mig_create->callback([&] {
    std::optional<int> s;
    if (mig_create->count("--start")) s = start;
    json payload;
    if (ctx.is_remote()) {
      json body{{"profile", profile}};
      if (s) body["start"] = *s;
      payload = ctx.http_post_json("/v1/devices/" + std::to_string(dev) + "/instances", body);
    } else {
      payload = ctx.engine().create_gi_json(dev, profile, s);
    }
    if (ctx.as_json) emit_json(payload);
    else
      std::cout << "created gi " << payload["gi_id"].get<int>() << " (" << profile
                << ") at slice " << payload["start_slice"].get<int>() << "\n";
  });

  auto* mig_destroy = mig->add_subcommand("destroy", "destroy a GPU instance");
  mig_destroy->add_option("--device", dev)->required();
  mig_destroy->add_option("--gi", gi)->required();
  mig_destroy->callback([&] {
    json payload = ctx.is_remote()
                       ? ctx.http_delete_json("/v1/devices/" + std::to_string(dev) +
                                              "/instances/" + std::to_string(gi))
                       : ctx.engine().destroy_gi_json(dev, gi);
    if (ctx.as_json) emit_json(payload);
    else std::cout << "destroyed gi " << gi << "\n";
  });

  auto* mig_plan = mig->add_subcommand("plan", "repartition to a target profile multiset");
  mig_plan->add_option("--device", dev)->required();
  mig_plan->add_option("--target", target, "comma-separated profiles, e.g. \"4g.40gb,2g.20gb\"")
      ->required();
  mig_plan->add_option("--strategy", strategy, "strict|best_effort");
  mig_plan->callback([&] {
    auto profiles = split_list(target);
    json payload;
    if (ctx.is_remote()) {
      payload = ctx.http_post_json("/v1/devices/" + std::to_string(dev) + "/partitions",
                                   json{{"target", profiles}, {"strategy", strategy}});
    } else {
      payload = ctx.engine().apply_plan_json(dev, profiles, strategy);
    }
    render_plan(ctx, payload);
  });

  auto* mig_ls = mig->add_subcommand("ls", "list GPU instances");
  mig_ls->add_option("--device", dev)->required();
  mig_ls->callback([&] {
    render_instances(ctx, ctx.is_remote() ? ctx.http_get_json("/v1/devices/" +
                                                              std::to_string(dev) + "/instances")
                                          : ctx.engine().instances_json(dev));
  });

  // bench
  auto* bench = app.add_subcommand("bench", "run benchmarks");
  bench->require_subcommand(1);
  std::string config_path;

  auto* bench_train = bench->add_subcommand("train", "closed-loop training run");
  bench_train->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  bench_train->callback(
      [&] { do_bench(ctx, force_kind(load_config_file(config_path), "training")); });

  auto* bench_infer = bench->add_subcommand("infer", "inference run");
  bench_infer->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  bench_infer->callback(
      [&] { do_bench(ctx, force_kind(load_config_file(config_path), "inference")); });

  auto* bench_sweep = bench->add_subcommand("sweep", "grid sweep over profiles/batches/...");
  bench_sweep->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  bench_sweep->callback([&] {
    json doc = load_config_file(config_path);
    if (!doc.contains("axes"))
      throw_error(ErrorCode::InvalidSpec, "sweep config needs an \"axes\" object");
    do_bench(ctx, doc);
  });

  auto* bench_compare = bench->add_subcommand("compare", "MIG vs MPS sharing comparison");
  bench_compare->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  bench_compare->callback([&] {
    json doc = load_config_file(config_path);
    if (!doc.contains("replicas"))
      throw_error(ErrorCode::InvalidSpec, "compare config needs \"replicas\"");
    do_bench(ctx, doc);
  });

  // export
  auto* exp = app.add_subcommand("export", "export results");
  exp->require_subcommand(1);
  std::string runs_arg, kind = "summaries", out_path;

  auto* exp_csv = exp->add_subcommand("csv", "summaries or raw samples as CSV");
  exp_csv->add_option("--runs", runs_arg, "comma-separated run ids (default: all complete)");
  exp_csv->add_option("--kind", kind, "summaries|raw");
  exp_csv->add_option("--out", out_path, "output file (default: stdout)");
  exp_csv->callback([&] {
    std::string body =
        ctx.is_remote()
            ? ctx.http_get_text("/v1/export/csv?kind=" + kind + "&runs=" + runs_arg)
            : ctx.engine().export_csv(split_list(runs_arg), kind);
    write_output(body, out_path);
  });

  auto* exp_prom = exp->add_subcommand("prom", "Prometheus text exposition");
  exp_prom->add_option("--out", out_path, "output file (default: stdout)");
  exp_prom->callback([&] {
    std::string body = ctx.is_remote() ? ctx.http_get_text("/metrics")
                                       : ctx.engine().export_prometheus();
    write_output(body, out_path);
  });

  // report
  std::string figure_id;
  auto* rep = app.add_subcommand("report", "figure-shaped CSV datasets");
  rep->add_option("--figure", figure_id, "figure id, e.g. fig2_training_batch_sweep")
      ->required();
  rep->add_option("--runs", runs_arg, "comma-separated run ids (default: runs tagged for it)");
  rep->add_option("--out", out_path, "output file (default: stdout)");
  rep->callback([&] {
    std::string body = ctx.is_remote()
                           ? ctx.http_get_text("/v1/export/figure?id=" + figure_id +
                                               "&runs=" + runs_arg)
                           : ctx.engine().figure_csv(figure_id, split_list(runs_arg));
    write_output(body, out_path);
  });

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP daemon");
  int port = 9700;
  std::string host = "0.0.0.0";
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->callback([&] {
    api::HttpServer server(ctx.engine());
    std::cout << "listening on " << host << ":" << port << "\n";
    if (!server.listen(host, port))
      throw_error(ErrorCode::InvalidArgument,
                  "cannot listen on " + host + ":" + std::to_string(port));
  });

  // Let global flags like --json appear after the subcommand as well.
  std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* a) {
    a->fallthrough();
    for (auto* sub : a->get_subcommands({})) enable_fallthrough(sub);
  };
  enable_fallthrough(&app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const MigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
