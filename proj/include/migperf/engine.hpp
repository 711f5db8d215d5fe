#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "migperf/controller.hpp"
#include "migperf/export.hpp"
#include "migperf/telemetry.hpp"
#include "migperf/workload.hpp"

namespace migperf {

struct EngineOptions {
  std::string data_dir = "migperf-data";
  std::string catalog_path;     // empty: $MIGPERF_CATALOG, else <data_dir>/catalog.json
  std::string sim_config_path;  // empty: <data_dir>/sim_params.json
};

// Maps an operational error to an HTTP status code.
int http_status_for(ErrorCode code);

// The in-process service behind both the CLI and the HTTP daemon. All
// methods return the same JSON payloads either surface emits, so the two
// stay schema-identical by construction. Device state, the run registry and
// raw series persist under data_dir across invocations.
class Engine {
 public:
  explicit Engine(EngineOptions options);
  ~Engine();

  nlohmann::json devices_json() const;
  nlohmann::json instances_json(int device_id) const;
  nlohmann::json enable_mig_json(int device_id);
  nlohmann::json disable_mig_json(int device_id);
  nlohmann::json create_gi_json(int device_id, const std::string& profile,
                                std::optional<int> start);
  nlohmann::json destroy_gi_json(int device_id, int gi_id);
  nlohmann::json apply_plan_json(int device_id, const std::vector<std::string>& target,
                                 const std::string& strategy);

  // Accepts a run config, a sweep ({"axes": ...}) or a comparison
  // ({"replicas": ...}); validates, registers pending runs and queues
  // execution. Returns {"run_ids": [...]}.
  nlohmann::json submit_benchmark_json(const nlohmann::json& doc);
  nlohmann::json run_status_json(const std::string& run_id) const;
  nlohmann::json list_runs_json() const;

  std::string export_csv(std::vector<std::string> run_ids, const std::string& kind) const;
  std::string export_prometheus() const;
  std::string figure_csv(const std::string& figure_id,
                         std::vector<std::string> run_ids) const;

  // Blocks until all queued benchmark jobs have finished.
  void wait_idle();

  std::vector<std::string> runs_for_figure(const std::string& figure_id) const;
  std::vector<std::string> completed_runs() const;

  ctrl::Controller& controller() { return *controller_; }
  telemetry::MetricStore& store() { return *store_; }
  bench::RunRegistry& registry() { return registry_; }
  bench::Runner& runner() { return *runner_; }
  const sim::SimConfig& sim_config() const { return sim_config_; }
  const std::string& data_dir() const { return opts_.data_dir; }

 private:
  void enqueue(std::function<void()> job);
  void worker_loop();
  void persist_state();
  void persist_registry();
  void load_persisted();
  void register_pending(const bench::RunConfig& cfg);

  EngineOptions opts_;
  sim::SimConfig sim_config_;
  std::unique_ptr<ctrl::Controller> controller_;
  std::unique_ptr<telemetry::MetricStore> store_;
  bench::RunRegistry registry_;
  std::unique_ptr<bench::Runner> runner_;

  mutable std::mutex persist_mu_;

  std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::function<void()>> jobs_;
  bool stop_ = false;
  int active_ = 0;
  std::thread worker_;
};

}  // namespace migperf
