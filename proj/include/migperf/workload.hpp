#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "migperf/backend.hpp"
#include "migperf/controller.hpp"
#include "migperf/telemetry.hpp"

namespace migperf::bench {

enum class WorkloadKind { training, inference };
enum class LoopMode { closed, open };

const char* workload_kind_name(WorkloadKind k);
const char* loop_mode_name(LoopMode m);

// A benchmark description: what to run and for how long. Exactly one of
// duration_s / total_requests terminates the run.
struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::inference;
  std::string model;                         // preset name, or inline below
  std::optional<sim::ModelSpec> inline_model;
  int batch_size = 1;
  std::optional<int> sequence_length;        // tokens
  std::optional<double> duration_s;
  std::optional<std::int64_t> total_requests;
  LoopMode loop = LoopMode::closed;
  std::optional<double> arrival_rate;        // req/s, open loop only
  int concurrency = 1;                       // co-located replicas

  void validate() const;
};

struct RunTarget {
  enum class Kind { gi, profile, mps_shared, exclusive };
  Kind kind = Kind::exclusive;
  int gi_id = -1;        // kind == gi
  std::string profile;   // kind == profile: provision/reuse a GI of this profile
};

struct RunConfig {
  std::string run_id;  // derived from content when empty
  int device_id = 0;
  RunTarget target;
  WorkloadSpec spec;
  std::uint64_t seed = 0;
  std::optional<std::string> external_samples;  // replay file instead of the sim
};

// Axes are optional except profiles; absent axes fall back to the base spec.
struct SweepSpec {
  int device_id = 0;
  std::uint64_t seed = 0;
  std::string figure_id;  // tag carried onto every run
  std::vector<std::string> profiles;
  std::vector<int> batch_sizes;
  std::vector<int> sequence_lengths;
  std::vector<double> arrival_rates;
  WorkloadSpec base;
};

// MIG-vs-MPS pairing: k replicas on an equal MIG split against k replicas
// co-located under MPS, identical specs and seeds modulo arm.
struct CompareSpec {
  int device_id = 0;
  int replicas = 2;
  std::uint64_t seed = 0;
  std::string figure_id;
  WorkloadSpec spec;
  std::vector<std::string> models;    // optional axis; empty = spec.model
  std::vector<int> batch_sizes;       // optional axis
  std::vector<double> arrival_rates;  // optional axis (open loop)
};

// JSON codecs for the config-file formats.
WorkloadSpec workload_spec_from_json(const nlohmann::json& j);
nlohmann::json workload_spec_to_json(const WorkloadSpec& spec);
RunConfig run_config_from_json(const nlohmann::json& j);
SweepSpec sweep_spec_from_json(const nlohmann::json& j);
CompareSpec compare_spec_from_json(const nlohmann::json& j);

enum class RunStatus { pending, running, complete, failed };
const char* run_status_name(RunStatus s);

struct RunRecord {
  std::string run_id;
  int device_id = 0;
  std::string instance;  // telemetry instance label, e.g. "gpu0:gi3"
  std::string profile;   // empty for mps/exclusive targets
  WorkloadSpec spec;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> tags;
  RunStatus status = RunStatus::pending;
  std::string error;
  telemetry::RunWindow window;  // valid when complete
};

class RunRegistry {
 public:
  void put(const RunRecord& record);
  std::optional<RunRecord> get(const std::string& run_id) const;
  RunRecord get_or_throw(const std::string& run_id) const;
  bool contains(const std::string& run_id) const;
  void erase(const std::string& run_id);
  std::vector<RunRecord> all() const;  // submission order

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  mutable std::mutex mu_;
  std::vector<std::string> order_;
  std::map<std::string, RunRecord> records_;
};

// Pure simulation of one run on virtual time. All timestamps are
// milliseconds since run start; identical inputs give identical output.
struct SimResult {
  std::vector<telemetry::Point> latency;  // (completion ts, latency ms)
  std::vector<sim::TracePoint> trace;
  double warmup_end_ms = 0;
  double end_ms = 0;
};

SimResult simulate_run(const WorkloadSpec& spec, const sim::ServiceContext& ctx,
                       const sim::PerfModelParams& params, std::uint64_t seed);

// Drives runs against the controller and telemetry. Execution is
// synchronous and sequential per device; async submission is layered above.
class Runner {
 public:
  Runner(ctrl::Controller& controller, telemetry::MetricStore& store,
         RunRegistry& registry, sim::SimConfig sim_config);

  // Derives the run id a config will get (stable, content-based).
  static std::string derive_run_id(const RunConfig& cfg);

  std::string run_workload(const RunConfig& cfg);
  std::vector<std::string> run_sweep(const SweepSpec& sweep);

  struct CompareResult {
    std::vector<std::string> mig_runs;
    std::vector<std::string> mps_runs;
  };
  CompareResult run_sharing_comparison(const CompareSpec& cmp);

  // Expands a sweep/compare into the per-run configs without executing;
  // used to pre-validate and to announce run ids at submission time.
  std::vector<RunConfig> expand_sweep(const SweepSpec& sweep) const;
  struct ComparePlan {
    std::string split_profile;
    std::vector<RunConfig> mig_runs;
    std::vector<RunConfig> mps_runs;
  };
  ComparePlan expand_compare(const CompareSpec& cmp) const;

  const sim::SimConfig& sim_config() const { return sim_config_; }
  sim::ModelSpec resolve_model(const WorkloadSpec& spec) const;

 private:
  std::string execute(const RunConfig& cfg, std::map<std::string, std::string> tags);
  void replay_external(const RunConfig& cfg, const std::string& instance_label);

  ctrl::Controller& controller_;
  telemetry::MetricStore& store_;
  RunRegistry& registry_;
  sim::SimConfig sim_config_;
};

}  // namespace migperf::bench
