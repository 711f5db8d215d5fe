#include "migperf/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace migperf::bench {

using nlohmann::json;

const char* workload_kind_name(WorkloadKind k) {
  return k == WorkloadKind::training ? "training" : "inference";
}

const char* loop_mode_name(LoopMode m) { return m == LoopMode::closed ? "closed" : "open"; }

const char* run_status_name(RunStatus s) {
  switch (s) {
    case RunStatus::pending: return "pending";
    case RunStatus::running: return "running";
    case RunStatus::complete: return "complete";
    case RunStatus::failed: return "failed";
  }
  return "?";
}

void WorkloadSpec::validate() const {
  if (batch_size < 1)
    throw_error(ErrorCode::InvalidSpec, "batch_size must be >= 1");
  if (model.empty() && !inline_model)
    throw_error(ErrorCode::InvalidSpec, "a model is required");
  if (duration_s.has_value() == total_requests.has_value())
    throw_error(ErrorCode::InvalidSpec,
                "exactly one of duration_s / total_requests must be set");
  if (duration_s && *duration_s <= 0)
    throw_error(ErrorCode::InvalidSpec, "duration_s must be positive");
  if (total_requests && *total_requests < 1)
    throw_error(ErrorCode::InvalidSpec, "total_requests must be >= 1");
  if (sequence_length && *sequence_length < 1)
    throw_error(ErrorCode::InvalidSpec, "sequence_length must be >= 1");
  if (loop == LoopMode::open) {
    if (!arrival_rate || *arrival_rate <= 0)
      throw_error(ErrorCode::InvalidSpec, "open loop requires arrival_rate > 0");
  } else if (arrival_rate) {
    throw_error(ErrorCode::InvalidSpec, "arrival_rate is only valid for open loop");
  }
  if (concurrency < 1)
    throw_error(ErrorCode::InvalidSpec, "concurrency must be >= 1");
  if (inline_model) inline_model->validate();
}

namespace {

WorkloadKind kind_from_name(const std::string& s) {
  if (s == "training") return WorkloadKind::training;
  if (s == "inference") return WorkloadKind::inference;
  throw_error(ErrorCode::InvalidSpec, "workload kind must be training|inference, got '" + s + "'");
}

LoopMode loop_from_name(const std::string& s) {
  if (s == "closed") return LoopMode::closed;
  if (s == "open") return LoopMode::open;
  throw_error(ErrorCode::InvalidSpec, "loop must be closed|open, got '" + s + "'");
}

std::string sanitize_id(std::string s) {
  for (char& c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '.' || c == '-' || c == '_';
    if (!ok) c = '_';
  }
  return s;
}

std::string format_number(double v) {
  // Trim trailing zeros so ids like "-r25" stay readable.
  if (v == std::floor(v) && std::abs(v) < 1e15)
    return std::to_string(static_cast<long long>(v));
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

WorkloadSpec workload_spec_from_json(const json& j) {
  WorkloadSpec spec;
  try {
    spec.kind = kind_from_name(j.at("kind").get<std::string>());
    const auto& m = j.at("model");
    if (m.is_string()) {
      spec.model = m.get<std::string>();
    } else {
      sim::ModelSpec ms;
      ms.name = m.at("name").get<std::string>();
      ms.flops_per_sample = m.at("flops_per_sample").get<double>();
      ms.params_mem_gib = m.at("params_mem_gib").get<double>();
      ms.activation_mem_per_sample_mib = m.at("activation_mem_per_sample_mib").get<double>();
      spec.model = ms.name;
      spec.inline_model = std::move(ms);
    }
    spec.batch_size = j.at("batch_size").get<int>();
    if (j.contains("sequence_length") && !j["sequence_length"].is_null())
      spec.sequence_length = j["sequence_length"].get<int>();
    if (j.contains("duration_s") && !j["duration_s"].is_null())
      spec.duration_s = j["duration_s"].get<double>();
    if (j.contains("total_requests") && !j["total_requests"].is_null())
      spec.total_requests = j["total_requests"].get<std::int64_t>();
    if (j.contains("loop")) spec.loop = loop_from_name(j["loop"].get<std::string>());
    if (j.contains("arrival_rate") && !j["arrival_rate"].is_null())
      spec.arrival_rate = j["arrival_rate"].get<double>();
    if (j.contains("concurrency")) spec.concurrency = j["concurrency"].get<int>();
  } catch (const json::exception& e) {
    throw_error(ErrorCode::InvalidSpec, std::string("bad workload spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

json workload_spec_to_json(const WorkloadSpec& spec) {
  json j;
  j["kind"] = workload_kind_name(spec.kind);
  if (spec.inline_model) {
    j["model"] = {{"name", spec.inline_model->name},
                  {"flops_per_sample", spec.inline_model->flops_per_sample},
                  {"params_mem_gib", spec.inline_model->params_mem_gib},
                  {"activation_mem_per_sample_mib",
                   spec.inline_model->activation_mem_per_sample_mib}};
  } else {
    j["model"] = spec.model;
  }
  j["batch_size"] = spec.batch_size;
  if (spec.sequence_length) j["sequence_length"] = *spec.sequence_length;
  if (spec.duration_s) j["duration_s"] = *spec.duration_s;
  if (spec.total_requests) j["total_requests"] = *spec.total_requests;
  j["loop"] = loop_mode_name(spec.loop);
  if (spec.arrival_rate) j["arrival_rate"] = *spec.arrival_rate;
  j["concurrency"] = spec.concurrency;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  try {
    cfg.device_id = j.at("device").get<int>();
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("run_id")) cfg.run_id = j["run_id"].get<std::string>();
    const auto& t = j.at("target");
    if (t.is_string()) {
      std::string s = t.get<std::string>();
      if (s == "mps" || s == "mps_shared")
        cfg.target.kind = RunTarget::Kind::mps_shared;
      else if (s == "exclusive")
        cfg.target.kind = RunTarget::Kind::exclusive;
      else
        throw_error(ErrorCode::InvalidSpec, "target string must be mps|exclusive");
    } else if (t.contains("gi")) {
      cfg.target.kind = RunTarget::Kind::gi;
      cfg.target.gi_id = t["gi"].get<int>();
    } else if (t.contains("profile")) {
      cfg.target.kind = RunTarget::Kind::profile;
      cfg.target.profile = t["profile"].get<std::string>();
    } else {
      throw_error(ErrorCode::InvalidSpec, "target must be mps|exclusive|{gi}|{profile}");
    }
    cfg.spec = workload_spec_from_json(j.at("spec"));
    if (j.contains("external_samples"))
      cfg.external_samples = j["external_samples"].get<std::string>();
  } catch (const json::exception& e) {
    throw_error(ErrorCode::InvalidSpec, std::string("bad run config: ") + e.what());
  }
  return cfg;
}

SweepSpec sweep_spec_from_json(const json& j) {
  SweepSpec sweep;
  try {
    sweep.device_id = j.at("device").get<int>();
    sweep.seed = j.value("seed", std::uint64_t{0});
    sweep.figure_id = j.value("figure_id", std::string());
    const auto& axes = j.at("axes");
    sweep.profiles = axes.at("profile_name").get<std::vector<std::string>>();
    if (axes.contains("batch_size"))
      sweep.batch_sizes = axes["batch_size"].get<std::vector<int>>();
    if (axes.contains("sequence_length"))
      sweep.sequence_lengths = axes["sequence_length"].get<std::vector<int>>();
    if (axes.contains("arrival_rate"))
      sweep.arrival_rates = axes["arrival_rate"].get<std::vector<double>>();
    sweep.base = workload_spec_from_json(j.at("base"));
  } catch (const json::exception& e) {
    throw_error(ErrorCode::InvalidSpec, std::string("bad sweep spec: ") + e.what());
  }
  return sweep;
}

CompareSpec compare_spec_from_json(const json& j) {
  CompareSpec cmp;
  try {
    cmp.device_id = j.at("device").get<int>();
    cmp.replicas = j.at("replicas").get<int>();
    cmp.seed = j.value("seed", std::uint64_t{0});
    cmp.figure_id = j.value("figure_id", std::string());
    cmp.spec = workload_spec_from_json(j.at("spec"));
    if (j.contains("models")) cmp.models = j["models"].get<std::vector<std::string>>();
    if (j.contains("batch_sizes"))
      cmp.batch_sizes = j["batch_sizes"].get<std::vector<int>>();
    if (j.contains("arrival_rates"))
      cmp.arrival_rates = j["arrival_rates"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw_error(ErrorCode::InvalidSpec, std::string("bad compare spec: ") + e.what());
  }
  if (cmp.replicas < 1)
    throw_error(ErrorCode::InvalidSpec, "replicas must be >= 1");
  return cmp;
}

void RunRegistry::put(const RunRecord& record) {
  std::lock_guard lock(mu_);
  if (!records_.count(record.run_id)) order_.push_back(record.run_id);
  records_[record.run_id] = record;
}

std::optional<RunRecord> RunRegistry::get(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(run_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

RunRecord RunRegistry::get_or_throw(const std::string& run_id) const {
  auto r = get(run_id);
  if (!r) throw_error(ErrorCode::UnknownRun, "unknown run '" + run_id + "'");
  return *r;
}

bool RunRegistry::contains(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  return records_.count(run_id) > 0;
}

void RunRegistry::erase(const std::string& run_id) {
  std::lock_guard lock(mu_);
  records_.erase(run_id);
  order_.erase(std::remove(order_.begin(), order_.end(), run_id), order_.end());
}

std::vector<RunRecord> RunRegistry::all() const {
  std::lock_guard lock(mu_);
  std::vector<RunRecord> out;
  for (const auto& id : order_) out.push_back(records_.at(id));
  return out;
}

json RunRegistry::to_json() const {
  json runs = json::array();
  for (const auto& r : all()) {
    json j;
    j["run_id"] = r.run_id;
    j["device_id"] = r.device_id;
    j["instance"] = r.instance;
    j["profile"] = r.profile;
    j["seed"] = r.seed;
    j["status"] = run_status_name(r.status);
    if (!r.error.empty()) j["error"] = r.error;
    j["warmup_end_ms"] = r.window.warmup_end_ms;
    j["end_ms"] = r.window.end_ms;
    j["tags"] = r.tags;
    j["spec"] = workload_spec_to_json(r.spec);
    runs.push_back(std::move(j));
  }
  return json{{"runs", std::move(runs)}};
}

void RunRegistry::load_json(const json& doc) {
  for (const auto& j : doc.at("runs")) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.device_id = j.at("device_id").get<int>();
    r.instance = j.value("instance", std::string());
    r.profile = j.value("profile", std::string());
    r.seed = j.value("seed", std::uint64_t{0});
    std::string status = j.value("status", std::string("complete"));
    if (status == "complete")
      r.status = RunStatus::complete;
    else if (status == "failed")
      r.status = RunStatus::failed;
    else
      continue;  // pending/running did not survive the previous process
    r.error = j.value("error", std::string());
    r.window.warmup_end_ms = j.value("warmup_end_ms", 0.0);
    r.window.end_ms = j.value("end_ms", 0.0);
    if (j.contains("tags")) r.tags = j["tags"].get<std::map<std::string, std::string>>();
    r.spec = workload_spec_from_json(j.at("spec"));
    put(r);
  }
}

SimResult simulate_run(const WorkloadSpec& spec, const sim::ServiceContext& ctx,
                       const sim::PerfModelParams& params, std::uint64_t seed) {
  SimResult result;
  std::mt19937_64 service_rng(sim::mix_seed(seed, 1));
  std::vector<std::pair<double, double>> busy;

  if (spec.loop == LoopMode::closed) {
    double duration_ms =
        spec.duration_s ? *spec.duration_s * 1000.0 : std::numeric_limits<double>::infinity();
    std::int64_t limit =
        spec.total_requests ? *spec.total_requests : std::numeric_limits<std::int64_t>::max();
    double t = 0;
    std::int64_t count = 0;
    while (spec.total_requests ? count < limit : t < duration_ms) {
      double s = sim::service_time_ms(ctx, params, service_rng);
      if (s > params.alpha_ms) busy.emplace_back(t + params.alpha_ms, t + s);
      t += s;
      result.latency.push_back({t, s});
      ++count;
    }
    result.end_ms = spec.total_requests ? t : std::max(t, duration_ms);
  } else {
    // Arrivals draw from their own rng stream, so issuance is independent
    // of service times by construction.
    std::mt19937_64 arrival_rng(sim::mix_seed(seed, 0));
    std::exponential_distribution<double> gap(*spec.arrival_rate / 1000.0);  // per ms
    std::vector<double> arrivals;
    if (spec.total_requests) {
      double a = 0;
      for (std::int64_t i = 0; i < *spec.total_requests; ++i) {
        a += gap(arrival_rng);
        arrivals.push_back(a);
      }
    } else {
      double duration_ms = *spec.duration_s * 1000.0;
      double a = gap(arrival_rng);
      while (a < duration_ms) {
        arrivals.push_back(a);
        a += gap(arrival_rng);
      }
    }
    double server_free = 0;
    for (double a : arrivals) {
      double start = std::max(a, server_free);
      double s = sim::service_time_ms(ctx, params, service_rng);
      double completion = start + s;
      if (s > params.alpha_ms) busy.emplace_back(start + params.alpha_ms, completion);
      result.latency.push_back({completion, completion - a});
      server_free = completion;
    }
    double horizon = spec.duration_s ? *spec.duration_s * 1000.0 : 0.0;
    result.end_ms = std::max(horizon, arrivals.empty() ? 0.0 : result.latency.back().ts_ms);
  }

  if (result.latency.size() >= 10)
    result.warmup_end_ms = std::max(5000.0, result.latency[9].ts_ms);
  else
    result.warmup_end_ms = std::max(5000.0, result.end_ms);

  result.trace = sim::build_resource_trace(busy, result.end_ms, ctx, params);
  return result;
}

Runner::Runner(ctrl::Controller& controller, telemetry::MetricStore& store,
               RunRegistry& registry, sim::SimConfig sim_config)
    : controller_(controller),
      store_(store),
      registry_(registry),
      sim_config_(std::move(sim_config)) {}

sim::ModelSpec Runner::resolve_model(const WorkloadSpec& spec) const {
  if (spec.inline_model) return *spec.inline_model;
  return sim_config_.model_or_throw(spec.model);
}

std::string Runner::derive_run_id(const RunConfig& cfg) {
  if (!cfg.run_id.empty()) return sanitize_id(cfg.run_id);
  std::string id = "run-";
  id += cfg.spec.kind == WorkloadKind::training ? "train" : "infer";
  id += "-" + cfg.spec.model + "-b" + std::to_string(cfg.spec.batch_size);
  if (cfg.spec.sequence_length) id += "-l" + std::to_string(*cfg.spec.sequence_length);
  if (cfg.spec.arrival_rate) id += "-r" + format_number(*cfg.spec.arrival_rate);
  id += "-s" + std::to_string(cfg.seed);
  return sanitize_id(id);
}

namespace {

struct BindGuard {
  ctrl::Controller* controller = nullptr;
  int device_id = -1;
  int gi_id = -1;

  BindGuard() = default;
  BindGuard(const BindGuard&) = delete;
  BindGuard& operator=(const BindGuard&) = delete;

  ~BindGuard() {
    if (controller && gi_id >= 0) {
      try {
        controller->unbind_workload(device_id, gi_id);
      } catch (...) {
      }
    }
  }
};

}  // namespace

std::string Runner::execute(const RunConfig& cfg, std::map<std::string, std::string> tags) {
  cfg.spec.validate();
  sim::ModelSpec model = resolve_model(cfg.spec);
  std::string run_id = derive_run_id(cfg);

  // Re-running an id replaces the previous run wholesale.
  if (registry_.contains(run_id)) {
    registry_.erase(run_id);
    store_.erase_run(run_id);
  }

  RunRecord record;
  record.run_id = run_id;
  record.device_id = cfg.device_id;
  record.spec = cfg.spec;
  record.seed = cfg.seed;
  record.tags = std::move(tags);
  record.status = RunStatus::running;
  registry_.put(record);

  BindGuard guard;
  try {
    // A profile target resolves to a concrete instance, creating one when
    // no unbound instance of that profile exists.
    int target_gi = cfg.target.gi_id;
    if (cfg.target.kind == RunTarget::Kind::profile) {
      auto snap = controller_.snapshot(cfg.device_id);
      snap.catalog.profile_or_throw(cfg.target.profile);
      target_gi = -1;
      for (const auto& gi : snap.instances) {
        if (gi.profile == cfg.target.profile && gi.bound_run.empty()) {
          target_gi = gi.gi_id;
          break;
        }
      }
      if (target_gi < 0) {
        if (!snap.mig_enabled) {
          if (snap.sharing_mode == device::SharingMode::mps)
            controller_.set_sharing_mode(cfg.device_id, device::SharingMode::exclusive);
          controller_.enable_mig(cfg.device_id);
        }
        target_gi = controller_.create_gi(cfg.device_id, cfg.target.profile);
      }
    }

    auto snap = controller_.snapshot(cfg.device_id);
    const auto& entry = snap.catalog;

    sim::ServiceContext ctx;
    ctx.model = model;
    ctx.batch_size = cfg.spec.batch_size;
    ctx.sequence_length = cfg.spec.sequence_length;
    ctx.device_total_slices = entry.total_compute_slices;

    std::string instance;
    double capacity_mib = 0;

    switch (cfg.target.kind) {
      case RunTarget::Kind::profile:
      case RunTarget::Kind::gi: {
        const auto* gi = snap.find_gi(target_gi);
        if (!gi)
          throw_error(ErrorCode::BindFailed,
                      "no GPU instance " + std::to_string(target_gi) + " on device " +
                          std::to_string(cfg.device_id));
        const auto& p = entry.profile_or_throw(gi->profile);
        ctx.mode = sim::ShareMode::mig;
        ctx.slices = p.compute_slices;
        ctx.co_tenants = 1;
        capacity_mib = p.memory_gib * 1024.0;
        instance = "gpu" + std::to_string(cfg.device_id) + ":gi" + std::to_string(gi->gi_id);
        record.profile = gi->profile;
        try {
          controller_.bind_workload(cfg.device_id, gi->gi_id, run_id);
        } catch (const MigError& e) {
          throw_error(ErrorCode::BindFailed, e.what());
        }
        guard.controller = &controller_;
        guard.device_id = cfg.device_id;
        guard.gi_id = gi->gi_id;
        break;
      }
      case RunTarget::Kind::mps_shared: {
        if (snap.sharing_mode != device::SharingMode::mps)
          controller_.set_sharing_mode(cfg.device_id, device::SharingMode::mps);
        ctx.mode = sim::ShareMode::mps;
        ctx.slices = entry.total_compute_slices;
        ctx.co_tenants = cfg.spec.concurrency;
        capacity_mib = entry.total_memory_gib * 1024.0 / cfg.spec.concurrency;
        instance = "gpu" + std::to_string(cfg.device_id) + ":mps";
        break;
      }
      case RunTarget::Kind::exclusive: {
        if (snap.sharing_mode == device::SharingMode::mps)
          controller_.set_sharing_mode(cfg.device_id, device::SharingMode::exclusive);
        else if (snap.mig_enabled && !snap.instances.empty())
          throw_error(ErrorCode::ModeConflict,
                      "device " + std::to_string(cfg.device_id) +
                          " is partitioned; destroy instances or target a GI");
        else if (snap.mig_enabled)
          controller_.disable_mig(cfg.device_id);
        ctx.mode = sim::ShareMode::mig;  // isolated whole device
        ctx.slices = entry.total_compute_slices;
        ctx.co_tenants = 1;
        capacity_mib = entry.total_memory_gib * 1024.0;
        instance = "gpu" + std::to_string(cfg.device_id) + ":device";
        break;
      }
    }

    record.instance = instance;
    registry_.put(record);

    double need_mib = sim::fb_mib(ctx);
    if (need_mib > capacity_mib)
      throw_error(ErrorCode::InvalidSpec,
                  "model '" + model.name + "' at batch " + std::to_string(cfg.spec.batch_size) +
                      " needs " + format_number(need_mib) + " MiB but the target has " +
                      format_number(capacity_mib) + " MiB");

    if (cfg.external_samples) {
      replay_external(cfg, instance);
      auto series = store_.run_series(run_id);
      double end = 0;
      for (const auto& s : series)
        if (!s.points.empty()) end = std::max(end, s.points.back().ts_ms);
      record.window = {0.0, end};
    } else {
      sim::PerfModelParams params = sim_config_.params_for_device(entry.model_name);
      SimResult sim_result = simulate_run(cfg.spec, ctx, params, cfg.seed);

      // Chronological merge: trace windows first at equal timestamps.
      telemetry::SeriesKey lat{run_id, instance, telemetry::kLatencyMs};
      telemetry::SeriesKey gract{run_id, instance, telemetry::kGractFrac};
      telemetry::SeriesKey power{run_id, instance, telemetry::kPowerW};
      telemetry::SeriesKey fb{run_id, instance, telemetry::kFbMib};
      size_t li = 0, ti = 0;
      while (li < sim_result.latency.size() || ti < sim_result.trace.size()) {
        bool take_trace =
            ti < sim_result.trace.size() &&
            (li >= sim_result.latency.size() ||
             sim_result.trace[ti].ts_ms <= sim_result.latency[li].ts_ms);
        if (take_trace) {
          const auto& tp = sim_result.trace[ti++];
          store_.append(gract, tp.ts_ms, tp.gract_frac);
          store_.append(power, tp.ts_ms, tp.power_w);
          store_.append(fb, tp.ts_ms, tp.fb_mib);
        } else {
          const auto& lp = sim_result.latency[li++];
          store_.append(lat, lp.ts_ms, lp.value);
        }
      }
      record.window = {sim_result.warmup_end_ms, sim_result.end_ms};
    }
  } catch (const std::exception& e) {
    record.status = RunStatus::failed;
    record.error = e.what();
    registry_.put(record);
    store_.finish_run(run_id);
    throw;
  }

  store_.set_run_window(run_id, record.window);
  store_.finish_run(run_id);
  record.status = RunStatus::complete;
  registry_.put(record);
  return run_id;
}

void Runner::replay_external(const RunConfig& cfg, const std::string& instance_label) {
  auto samples = sim::read_sample_file(*cfg.external_samples);
  std::string run_id = derive_run_id(cfg);
  // Stable per-series sort; the file may interleave kinds arbitrarily.
  std::stable_sort(samples.begin(), samples.end(),
                   [](const sim::BackendSample& a, const sim::BackendSample& b) {
                     return a.ts_ms < b.ts_ms;
                   });
  for (const auto& s : samples) {
    std::string instance = s.instance.empty() ? instance_label : s.instance;
    store_.append({run_id, instance, s.kind}, s.ts_ms, s.value);
  }
}

std::string Runner::run_workload(const RunConfig& cfg) { return execute(cfg, {}); }

std::vector<RunConfig> Runner::expand_sweep(const SweepSpec& sweep) const {
  sweep.base.validate();
  if (sweep.profiles.empty())
    throw_error(ErrorCode::InvalidSpec, "sweep needs at least one profile");
  auto snap = controller_.snapshot(sweep.device_id);

  if (!sweep.arrival_rates.empty() && sweep.base.loop != LoopMode::open)
    throw_error(ErrorCode::InvalidSpec, "arrival_rate axis requires an open-loop base");

  sim::ModelSpec model = resolve_model(sweep.base);
  for (const auto& profile : sweep.profiles) {
    const auto& p = snap.catalog.profile_or_throw(profile);
    if (!device::validate_config(snap.catalog, {profile}).feasible)
      throw_error(ErrorCode::InvalidSpec,
                  "profile '" + profile + "' is not feasible alone on device " +
                      std::to_string(sweep.device_id));
    double worst_batch = sweep.batch_sizes.empty()
                             ? sweep.base.batch_size
                             : *std::max_element(sweep.batch_sizes.begin(),
                                                 sweep.batch_sizes.end());
    double need = model.params_mem_gib * 1024.0 +
                  worst_batch * model.activation_mem_per_sample_mib;
    if (need > p.memory_gib * 1024.0)
      throw_error(ErrorCode::InvalidSpec,
                  "model '" + model.name + "' does not fit profile '" + profile + "'");
  }

  std::vector<int> batches = sweep.batch_sizes;
  if (batches.empty()) batches = {sweep.base.batch_size};
  std::vector<std::optional<int>> seqs;
  if (sweep.sequence_lengths.empty())
    seqs.push_back(sweep.base.sequence_length);
  else
    for (int l : sweep.sequence_lengths) seqs.emplace_back(l);
  std::vector<std::optional<double>> rates;
  if (sweep.arrival_rates.empty())
    rates.push_back(sweep.base.arrival_rate);
  else
    for (double r : sweep.arrival_rates) rates.emplace_back(r);

  std::string prefix = sweep.figure_id.empty() ? "sweep" : sweep.figure_id;
  std::vector<RunConfig> configs;
  std::uint64_t index = 0;
  for (const auto& profile : sweep.profiles) {
    for (int b : batches) {
      for (const auto& l : seqs) {
        for (const auto& r : rates) {
          RunConfig cfg;
          cfg.device_id = sweep.device_id;
          cfg.target.kind = RunTarget::Kind::profile;
          cfg.target.profile = profile;
          cfg.spec = sweep.base;
          cfg.spec.batch_size = b;
          cfg.spec.sequence_length = l;
          cfg.spec.arrival_rate = r;
          cfg.seed = sweep.seed + index;
          std::string id = prefix + "-s" + std::to_string(sweep.seed) + "-p" + profile +
                           "-b" + std::to_string(b);
          if (l) id += "-l" + std::to_string(*l);
          if (r && sweep.base.loop == LoopMode::open) id += "-r" + format_number(*r);
          cfg.run_id = sanitize_id(id);
          cfg.spec.validate();
          configs.push_back(std::move(cfg));
          ++index;
        }
      }
    }
  }
  return configs;
}

std::vector<std::string> Runner::run_sweep(const SweepSpec& sweep) {
  auto configs = expand_sweep(sweep);
  std::vector<std::string> ids;
  for (const auto& cfg : configs) {
    try {
      ctrl::PartitionPlan plan{sweep.device_id, {cfg.target.profile},
                               ctrl::PlanStrategy::strict};
      controller_.apply_plan(plan);

      std::map<std::string, std::string> tags;
      if (!sweep.figure_id.empty()) tags["figure"] = sweep.figure_id;
      tags["profile"] = cfg.target.profile;
      tags["batch_size"] = std::to_string(cfg.spec.batch_size);
      if (cfg.spec.sequence_length)
        tags["sequence_length"] = std::to_string(*cfg.spec.sequence_length);
      if (cfg.spec.arrival_rate)
        tags["arrival_rate"] = format_number(*cfg.spec.arrival_rate);
      tags["model"] = cfg.spec.model;
      ids.push_back(execute(cfg, std::move(tags)));
    } catch (const MigError& e) {
      throw MigError(e.code(), "sweep point '" + cfg.run_id + "': " + e.what());
    }
  }
  return ids;
}

Runner::ComparePlan Runner::expand_compare(const CompareSpec& cmp) const {
  cmp.spec.validate();
  auto snap = controller_.snapshot(cmp.device_id);
  const auto& entry = snap.catalog;

  ComparePlan plan;
  for (const auto& p : entry.profiles) {
    if (p.compute_slices * cmp.replicas != entry.total_compute_slices) continue;
    std::vector<std::string> target(cmp.replicas, p.name);
    if (device::validate_config(entry, target).feasible) {
      plan.split_profile = p.name;
      break;
    }
  }
  if (plan.split_profile.empty())
    throw_error(ErrorCode::NoEqualSplit,
                "device " + std::to_string(cmp.device_id) + " (" + entry.model_name +
                    ") has no " + std::to_string(cmp.replicas) + "-way equal MIG split");

  std::vector<std::string> models = cmp.models;
  if (models.empty()) models = {cmp.spec.model};
  std::vector<int> batches = cmp.batch_sizes;
  if (batches.empty()) batches = {cmp.spec.batch_size};
  std::vector<std::optional<double>> rates;
  if (cmp.arrival_rates.empty())
    rates.push_back(cmp.spec.arrival_rate);
  else
    for (double r : cmp.arrival_rates) rates.emplace_back(r);
  if (!cmp.arrival_rates.empty() && cmp.spec.loop != LoopMode::open)
    throw_error(ErrorCode::InvalidSpec, "arrival_rates axis requires an open-loop spec");

  // Both arms must fit before anything runs: the split instance's memory on
  // the MIG side, an equal share of device memory on the MPS side.
  const auto& split = entry.profile_or_throw(plan.split_profile);
  double mig_cap = split.memory_gib * 1024.0;
  double mps_cap = entry.total_memory_gib * 1024.0 / cmp.replicas;
  int worst_batch = *std::max_element(batches.begin(), batches.end());
  for (const auto& m : models) {
    WorkloadSpec probe = cmp.spec;
    probe.model = m;
    probe.inline_model.reset();
    sim::ModelSpec model = resolve_model(probe);
    double need = model.params_mem_gib * 1024.0 +
                  worst_batch * model.activation_mem_per_sample_mib;
    if (need > mig_cap || need > mps_cap)
      throw_error(ErrorCode::InvalidSpec,
                  "model '" + m + "' at batch " + std::to_string(worst_batch) +
                      " does not fit a " + std::to_string(cmp.replicas) + "-way split of " +
                      entry.model_name);
  }

  std::string prefix = cmp.figure_id.empty() ? "compare" : cmp.figure_id;
  for (const char* arm : {"mig", "mps"}) {
    auto& out = std::string(arm) == "mig" ? plan.mig_runs : plan.mps_runs;
    for (const auto& m : models) {
      for (int b : batches) {
        for (const auto& r : rates) {
          for (int i = 0; i < cmp.replicas; ++i) {
            RunConfig cfg;
            cfg.device_id = cmp.device_id;
            cfg.spec = cmp.spec;
            cfg.spec.model = m;
            cfg.spec.inline_model.reset();
            cfg.spec.batch_size = b;
            cfg.spec.arrival_rate = r;
            cfg.spec.concurrency = cmp.replicas;
            cfg.seed = cmp.seed + static_cast<std::uint64_t>(i);
            if (std::string(arm) == "mig") {
              cfg.target.kind = RunTarget::Kind::profile;
              cfg.target.profile = plan.split_profile;
            } else {
              cfg.target.kind = RunTarget::Kind::mps_shared;
            }
            std::string id = prefix + "-s" + std::to_string(cmp.seed) + "-" + arm + "-" + m +
                             "-b" + std::to_string(b);
            if (r && cmp.spec.loop == LoopMode::open) id += "-r" + format_number(*r);
            id += "-i" + std::to_string(i);
            cfg.run_id = sanitize_id(id);
            cfg.spec.validate();
            resolve_model(cfg.spec);  // fail early on model typos
            out.push_back(std::move(cfg));
          }
        }
      }
    }
  }
  return plan;
}

Runner::CompareResult Runner::run_sharing_comparison(const CompareSpec& cmp) {
  ComparePlan plan = expand_compare(cmp);
  CompareResult result;

  auto tags_for = [&](const RunConfig& cfg, const char* arm, int replica) {
    std::map<std::string, std::string> tags;
    if (!cmp.figure_id.empty()) tags["figure"] = cmp.figure_id;
    tags["arm"] = arm;
    tags["model"] = cfg.spec.model;
    tags["batch_size"] = std::to_string(cfg.spec.batch_size);
    if (cfg.spec.arrival_rate) tags["arrival_rate"] = format_number(*cfg.spec.arrival_rate);
    tags["replicas"] = std::to_string(cmp.replicas);
    tags["replica"] = std::to_string(replica);
    return tags;
  };

  // MIG arm: k replicas, each pinned to its own instance of the equal split.
  std::vector<std::string> split(cmp.replicas, plan.split_profile);
  controller_.apply_plan({cmp.device_id, split, ctrl::PlanStrategy::strict});
  auto rows = controller_.track_instances(cmp.device_id);
  for (size_t idx = 0; idx < plan.mig_runs.size(); ++idx) {
    RunConfig cfg = plan.mig_runs[idx];
    int replica = static_cast<int>(idx % cmp.replicas);
    cfg.target.kind = RunTarget::Kind::gi;
    cfg.target.gi_id = rows[replica].gi_id;
    result.mig_runs.push_back(execute(cfg, tags_for(cfg, "mig", replica)));
  }

  // MPS arm: same specs and seeds, co-located on the whole device.
  controller_.apply_plan({cmp.device_id, {}, ctrl::PlanStrategy::strict});
  controller_.set_sharing_mode(cmp.device_id, device::SharingMode::mps);
  for (size_t idx = 0; idx < plan.mps_runs.size(); ++idx) {
    RunConfig cfg = plan.mps_runs[idx];
    int replica = static_cast<int>(idx % cmp.replicas);
    result.mps_runs.push_back(execute(cfg, tags_for(cfg, "mps", replica)));
  }
  controller_.set_sharing_mode(cmp.device_id, device::SharingMode::exclusive);
  return result;
}

}  // namespace migperf::bench
