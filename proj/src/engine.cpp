#include "migperf/engine.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace migperf {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownDevice:
    case ErrorCode::UnknownRun:
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::Busy:
    case ErrorCode::BusyInstance:
    case ErrorCode::AlreadyBound:
    case ErrorCode::AlreadyEnabled:
    case ErrorCode::AlreadyDisabled:
    case ErrorCode::ModeConflict:
      return 409;
    default:
      return 400;
  }
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorCode::ParseError, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

// Materializes the default config at `fallback` when no explicit path is
// given and no file exists yet; explicit paths must exist.
std::string resolve_config(const std::string& explicit_path, const char* env_var,
                           const std::string& fallback, const std::string& default_text) {
  if (!explicit_path.empty()) return explicit_path;
  if (env_var) {
    if (const char* env = std::getenv(env_var); env && *env) return env;
  }
  if (!fs::exists(fallback)) write_file(fallback, default_text);
  return fallback;
}

}  // namespace

Engine::Engine(EngineOptions options) : opts_(std::move(options)) {
  fs::create_directories(opts_.data_dir);
  fs::create_directories(fs::path(opts_.data_dir) / "series");

  std::string catalog_path =
      resolve_config(opts_.catalog_path, "MIGPERF_CATALOG",
                     (fs::path(opts_.data_dir) / "catalog.json").string(),
                     device::default_catalog_text());
  auto catalog = device::load_catalog(catalog_path);
  if (catalog.empty())
    throw_error(ErrorCode::InvalidCatalog, catalog_path + ": catalog has no devices");

  std::string sim_path =
      resolve_config(opts_.sim_config_path, nullptr,
                     (fs::path(opts_.data_dir) / "sim_params.json").string(),
                     sim::default_sim_config_text());
  sim_config_ = sim::load_sim_config(sim_path);

  controller_ = std::make_unique<ctrl::Controller>(std::move(catalog));
  store_ = std::make_unique<telemetry::MetricStore>(
      (fs::path(opts_.data_dir) / "series").string());
  runner_ = std::make_unique<bench::Runner>(*controller_, *store_, registry_, sim_config_);

  load_persisted();
  worker_ = std::thread([this] { worker_loop(); });
}

Engine::~Engine() {
  {
    std::lock_guard lock(jobs_mu_);
    stop_ = true;
  }
  jobs_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Engine::worker_loop() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(jobs_mu_);
      jobs_cv_.wait(lock, [this] { return stop_ || !jobs_.empty(); });
      if (stop_ && jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
      ++active_;
    }
    try {
      job();
    } catch (...) {
      // Failures are recorded on the run records; the worker keeps going.
    }
    {
      std::lock_guard lock(jobs_mu_);
      --active_;
    }
    idle_cv_.notify_all();
    persist_state();
    persist_registry();
  }
}

void Engine::enqueue(std::function<void()> job) {
  {
    std::lock_guard lock(jobs_mu_);
    jobs_.push_back(std::move(job));
  }
  jobs_cv_.notify_one();
}

void Engine::wait_idle() {
  std::unique_lock lock(jobs_mu_);
  idle_cv_.wait(lock, [this] { return jobs_.empty() && active_ == 0; });
}

void Engine::persist_state() {
  std::lock_guard lock(persist_mu_);
  json devices = json::array();
  for (size_t i = 0; i < controller_->device_count(); ++i) {
    auto snap = controller_->snapshot(static_cast<int>(i));
    json instances = json::array();
    for (const auto& gi : snap.instances) {
      json cis = json::array();
      for (const auto& ci : gi.compute_instances)
        cis.push_back({{"ci_id", ci.ci_id}, {"slices", ci.slices}});
      instances.push_back({{"gi_id", gi.gi_id},
                           {"profile", gi.profile},
                           {"start_slice", gi.start_slice},
                           {"cis", std::move(cis)}});
    }
    devices.push_back({{"device_id", snap.device_id},
                       {"mig_enabled", snap.mig_enabled},
                       {"sharing_mode", device::sharing_mode_name(snap.sharing_mode)},
                       {"next_gi_id", snap.next_gi_id},
                       {"next_ci_id", snap.next_ci_id},
                       {"instances", std::move(instances)}});
  }
  write_file((fs::path(opts_.data_dir) / "state.json").string(),
             json{{"devices", std::move(devices)}}.dump(2) + "\n");
}

void Engine::persist_registry() {
  std::lock_guard lock(persist_mu_);
  write_file((fs::path(opts_.data_dir) / "runs.json").string(),
             registry_.to_json().dump(2) + "\n");
}

void Engine::load_persisted() {
  auto state_path = fs::path(opts_.data_dir) / "state.json";
  if (fs::exists(state_path)) {
    json doc = json::parse(read_file(state_path.string()));
    for (const auto& d : doc.at("devices")) {
      int id = d.at("device_id").get<int>();
      if (id < 0 || id >= static_cast<int>(controller_->device_count())) continue;
      device::DeviceState state = controller_->snapshot(id);
      state.mig_enabled = d.at("mig_enabled").get<bool>();
      state.sharing_mode = device::sharing_mode_from_name(d.at("sharing_mode").get<std::string>());
      state.next_gi_id = d.value("next_gi_id", 1);
      state.next_ci_id = d.value("next_ci_id", 1);
      state.instances.clear();
      for (const auto& gij : d.at("instances")) {
        device::GpuInstance gi;
        gi.gi_id = gij.at("gi_id").get<int>();
        gi.profile = gij.at("profile").get<std::string>();
        gi.start_slice = gij.at("start_slice").get<int>();
        // Binds never survive a process: runs are synchronous.
        for (const auto& cij : gij.value("cis", json::array()))
          gi.compute_instances.push_back(
              {cij.at("ci_id").get<int>(), cij.at("slices").get<int>()});
        state.instances.push_back(std::move(gi));
      }
      controller_->restore(id, state);
    }
  }

  auto runs_path = fs::path(opts_.data_dir) / "runs.json";
  if (fs::exists(runs_path)) {
    registry_.load_json(json::parse(read_file(runs_path.string())));
    for (const auto& record : registry_.all()) {
      if (record.status != bench::RunStatus::complete) continue;
      try {
        store_->load_run_file(record.run_id);
        store_->set_run_window(record.run_id, record.window);
      } catch (const std::exception& e) {
        bench::RunRecord broken = record;
        broken.status = bench::RunStatus::failed;
        broken.error = std::string("series unreadable: ") + e.what();
        registry_.put(broken);
      }
    }
  }
}

nlohmann::json Engine::devices_json() const {
  json devices = json::array();
  for (size_t i = 0; i < controller_->device_count(); ++i) {
    auto snap = controller_->snapshot(static_cast<int>(i));
    devices.push_back({{"device_id", snap.device_id},
                       {"model_name", snap.catalog.model_name},
                       {"total_compute_slices", snap.catalog.total_compute_slices},
                       {"total_memory_gib", snap.catalog.total_memory_gib},
                       {"mig_enabled", snap.mig_enabled},
                       {"sharing_mode", device::sharing_mode_name(snap.sharing_mode)},
                       {"instance_count", snap.instances.size()}});
  }
  return json{{"devices", std::move(devices)}};
}

nlohmann::json Engine::instances_json(int device_id) const {
  json rows = json::array();
  for (const auto& row : controller_->track_instances(device_id)) {
    rows.push_back({{"gi_id", row.gi_id},
                    {"profile", row.profile},
                    {"start_slice", row.start_slice},
                    {"bound_workload", row.bound_run}});
  }
  return json{{"device_id", device_id}, {"instances", std::move(rows)}};
}

nlohmann::json Engine::enable_mig_json(int device_id) {
  controller_->enable_mig(device_id);
  persist_state();
  return json{{"device_id", device_id}, {"mig_enabled", true}};
}

nlohmann::json Engine::disable_mig_json(int device_id) {
  controller_->disable_mig(device_id);
  persist_state();
  return json{{"device_id", device_id}, {"mig_enabled", false}};
}

nlohmann::json Engine::create_gi_json(int device_id, const std::string& profile,
                                      std::optional<int> start) {
  int gi_id = controller_->create_gi(device_id, profile, start);
  persist_state();
  auto snap = controller_->snapshot(device_id);
  const auto* gi = snap.find_gi(gi_id);
  return json{{"device_id", device_id},
              {"gi_id", gi_id},
              {"profile", profile},
              {"start_slice", gi ? gi->start_slice : -1}};
}

nlohmann::json Engine::destroy_gi_json(int device_id, int gi_id) {
  controller_->destroy_gi(device_id, gi_id);
  persist_state();
  return json{{"device_id", device_id}, {"destroyed", gi_id}};
}

nlohmann::json Engine::apply_plan_json(int device_id, const std::vector<std::string>& target,
                                       const std::string& strategy) {
  ctrl::PartitionPlan plan{device_id, target, ctrl::plan_strategy_from_name(strategy)};
  auto script = controller_->apply_plan(plan);
  persist_state();
  json steps = json::array();
  for (const auto& s : script.steps) {
    if (s.kind == ctrl::ScriptStep::Kind::destroy) {
      steps.push_back({{"op", "destroy"}, {"gi_id", s.gi_id}});
    } else {
      steps.push_back({{"op", "create"},
                       {"gi_id", s.gi_id},
                       {"profile", s.profile},
                       {"start_slice", s.start_slice}});
    }
  }
  json out{{"device_id", device_id}, {"steps", std::move(steps)}};
  if (!script.dropped.empty()) out["dropped"] = script.dropped;
  out["instances"] = instances_json(device_id)["instances"];
  return out;
}

void Engine::register_pending(const bench::RunConfig& cfg) {
  bench::RunRecord rec;
  rec.run_id = bench::Runner::derive_run_id(cfg);
  rec.device_id = cfg.device_id;
  rec.spec = cfg.spec;
  rec.seed = cfg.seed;
  rec.status = bench::RunStatus::pending;
  registry_.put(rec);
}

nlohmann::json Engine::submit_benchmark_json(const nlohmann::json& doc) {
  std::vector<std::string> ids;

  nlohmann::json doc_with_seed = doc;
  if (!doc_with_seed.contains("seed")) doc_with_seed["seed"] = sim_config_.params.seed;
  const nlohmann::json& body = doc_with_seed;

  if (body.contains("axes")) {
    auto sweep = bench::sweep_spec_from_json(body);
    auto configs = runner_->expand_sweep(sweep);  // validates the whole grid
    for (const auto& cfg : configs) {
      ids.push_back(cfg.run_id);
      register_pending(cfg);
    }
    enqueue([this, sweep] {
      try {
        runner_->run_sweep(sweep);
      } catch (const std::exception& e) {
        for (const auto& cfg : runner_->expand_sweep(sweep)) {
          auto rec = registry_.get(cfg.run_id);
          if (rec && rec->status == bench::RunStatus::pending) {
            rec->status = bench::RunStatus::failed;
            rec->error = std::string("sweep aborted: ") + e.what();
            registry_.put(*rec);
          }
        }
      }
    });
  } else if (body.contains("replicas")) {
    auto cmp = bench::compare_spec_from_json(body);
    auto plan = runner_->expand_compare(cmp);
    for (const auto& cfg : plan.mig_runs) {
      ids.push_back(cfg.run_id);
      register_pending(cfg);
    }
    for (const auto& cfg : plan.mps_runs) {
      ids.push_back(cfg.run_id);
      register_pending(cfg);
    }
    enqueue([this, cmp] {
      try {
        runner_->run_sharing_comparison(cmp);
      } catch (const std::exception& e) {
        auto plan = runner_->expand_compare(cmp);
        auto mark = [&](const std::vector<bench::RunConfig>& cfgs) {
          for (const auto& cfg : cfgs) {
            auto rec = registry_.get(cfg.run_id);
            if (rec && rec->status == bench::RunStatus::pending) {
              rec->status = bench::RunStatus::failed;
              rec->error = std::string("comparison aborted: ") + e.what();
              registry_.put(*rec);
            }
          }
        };
        mark(plan.mig_runs);
        mark(plan.mps_runs);
      }
    });
  } else {
    auto cfg = bench::run_config_from_json(body);
    cfg.spec.validate();
    runner_->resolve_model(cfg.spec);
    controller_->snapshot(cfg.device_id);  // UnknownDevice check up front
    std::string id = bench::Runner::derive_run_id(cfg);
    cfg.run_id = id;
    ids.push_back(id);
    register_pending(cfg);
    enqueue([this, cfg] {
      try {
        runner_->run_workload(cfg);
      } catch (const std::exception&) {
        // recorded on the run by the runner
      }
    });
  }

  persist_registry();
  return json{{"run_ids", ids}};
}

nlohmann::json Engine::run_status_json(const std::string& run_id) const {
  auto record = registry_.get_or_throw(run_id);
  json j{{"run_id", record.run_id},
         {"device_id", record.device_id},
         {"status", bench::run_status_name(record.status)},
         {"instance", record.instance},
         {"profile", record.profile},
         {"seed", record.seed},
         {"tags", record.tags},
         {"spec", bench::workload_spec_to_json(record.spec)}};
  if (record.status == bench::RunStatus::failed) j["error"] = record.error;
  if (record.status == bench::RunStatus::complete) {
    auto s = store_->summarize(run_id, record.spec.batch_size);
    j["summary"] = {{"run_id", s.run_id},
                    {"avg_latency_ms", s.avg_latency_ms},
                    {"p99_latency_ms", s.p99_latency_ms},
                    {"throughput_batch_per_s", s.throughput_batch_per_s},
                    {"throughput_samples_per_s", s.throughput_samples_per_s},
                    {"mean_gract_frac", s.mean_gract_frac},
                    {"peak_fb_mib", s.peak_fb_mib},
                    {"energy_mj", s.energy_mj}};
    j["warmup_end_ms"] = record.window.warmup_end_ms;
    j["end_ms"] = record.window.end_ms;
  }
  return j;
}

nlohmann::json Engine::list_runs_json() const {
  json runs = json::array();
  for (const auto& r : registry_.all()) {
    runs.push_back({{"run_id", r.run_id},
                    {"status", bench::run_status_name(r.status)},
                    {"device_id", r.device_id},
                    {"instance", r.instance},
                    {"tags", r.tags}});
  }
  return json{{"runs", std::move(runs)}};
}

std::vector<std::string> Engine::completed_runs() const {
  std::vector<std::string> ids;
  for (const auto& r : registry_.all())
    if (r.status == bench::RunStatus::complete) ids.push_back(r.run_id);
  return ids;
}

std::vector<std::string> Engine::runs_for_figure(const std::string& figure_id) const {
  auto tagged = [this](const std::string& fig) {
    std::vector<std::string> ids;
    for (const auto& r : registry_.all()) {
      auto it = r.tags.find("figure");
      if (it != r.tags.end() && it->second == fig) ids.push_back(r.run_id);
    }
    return ids;
  };
  auto ids = tagged(figure_id);
  // The arrival-rate figures are two views of one comparison; either tag
  // feeds both.
  if (ids.empty() && figure_id == report::kFig11) ids = tagged(report::kFig10);
  if (ids.empty() && figure_id == report::kFig10) ids = tagged(report::kFig11);
  return ids;
}

std::string Engine::export_csv(std::vector<std::string> run_ids,
                               const std::string& kind) const {
  if (run_ids.empty()) run_ids = completed_runs();
  report::Exporter exporter(registry_, *store_, sim_config_);
  if (kind == "summaries") return exporter.export_summary_csv(run_ids);
  if (kind == "raw") return exporter.export_raw_csv(run_ids);
  throw_error(ErrorCode::InvalidArgument, "csv kind must be summaries|raw, got '" + kind + "'");
}

std::string Engine::export_prometheus() const {
  report::Exporter exporter(registry_, *store_, sim_config_);
  return exporter.export_prometheus();
}

std::string Engine::figure_csv(const std::string& figure_id,
                               std::vector<std::string> run_ids) const {
  if (run_ids.empty()) run_ids = runs_for_figure(figure_id);
  if (run_ids.empty())
    throw_error(ErrorCode::IncompleteGrid,
                "no runs tagged for figure '" + figure_id + "'; run the matching benchmark "
                "config or pass --runs");
  report::Exporter exporter(registry_, *store_, sim_config_);
  return exporter.build_figure_dataset(figure_id, run_ids).to_csv();
}

}  // namespace migperf
