#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "migperf/workload.hpp"

using namespace migperf;
using namespace migperf::bench;

namespace {

sim::SimConfig default_sim() {
  return sim::parse_sim_config(sim::default_sim_config_text(), "default");
}

WorkloadSpec closed_spec(int batch, std::int64_t requests, const char* model = "resnet50") {
  WorkloadSpec s;
  s.kind = WorkloadKind::inference;
  s.model = model;
  s.batch_size = batch;
  s.total_requests = requests;
  s.loop = LoopMode::closed;
  return s;
}

sim::ServiceContext mig_ctx(const sim::SimConfig& cfg, const WorkloadSpec& spec, int g,
                            int total) {
  sim::ServiceContext ctx;
  ctx.model = cfg.model_or_throw(spec.model);
  ctx.batch_size = spec.batch_size;
  ctx.sequence_length = spec.sequence_length;
  ctx.slices = g;
  ctx.device_total_slices = total;
  ctx.co_tenants = 1;
  ctx.mode = sim::ShareMode::mig;
  return ctx;
}

struct Harness {
  ctrl::Controller controller;
  telemetry::MetricStore store;
  RunRegistry registry;
  Runner runner;

  Harness()
      : controller(device::parse_catalog(device::default_catalog_text(), "default")),
        store(),
        registry(),
        runner(controller, store, registry, default_sim()) {}
};

}  // namespace

TEST_CASE("workload spec validation") {
  WorkloadSpec s = closed_spec(8, 100);
  s.validate();

  WorkloadSpec both = s;
  both.duration_s = 5.0;
  CHECK_THROWS_AS(both.validate(), MigError);

  WorkloadSpec neither = s;
  neither.total_requests.reset();
  CHECK_THROWS_AS(neither.validate(), MigError);

  WorkloadSpec open = s;
  open.loop = LoopMode::open;
  CHECK_THROWS_AS(open.validate(), MigError);  // no arrival rate
  open.arrival_rate = 25.0;
  open.validate();
  open.arrival_rate = -1.0;
  CHECK_THROWS_AS(open.validate(), MigError);

  WorkloadSpec closed_with_rate = s;
  closed_with_rate.arrival_rate = 10.0;
  CHECK_THROWS_AS(closed_with_rate.validate(), MigError);

  WorkloadSpec zero_batch = s;
  zero_batch.batch_size = 0;
  CHECK_THROWS_AS(zero_batch.validate(), MigError);
}

TEST_CASE("spec json codec round-trips") {
  WorkloadSpec s = closed_spec(32, 500, "bert-base");
  s.kind = WorkloadKind::training;
  s.sequence_length = 128;
  auto j = workload_spec_to_json(s);
  auto back = workload_spec_from_json(j);
  CHECK(back.kind == s.kind);
  CHECK(back.model == s.model);
  CHECK(back.batch_size == s.batch_size);
  CHECK(back.sequence_length == s.sequence_length);
  CHECK(back.total_requests == s.total_requests);

  auto inline_j = nlohmann::json::parse(R"({
    "kind": "inference",
    "model": {"name": "custom", "flops_per_sample": 2.5,
              "params_mem_gib": 0.3, "activation_mem_per_sample_mib": 5.0},
    "batch_size": 4, "total_requests": 10, "loop": "closed"})");
  auto inl = workload_spec_from_json(inline_j);
  REQUIRE(inl.inline_model.has_value());
  CHECK(inl.inline_model->flops_per_sample == 2.5);

  auto run_j = nlohmann::json::parse(R"({
    "device": 1, "target": {"gi": 3}, "seed": 8,
    "external_samples": "rec.jsonl",
    "spec": {"kind": "inference", "model": "resnet50", "batch_size": 1,
             "total_requests": 5, "loop": "closed"}})");
  auto rc = run_config_from_json(run_j);
  CHECK(rc.device_id == 1);
  CHECK(rc.target.kind == RunTarget::Kind::gi);
  CHECK(rc.target.gi_id == 3);
  REQUIRE(rc.external_samples.has_value());
  CHECK(*rc.external_samples == "rec.jsonl");
}

TEST_CASE("closed loop conserves the request count exactly") {
  auto cfg = default_sim();
  auto spec = closed_spec(8, 100);
  auto result = simulate_run(spec, mig_ctx(cfg, spec, 1, 7), cfg.params, 42);
  CHECK(result.latency.size() == 100);
}

TEST_CASE("open loop: Poisson issuance count within the 99.9% interval, reproducible") {
  auto cfg = default_sim();
  WorkloadSpec spec = closed_spec(1, 100);
  spec.total_requests.reset();
  spec.duration_s = 10.0;
  spec.loop = LoopMode::open;
  spec.arrival_rate = 25.0;

  auto r1 = simulate_run(spec, mig_ctx(cfg, spec, 7, 7), cfg.params, 1234);
  // Poisson(250): [200, 304] covers 99.9% two-sided.
  CHECK(r1.latency.size() >= 200);
  CHECK(r1.latency.size() <= 304);

  auto r2 = simulate_run(spec, mig_ctx(cfg, spec, 7, 7), cfg.params, 1234);
  REQUIRE(r1.latency.size() == r2.latency.size());
  for (size_t i = 0; i < r1.latency.size(); ++i) {
    CHECK(r1.latency[i].ts_ms == r2.latency[i].ts_ms);
    CHECK(r1.latency[i].value == r2.latency[i].value);
  }
}

TEST_CASE("open loop: issuance is independent of service times") {
  auto cfg = default_sim();
  WorkloadSpec spec = closed_spec(1, 100);
  spec.total_requests.reset();
  spec.duration_s = 5.0;
  spec.loop = LoopMode::open;
  spec.arrival_rate = 50.0;

  auto slow_params = cfg.params;
  slow_params.beta_ms = 30.0;  // very different service times
  auto fast = simulate_run(spec, mig_ctx(cfg, spec, 7, 7), cfg.params, 77);
  auto slow = simulate_run(spec, mig_ctx(cfg, spec, 7, 7), slow_params, 77);
  REQUIRE(fast.latency.size() == slow.latency.size());
  for (size_t i = 0; i < fast.latency.size(); ++i) {
    // arrival = completion - latency, identical across service models
    double a_fast = fast.latency[i].ts_ms - fast.latency[i].value;
    double a_slow = slow.latency[i].ts_ms - slow.latency[i].value;
    REQUIRE(a_fast == doctest::Approx(a_slow).epsilon(1e-12));
  }
}

TEST_CASE("open loop: queueing shows up as latency, not as dropped arrivals") {
  auto cfg = default_sim();
  WorkloadSpec spec = closed_spec(1, 100);
  spec.total_requests.reset();
  spec.duration_s = 5.0;
  spec.loop = LoopMode::open;
  spec.arrival_rate = 400.0;  // far beyond one slice's capacity

  auto r = simulate_run(spec, mig_ctx(cfg, spec, 1, 7), cfg.params, 5);
  REQUIRE(r.latency.size() > 100);
  double base = cfg.params.alpha_ms + cfg.params.beta_ms * 2.2;  // resnet50 b=1 g=1
  // Tail latencies dwarf the bare service time once the queue builds.
  CHECK(r.latency.back().value > 20 * base);
  CHECK(r.end_ms > 5000.0);
}

TEST_CASE("training for a fixed duration reports throughput near completed/duration") {
  auto cfg = default_sim();
  WorkloadSpec spec = closed_spec(32, 100, "bert-base");
  spec.kind = WorkloadKind::training;
  spec.total_requests.reset();
  spec.duration_s = 60.0;
  spec.sequence_length = 128;

  auto r = simulate_run(spec, mig_ctx(cfg, spec, 7, 7), cfg.params, 3);
  double completed = static_cast<double>(r.latency.size());
  size_t post = 0;
  for (const auto& p : r.latency)
    if (p.ts_ms > r.warmup_end_ms) ++post;
  double tp = post / ((r.end_ms - r.warmup_end_ms) / 1000.0);
  CHECK(std::abs(tp - completed / 60.0) <= 2.0 / 60.0);
}

TEST_CASE("simulation is bit-deterministic for a fixed seed") {
  auto cfg = default_sim();
  auto spec = closed_spec(16, 500);
  auto a = simulate_run(spec, mig_ctx(cfg, spec, 2, 7), cfg.params, 999);
  auto b = simulate_run(spec, mig_ctx(cfg, spec, 2, 7), cfg.params, 999);
  REQUIRE(a.latency.size() == b.latency.size());
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.latency.size(); ++i) {
    REQUIRE(a.latency[i].ts_ms == b.latency[i].ts_ms);
    REQUIRE(a.latency[i].value == b.latency[i].value);
  }
  for (size_t i = 0; i < a.trace.size(); ++i) {
    REQUIRE(a.trace[i].power_w == b.trace[i].power_w);
    REQUIRE(a.trace[i].gract_frac == b.trace[i].gract_frac);
  }
  CHECK(a.warmup_end_ms == b.warmup_end_ms);
  CHECK(a.end_ms == b.end_ms);
}

TEST_CASE("warm-up covers five seconds or ten batches, whichever is longer") {
  auto cfg = default_sim();

  auto quick = closed_spec(1, 5000, "resnet18");  // 3.5 ms batches
  auto r = simulate_run(quick, mig_ctx(cfg, quick, 7, 7), cfg.params, 1);
  CHECK(r.warmup_end_ms == 5000.0);

  // Slow batches (~607 ms): the tenth completion lands past five seconds.
  auto slow = closed_spec(96, 30, "bert-large");
  auto rs = simulate_run(slow, mig_ctx(cfg, slow, 1, 7), cfg.params, 1);
  CHECK(rs.warmup_end_ms > 5000.0);
  CHECK(rs.warmup_end_ms == rs.latency[9].ts_ms);
}

TEST_CASE("fixed request count: bigger instances finish on less energy") {
  auto cfg = default_sim();
  auto params = cfg.params_for_device("A100-80GB");
  for (int batch : {8, 16, 32, 64}) {
    WorkloadSpec spec = closed_spec(batch, 2000, "bert-base");
    spec.kind = WorkloadKind::training;
    spec.sequence_length = 128;
    double prev = std::numeric_limits<double>::infinity();
    for (int g : {1, 2, 3, 4, 7}) {
      auto r = simulate_run(spec, mig_ctx(cfg, spec, g, 7), params, 42);
      telemetry::MetricStore store;
      std::string id = "g" + std::to_string(g);
      for (const auto& p : r.trace) {
        store.append({id, "i", telemetry::kPowerW}, p.ts_ms, p.power_w);
      }
      double e = telemetry::energy_mj(store.series({id, "i", telemetry::kPowerW}).points,
                                      r.warmup_end_ms, r.end_ms);
      CAPTURE(batch);
      CAPTURE(g);
      CHECK(e < prev);
      prev = e;
    }
  }
}

TEST_CASE("runner: profile target provisions, binds, records and unbinds") {
  Harness h;
  RunConfig cfg;
  cfg.device_id = 0;
  cfg.target.kind = RunTarget::Kind::profile;
  cfg.target.profile = "2g.20gb";
  cfg.spec = closed_spec(8, 2500);
  cfg.seed = 11;

  auto id = h.runner.run_workload(cfg);
  auto record = h.registry.get_or_throw(id);
  CHECK(record.status == RunStatus::complete);
  CHECK(record.profile == "2g.20gb");
  CHECK(record.window.end_ms > 0);

  auto rows = h.controller.track_instances(0);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].bound_run.empty());  // unbound after completion

  auto lat = h.store.series({id, record.instance, telemetry::kLatencyMs});
  CHECK(lat.points.size() == 2500);
  auto summary = h.store.summarize(id, 8);
  CHECK(summary.avg_latency_ms > 0);
}

TEST_CASE("runner: memory-overflow specs are rejected and recorded as failed") {
  Harness h;
  RunConfig cfg;
  cfg.device_id = 0;
  cfg.target.kind = RunTarget::Kind::profile;
  cfg.target.profile = "1g.10gb";
  cfg.spec = closed_spec(300, 100, "bert-large");  // 1.25 GiB + 300*36 MiB >> 10 GiB
  try {
    h.runner.run_workload(cfg);
    FAIL("expected InvalidSpec");
  } catch (const MigError& e) {
    CHECK(e.code() == ErrorCode::InvalidSpec);
  }
  auto record = h.registry.get_or_throw(Runner::derive_run_id(cfg));
  CHECK(record.status == RunStatus::failed);
  CHECK(record.error.find("MiB") != std::string::npos);
  // The provisioned instance is left unbound for the next attempt.
  for (const auto& row : h.controller.track_instances(0)) CHECK(row.bound_run.empty());
}

TEST_CASE("sweep: single point runs once; the five-by-four grid yields twenty runs") {
  Harness h;
  SweepSpec one;
  one.device_id = 0;
  one.seed = 5;
  one.profiles = {"1g.10gb"};
  one.base = closed_spec(8, 600);
  auto ids = h.runner.run_sweep(one);
  CHECK(ids.size() == 1);

  SweepSpec grid;
  grid.device_id = 0;
  grid.seed = 42;
  grid.figure_id = "fig2_training_batch_sweep";
  grid.profiles = {"1g.10gb", "2g.20gb", "3g.40gb", "4g.40gb", "7g.80gb"};
  grid.batch_sizes = {8, 16, 32, 64};
  grid.base = closed_spec(8, 1500, "bert-base");
  grid.base.kind = WorkloadKind::training;
  grid.base.sequence_length = 128;
  auto grid_ids = h.runner.run_sweep(grid);
  CHECK(grid_ids.size() == 20);
  std::set<std::string> unique(grid_ids.begin(), grid_ids.end());
  CHECK(unique.size() == 20);
  for (const auto& id : grid_ids)
    CHECK(h.registry.get_or_throw(id).status == RunStatus::complete);
}

TEST_CASE("sweep: an infeasible axis point rejects the whole sweep up front") {
  Harness h;
  SweepSpec sweep;
  sweep.device_id = 1;  // A30
  sweep.profiles = {"1g.6gb", "7g.80gb"};
  sweep.base = closed_spec(8, 100);
  CHECK_THROWS_AS(h.runner.run_sweep(sweep), MigError);
  CHECK(h.registry.all().empty());  // nothing started
  CHECK(h.controller.track_instances(1).empty());
}

TEST_CASE("sharing comparison: four replicas on the A30 equal split") {
  Harness h;
  CompareSpec cmp;
  cmp.device_id = 1;
  cmp.replicas = 4;
  cmp.seed = 7;
  cmp.spec = closed_spec(8, 1800);

  auto result = h.runner.run_sharing_comparison(cmp);
  REQUIRE(result.mig_runs.size() == 4);
  REQUIRE(result.mps_runs.size() == 4);

  std::set<std::string> instances;
  for (const auto& id : result.mig_runs) {
    auto r = h.registry.get_or_throw(id);
    CHECK(r.profile == "1g.6gb");
    CHECK(r.tags.at("arm") == "mig");
    instances.insert(r.instance);
  }
  CHECK(instances.size() == 4);  // four distinct instances
  for (const auto& id : result.mps_runs) {
    auto r = h.registry.get_or_throw(id);
    CHECK(r.tags.at("arm") == "mps");
    CHECK(r.instance == "gpu1:mps");
  }
  // Device restored to exclusive afterwards.
  CHECK(h.controller.snapshot(1).sharing_mode == device::SharingMode::exclusive);
}

TEST_CASE("sharing comparison: a model too large for the split is rejected up front") {
  Harness h;
  CompareSpec cmp;
  cmp.device_id = 1;  // A30: 4-way split leaves 6 GiB per instance
  cmp.replicas = 4;
  cmp.spec = closed_spec(8, 100, "bert-large");
  cmp.batch_sizes = {8, 160};  // 1.25 GiB params + 160*36 MiB > 6 GiB
  try {
    h.runner.run_sharing_comparison(cmp);
    FAIL("expected InvalidSpec");
  } catch (const MigError& e) {
    CHECK(e.code() == ErrorCode::InvalidSpec);
  }
  CHECK(h.registry.all().empty());
}

TEST_CASE("sharing comparison: no three-way split on the A30") {
  Harness h;
  CompareSpec cmp;
  cmp.device_id = 1;
  cmp.replicas = 3;
  cmp.spec = closed_spec(8, 100);
  try {
    h.runner.run_sharing_comparison(cmp);
    FAIL("expected NoEqualSplit");
  } catch (const MigError& e) {
    CHECK(e.code() == ErrorCode::NoEqualSplit);
  }
}

TEST_CASE("sharing comparison: one replica degenerates to identical arms") {
  Harness h;
  CompareSpec cmp;
  cmp.device_id = 1;
  cmp.replicas = 1;
  cmp.seed = 31;
  cmp.spec = closed_spec(4, 2200);

  auto result = h.runner.run_sharing_comparison(cmp);
  REQUIRE(result.mig_runs.size() == 1);
  REQUIRE(result.mps_runs.size() == 1);
  auto mig = h.store.summarize(result.mig_runs[0], 4);
  auto mps = h.store.summarize(result.mps_runs[0], 4);
  // Same seed, same effective slice share, no co-tenants: identical streams.
  CHECK(mig.avg_latency_ms == mps.avg_latency_ms);
  CHECK(mig.p99_latency_ms == mps.p99_latency_ms);
}

TEST_CASE("external backend: replayed samples feed summaries") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "migperf_ext_test";
  fs::create_directories(dir);
  auto path = (dir / "rec.jsonl").string();
  {
    std::ofstream out(path, std::ios::trunc);
    for (int i = 1; i <= 20; ++i)
      out << R"({"ts": )" << i * 10 << R"(, "kind": "latency_ms", "value": 10})" << "\n";
    for (int i = 0; i <= 2; ++i) {
      out << R"({"ts": )" << i * 100 + 1 << R"(, "kind": "gract_frac", "value": 0.5})" << "\n";
      out << R"({"ts": )" << i * 100 + 1 << R"(, "kind": "power_w", "value": 100})" << "\n";
      out << R"({"ts": )" << i * 100 + 1 << R"(, "kind": "fb_mib", "value": 300})" << "\n";
    }
  }
  Harness h;
  RunConfig cfg;
  cfg.run_id = "replayed";
  cfg.device_id = 0;
  cfg.target.kind = RunTarget::Kind::exclusive;
  cfg.spec = closed_spec(2, 20);
  cfg.external_samples = path;
  auto id = h.runner.run_workload(cfg);
  CHECK(id == "replayed");
  auto s = h.store.summarize(id, 2);
  CHECK(s.avg_latency_ms == 10.0);
  CHECK(s.peak_fb_mib == 300.0);
  fs::remove_all(dir);
}
