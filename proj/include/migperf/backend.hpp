#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "migperf/error.hpp"

namespace migperf::sim {

// Tunable constants of the synthetic performance model. These are
// calibration knobs, not measurements; the shipped config marks them
// "calibration": "synthetic".
struct PerfModelParams {
  double alpha_ms = 2.0;      // fixed per-batch overhead
  double beta_ms = 1.5;       // per-sample compute cost at one slice, unit work
  double sigma_iso_ms = 0.2;  // isolated jitter std
  double gamma = 0.05;        // contention growth per sample per co-tenant
  double p_idle_w = 60.0;
  double p_max_w = 400.0;
  std::uint64_t seed = 0;     // default run seed when a config omits one

  void validate() const;
};

struct ModelSpec {
  std::string name;
  double flops_per_sample = 1.0;            // abstract work units
  double params_mem_gib = 0.1;
  double activation_mem_per_sample_mib = 1.0;

  void validate() const;
};

enum class ShareMode { mig, mps };

// Everything service-time synthesis needs to know about one run's placement.
struct ServiceContext {
  ModelSpec model;
  int batch_size = 1;
  std::optional<int> sequence_length;  // tokens; text models only
  int slices = 1;                      // g; for mps the whole device
  int device_total_slices = 1;         // G
  int co_tenants = 1;                  // k; mps only, mig runs are isolated
  ShareMode mode = ShareMode::mig;
};

// sequence_length/128 when set, 1 otherwise.
double sequence_scale(const std::optional<int>& sequence_length);

// Deterministic part of the per-batch service time:
//   alpha + beta * work * batch * L / g_eff,  g_eff = g (mig) or g/k (mps).
double base_service_ms(const ServiceContext& ctx, const PerfModelParams& params);

// Jitter std: sigma_iso for mig, sigma_iso * (1 + gamma * batch * (k-1))
// for mps co-tenancy.
double noise_std_ms(const ServiceContext& ctx, const PerfModelParams& params);

// One noisy service-time draw, clamped to >= alpha.
double service_time_ms(const ServiceContext& ctx, const PerfModelParams& params,
                       std::mt19937_64& rng);

// Framebuffer footprint: parameters + batch activations, MiB.
double fb_mib(const ServiceContext& ctx);

// Resource synthesis. A batch occupies its compute slices only during the
// post-overhead phase [start+alpha, completion); the sampler turns those
// busy intervals into per-window GRACT, from which power follows as
//   p_idle + (p_max - p_idle) * gract * (g_eff / G).
struct TracePoint {
  double ts_ms;
  double gract_frac;
  double power_w;
  double fb_mib;
};

std::vector<TracePoint> build_resource_trace(
    const std::vector<std::pair<double, double>>& busy_intervals, double end_ms,
    const ServiceContext& ctx, const PerfModelParams& params,
    double interval_ms = 100.0);

// A single backend observation; also the record format of the `external`
// backend's pre-recorded files (JSON Lines, one object per line:
// {"ts": ..., "kind": ..., "value": ..., "instance": ...}).
struct BackendSample {
  double ts_ms = 0;
  std::string kind;  // latency_ms | power_w | gract_frac | fb_mib
  double value = 0;
  std::string instance;
};

std::vector<BackendSample> read_sample_file(const std::string& path);

// Per-device power bounds plus the model catalog, loaded from the sim
// params config.
struct SimConfig {
  PerfModelParams params;
  std::map<std::string, std::pair<double, double>> device_power;  // model -> (idle, max)
  std::map<std::string, ModelSpec> models;

  PerfModelParams params_for_device(const std::string& device_model_name) const;
  ModelSpec model_or_throw(const std::string& name) const;
};

SimConfig load_sim_config(const std::string& path);
SimConfig parse_sim_config(const std::string& text, const std::string& origin);
std::string default_sim_config_text();

// Derives decorrelated per-purpose rng seeds from a run seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace migperf::sim
