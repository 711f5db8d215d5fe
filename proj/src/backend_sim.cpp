#include "migperf/backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace migperf::sim {

using nlohmann::json;

void PerfModelParams::validate() const {
  if (alpha_ms < 0 || beta_ms < 0 || sigma_iso_ms < 0 || gamma < 0 || p_idle_w < 0)
    throw_error(ErrorCode::InvalidArgument, "perf model params must be non-negative");
  if (p_max_w < p_idle_w)
    throw_error(ErrorCode::InvalidArgument, "p_max_w must be >= p_idle_w");
}

void ModelSpec::validate() const {
  if (flops_per_sample <= 0 || params_mem_gib <= 0 || activation_mem_per_sample_mib <= 0)
    throw_error(ErrorCode::InvalidSpec,
                "model '" + name + "': all cost coefficients must be positive");
}

double sequence_scale(const std::optional<int>& sequence_length) {
  return sequence_length ? static_cast<double>(*sequence_length) / 128.0 : 1.0;
}

double base_service_ms(const ServiceContext& ctx, const PerfModelParams& params) {
  double g_eff = static_cast<double>(ctx.slices);
  if (ctx.mode == ShareMode::mps) g_eff /= static_cast<double>(ctx.co_tenants);
  double work = ctx.model.flops_per_sample * ctx.batch_size * sequence_scale(ctx.sequence_length);
  return params.alpha_ms + params.beta_ms * work / g_eff;
}

double noise_std_ms(const ServiceContext& ctx, const PerfModelParams& params) {
  if (ctx.mode == ShareMode::mig) return params.sigma_iso_ms;
  return params.sigma_iso_ms *
         (1.0 + params.gamma * ctx.batch_size * (ctx.co_tenants - 1));
}

double service_time_ms(const ServiceContext& ctx, const PerfModelParams& params,
                       std::mt19937_64& rng) {
  double t = base_service_ms(ctx, params);
  double sigma = noise_std_ms(ctx, params);
  if (sigma > 0) {
    std::normal_distribution<double> noise(0.0, sigma);
    t += noise(rng);
  }
  return std::max(t, params.alpha_ms);
}

double fb_mib(const ServiceContext& ctx) {
  return ctx.model.params_mem_gib * 1024.0 +
         ctx.batch_size * ctx.model.activation_mem_per_sample_mib;
}

std::vector<TracePoint> build_resource_trace(
    const std::vector<std::pair<double, double>>& busy_intervals, double end_ms,
    const ServiceContext& ctx, const PerfModelParams& params, double interval_ms) {
  std::vector<TracePoint> trace;
  if (end_ms <= 0) return trace;

  double g_eff = static_cast<double>(ctx.slices);
  if (ctx.mode == ShareMode::mps) g_eff /= static_cast<double>(ctx.co_tenants);
  double share = g_eff / static_cast<double>(ctx.device_total_slices);
  double memory = fb_mib(ctx);

  size_t cursor = 0;  // busy intervals are time-ordered and disjoint
  for (double w = 0; w < end_ms; w += interval_ms) {
    double w_end = std::min(w + interval_ms, end_ms);
    while (cursor < busy_intervals.size() && busy_intervals[cursor].second <= w) ++cursor;
    double busy = 0;
    for (size_t i = cursor; i < busy_intervals.size() && busy_intervals[i].first < w_end;
         ++i) {
      busy += std::min(busy_intervals[i].second, w_end) -
              std::max(busy_intervals[i].first, w);
    }
    double gract = std::clamp(busy / (w_end - w), 0.0, 1.0);
    double power = params.p_idle_w + (params.p_max_w - params.p_idle_w) * gract * share;
    trace.push_back({w_end, gract, power, memory});
  }
  return trace;
}

std::vector<BackendSample> read_sample_file(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw_error(ErrorCode::NotFound, "cannot open sample file '" + path + "'");
  std::vector<BackendSample> samples;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      BackendSample s;
      s.ts_ms = j.at("ts").get<double>();
      s.kind = j.at("kind").get<std::string>();
      s.value = j.at("value").get<double>();
      s.instance = j.value("instance", std::string());
      if (s.kind != "latency_ms" && s.kind != "power_w" && s.kind != "gract_frac" &&
          s.kind != "fb_mib")
        throw_error(ErrorCode::ParseError,
                    path + ":" + std::to_string(lineno) + ": unknown kind '" + s.kind + "'");
      if (s.kind == "gract_frac" && (s.value < 0 || s.value > 1))
        throw_error(ErrorCode::ParseError,
                    path + ":" + std::to_string(lineno) + ": gract_frac out of [0,1]");
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw_error(ErrorCode::ParseError,
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return samples;
}

PerfModelParams SimConfig::params_for_device(const std::string& device_model_name) const {
  PerfModelParams p = params;
  auto it = device_power.find(device_model_name);
  if (it != device_power.end()) {
    p.p_idle_w = it->second.first;
    p.p_max_w = it->second.second;
  }
  return p;
}

ModelSpec SimConfig::model_or_throw(const std::string& name) const {
  auto it = models.find(name);
  if (it == models.end())
    throw_error(ErrorCode::InvalidSpec, "unknown model '" + name + "'");
  return it->second;
}

SimConfig parse_sim_config(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw_error(ErrorCode::ParseError, origin + ": " + e.what());
  }
  SimConfig cfg;
  try {
    cfg.params.alpha_ms = doc.value("alpha_ms", cfg.params.alpha_ms);
    cfg.params.beta_ms = doc.value("beta_ms", cfg.params.beta_ms);
    cfg.params.sigma_iso_ms = doc.value("sigma_iso_ms", cfg.params.sigma_iso_ms);
    cfg.params.gamma = doc.value("gamma", cfg.params.gamma);
    cfg.params.seed = doc.value("seed", cfg.params.seed);
    if (doc.contains("power")) {
      for (const auto& [model, pj] : doc["power"].items()) {
        double idle = pj.at("p_idle_w").get<double>();
        double max = pj.at("p_max_w").get<double>();
        if (model == "default") {
          cfg.params.p_idle_w = idle;
          cfg.params.p_max_w = max;
        } else {
          cfg.device_power[model] = {idle, max};
        }
      }
    }
    if (doc.contains("models")) {
      for (const auto& [name, mj] : doc["models"].items()) {
        ModelSpec m;
        m.name = name;
        m.flops_per_sample = mj.at("flops_per_sample").get<double>();
        m.params_mem_gib = mj.at("params_mem_gib").get<double>();
        m.activation_mem_per_sample_mib =
            mj.at("activation_mem_per_sample_mib").get<double>();
        m.validate();
        cfg.models[name] = std::move(m);
      }
    }
  } catch (const json::exception& e) {
    throw_error(ErrorCode::ParseError, origin + ": " + e.what());
  }
  cfg.params.validate();
  for (const auto& [model, pw] : cfg.device_power) {
    if (pw.second < pw.first)
      throw_error(ErrorCode::InvalidArgument,
                  origin + ": power bounds for '" + model + "' inverted");
  }
  return cfg;
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw_error(ErrorCode::ParseError, "cannot open sim config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_sim_config(buf.str(), path);
}

std::string default_sim_config_text() {
  return R"({
  "calibration": "synthetic",
  "alpha_ms": 2.0,
  "beta_ms": 1.5,
  "sigma_iso_ms": 0.2,
  "gamma": 0.05,
  "power": {
    "default": {"p_idle_w": 60.0, "p_max_w": 400.0},
    "A100-80GB": {"p_idle_w": 60.0, "p_max_w": 400.0},
    "A30": {"p_idle_w": 60.0, "p_max_w": 165.0}
  },
  "models": {
    "resnet18": {"flops_per_sample": 1.0, "params_mem_gib": 0.045,
                 "activation_mem_per_sample_mib": 6.0},
    "resnet34": {"flops_per_sample": 1.8, "params_mem_gib": 0.082,
                 "activation_mem_per_sample_mib": 8.0},
    "resnet50": {"flops_per_sample": 2.2, "params_mem_gib": 0.098,
                 "activation_mem_per_sample_mib": 12.0},
    "resnet101": {"flops_per_sample": 3.8, "params_mem_gib": 0.17,
                  "activation_mem_per_sample_mib": 18.0},
    "distilbert-base": {"flops_per_sample": 0.8, "params_mem_gib": 0.25,
                        "activation_mem_per_sample_mib": 10.0},
    "bert-base": {"flops_per_sample": 1.4, "params_mem_gib": 0.42,
                  "activation_mem_per_sample_mib": 16.0},
    "bert-large": {"flops_per_sample": 4.2, "params_mem_gib": 1.25,
                   "activation_mem_per_sample_mib": 36.0}
  }
}
)";
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace migperf::sim
