#include "migperf/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

namespace migperf::telemetry {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

double percentile(std::vector<double> samples, double p) {
  if (samples.empty())
    throw_error(ErrorCode::EmptySeries, "percentile of an empty sample set");
  if (!(p > 0.0) || p > 1.0)
    throw_error(ErrorCode::InvalidArgument, "percentile fraction must be in (0, 1]");
  std::sort(samples.begin(), samples.end());
  auto n = static_cast<double>(samples.size());
  auto rank = static_cast<size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

namespace {

std::vector<Point> window_points(const std::vector<Point>& pts, double t0, double t1) {
  std::vector<Point> out;
  for (const auto& pt : pts)
    if (pt.ts_ms >= t0 && pt.ts_ms <= t1) out.push_back(pt);
  return out;
}

}  // namespace

double energy_mj(const std::vector<Point>& power, double t0_ms, double t1_ms) {
  auto pts = window_points(power, t0_ms, t1_ms);
  if (pts.size() < 2)
    throw_error(ErrorCode::InsufficientSamples,
                "energy needs at least 2 power points in the window");
  double e = 0;  // W * ms = mJ
  for (size_t i = 1; i < pts.size(); ++i)
    e += 0.5 * (pts[i - 1].value + pts[i].value) * (pts[i].ts_ms - pts[i - 1].ts_ms);
  return e;
}

double time_weighted_mean(const std::vector<Point>& pts, double t0_ms, double t1_ms) {
  auto w = window_points(pts, t0_ms, t1_ms);
  if (w.size() < 2)
    throw_error(ErrorCode::InsufficientSamples,
                "time-weighted mean needs at least 2 points in the window");
  double integral = 0;
  for (size_t i = 1; i < w.size(); ++i)
    integral += 0.5 * (w[i - 1].value + w[i].value) * (w[i].ts_ms - w[i - 1].ts_ms);
  double span = w.back().ts_ms - w.front().ts_ms;
  return integral / span;
}

MetricStore::MetricStore(std::string series_dir) : series_dir_(std::move(series_dir)) {
  if (!series_dir_.empty()) fs::create_directories(series_dir_);
}

std::string MetricStore::run_file_path(const std::string& run_id) const {
  return (fs::path(series_dir_) / (run_id + ".jsonl")).string();
}

void MetricStore::append(const SeriesKey& key, double ts_ms, double value) {
  std::lock_guard lock(mu_);
  append_locked(key, ts_ms, value, !series_dir_.empty());
}

void MetricStore::append_locked(const SeriesKey& key, double ts_ms, double value,
                                bool write_file) {
  RunData& run = runs_[key.run_id];
  TimeSeries& s = run.series[key];
  if (s.points.empty()) s.key = key;
  if (!s.points.empty() && ts_ms <= s.points.back().ts_ms)
    throw_error(ErrorCode::OutOfOrder,
                "series (" + key.run_id + ", " + key.instance + ", " + key.metric +
                    "): ts " + std::to_string(ts_ms) + " not after " +
                    std::to_string(s.points.back().ts_ms));
  s.points.push_back({ts_ms, value});

  if (write_file) {
    auto it = open_files_.find(key.run_id);
    if (it == open_files_.end()) {
      // First sample of a run truncates any stale file from a prior execution.
      it = open_files_.emplace(key.run_id, std::ofstream(run_file_path(key.run_id),
                                                         std::ios::trunc)).first;
    }
    ordered_json line;
    line["run_id"] = key.run_id;
    line["instance"] = key.instance;
    line["metric"] = key.metric;
    line["ts_ms"] = ts_ms;
    line["value"] = value;
    it->second << line.dump() << '\n';
  }
}

void MetricStore::set_run_window(const std::string& run_id, const RunWindow& window) {
  std::lock_guard lock(mu_);
  runs_[run_id].window = window;
}

std::optional<RunWindow> MetricStore::run_window(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  auto it = runs_.find(run_id);
  if (it == runs_.end()) return std::nullopt;
  return it->second.window;
}

void MetricStore::finish_run(const std::string& run_id) {
  std::lock_guard lock(mu_);
  auto it = open_files_.find(run_id);
  if (it != open_files_.end()) {
    it->second.flush();
    open_files_.erase(it);
  }
}

bool MetricStore::has_run(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  return runs_.count(run_id) > 0;
}

std::vector<std::string> MetricStore::run_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : runs_) ids.push_back(id);
  return ids;
}

std::vector<TimeSeries> MetricStore::run_series(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  std::vector<TimeSeries> out;
  auto it = runs_.find(run_id);
  if (it == runs_.end()) return out;
  for (const auto& [_, s] : it->second.series) {
    TimeSeries copy = s;
    if (it->second.window) copy.warmup_end_ms = it->second.window->warmup_end_ms;
    out.push_back(std::move(copy));
  }
  return out;
}

TimeSeries MetricStore::series(const SeriesKey& key) const {
  std::lock_guard lock(mu_);
  auto rit = runs_.find(key.run_id);
  if (rit != runs_.end()) {
    auto sit = rit->second.series.find(key);
    if (sit != rit->second.series.end()) {
      TimeSeries copy = sit->second;
      if (rit->second.window) copy.warmup_end_ms = rit->second.window->warmup_end_ms;
      return copy;
    }
  }
  TimeSeries empty;
  empty.key = key;
  return empty;
}

void MetricStore::load_run_file(const std::string& run_id) {
  std::ifstream in(run_file_path(run_id));
  if (!in)
    throw_error(ErrorCode::NotFound, "no series file for run '" + run_id + "'");
  std::lock_guard lock(mu_);
  runs_[run_id].series.clear();
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      SeriesKey key{j.at("run_id").get<std::string>(), j.at("instance").get<std::string>(),
                    j.at("metric").get<std::string>()};
      append_locked(key, j.at("ts_ms").get<double>(), j.at("value").get<double>(),
                    /*write_file=*/false);
    } catch (const nlohmann::json::exception& e) {
      throw_error(ErrorCode::ParseError, run_file_path(run_id) + ":" +
                                             std::to_string(lineno) + ": " + e.what());
    }
  }
}

void MetricStore::erase_run(const std::string& run_id) {
  std::lock_guard lock(mu_);
  runs_.erase(run_id);
  open_files_.erase(run_id);
  if (!series_dir_.empty()) {
    std::error_code ec;
    fs::remove(run_file_path(run_id), ec);
  }
}

std::vector<double> MetricStore::post_warmup_latencies(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  auto it = runs_.find(run_id);
  if (it == runs_.end())
    throw_error(ErrorCode::UnknownRun, "unknown run '" + run_id + "'");
  double warmup_end = it->second.window ? it->second.window->warmup_end_ms : 0.0;
  std::vector<double> vals;
  for (const auto& [key, s] : it->second.series) {
    if (key.metric != kLatencyMs) continue;
    for (const auto& pt : s.points)
      if (pt.ts_ms > warmup_end) vals.push_back(pt.value);
  }
  return vals;
}

MetricSummary MetricStore::summarize(const std::string& run_id, int batch_size) const {
  std::unique_lock lock(mu_);
  auto it = runs_.find(run_id);
  if (it == runs_.end())
    throw_error(ErrorCode::UnknownRun, "unknown run '" + run_id + "'");
  if (!it->second.window)
    throw_error(ErrorCode::InvalidArgument, "run '" + run_id + "' is not complete");
  RunWindow window = *it->second.window;

  // Collapse per-instance series of the same metric (one instance per run in
  // practice; comparisons pool across runs, not instances).
  std::map<std::string, std::vector<Point>> by_metric;
  for (const auto& [key, s] : it->second.series) {
    auto& dst = by_metric[key.metric];
    dst.insert(dst.end(), s.points.begin(), s.points.end());
  }
  lock.unlock();
  for (auto& [_, pts] : by_metric)
    std::sort(pts.begin(), pts.end(),
              [](const Point& a, const Point& b) { return a.ts_ms < b.ts_ms; });

  std::string missing;
  for (const char* metric : {kLatencyMs, kGractFrac, kFbMib, kPowerW}) {
    if (by_metric.find(metric) == by_metric.end())
      missing += std::string(missing.empty() ? "" : ", ") + metric;
  }
  if (!missing.empty())
    throw_error(ErrorCode::MissingSeries,
                "run '" + run_id + "' is missing series: " + missing);

  std::vector<double> latencies;
  for (const auto& pt : by_metric[kLatencyMs])
    if (pt.ts_ms > window.warmup_end_ms) latencies.push_back(pt.value);
  if (latencies.empty())
    throw_error(ErrorCode::EmptySeries,
                "run '" + run_id + "' has no post-warm-up latency samples");

  MetricSummary summary;
  summary.run_id = run_id;
  double sum = 0;
  for (double v : latencies) sum += v;
  summary.avg_latency_ms = sum / static_cast<double>(latencies.size());
  summary.p99_latency_ms = percentile(latencies, 0.99);

  double seconds = (window.end_ms - window.warmup_end_ms) / 1000.0;
  if (seconds <= 0)
    throw_error(ErrorCode::EmptySeries, "run '" + run_id + "' has no post-warm-up window");
  summary.throughput_batch_per_s = static_cast<double>(latencies.size()) / seconds;
  summary.throughput_samples_per_s = summary.throughput_batch_per_s * batch_size;

  summary.mean_gract_frac =
      time_weighted_mean(by_metric[kGractFrac], window.warmup_end_ms, window.end_ms);

  double peak = 0;
  bool any_fb = false;
  for (const auto& pt : by_metric[kFbMib]) {
    if (pt.ts_ms >= window.warmup_end_ms) {
      peak = any_fb ? std::max(peak, pt.value) : pt.value;
      any_fb = true;
    }
  }
  if (!any_fb)
    throw_error(ErrorCode::EmptySeries, "run '" + run_id + "' has no post-warm-up fb samples");
  summary.peak_fb_mib = peak;

  summary.energy_mj = energy_mj(by_metric[kPowerW], window.warmup_end_ms, window.end_ms);
  return summary;
}

}  // namespace migperf::telemetry
