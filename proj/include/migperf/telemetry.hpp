#pragma once

#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "migperf/error.hpp"

namespace migperf::telemetry {

// Metric kinds used by the simulated backend.
inline constexpr const char* kLatencyMs = "latency_ms";
inline constexpr const char* kGractFrac = "gract_frac";
inline constexpr const char* kFbMib = "fb_mib";
inline constexpr const char* kPowerW = "power_w";

struct SeriesKey {
  std::string run_id;
  std::string instance;
  std::string metric;

  auto operator<=>(const SeriesKey&) const = default;
};

struct Point {
  double ts_ms = 0;
  double value = 0;
};

struct TimeSeries {
  SeriesKey key;
  std::vector<Point> points;  // ts strictly increasing
  std::optional<double> warmup_end_ms;
};

// Post-run window a summary is computed over. Latency samples count when
// ts > warmup_end_ms; trace series (gract/fb/power) when ts >= warmup_end_ms
// so the boundary point anchors the integrals.
struct RunWindow {
  double warmup_end_ms = 0;
  double end_ms = 0;
};

struct MetricSummary {
  std::string run_id;
  double avg_latency_ms = 0;
  double p99_latency_ms = 0;
  double throughput_batch_per_s = 0;
  double throughput_samples_per_s = 0;
  double mean_gract_frac = 0;
  double peak_fb_mib = 0;
  double energy_mj = 0;
};

// Nearest-rank percentile: sort ascending, return the element at 1-based
// index ceil(p*n). p must be in (0, 1].
double percentile(std::vector<double> samples, double p);

// Trapezoidal integral of a power series (watts over milliseconds) within
// [t0_ms, t1_ms], reported in millijoules. Needs >= 2 points in the window.
double energy_mj(const std::vector<Point>& power, double t0_ms, double t1_ms);

// Trapezoidal time-weighted mean of a series over [t0_ms, t1_ms].
double time_weighted_mean(const std::vector<Point>& pts, double t0_ms, double t1_ms);

// Append-only time-series storage: an in-memory index over one JSON Lines
// file per run     {"run_id":...,"instance":...,"metric":...,"ts_ms":...,"value":...}
// Appends to distinct series may run concurrently; a single series must be
// appended in ts order.
class MetricStore {
 public:
  MetricStore() = default;                        // in-memory only
  explicit MetricStore(std::string series_dir);   // plus durable JSONL files

  void append(const SeriesKey& key, double ts_ms, double value);
  void set_run_window(const std::string& run_id, const RunWindow& window);
  std::optional<RunWindow> run_window(const std::string& run_id) const;

  // Closes the run's JSONL file handle (samples are flushed).
  void finish_run(const std::string& run_id);

  bool has_run(const std::string& run_id) const;
  std::vector<std::string> run_ids() const;
  std::vector<TimeSeries> run_series(const std::string& run_id) const;
  // Empty-points series when missing.
  TimeSeries series(const SeriesKey& key) const;

  // Re-reads a run's JSONL file into the index (used on startup).
  void load_run_file(const std::string& run_id);
  std::string run_file_path(const std::string& run_id) const;

  // Drops a run's series from the index and removes its file.
  void erase_run(const std::string& run_id);

  // Derives the full summary for a completed run. batch_size converts
  // batch throughput to sample throughput.
  MetricSummary summarize(const std::string& run_id, int batch_size) const;

  std::vector<double> post_warmup_latencies(const std::string& run_id) const;

 private:
  struct RunData {
    std::map<SeriesKey, TimeSeries> series;
    std::optional<RunWindow> window;
  };

  void append_locked(const SeriesKey& key, double ts_ms, double value,
                     bool write_file);

  mutable std::mutex mu_;
  std::string series_dir_;
  std::map<std::string, RunData> runs_;
  std::map<std::string, std::ofstream> open_files_;
};

}  // namespace migperf::telemetry
