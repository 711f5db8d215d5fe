#pragma once

#include <string>
#include <vector>

#include "migperf/telemetry.hpp"
#include "migperf/workload.hpp"

namespace migperf::report {

// Shortest round-trip decimal formatting; parse_double inverts it exactly.
std::string format_double(double v);
double parse_double(const std::string& s);

// Backslash, double-quote and newline escaping for exposition label values.
std::string escape_label_value(const std::string& v);

// RFC-4180-style CSV. Emitted with LF line endings; the parser accepts
// CRLF or LF and quoted fields.
std::string csv_field(const std::string& value);
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

struct FigureDataset {
  std::string figure_id;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
};

// Known figure dataset ids.
inline constexpr const char* kFig2 = "fig2_training_batch_sweep";
inline constexpr const char* kFig3 = "fig3_inference_seqlen_sweep";
inline constexpr const char* kFig4 = "fig4_sharing_avg_latency";
inline constexpr const char* kFig5 = "fig5_sharing_tail_latency";
inline constexpr const char* kFig6 = "fig6_sharing_batch_tail_latency";
inline constexpr const char* kFig7 = "fig7_sharing_model_size";
inline constexpr const char* kFig10 = "fig10_mps_arrival_rate";
inline constexpr const char* kFig11 = "fig11_mig_arrival_rate";

std::vector<std::string> known_figures();

// Read-side exporter over the run registry and metric store. Exports are
// pure functions of stored series; re-export yields identical bytes.
class Exporter {
 public:
  Exporter(const bench::RunRegistry& registry, const telemetry::MetricStore& store,
           const sim::SimConfig& sim_config);

  telemetry::MetricSummary summary_for(const std::string& run_id) const;

  // Text exposition (version 0.0.4): per completed run the six summary
  // gauges, plus a power_w gauge from the series tail.
  std::string export_prometheus() const;

  std::string export_summary_csv(const std::vector<std::string>& run_ids) const;
  std::string export_raw_csv(const std::vector<std::string>& run_ids) const;

  FigureDataset build_figure_dataset(const std::string& figure_id,
                                     const std::vector<std::string>& run_ids) const;

 private:
  const bench::RunRegistry& registry_;
  const telemetry::MetricStore& store_;
  const sim::SimConfig& sim_config_;
};

}  // namespace migperf::report
