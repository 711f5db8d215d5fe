#include "migperf/export.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace migperf::report {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw_error(ErrorCode::ParseError, "bad numeric field '" + s + "'");
  return v;
}

std::string csv_field(const std::string& value) {
  bool needs_quote = value.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quote) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_started || !field.empty() || !row.empty()) {
          row.push_back(std::move(field));
          field.clear();
          rows.push_back(std::move(row));
          row.clear();
          row_started = false;
        }
        break;
      default:
        field += c;
        row_started = true;
        break;
    }
  }
  if (row_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string FigureDataset::to_csv() const {
  std::string out;
  for (size_t i = 0; i < columns.size(); ++i) {
    if (i) out += ',';
    out += csv_field(columns[i]);
  }
  out += '\n';
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += csv_field(r[i]);
    }
    out += '\n';
  }
  return out;
}

std::vector<std::string> known_figures() {
  return {kFig2, kFig3, kFig4, kFig5, kFig6, kFig7, kFig10, kFig11};
}

Exporter::Exporter(const bench::RunRegistry& registry, const telemetry::MetricStore& store,
                   const sim::SimConfig& sim_config)
    : registry_(registry), store_(store), sim_config_(sim_config) {}

telemetry::MetricSummary Exporter::summary_for(const std::string& run_id) const {
  auto record = registry_.get_or_throw(run_id);
  if (record.status != bench::RunStatus::complete)
    throw_error(ErrorCode::InvalidArgument,
                "run '" + run_id + "' is " + bench::run_status_name(record.status));
  return store_.summarize(run_id, record.spec.batch_size);
}

std::string escape_label_value(const std::string& v) {
  std::string out;
  for (char c : v) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      default: out += c;
    }
  }
  return out;
}

namespace {

std::string label_set(const bench::RunRecord& r) {
  std::string s = "{run=\"" + escape_label_value(r.run_id) + "\",device=\"" +
                  std::to_string(r.device_id) + "\",instance=\"" +
                  escape_label_value(r.instance) + "\"";
  if (!r.profile.empty()) s += ",profile=\"" + escape_label_value(r.profile) + "\"";
  s += "}";
  return s;
}

std::string prom_line(const std::string& name, const std::string& labels, double value,
                      double ts_ms) {
  return name + labels + " " + format_double(value) + " " +
         std::to_string(static_cast<long long>(std::llround(ts_ms))) + "\n";
}

double sample_stddev(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0;
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::string Exporter::export_prometheus() const {
  std::string out;
  for (const auto& record : registry_.all()) {
    if (record.status != bench::RunStatus::complete) continue;
    telemetry::MetricSummary s;
    try {
      s = store_.summarize(record.run_id, record.spec.batch_size);
    } catch (const MigError&) {
      continue;  // no post-warm-up data; tails below may still exist
    }
    std::string labels = label_set(record);
    double ts = record.window.end_ms;
    out += prom_line("migperf_latency_avg_ms", labels, s.avg_latency_ms, ts);
    out += prom_line("migperf_latency_p99_ms", labels, s.p99_latency_ms, ts);
    out += prom_line("migperf_throughput_batch_per_s", labels, s.throughput_batch_per_s, ts);
    out += prom_line("migperf_gract_ratio", labels, s.mean_gract_frac, ts);
    out += prom_line("migperf_fb_mib", labels, s.peak_fb_mib, ts);
    out += prom_line("migperf_energy_mj", labels, s.energy_mj, ts);

    auto power = store_.series({record.run_id, record.instance, telemetry::kPowerW});
    if (!power.points.empty())
      out += prom_line("migperf_power_w", labels, power.points.back().value,
                       power.points.back().ts_ms);
  }
  return out;
}

std::string Exporter::export_summary_csv(const std::vector<std::string>& run_ids) const {
  static const std::vector<std::string> header = {
      "run_id",          "device_id",
      "instance",        "profile",
      "model",           "kind",
      "batch_size",      "avg_latency_ms",
      "p99_latency_ms",  "throughput_batch_per_s",
      "throughput_samples_per_s", "mean_gract_frac",
      "peak_fb_mib",     "energy_mj"};
  std::string out;
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (const auto& id : run_ids) {
    auto record = registry_.get_or_throw(id);
    auto s = summary_for(id);
    std::vector<std::string> row = {
        record.run_id,
        std::to_string(record.device_id),
        record.instance,
        record.profile,
        record.spec.model,
        bench::workload_kind_name(record.spec.kind),
        std::to_string(record.spec.batch_size),
        format_double(s.avg_latency_ms),
        format_double(s.p99_latency_ms),
        format_double(s.throughput_batch_per_s),
        format_double(s.throughput_samples_per_s),
        format_double(s.mean_gract_frac),
        format_double(s.peak_fb_mib),
        format_double(s.energy_mj)};
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += csv_field(row[i]);
    }
    out += '\n';
  }
  return out;
}

std::string Exporter::export_raw_csv(const std::vector<std::string>& run_ids) const {
  std::string out = "run_id,instance,metric,ts_ms,value\n";
  for (const auto& id : run_ids) {
    registry_.get_or_throw(id);
    auto series = store_.run_series(id);
    // Merge the run's series by timestamp; ties by metric then instance.
    struct Row {
      double ts;
      const telemetry::TimeSeries* s;
      size_t idx;
    };
    std::vector<Row> rows;
    for (const auto& s : series)
      for (size_t i = 0; i < s.points.size(); ++i) rows.push_back({s.points[i].ts_ms, &s, i});
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (a.ts != b.ts) return a.ts < b.ts;
      if (a.s->key.metric != b.s->key.metric) return a.s->key.metric < b.s->key.metric;
      return a.s->key.instance < b.s->key.instance;
    });
    for (const auto& r : rows) {
      out += csv_field(id) + ',' + csv_field(r.s->key.instance) + ',' +
             csv_field(r.s->key.metric) + ',' + format_double(r.ts) + ',' +
             format_double(r.s->points[r.idx].value) + '\n';
    }
  }
  return out;
}

namespace {

struct Group {
  std::vector<std::string> run_ids;
};

// Pools post-warm-up latencies of all runs in a group.
std::vector<double> pooled_latencies(const telemetry::MetricStore& store,
                                     const std::vector<std::string>& ids) {
  std::vector<double> all;
  for (const auto& id : ids) {
    auto v = store.post_warmup_latencies(id);
    all.insert(all.end(), v.begin(), v.end());
  }
  return all;
}

int numeric_tag(const bench::RunRecord& r, const char* tag) {
  auto it = r.tags.find(tag);
  if (it == r.tags.end()) return -1;
  return std::stoi(it->second);
}

}  // namespace

FigureDataset Exporter::build_figure_dataset(const std::string& figure_id,
                                             const std::vector<std::string>& run_ids) const {
  std::vector<bench::RunRecord> runs;
  for (const auto& id : run_ids) {
    auto r = registry_.get_or_throw(id);
    if (r.status == bench::RunStatus::complete) runs.push_back(std::move(r));
  }

  FigureDataset ds;
  ds.figure_id = figure_id;

  auto incomplete = [&](const std::string& what) {
    throw_error(ErrorCode::IncompleteGrid,
                figure_id + ": missing grid point(s): " + what);
  };

  if (figure_id == kFig2 || figure_id == kFig3) {
    const bool by_batch = figure_id == kFig2;
    const char* axis_tag = by_batch ? "batch_size" : "sequence_length";
    std::set<std::string> profiles;
    std::set<int> axis;
    std::map<std::pair<std::string, int>, std::string> cell;  // last run wins
    for (const auto& r : runs) {
      auto pit = r.tags.find("profile");
      int v = numeric_tag(r, axis_tag);
      if (pit == r.tags.end() || v < 0) continue;
      profiles.insert(pit->second);
      axis.insert(v);
      cell[{pit->second, v}] = r.run_id;
    }
    if (cell.empty())
      throw_error(ErrorCode::IncompleteGrid, figure_id + ": no matching runs");
    ds.columns = {"profile", by_batch ? "batch_size" : "sequence_length_tokens",
                  by_batch ? "throughput_batch_per_s" : "p99_ms", "gract_pct", "fb_mib",
                  "energy_mj"};
    std::string missing;
    for (const auto& p : profiles) {
      for (int v : axis) {
        auto it = cell.find({p, v});
        if (it == cell.end()) {
          missing += (missing.empty() ? "" : "; ") + std::string("profile=") + p + "," +
                     axis_tag + "=" + std::to_string(v);
          continue;
        }
        if (!missing.empty()) continue;
        auto s = summary_for(it->second);
        ds.rows.push_back({p, std::to_string(v),
                           format_double(by_batch ? s.throughput_batch_per_s
                                                  : s.p99_latency_ms),
                           format_double(s.mean_gract_frac * 100.0),
                           format_double(s.peak_fb_mib), format_double(s.energy_mj)});
      }
    }
    if (!missing.empty()) incomplete(missing);
    return ds;
  }

  if (figure_id == kFig4 || figure_id == kFig5 || figure_id == kFig6) {
    // (model, batch, arm) -> pooled replica latencies.
    std::set<std::string> models;
    std::set<int> batches;
    std::map<std::tuple<std::string, int, std::string>, Group> groups;
    for (const auto& r : runs) {
      auto mit = r.tags.find("model");
      auto ait = r.tags.find("arm");
      int b = numeric_tag(r, "batch_size");
      if (mit == r.tags.end() || ait == r.tags.end() || b < 0) continue;
      models.insert(mit->second);
      batches.insert(b);
      groups[{mit->second, b, ait->second}].run_ids.push_back(r.run_id);
    }
    if (groups.empty())
      throw_error(ErrorCode::IncompleteGrid, figure_id + ": no matching runs");
    const bool avg = figure_id == kFig4;
    ds.columns = {"model", "batch_size", "arm", avg ? "avg_ms" : "p99_ms", "stddev_ms"};
    std::string missing;
    for (const auto& m : models) {
      for (int b : batches) {
        for (const char* arm : {"mig", "mps"}) {
          auto it = groups.find({m, b, arm});
          if (it == groups.end()) {
            missing += (missing.empty() ? "" : "; ") + std::string("model=") + m +
                       ",batch_size=" + std::to_string(b) + ",arm=" + arm;
            continue;
          }
          if (!missing.empty()) continue;
          auto lat = pooled_latencies(store_, it->second.run_ids);
          if (lat.empty()) incomplete("model=" + m + " (no post-warm-up samples)");
          double mean = 0;
          for (double v : lat) mean += v;
          mean /= static_cast<double>(lat.size());
          double stat = avg ? mean : telemetry::percentile(lat, 0.99);
          ds.rows.push_back({m, std::to_string(b), arm, format_double(stat),
                             format_double(sample_stddev(lat, mean))});
        }
      }
    }
    if (!missing.empty()) incomplete(missing);
    return ds;
  }

  if (figure_id == kFig7) {
    std::map<std::pair<std::string, std::string>, Group> groups;  // (model, arm)
    std::set<std::string> models;
    for (const auto& r : runs) {
      auto mit = r.tags.find("model");
      auto ait = r.tags.find("arm");
      if (mit == r.tags.end() || ait == r.tags.end()) continue;
      models.insert(mit->second);
      groups[{mit->second, ait->second}].run_ids.push_back(r.run_id);
    }
    if (groups.empty())
      throw_error(ErrorCode::IncompleteGrid, figure_id + ": no matching runs");
    ds.columns = {"model", "arm", "p99_ms"};
    // Order models by parameter footprint so rows read small to large.
    std::vector<std::string> ordered(models.begin(), models.end());
    auto size_of = [&](const std::string& m) {
      auto it = sim_config_.models.find(m);
      return it == sim_config_.models.end() ? 0.0 : it->second.params_mem_gib;
    };
    std::stable_sort(ordered.begin(), ordered.end(),
                     [&](const std::string& a, const std::string& b) {
                       return size_of(a) < size_of(b);
                     });
    std::string missing;
    for (const auto& m : ordered) {
      for (const char* arm : {"mig", "mps"}) {
        auto it = groups.find({m, arm});
        if (it == groups.end()) {
          missing += (missing.empty() ? "" : "; ") + std::string("model=") + m + ",arm=" + arm;
          continue;
        }
        if (!missing.empty()) continue;
        auto lat = pooled_latencies(store_, it->second.run_ids);
        if (lat.empty()) incomplete("model=" + m + " (no post-warm-up samples)");
        ds.rows.push_back({m, arm, format_double(telemetry::percentile(lat, 0.99))});
      }
    }
    if (!missing.empty()) incomplete(missing);
    return ds;
  }

  if (figure_id == kFig10 || figure_id == kFig11) {
    const std::string want_arm = figure_id == kFig10 ? "mps" : "mig";
    std::map<std::string, Group> groups;  // arrival rate tag -> runs
    for (const auto& r : runs) {
      auto ait = r.tags.find("arm");
      auto rit = r.tags.find("arrival_rate");
      if (ait == r.tags.end() || rit == r.tags.end() || ait->second != want_arm) continue;
      groups[rit->second].run_ids.push_back(r.run_id);
    }
    if (groups.empty())
      throw_error(ErrorCode::IncompleteGrid,
                  figure_id + ": no completed " + want_arm + " runs with arrival_rate");
    ds.columns = {"arrival_rate_req_per_s", "arm", "p99_ms"};
    std::vector<std::pair<double, std::string>> rates;
    for (const auto& [tag, _] : groups) rates.emplace_back(parse_double(tag), tag);
    std::sort(rates.begin(), rates.end());
    for (const auto& [_, tag] : rates) {
      auto lat = pooled_latencies(store_, groups[tag].run_ids);
      if (lat.empty()) incomplete("arrival_rate=" + tag + " (no post-warm-up samples)");
      ds.rows.push_back({tag, want_arm, format_double(telemetry::percentile(lat, 0.99))});
    }
    return ds;
  }

  throw_error(ErrorCode::InvalidArgument, "unknown figure id '" + figure_id + "'");
}

}  // namespace migperf::report
