// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "migperf/engine.hpp"
#include "migperf/export.hpp"

using namespace migperf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kRepoData = MIGPERF_REPO_DATA;
const std::string kCliPath = MIGPERF_CLI_PATH;

struct Criterion {
  int number;
  std::string title;
  bool pass = true;
  std::vector<std::string> notes;

  Criterion(int n, std::string t) : number(n), title(std::move(t)) {}

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back(what);
    }
  }
};

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           (tag + "_" + std::to_string(std::chrono::steady_clock::now()
                                           .time_since_epoch()
                                           .count()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// ---------------------------------------------------------------- criterion 1

// Exhaustive placement oracle: all start assignments, no pruning.
bool oracle_feasible(const device::DeviceCatalogEntry& entry,
                     const std::vector<std::string>& request) {
  std::map<std::string, int> counts;
  for (const auto& name : request) counts[name]++;
  for (const auto& [name, c] : counts)
    if (c > entry.profile_or_throw(name).max_count) return false;
  if (request.empty()) return true;

  std::vector<const device::GiProfile*> profs;
  for (const auto& name : request) profs.push_back(&entry.profile_or_throw(name));
  std::vector<size_t> idx(request.size(), 0);
  for (;;) {
    bool ok = true;
    for (size_t i = 0; i < profs.size() && ok; ++i) {
      int si = profs[i]->allowed_starts[idx[i]], li = profs[i]->compute_slices;
      for (size_t j = i + 1; j < profs.size() && ok; ++j) {
        int sj = profs[j]->allowed_starts[idx[j]], lj = profs[j]->compute_slices;
        if (si < sj + lj && sj < si + li) ok = false;
      }
    }
    if (ok) return true;
    size_t k = 0;
    while (k < idx.size()) {
      if (++idx[k] < profs[k]->allowed_starts.size()) break;
      idx[k] = 0;
      ++k;
    }
    if (k == idx.size()) return false;
  }
}

void all_multisets(const device::DeviceCatalogEntry& entry, size_t max_size,
                   std::vector<std::string>& cur, size_t from,
                   std::vector<std::vector<std::string>>& out) {
  out.push_back(cur);
  if (cur.size() == max_size) return;
  for (size_t i = from; i < entry.profiles.size(); ++i) {
    cur.push_back(entry.profiles[i].name);
    all_multisets(entry, max_size, cur, i, out);
    cur.pop_back();
  }
}

Criterion criterion1() {
  Criterion c{1, "partition-rule fidelity"};
  double t0 = now_seconds();
  auto catalog = device::load_catalog(kRepoData + "/catalog.json");
  const auto& a100 = catalog[0];
  const auto& a30 = catalog[1];

  c.require(!device::validate_config(a100, {"4g.40gb", "3g.40gb"}).feasible,
            "{4g.40gb,3g.40gb} must be infeasible on A100");
  c.require(device::validate_config(a100, std::vector<std::string>(7, "1g.10gb")).feasible,
            "{1g.10gb x7} must be feasible on A100");

  size_t checked = 0;
  for (const auto* entry : {&a100, &a30}) {
    std::vector<std::vector<std::string>> multisets;
    std::vector<std::string> cur;
    all_multisets(*entry, 7, cur, 0, multisets);
    for (const auto& req : multisets) {
      ++checked;
      if (device::validate_config(*entry, req).feasible != oracle_feasible(*entry, req)) {
        c.require(false, "oracle disagreement on " + entry->model_name);
        break;
      }
    }
  }
  double elapsed = now_seconds() - t0;
  c.require(elapsed < 10.0, "exhaustive agreement must finish in under 10 s");
  c.notes.push_back(std::to_string(checked) + " multisets checked in " +
                    std::to_string(elapsed) + " s");
  return c;
}

// ---------------------------------------------------------------- criterion 2

Criterion criterion2() {
  Criterion c{2, "state-machine soundness under randomized operations"};
  auto catalog = device::load_catalog(kRepoData + "/catalog.json");
  std::mt19937 rng(20260811);
  long violations = 0;
  constexpr int kSequences = 100000;

  for (int seq = 0; seq < kSequences; ++seq) {
    const auto& entry = catalog[seq % catalog.size()];
    device::DeviceState state;
    state.catalog = entry;
    std::vector<int> live;
    std::set<int> bound;
    int ops = 4 + static_cast<int>(rng() % 12);
    for (int i = 0; i < ops; ++i) {
      int op = static_cast<int>(rng() % 6);
      try {
        switch (op) {
          case 0:
            state = device::enable_mig(std::move(state));
            break;
          case 1: {
            const auto& p = entry.profiles[rng() % entry.profiles.size()];
            auto [next, id] = device::create_gi(std::move(state), p.name);
            state = std::move(next);
            live.push_back(id);
            break;
          }
          case 2: {
            int id = live.empty() ? 1 : live[rng() % live.size()];
            bool was_bound = bound.count(id) > 0;
            state = device::destroy_gi(std::move(state), id);
            if (was_bound) ++violations;  // a bound GI must never destroy
            live.erase(std::remove(live.begin(), live.end(), id), live.end());
            break;
          }
          case 3: {
            if (!live.empty()) {
              int id = live[rng() % live.size()];
              auto* gi = state.find_gi(id);
              if (gi && gi->bound_run.empty()) {
                gi->bound_run = "fuzz";
                bound.insert(id);
              }
            }
            break;
          }
          case 4: {
            if (!live.empty()) {
              int id = live[rng() % live.size()];
              auto* gi = state.find_gi(id);
              if (gi && !gi->bound_run.empty()) {
                gi->bound_run.clear();
                bound.erase(id);
              }
            }
            break;
          }
          case 5:
            state = device::disable_mig(std::move(state));
            break;
        }
      } catch (const MigError&) {
        // rejected transition
      }
      if (!device::placement_is_sound(state)) ++violations;
    }
  }
  c.require(violations == 0,
            std::to_string(violations) + " violations across randomized sequences");
  c.notes.push_back(std::to_string(kSequences) + " sequences, zero violations");
  return c;
}

// ---------------------------------------------------------------- criterion 3

Criterion criterion3() {
  Criterion c{3, "metric oracles: nearest-rank percentile and trapezoidal energy"};
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  c.require(telemetry::percentile(v, 0.99) == 99.0, "percentile(1..100, 0.99) must be 99");

  std::vector<telemetry::Point> flat;
  for (double t = 0; t <= 10000.0; t += 500.0) flat.push_back({t, 100.0});
  c.require(telemetry::energy_mj(flat, 0, 10000) == 1000000.0,
            "constant 100 W over 10 s must be exactly 1e6 mJ");

  std::vector<telemetry::Point> ramp;
  for (double t = 0; t <= 10000.0; t += 100.0) ramp.push_back({t, 100.0 * t / 10000.0});
  double e = telemetry::energy_mj(ramp, 0, 10000);
  c.require(std::abs(e - 500000.0) / 500000.0 < 1e-12,
            "trapezoid on a linear ramp must be exact to 1e-12 relative");

  std::mt19937 rng(99);
  bool additive = true;
  for (int iter = 0; iter < 1000 && additive; ++iter) {
    std::vector<telemetry::Point> pts;
    double t = 0;
    for (int i = 0; i < 50; ++i) {
      pts.push_back({t, static_cast<double>(2 * (rng() % 500))});
      t += 100.0;
    }
    double a = pts.front().ts_ms, cc = pts.back().ts_ms;
    double b = pts[1 + rng() % (pts.size() - 2)].ts_ms;
    if (telemetry::energy_mj(pts, a, b) + telemetry::energy_mj(pts, b, cc) !=
        telemetry::energy_mj(pts, a, cc))
      additive = false;
  }
  c.require(additive, "window additivity must be exact");
  return c;
}

// ---------------------------------------------------------------- criterion 4

struct Fig2Data {
  // profile -> batch -> summary
  std::map<std::string, std::map<int, telemetry::MetricSummary>> cells;
  std::vector<std::string> run_ids;
};

Fig2Data run_fig2(Engine& engine) {
  std::ifstream in(kRepoData + "/configs/fig2.json");
  json doc = json::parse(in);
  auto submitted = engine.submit_benchmark_json(doc);
  engine.wait_idle();

  Fig2Data data;
  for (const auto& id : submitted["run_ids"]) {
    auto record = engine.registry().get_or_throw(id.get<std::string>());
    if (record.status != bench::RunStatus::complete)
      throw std::runtime_error("fig2 run failed: " + record.error);
    auto summary = engine.store().summarize(record.run_id, record.spec.batch_size);
    data.cells[record.tags.at("profile")][record.spec.batch_size] = summary;
    data.run_ids.push_back(record.run_id);
  }
  return data;
}

Criterion criterion4(Engine& engine, Fig2Data& out_data) {
  Criterion c{4, "training sweep trends (saturation, flat memory, energy ordering)"};
  double t0 = now_seconds();
  Fig2Data data = run_fig2(engine);
  double elapsed = now_seconds() - t0;

  const std::vector<std::string> order = {"1g.10gb", "2g.20gb", "3g.40gb", "4g.40gb",
                                          "7g.80gb"};
  const std::vector<int> batches = {8, 16, 32, 64};
  c.require(data.cells.size() == 5, "five profiles expected");

  // (a) saturation on the smallest instance
  auto& small = data.cells["1g.10gb"];
  double gain = (small[64].throughput_samples_per_s - small[32].throughput_samples_per_s) /
                small[32].throughput_samples_per_s;
  c.require(gain < 0.05, "samples/sec gain 32->64 on 1g.10gb must be below 5%");
  c.notes.push_back("batch 32->64 samples/sec gain on 1g.10gb: " +
                    std::to_string(gain * 100.0) + "%");

  // (b) framebuffer flat across profiles at fixed batch
  for (int b : batches) {
    double fb = data.cells[order[0]][b].peak_fb_mib;
    for (const auto& p : order)
      c.require(data.cells[p][b].peak_fb_mib == fb,
                "fb_mib must be identical across profiles at batch " + std::to_string(b));
  }

  // (c) energy strictly decreasing in profile size at fixed batch, fixed requests
  for (int b : batches) {
    for (size_t i = 1; i < order.size(); ++i) {
      double prev = data.cells[order[i - 1]][b].energy_mj;
      double cur = data.cells[order[i]][b].energy_mj;
      c.require(cur < prev, "energy must decrease " + order[i - 1] + " -> " + order[i] +
                              " at batch " + std::to_string(b));
    }
  }

  c.require(elapsed < 60.0, "full sweep must finish in under 60 s of wall time");
  c.notes.push_back("sweep wall time " + std::to_string(elapsed) + " s");
  out_data = std::move(data);
  return c;
}

// ---------------------------------------------------------------- criterion 5

Criterion criterion5() {
  Criterion c{5, "sharing trends: small-batch parity, MIG tail advantage at batch 8"};
  ctrl::Controller controller(device::load_catalog(kRepoData + "/catalog.json"));
  telemetry::MetricStore store;
  bench::RunRegistry registry;
  bench::Runner runner(controller, store, registry,
                       sim::load_sim_config(kRepoData + "/sim_params.json"));

  bench::CompareSpec cmp;
  cmp.device_id = 1;  // A30
  cmp.replicas = 4;
  cmp.seed = 20260811;  // pinned
  cmp.spec.kind = bench::WorkloadKind::inference;
  cmp.spec.model = "resnet50";
  cmp.spec.batch_size = 8;
  cmp.spec.total_requests = 2500;  // 10,000 requests per arm across 4 replicas
  cmp.spec.loop = bench::LoopMode::closed;
  cmp.batch_sizes = {1, 8};

  auto result = runner.run_sharing_comparison(cmp);

  auto pooled = [&](const std::vector<std::string>& ids, int batch) {
    std::vector<double> all;
    for (const auto& id : ids) {
      auto record = registry.get_or_throw(id);
      if (std::stoi(record.tags.at("batch_size")) != batch) continue;
      auto v = store.post_warmup_latencies(id);
      all.insert(all.end(), v.begin(), v.end());
    }
    return all;
  };
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto stddev_of = [&](const std::vector<double>& v) {
    double m = mean_of(v), acc = 0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
  };

  auto mig1 = pooled(result.mig_runs, 1), mps1 = pooled(result.mps_runs, 1);
  double rel = std::abs(mean_of(mps1) - mean_of(mig1)) / mean_of(mig1);
  c.require(rel < 0.02, "batch-1 mean latency gap must be below 2%");
  c.notes.push_back("batch-1 relative mean gap: " + std::to_string(rel * 100.0) + "%");

  auto mig8 = pooled(result.mig_runs, 8), mps8 = pooled(result.mps_runs, 8);
  double p99_mig = telemetry::percentile(mig8, 0.99);
  double p99_mps = telemetry::percentile(mps8, 0.99);
  c.require(p99_mig < p99_mps, "p99(mig) must beat p99(mps) at batch 8");
  c.require(stddev_of(mig8) < stddev_of(mps8), "stddev(mig) must beat stddev(mps) at batch 8");
  c.notes.push_back("batch-8 p99 mig/mps: " + std::to_string(p99_mig) + "/" +
                    std::to_string(p99_mps) + " ms");
  return c;
}

// ---------------------------------------------------------------- criterion 6

struct PromSample {
  std::string name;
  std::string labels;  // canonical text between braces
  double value;
};

bool parse_exposition(const std::string& text, std::vector<PromSample>& out) {
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) return false;  // unterminated line
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty() || line[0] == '#') continue;
    PromSample s;
    size_t brace = line.find('{');
    if (brace == std::string::npos || line[0] < 'a') return false;
    s.name = line.substr(0, brace);
    for (char ch : s.name)
      if (!(isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == ':')) return false;
    size_t close = brace + 1;
    bool in_quotes = false;
    for (; close < line.size(); ++close) {
      if (in_quotes) {
        if (line[close] == '\\') ++close;
        else if (line[close] == '"') in_quotes = false;
      } else if (line[close] == '"') {
        in_quotes = true;
      } else if (line[close] == '}') {
        break;
      }
    }
    if (close >= line.size()) return false;
    s.labels = line.substr(brace + 1, close - brace - 1);
    std::istringstream rest(line.substr(close + 1));
    long long ts;
    if (!(rest >> s.value >> ts)) return false;
    std::string extra;
    if (rest >> extra) return false;
    out.push_back(std::move(s));
  }
  return true;
}

Criterion criterion6(Engine& engine, const Fig2Data& fig2) {
  Criterion c{6, "export conformance: exposition grammar, CSV round-trip, figure grid"};

  auto body = engine.export_prometheus();
  std::vector<PromSample> samples;
  c.require(parse_exposition(body, samples), "/metrics must parse under the grammar");
  std::set<std::pair<std::string, std::string>> seen;
  bool dup = false;
  for (const auto& s : samples)
    if (!seen.emplace(s.name, s.labels).second) dup = true;
  c.require(!dup, "no duplicate (name, labels) pairs allowed");
  c.notes.push_back(std::to_string(samples.size()) + " exposition samples parsed");

  // CSV summaries round-trip bit-exactly.
  auto csv = engine.export_csv(fig2.run_ids, "summaries");
  auto rows = report::parse_csv(csv);
  c.require(rows.size() == fig2.run_ids.size() + 1, "one CSV row per run plus header");
  std::map<std::string, size_t> col;
  for (size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
  bool exact = true;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto summary = engine.store().summarize(row[col["run_id"]],
                                            std::stoi(row[col["batch_size"]]));
    exact = exact &&
            report::parse_double(row[col["avg_latency_ms"]]) == summary.avg_latency_ms &&
            report::parse_double(row[col["p99_latency_ms"]]) == summary.p99_latency_ms &&
            report::parse_double(row[col["throughput_batch_per_s"]]) ==
                summary.throughput_batch_per_s &&
            report::parse_double(row[col["throughput_samples_per_s"]]) ==
                summary.throughput_samples_per_s &&
            report::parse_double(row[col["mean_gract_frac"]]) == summary.mean_gract_frac &&
            report::parse_double(row[col["peak_fb_mib"]]) == summary.peak_fb_mib &&
            report::parse_double(row[col["energy_mj"]]) == summary.energy_mj;
  }
  c.require(exact, "summary CSV must round-trip bit-exactly");

  // fig2 dataset: 20 rows, declared columns.
  auto figure = engine.figure_csv(report::kFig2, fig2.run_ids);
  auto frows = report::parse_csv(figure);
  c.require(frows.size() == 21, "fig2 dataset must have exactly 20 rows");
  std::vector<std::string> want_cols = {"profile", "batch_size", "throughput_batch_per_s",
                                        "gract_pct", "fb_mib", "energy_mj"};
  c.require(frows[0] == want_cols, "fig2 dataset columns must match the declaration");
  return c;
}

// ---------------------------------------------------------------- criterion 7

int run_cli_sweep(const std::string& data_dir) {
  std::string cmd = kCliPath + " --data-dir " + data_dir + " --catalog " + kRepoData +
                    "/catalog.json bench sweep --config " + kRepoData +
                    "/configs/fig2.json > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Criterion criterion7() {
  Criterion c{7, "end-to-end determinism of the sweep"};
  TempDir a("migperf_accept_a"), b("migperf_accept_b");
  c.require(run_cli_sweep(a.path.string()) == 0, "first sweep execution must succeed");
  c.require(run_cli_sweep(b.path.string()) == 0, "second sweep execution must succeed");

  auto series_a = a.path / "series";
  auto series_b = b.path / "series";
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(series_a)) names_a.insert(e.path().filename());
  for (const auto& e : fs::directory_iterator(series_b)) names_b.insert(e.path().filename());
  c.require(names_a == names_b, "both executions must produce the same run files");
  c.require(names_a.size() == 20, "twenty raw series files expected");

  size_t bytes = 0;
  bool identical = true;
  for (const auto& name : names_a) {
    auto fa = read_file(series_a / name);
    auto fb = read_file(series_b / name);
    bytes += fa.size();
    if (fa != fb) {
      identical = false;
      c.require(false, "raw series differ: " + name);
      break;
    }
  }
  c.require(identical, "raw series files must be byte-identical");
  c.notes.push_back(std::to_string(bytes / 1024) + " KiB of raw series compared");

  // Summaries: export from both data dirs and compare bytes.
  auto export_csv = [&](const std::string& dir) {
    std::string out_path = dir + "/summaries.csv";
    std::string cmd = kCliPath + " --data-dir " + dir + " --catalog " + kRepoData +
                      "/catalog.json export csv --out " + out_path + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return std::string();
    return read_file(out_path);
  };
  auto sa = export_csv(a.path.string());
  auto sb = export_csv(b.path.string());
  c.require(!sa.empty() && sa == sb, "summaries must be byte-identical");

  // The sweep-then-report pipeline yields the 20-row figure CSV.
  std::string fig_path = a.path.string() + "/fig2.csv";
  std::string report_cmd = kCliPath + " --data-dir " + a.path.string() + " --catalog " +
                           kRepoData + "/catalog.json report --figure " +
                           "fig2_training_batch_sweep --out " + fig_path +
                           " > /dev/null 2>&1";
  c.require(std::system(report_cmd.c_str()) == 0, "report command must succeed");
  auto fig_rows = report::parse_csv(read_file(fig_path));
  c.require(fig_rows.size() == 21, "report must emit header plus 20 rows");
  return c;
}

}  // namespace

int main() {
  std::vector<Criterion> results;
  TempDir engine_dir("migperf_accept_engine");
  EngineOptions opts;
  opts.data_dir = engine_dir.path.string();
  opts.catalog_path = kRepoData + "/catalog.json";
  opts.sim_config_path = kRepoData + "/sim_params.json";
  Engine engine(opts);

  Fig2Data fig2;
  results.push_back(criterion1());
  results.push_back(criterion2());
  results.push_back(criterion3());
  results.push_back(criterion4(engine, fig2));
  results.push_back(criterion5());
  results.push_back(criterion6(engine, fig2));
  results.push_back(criterion7());

  bool all_pass = true;
  for (const auto& c : results) {
    std::cout << (c.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": "
              << c.title;
    if (!c.notes.empty()) {
      std::cout << "  (";
      for (size_t i = 0; i < c.notes.size(); ++i)
        std::cout << (i ? "; " : "") << c.notes[i];
      std::cout << ")";
    }
    std::cout << "\n";
    if (!c.pass) all_pass = false;
  }
  return all_pass ? 0 : 1;
}
