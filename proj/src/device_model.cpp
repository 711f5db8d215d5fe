#include "migperf/device_model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace migperf::device {

namespace {

using nlohmann::json;

bool intervals_overlap(int start_a, int len_a, int start_b, int len_b) {
  return start_a < start_b + len_b && start_b < start_a + len_a;
}

struct Interval {
  int start;
  int len;
};

bool fits(const std::vector<Interval>& occupied, int start, int len) {
  for (const auto& iv : occupied) {
    if (intervals_overlap(iv.start, iv.len, start, len)) return false;
  }
  return true;
}

void validate_profile(const DeviceCatalogEntry& entry, const GiProfile& p,
                      const std::string& origin) {
  auto fail = [&](const std::string& what) {
    throw_error(ErrorCode::InvalidCatalog,
                origin + ": profile '" + p.name + "' on '" + entry.model_name +
                    "': " + what);
  };
  if (p.compute_slices < 1) fail("compute_slices must be >= 1");
  if (p.compute_slices > entry.total_compute_slices)
    fail("compute_slices exceeds device total");
  if (p.memory_gib < 1) fail("memory_gib must be >= 1");
  if (p.allowed_starts.empty()) fail("allowed_starts must be non-empty");
  for (size_t i = 1; i < p.allowed_starts.size(); ++i) {
    if (p.allowed_starts[i] <= p.allowed_starts[i - 1])
      fail("allowed_starts must be strictly increasing");
  }
  for (int s : p.allowed_starts) {
    if (s < 0 || s + p.compute_slices > entry.total_compute_slices)
      fail("start " + std::to_string(s) + " exceeds the slice axis (" +
           std::to_string(s) + "+" + std::to_string(p.compute_slices) + " > " +
           std::to_string(entry.total_compute_slices) + ")");
  }
  // Name scheme "<g>g.<mem>gb": the leading integer is the slice count.
  int leading = -1;
  auto [ptr, ec] = std::from_chars(p.name.data(), p.name.data() + p.name.size(), leading);
  if (ec != std::errc() || ptr == p.name.data() || *ptr != 'g')
    fail("name must look like '<g>g.<mem>gb'");
  if (leading != p.compute_slices)
    fail("name says " + std::to_string(leading) + " slices but compute_slices is " +
         std::to_string(p.compute_slices));
  if (p.max_count < 1) fail("max_count must be >= 1");
}

GiProfile parse_profile(const json& j, const std::string& origin) {
  GiProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.compute_slices = j.at("compute_slices").get<int>();
    p.memory_gib = j.at("memory_gib").get<int>();
    p.allowed_starts = j.at("allowed_starts").get<std::vector<int>>();
    if (j.contains("max_count"))
      p.max_count = j.at("max_count").get<int>();
    else
      p.max_count = static_cast<int>(p.allowed_starts.size());
  } catch (const json::exception& e) {
    throw_error(ErrorCode::ParseError, origin + ": bad profile record: " + e.what());
  }
  return p;
}

}  // namespace

const GiProfile* DeviceCatalogEntry::find_profile(const std::string& name) const {
  for (const auto& p : profiles)
    if (p.name == name) return &p;
  return nullptr;
}

const GiProfile& DeviceCatalogEntry::profile_or_throw(const std::string& name) const {
  const GiProfile* p = find_profile(name);
  if (!p)
    throw_error(ErrorCode::UnknownProfile,
                "unknown profile '" + name + "' for device model '" + model_name + "'");
  return *p;
}

int DeviceCatalogEntry::profile_index(const std::string& name) const {
  for (size_t i = 0; i < profiles.size(); ++i)
    if (profiles[i].name == name) return static_cast<int>(i);
  return -1;
}

int GpuInstance::used_ci_slices() const {
  int used = 0;
  for (const auto& ci : compute_instances) used += ci.slices;
  return used;
}

const char* sharing_mode_name(SharingMode mode) {
  switch (mode) {
    case SharingMode::mig: return "mig";
    case SharingMode::mps: return "mps";
    case SharingMode::exclusive: return "exclusive";
  }
  return "?";
}

SharingMode sharing_mode_from_name(const std::string& name) {
  if (name == "mig") return SharingMode::mig;
  if (name == "mps") return SharingMode::mps;
  if (name == "exclusive") return SharingMode::exclusive;
  throw_error(ErrorCode::InvalidArgument, "unknown sharing mode '" + name + "'");
}

const GpuInstance* DeviceState::find_gi(int gi_id) const {
  for (const auto& gi : instances)
    if (gi.gi_id == gi_id) return &gi;
  return nullptr;
}

GpuInstance* DeviceState::find_gi(int gi_id) {
  for (auto& gi : instances)
    if (gi.gi_id == gi_id) return &gi;
  return nullptr;
}

int DeviceState::profile_count(const std::string& profile) const {
  int n = 0;
  for (const auto& gi : instances)
    if (gi.profile == profile) ++n;
  return n;
}

bool equivalent_states(const DeviceState& a, const DeviceState& b) {
  if (a.mig_enabled != b.mig_enabled || a.sharing_mode != b.sharing_mode ||
      a.instances.size() != b.instances.size())
    return false;
  auto key = [](const GpuInstance& gi) {
    std::vector<int> cis;
    for (const auto& ci : gi.compute_instances) cis.push_back(ci.slices);
    std::sort(cis.begin(), cis.end());
    return std::tuple(gi.profile, gi.start_slice, cis);
  };
  std::vector<decltype(key(a.instances[0]))> ka, kb;
  for (const auto& gi : a.instances) ka.push_back(key(gi));
  for (const auto& gi : b.instances) kb.push_back(key(gi));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  return ka == kb;
}

std::vector<DeviceCatalogEntry> parse_catalog(const std::string& text,
                                              const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw_error(ErrorCode::ParseError, origin + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("devices") || !doc["devices"].is_array())
    throw_error(ErrorCode::ParseError, origin + ": top-level 'devices' array missing");

  std::vector<DeviceCatalogEntry> entries;
  for (const auto& d : doc["devices"]) {
    DeviceCatalogEntry entry;
    try {
      entry.model_name = d.at("model_name").get<std::string>();
      entry.total_compute_slices = d.at("total_compute_slices").get<int>();
      entry.total_memory_gib = d.at("total_memory_gib").get<int>();
    } catch (const json::exception& e) {
      throw_error(ErrorCode::ParseError, origin + ": bad device record: " + e.what());
    }
    if (entry.total_compute_slices < 1)
      throw_error(ErrorCode::InvalidCatalog,
                  origin + ": '" + entry.model_name + "': total_compute_slices must be >= 1");
    if (d.contains("profiles")) {
      for (const auto& pj : d["profiles"]) {
        GiProfile p = parse_profile(pj, origin);
        validate_profile(entry, p, origin);
        entry.profiles.push_back(std::move(p));
      }
    }
    std::set<std::string> seen;
    for (const auto& p : entry.profiles) {
      if (!seen.insert(p.name).second)
        throw_error(ErrorCode::InvalidCatalog,
                    origin + ": duplicate profile '" + p.name + "' on '" +
                        entry.model_name + "'");
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<DeviceCatalogEntry> load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw_error(ErrorCode::ParseError, "cannot open catalog file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_catalog(buf.str(), path);
}

std::string default_catalog_text() {
  // Placement tables follow the vendor's published MIG layouts, projected
  // onto the compute-slice axis. 3g.40gb starts at {0,3}: a 3g instance and
  // the 4g instance always contend for slice 3, so the two profiles can
  // never coexist, while two 3g instances still fit side by side.
  return R"({
  "devices": [
    {
      "model_name": "A100-80GB",
      "total_compute_slices": 7,
      "total_memory_gib": 80,
      "profiles": [
        {"name": "1g.10gb", "compute_slices": 1, "memory_gib": 10,
         "allowed_starts": [0, 1, 2, 3, 4, 5, 6], "max_count": 7},
        {"name": "2g.20gb", "compute_slices": 2, "memory_gib": 20,
         "allowed_starts": [0, 2, 4], "max_count": 3},
        {"name": "3g.40gb", "compute_slices": 3, "memory_gib": 40,
         "allowed_starts": [0, 3], "max_count": 2},
        {"name": "4g.40gb", "compute_slices": 4, "memory_gib": 40,
         "allowed_starts": [0], "max_count": 1},
        {"name": "7g.80gb", "compute_slices": 7, "memory_gib": 80,
         "allowed_starts": [0], "max_count": 1}
      ]
    },
    {
      "model_name": "A30",
      "total_compute_slices": 4,
      "total_memory_gib": 24,
      "profiles": [
        {"name": "1g.6gb", "compute_slices": 1, "memory_gib": 6,
         "allowed_starts": [0, 1, 2, 3], "max_count": 4},
        {"name": "2g.12gb", "compute_slices": 2, "memory_gib": 12,
         "allowed_starts": [0, 2], "max_count": 2},
        {"name": "4g.24gb", "compute_slices": 4, "memory_gib": 24,
         "allowed_starts": [0], "max_count": 1}
      ]
    }
  ]
}
)";
}

DeviceState enable_mig(DeviceState state) {
  if (state.mig_enabled)
    throw_error(ErrorCode::AlreadyEnabled,
                "device " + std::to_string(state.device_id) + ": MIG already enabled");
  if (state.sharing_mode == SharingMode::mps)
    throw_error(ErrorCode::ModeConflict,
                "device " + std::to_string(state.device_id) +
                    ": cannot enable MIG while in MPS mode");
  state.mig_enabled = true;
  state.sharing_mode = SharingMode::mig;
  state.instances.clear();
  return state;
}

DeviceState disable_mig(DeviceState state) {
  if (!state.mig_enabled)
    throw_error(ErrorCode::AlreadyDisabled,
                "device " + std::to_string(state.device_id) + ": MIG not enabled");
  if (!state.instances.empty())
    throw_error(ErrorCode::Busy,
                "device " + std::to_string(state.device_id) +
                    ": destroy all GPU instances before disabling MIG");
  state.mig_enabled = false;
  state.sharing_mode = SharingMode::exclusive;
  return state;
}

DeviceState set_sharing_mode(DeviceState state, SharingMode mode) {
  if (mode == state.sharing_mode) return state;
  if (mode == SharingMode::mps && state.mig_enabled)
    throw_error(ErrorCode::ModeConflict,
                "device " + std::to_string(state.device_id) +
                    ": MPS and MIG are mutually exclusive; disable MIG first");
  if (mode == SharingMode::mig) return enable_mig(std::move(state));
  if (state.mig_enabled) return disable_mig(std::move(state));  // -> exclusive
  state.sharing_mode = mode;
  return state;
}

CreateResult create_gi(DeviceState state, const std::string& profile_name,
                       std::optional<int> start) {
  if (!state.mig_enabled)
    throw_error(ErrorCode::ModeConflict,
                "device " + std::to_string(state.device_id) + ": MIG not enabled");
  const GiProfile& profile = state.catalog.profile_or_throw(profile_name);

  if (state.profile_count(profile_name) >= profile.max_count)
    throw_error(ErrorCode::NoCapacity,
                "profile '" + profile_name + "': max_count " +
                    std::to_string(profile.max_count) + " reached");

  std::vector<Interval> occupied;
  for (const auto& gi : state.instances) {
    const GiProfile& p = state.catalog.profile_or_throw(gi.profile);
    occupied.push_back({gi.start_slice, p.compute_slices});
  }

  int chosen = -1;
  if (start.has_value()) {
    bool allowed = std::find(profile.allowed_starts.begin(), profile.allowed_starts.end(),
                             *start) != profile.allowed_starts.end();
    if (!allowed)
      throw_error(ErrorCode::InvalidStart,
                  "start " + std::to_string(*start) + " is not an allowed start for '" +
                      profile_name + "'");
    if (!fits(occupied, *start, profile.compute_slices))
      throw_error(ErrorCode::InvalidStart,
                  "start " + std::to_string(*start) + " overlaps a resident instance");
    chosen = *start;
  } else {
    for (int s : profile.allowed_starts) {
      if (fits(occupied, s, profile.compute_slices)) {
        chosen = s;
        break;
      }
    }
    if (chosen < 0)
      throw_error(ErrorCode::NoCapacity,
                  "no legal placement left for profile '" + profile_name + "'");
  }

  GpuInstance gi;
  gi.gi_id = state.next_gi_id++;
  gi.profile = profile_name;
  gi.start_slice = chosen;
  state.instances.push_back(std::move(gi));
  std::sort(state.instances.begin(), state.instances.end(),
            [](const GpuInstance& a, const GpuInstance& b) {
              return a.start_slice < b.start_slice;
            });
  int id = state.next_gi_id - 1;
  return {std::move(state), id};
}

DeviceState destroy_gi(DeviceState state, int gi_id) {
  auto it = std::find_if(state.instances.begin(), state.instances.end(),
                         [&](const GpuInstance& gi) { return gi.gi_id == gi_id; });
  if (it == state.instances.end())
    throw_error(ErrorCode::NotFound, "no GPU instance with id " + std::to_string(gi_id));
  if (!it->bound_run.empty())
    throw_error(ErrorCode::Busy, "GPU instance " + std::to_string(gi_id) +
                                     " has workload '" + it->bound_run + "' bound");
  if (!it->compute_instances.empty())
    throw_error(ErrorCode::Busy, "GPU instance " + std::to_string(gi_id) + " has " +
                                     std::to_string(it->compute_instances.size()) +
                                     " live compute instance(s)");
  state.instances.erase(it);
  return state;
}

CreateResult create_ci(DeviceState state, int gi_id, int slices) {
  GpuInstance* gi = state.find_gi(gi_id);
  if (!gi)
    throw_error(ErrorCode::NotFound, "no GPU instance with id " + std::to_string(gi_id));
  if (slices < 1)
    throw_error(ErrorCode::InvalidArgument, "compute instance needs at least 1 slice");
  const GiProfile& profile = state.catalog.profile_or_throw(gi->profile);
  if (gi->used_ci_slices() + slices > profile.compute_slices)
    throw_error(ErrorCode::NoCapacity,
                "GPU instance " + std::to_string(gi_id) + " has " +
                    std::to_string(profile.compute_slices - gi->used_ci_slices()) +
                    " slice(s) free, requested " + std::to_string(slices));
  ComputeInstance ci;
  ci.ci_id = state.next_ci_id++;
  ci.slices = slices;
  gi->compute_instances.push_back(ci);
  return {std::move(state), ci.ci_id};
}

DeviceState destroy_ci(DeviceState state, int gi_id, int ci_id) {
  GpuInstance* gi = state.find_gi(gi_id);
  if (!gi)
    throw_error(ErrorCode::NotFound, "no GPU instance with id " + std::to_string(gi_id));
  auto it = std::find_if(gi->compute_instances.begin(), gi->compute_instances.end(),
                         [&](const ComputeInstance& ci) { return ci.ci_id == ci_id; });
  if (it == gi->compute_instances.end())
    throw_error(ErrorCode::NotFound, "no compute instance with id " + std::to_string(ci_id) +
                                         " in GPU instance " + std::to_string(gi_id));
  gi->compute_instances.erase(it);
  return state;
}

namespace {

// Backtracking placement search. Requests are grouped per profile (catalog
// order); within a profile, instance k is placed at a start strictly above
// instance k-1's, which both prunes symmetric assignments and yields the
// lexicographically smallest witness.
struct PlacementSearch {
  const DeviceCatalogEntry& entry;
  std::vector<Interval> occupied;
  std::vector<std::pair<std::string, int>> witness;

  bool place(const std::vector<std::pair<const GiProfile*, int>>& groups,
             size_t group_idx, int count_done, int min_start) {
    if (group_idx == groups.size()) return true;
    const auto& [profile, want] = groups[group_idx];
    if (count_done == want) return place(groups, group_idx + 1, 0, -1);
    for (int s : profile->allowed_starts) {
      if (s <= min_start) continue;
      if (!fits(occupied, s, profile->compute_slices)) continue;
      occupied.push_back({s, profile->compute_slices});
      witness.emplace_back(profile->name, s);
      if (place(groups, group_idx, count_done + 1, s)) return true;
      witness.pop_back();
      occupied.pop_back();
    }
    return false;
  }
};

}  // namespace

PlacementCheck validate_config_with_fixed(
    const DeviceCatalogEntry& entry, const std::vector<std::string>& requested,
    const std::vector<std::pair<int, int>>& fixed_intervals) {
  // Group requests by catalog profile order.
  std::vector<std::pair<const GiProfile*, int>> groups;
  std::map<int, int> counts;
  for (const auto& name : requested) {
    int idx = entry.profile_index(name);
    if (idx < 0)
      throw_error(ErrorCode::UnknownProfile,
                  "unknown profile '" + name + "' for device model '" + entry.model_name + "'");
    counts[idx]++;
  }
  for (const auto& [idx, n] : counts) {
    const GiProfile& p = entry.profiles[idx];
    if (n > p.max_count) return {false, {}};
    groups.emplace_back(&p, n);
  }

  PlacementSearch search{entry, {}, {}};
  for (const auto& [start, len] : fixed_intervals) search.occupied.push_back({start, len});
  if (!search.place(groups, 0, 0, -1)) return {false, {}};
  return {true, std::move(search.witness)};
}

PlacementCheck validate_config(const DeviceCatalogEntry& entry,
                               const std::vector<std::string>& requested) {
  return validate_config_with_fixed(entry, requested, {});
}

std::vector<std::vector<std::string>> enumerate_valid_configs(
    const DeviceCatalogEntry& entry) {
  // Depth-first over per-profile counts; a multiset is kept iff a placement
  // exists. Downward closure of feasibility prunes whole subtrees.
  std::vector<std::vector<std::string>> result;
  std::vector<std::string> current;

  struct Rec {
    const DeviceCatalogEntry& entry;
    std::vector<std::vector<std::string>>& out;

    void go(std::vector<std::string>& current, size_t profile_idx) {
      out.push_back(current);
      for (size_t i = profile_idx; i < entry.profiles.size(); ++i) {
        current.push_back(entry.profiles[i].name);
        if (validate_config(entry, current).feasible)
          go(current, i);
        current.pop_back();
      }
    }
  } rec{entry, result};

  rec.go(current, 0);
  std::sort(result.begin(), result.end());
  result.erase(std::unique(result.begin(), result.end()), result.end());
  return result;
}

bool placement_is_sound(const DeviceState& state) {
  if (!state.mig_enabled && !state.instances.empty()) return false;
  std::vector<Interval> seen;
  for (const auto& gi : state.instances) {
    const GiProfile* p = state.catalog.find_profile(gi.profile);
    if (!p) return false;
    if (std::find(p->allowed_starts.begin(), p->allowed_starts.end(), gi.start_slice) ==
        p->allowed_starts.end())
      return false;
    if (!fits(seen, gi.start_slice, p->compute_slices)) return false;
    if (gi.used_ci_slices() > p->compute_slices) return false;
    seen.push_back({gi.start_slice, p->compute_slices});
  }
  return true;
}

}  // namespace migperf::device
