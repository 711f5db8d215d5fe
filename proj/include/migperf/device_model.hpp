#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "migperf/error.hpp"

namespace migperf::device {

// A GPU instance profile: a fixed number of compute slices plus the slice
// positions it may legally start at (e.g. "1g.10gb" = 1 slice, 10 GiB).
struct GiProfile {
  std::string name;
  int compute_slices = 0;
  int memory_gib = 0;
  std::vector<int> allowed_starts;  // strictly increasing
  int max_count = 0;                // per-device cap for this profile
};

struct DeviceCatalogEntry {
  std::string model_name;
  int total_compute_slices = 0;
  int total_memory_gib = 0;
  std::vector<GiProfile> profiles;

  const GiProfile* find_profile(const std::string& name) const;
  const GiProfile& profile_or_throw(const std::string& name) const;
  int profile_index(const std::string& name) const;  // -1 when unknown
};

struct ComputeInstance {
  int ci_id = 0;
  int slices = 0;
};

struct GpuInstance {
  int gi_id = 0;
  std::string profile;  // name into the catalog entry
  int start_slice = 0;
  std::vector<ComputeInstance> compute_instances;
  std::string bound_run;  // empty = unbound

  int used_ci_slices() const;
};

enum class SharingMode { mig, mps, exclusive };

const char* sharing_mode_name(SharingMode mode);
SharingMode sharing_mode_from_name(const std::string& name);

// One GPU's partition state. The transition functions below are pure: they
// take a state by value and return the updated copy, so callers can keep
// immutable snapshots. Invariants maintained throughout:
//   - instances empty unless mig_enabled
//   - occupied slice intervals pairwise disjoint
//   - sharing_mode == mps implies !mig_enabled
struct DeviceState {
  int device_id = 0;
  DeviceCatalogEntry catalog;
  bool mig_enabled = false;
  SharingMode sharing_mode = SharingMode::exclusive;
  std::vector<GpuInstance> instances;
  int next_gi_id = 1;
  int next_ci_id = 1;

  const GpuInstance* find_gi(int gi_id) const;
  GpuInstance* find_gi(int gi_id);
  int profile_count(const std::string& profile) const;
};

// Equality up to id counters: same mode flags and same (profile, start,
// CI slice multiset) per instance, order-insensitive.
bool equivalent_states(const DeviceState& a, const DeviceState& b);

// Catalog loading. The file is JSON:
//   {"devices": [{"model_name": ..., "total_compute_slices": ...,
//                 "total_memory_gib": ...,
//                 "profiles": [{"name", "compute_slices", "memory_gib",
//                               "allowed_starts", "max_count"}]}]}
// Entries violating a profile invariant are rejected with the profile named.
std::vector<DeviceCatalogEntry> load_catalog(const std::string& path);
std::vector<DeviceCatalogEntry> parse_catalog(const std::string& text,
                                              const std::string& origin);
// The catalog shipped with the tool (A100-80GB and A30 placement tables).
std::string default_catalog_text();

// Partition state machine.
DeviceState enable_mig(DeviceState state);
DeviceState disable_mig(DeviceState state);
DeviceState set_sharing_mode(DeviceState state, SharingMode mode);

struct CreateResult {
  DeviceState state;
  int gi_id = 0;
};

// Creates a GI of `profile_name`. With no explicit start, the lowest legal
// non-overlapping allowed start is chosen.
CreateResult create_gi(DeviceState state, const std::string& profile_name,
                       std::optional<int> start = std::nullopt);
DeviceState destroy_gi(DeviceState state, int gi_id);

CreateResult create_ci(DeviceState state, int gi_id, int slices);
DeviceState destroy_ci(DeviceState state, int gi_id, int ci_id);

// Placement feasibility for a multiset of profile names.
struct PlacementCheck {
  bool feasible = false;
  // One (profile, start) per requested instance when feasible;
  // lexicographically smallest by catalog profile order, then start.
  std::vector<std::pair<std::string, int>> placement;
};

PlacementCheck validate_config(const DeviceCatalogEntry& entry,
                               const std::vector<std::string>& requested);

// Same search, but with some slice intervals already occupied. Used by the
// controller to place new instances around kept ones.
PlacementCheck validate_config_with_fixed(
    const DeviceCatalogEntry& entry, const std::vector<std::string>& requested,
    const std::vector<std::pair<int, int>>& fixed_intervals);

// All feasible multisets (including the empty one), deduplicated, each as a
// sorted vector of profile names in catalog order.
std::vector<std::vector<std::string>> enumerate_valid_configs(
    const DeviceCatalogEntry& entry);

// True when no two resident instances overlap and every start is legal.
bool placement_is_sound(const DeviceState& state);

}  // namespace migperf::device
