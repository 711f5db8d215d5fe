#include "migperf/controller.hpp"

#include <algorithm>
#include <map>

namespace migperf::ctrl {

using device::DeviceState;
using device::GiProfile;
using device::GpuInstance;

PlanStrategy plan_strategy_from_name(const std::string& name) {
  if (name == "strict") return PlanStrategy::strict;
  if (name == "best_effort") return PlanStrategy::best_effort;
  throw_error(ErrorCode::InvalidArgument, "unknown plan strategy '" + name + "'");
}

const char* plan_strategy_name(PlanStrategy s) {
  return s == PlanStrategy::strict ? "strict" : "best_effort";
}

Controller::Controller(std::vector<device::DeviceCatalogEntry> catalog) {
  int id = 0;
  for (auto& entry : catalog) {
    auto s = std::make_unique<Slot>();
    s->state.device_id = id++;
    s->state.catalog = std::move(entry);
    devices_.push_back(std::move(s));
  }
}

size_t Controller::device_count() const { return devices_.size(); }

Controller::Slot& Controller::slot(int device_id) {
  if (device_id < 0 || device_id >= static_cast<int>(devices_.size()))
    throw_error(ErrorCode::UnknownDevice, "unknown device " + std::to_string(device_id));
  return *devices_[device_id];
}

const Controller::Slot& Controller::slot(int device_id) const {
  if (device_id < 0 || device_id >= static_cast<int>(devices_.size()))
    throw_error(ErrorCode::UnknownDevice, "unknown device " + std::to_string(device_id));
  return *devices_[device_id];
}

device::DeviceState Controller::snapshot(int device_id) const {
  const Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  return s.state;
}

// Mutators run the pure transition on a copy and commit on success, so a
// rejected operation leaves the resident state untouched.

void Controller::enable_mig(int device_id) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  s.state = device::enable_mig(s.state);
}

void Controller::disable_mig(int device_id) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  s.state = device::disable_mig(s.state);
}

void Controller::set_sharing_mode(int device_id, device::SharingMode mode) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  device::DeviceState work = s.state;
  if (mode == device::SharingMode::mps) {
    for (const auto& gi : work.instances)
      if (!gi.bound_run.empty())
        throw_error(ErrorCode::Busy, "device " + std::to_string(device_id) +
                                         ": bound workloads prevent a mode switch");
    if (work.mig_enabled && !work.instances.empty())
      throw_error(ErrorCode::Busy, "device " + std::to_string(device_id) +
                                       ": destroy instances before switching to MPS");
    if (work.mig_enabled) work = device::disable_mig(std::move(work));
  }
  s.state = device::set_sharing_mode(std::move(work), mode);
}

int Controller::create_gi(int device_id, const std::string& profile,
                          std::optional<int> start) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  auto [next, gi_id] = device::create_gi(s.state, profile, start);
  s.state = std::move(next);
  return gi_id;
}

void Controller::destroy_gi(int device_id, int gi_id) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  s.state = device::destroy_gi(s.state, gi_id);
}

int Controller::create_ci(int device_id, int gi_id, int slices) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  auto [next, ci_id] = device::create_ci(s.state, gi_id, slices);
  s.state = std::move(next);
  return ci_id;
}

void Controller::destroy_ci(int device_id, int gi_id, int ci_id) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  s.state = device::destroy_ci(s.state, gi_id, ci_id);
}

namespace {

// A pinned instance may not be destroyed by a plan: it either has a bound
// workload or carries live compute instances.
bool is_pinned(const GpuInstance& gi) {
  return !gi.bound_run.empty() || !gi.compute_instances.empty();
}

std::string pin_reason(const GpuInstance& gi) {
  if (!gi.bound_run.empty())
    return "gi " + std::to_string(gi.gi_id) + " bound to '" + gi.bound_run + "'";
  return "gi " + std::to_string(gi.gi_id) + " has live compute instances";
}

// Chooses which resident instances survive a repartition. Per profile,
// min(resident, wanted) instances are kept, pinned ones first, then lower
// start slices.
struct KeepPlan {
  std::vector<int> keep_ids;
  std::vector<int> destroy_ids;
  std::vector<std::pair<int, int>> kept_intervals;  // (start, slices)
};

KeepPlan choose_keeps(const DeviceState& state,
                      const std::map<std::string, int>& target_counts) {
  KeepPlan plan;
  std::map<std::string, std::vector<const GpuInstance*>> by_profile;
  for (const auto& gi : state.instances) by_profile[gi.profile].push_back(&gi);

  for (auto& [profile, list] : by_profile) {
    std::sort(list.begin(), list.end(), [](const GpuInstance* a, const GpuInstance* b) {
      bool pa = is_pinned(*a), pb = is_pinned(*b);
      if (pa != pb) return pa;
      return a->start_slice < b->start_slice;
    });
    auto it = target_counts.find(profile);
    int want = it == target_counts.end() ? 0 : it->second;
    const GiProfile& p = state.catalog.profile_or_throw(profile);
    for (size_t i = 0; i < list.size(); ++i) {
      if (static_cast<int>(i) < want) {
        plan.keep_ids.push_back(list[i]->gi_id);
        plan.kept_intervals.emplace_back(list[i]->start_slice, p.compute_slices);
      } else {
        plan.destroy_ids.push_back(list[i]->gi_id);
      }
    }
  }
  std::sort(plan.destroy_ids.begin(), plan.destroy_ids.end());
  return plan;
}

// Every instance in ids must be destroyable, or the plan reports the full
// list of blockers.
void require_destroyable(const DeviceState& state, const std::vector<int>& ids) {
  std::string blockers;
  for (int id : ids) {
    const GpuInstance* gi = state.find_gi(id);
    if (gi && is_pinned(*gi))
      blockers += (blockers.empty() ? "" : "; ") + pin_reason(*gi);
  }
  if (!blockers.empty())
    throw_error(ErrorCode::BusyInstance, "cannot reach target: " + blockers);
}

std::map<std::string, int> count_profiles(const std::vector<std::string>& names) {
  std::map<std::string, int> counts;
  for (const auto& n : names) counts[n]++;
  return counts;
}

std::vector<std::string> missing_after_keeps(const DeviceState& state,
                                             const std::map<std::string, int>& target_counts) {
  std::vector<std::string> missing;
  for (const auto& [profile, want] : target_counts) {
    int have = std::min(state.profile_count(profile), want);
    for (int i = have; i < want; ++i) missing.push_back(profile);
  }
  return missing;
}

}  // namespace

ReconfigurationScript Controller::apply_plan(const PartitionPlan& plan) {
  Slot& s = slot(plan.device_id);
  std::lock_guard lock(s.mu);
  // All steps execute on a copy; the device commits only when the whole
  // script has applied, so no partial reconfiguration is ever visible.
  DeviceState state = s.state;

  if (state.sharing_mode == device::SharingMode::mps) {
    for (const auto& gi : state.instances)
      if (!gi.bound_run.empty())
        throw_error(ErrorCode::BusyInstance,
                    "device " + std::to_string(plan.device_id) +
                        ": bound workloads prevent repartitioning");
    state = device::set_sharing_mode(std::move(state), device::SharingMode::exclusive);
  }

  for (const auto& name : plan.target) state.catalog.profile_or_throw(name);

  std::vector<std::string> target = plan.target;
  ReconfigurationScript script;

  auto feasible_alone = [&](const std::vector<std::string>& t) {
    return device::validate_config(state.catalog, t).feasible;
  };

  if (!feasible_alone(target)) {
    if (plan.strategy == PlanStrategy::strict) {
      std::string joined;
      for (const auto& n : plan.target) joined += (joined.empty() ? "" : ",") + n;
      throw_error(ErrorCode::InfeasibleTarget,
                  "target {" + joined + "} is infeasible on " + state.catalog.model_name);
    }
    // best_effort: drop the highest-index requested instances until the
    // remainder validates.
    while (!target.empty() && !feasible_alone(target)) {
      script.dropped.push_back(target.back());
      target.pop_back();
    }
  }

  if (!state.mig_enabled) state = device::enable_mig(std::move(state));

  auto target_counts = count_profiles(target);
  KeepPlan keeps = choose_keeps(state, target_counts);
  auto missing = missing_after_keeps(state, target_counts);

  auto placement =
      device::validate_config_with_fixed(state.catalog, missing, keeps.kept_intervals);
  if (!placement.feasible) {
    // Kept instances block the remaining placements; fall back to a full
    // rebuild. Pinned instances cannot be destroyed at all.
    std::vector<int> all_ids;
    for (const auto& gi : state.instances) all_ids.push_back(gi.gi_id);
    require_destroyable(state, all_ids);
    keeps.destroy_ids = std::move(all_ids);
    std::sort(keeps.destroy_ids.begin(), keeps.destroy_ids.end());
    keeps.kept_intervals.clear();
    missing = target;
    placement = device::validate_config(state.catalog, missing);
    // Target already validated alone, so this placement exists.
  }

  require_destroyable(state, keeps.destroy_ids);
  for (int gi_id : keeps.destroy_ids) {
    state = device::destroy_gi(std::move(state), gi_id);
    script.steps.push_back({ScriptStep::Kind::destroy, gi_id, "", -1});
  }

  for (const auto& [profile, start] : placement.placement) {
    auto [next, gi_id] = device::create_gi(std::move(state), profile, start);
    state = std::move(next);
    script.steps.push_back({ScriptStep::Kind::create, gi_id, profile, start});
  }

  s.state = std::move(state);
  return script;
}

std::vector<InstanceRow> Controller::track_instances(int device_id) const {
  const Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  std::vector<InstanceRow> rows;
  for (const auto& gi : s.state.instances)
    rows.push_back({gi.gi_id, gi.profile, gi.start_slice, gi.bound_run});
  std::sort(rows.begin(), rows.end(),
            [](const InstanceRow& a, const InstanceRow& b) {
              return a.start_slice < b.start_slice;
            });
  return rows;
}

void Controller::bind_workload(int device_id, int gi_id, const std::string& run_id) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  GpuInstance* gi = s.state.find_gi(gi_id);
  if (!gi)
    throw_error(ErrorCode::NotFound, "no GPU instance with id " + std::to_string(gi_id));
  if (!gi->bound_run.empty())
    throw_error(ErrorCode::AlreadyBound,
                "GPU instance " + std::to_string(gi_id) + " already bound to '" +
                    gi->bound_run + "'");
  gi->bound_run = run_id;
}

void Controller::unbind_workload(int device_id, int gi_id) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  GpuInstance* gi = s.state.find_gi(gi_id);
  if (!gi)
    throw_error(ErrorCode::NotFound, "no GPU instance with id " + std::to_string(gi_id));
  if (gi->bound_run.empty())
    throw_error(ErrorCode::NotBound,
                "GPU instance " + std::to_string(gi_id) + " is not bound");
  gi->bound_run.clear();
}

void Controller::restore(int device_id, const device::DeviceState& state) {
  Slot& s = slot(device_id);
  std::lock_guard lock(s.mu);
  device::DeviceState candidate = state;
  candidate.device_id = device_id;
  candidate.catalog = s.state.catalog;
  if (!device::placement_is_sound(candidate))
    throw_error(ErrorCode::InvalidArgument,
                "persisted state for device " + std::to_string(device_id) +
                    " violates placement rules");
  s.state = std::move(candidate);
}

}  // namespace migperf::ctrl
