#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "migperf/device_model.hpp"

namespace migperf::ctrl {

enum class PlanStrategy { strict, best_effort };

PlanStrategy plan_strategy_from_name(const std::string& name);
const char* plan_strategy_name(PlanStrategy s);

struct PartitionPlan {
  int device_id = 0;
  std::vector<std::string> target;  // multiset of profile names, request order
  PlanStrategy strategy = PlanStrategy::strict;
};

struct ScriptStep {
  enum class Kind { destroy, create } kind;
  int gi_id = 0;         // destroy: which; create: id assigned
  std::string profile;   // create only
  int start_slice = -1;  // create only
};

// The executed destroy/create sequence. Replaying the steps from the
// pre-plan state through the device state machine reaches the target.
struct ReconfigurationScript {
  std::vector<ScriptStep> steps;
  std::vector<std::string> dropped;  // best_effort: requests dropped to fit
};

struct InstanceRow {
  int gi_id = 0;
  std::string profile;
  int start_slice = 0;
  std::string bound_run;  // empty = unbound
};

// Owns all device states and serializes mutations per device. Reads return
// snapshots and may run concurrently with writes.
class Controller {
 public:
  // One simulated device per catalog entry, ids in catalog order from 0.
  explicit Controller(std::vector<device::DeviceCatalogEntry> catalog);

  size_t device_count() const;
  device::DeviceState snapshot(int device_id) const;

  void enable_mig(int device_id);
  void disable_mig(int device_id);
  void set_sharing_mode(int device_id, device::SharingMode mode);
  int create_gi(int device_id, const std::string& profile,
                std::optional<int> start = std::nullopt);
  void destroy_gi(int device_id, int gi_id);
  int create_ci(int device_id, int gi_id, int slices);
  void destroy_ci(int device_id, int gi_id, int ci_id);

  // Transforms the device's partition layout into the plan target. Instances
  // whose profile survives in the target are kept where possible; the rest
  // are destroyed and missing ones created at deterministic starts. Enables
  // MIG on the way if needed (refusing only in MPS mode).
  ReconfigurationScript apply_plan(const PartitionPlan& plan);

  // Read-only instance table, ordered by start slice.
  std::vector<InstanceRow> track_instances(int device_id) const;

  void bind_workload(int device_id, int gi_id, const std::string& run_id);
  void unbind_workload(int device_id, int gi_id);

  // Restore persisted state (validated against the catalog).
  void restore(int device_id, const device::DeviceState& state);

 private:
  struct Slot {
    mutable std::mutex mu;
    device::DeviceState state;
  };

  Slot& slot(int device_id);
  const Slot& slot(int device_id) const;

  std::vector<std::unique_ptr<Slot>> devices_;
};

}  // namespace migperf::ctrl
