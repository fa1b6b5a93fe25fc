#pragma once

// Domain types shared by every layer: pilot and unit descriptions, resource
// locators, lifecycle states and the pure transition function.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pilotkit/error.hpp"

namespace pilotkit {

enum class BackendKind { Local, BatchEmu, YarnEmu, File, Mem };

std::string_view scheme_of(BackendKind kind);
bool is_compute_backend(BackendKind kind);

struct ResourceUrl {
  BackendKind kind;
  std::string target;

  bool operator==(const ResourceUrl&) const = default;
};

// Every scheme accepted by parse_resource_url, in registry order.
const std::vector<std::pair<std::string, BackendKind>>& registered_backends();

// "<scheme>://<target>"; throws UnknownBackend for anything else.
ResourceUrl parse_resource_url(std::string_view url);

// Flat labels compared by exact string equality.
struct AffinityLabels {
  std::optional<std::string> datacenter;
  std::optional<std::string> machine;

  bool empty() const { return !datacenter && !machine; }
  bool operator==(const AffinityLabels&) const = default;
};

// 2 when machine labels match, 1 when only datacenter labels match, else 0.
int locality_score(const AffinityLabels& unit, const AffinityLabels& pilot);

struct PilotComputeDescription {
  std::string resource_url;
  std::int64_t cores = 1;
  std::int64_t memory_mb = 1;
  std::int64_t walltime_min = 1;
  std::optional<std::string> queue_name;
  AffinityLabels affinity;

  bool operator==(const PilotComputeDescription&) const = default;
};

struct PilotDataDescription {
  std::string storage_url;
  std::int64_t space_mb = 1;
  AffinityLabels affinity;

  bool operator==(const PilotDataDescription&) const = default;
};

enum class UnitKind { Executable, MapTask, ReduceTask };

std::string_view to_string(UnitKind kind);

class TaskContext;

// In-process body of a MAP_TASK / REDUCE_TASK unit.
using TaskBody = std::function<void(TaskContext&)>;

struct ComputeUnitDescription {
  UnitKind kind = UnitKind::Executable;
  std::string executable;
  std::vector<std::string> arguments;
  std::int64_t cores = 1;
  std::vector<std::string> input_du_ids;
  std::vector<std::string> output_du_ids;
  AffinityLabels affinity;
  std::map<std::string, std::string> env;
  // Payload reference for typed units; `task_ref` names it, `task` runs it.
  std::string task_ref;
  std::shared_ptr<const TaskBody> task;
};

struct DataItemRef {
  std::string source_url;
  std::string logical_name;
  std::int64_t size_bytes = 0;

  bool operator==(const DataItemRef&) const = default;
};

struct DataUnitDescription {
  std::vector<DataItemRef> items;
  AffinityLabels affinity;

  bool operator==(const DataUnitDescription&) const = default;
};

// validate() throws ValidationError listing every violated field, or
// UnknownBackend when the locator does not parse. Normalization is
// idempotent.
PilotComputeDescription validate(const PilotComputeDescription& pcd);
PilotDataDescription validate(const PilotDataDescription& pdd);
ComputeUnitDescription validate(const ComputeUnitDescription& cud);
DataUnitDescription validate(const DataUnitDescription& dud);

// Static capacity of a compute backend.
struct BackendCapacity {
  std::int64_t n_nodes = 1;
  std::int64_t cores_per_node = 1;
  std::int64_t memory_per_node_mb = 1;

  std::int64_t total_cores() const { return n_nodes * cores_per_node; }
  std::int64_t total_memory_mb() const { return n_nodes * memory_per_node_mb; }
};

inline constexpr std::int64_t kAppMasterMemoryMb = 256;

struct LocalRequest {
  std::int64_t cores;
};

struct BatchRequest {
  std::int64_t nodes;
  std::int64_t cores_per_node;
  std::int64_t walltime_min;
};

struct ContainerRequest {
  std::int64_t n_containers;
  std::int64_t memory_per_container_mb;
  std::int64_t app_master_memory_mb = kAppMasterMemoryMb;
  std::int64_t walltime_min;
};

using BackendRequest = std::variant<LocalRequest, BatchRequest, ContainerRequest>;

BackendRequest translate_description(const PilotComputeDescription& pcd,
                                     BackendKind kind,
                                     const BackendCapacity& capacity);

enum class PilotState { New, Pending, Running, Done, Failed, Canceled };
enum class UnitState {
  New,
  Scheduled,
  StagingIn,
  Running,
  StagingOut,
  Done,
  Failed,
  Canceled
};
enum class Event {
  Submit,
  Allocated,
  AgentUp,
  StageDone,
  ExecDone,
  OutDone,
  Error,
  Cancel
};

inline constexpr PilotState kAllPilotStates[] = {
    PilotState::New,  PilotState::Pending, PilotState::Running,
    PilotState::Done, PilotState::Failed,  PilotState::Canceled};
inline constexpr UnitState kAllUnitStates[] = {
    UnitState::New,        UnitState::Scheduled, UnitState::StagingIn,
    UnitState::Running,    UnitState::StagingOut, UnitState::Done,
    UnitState::Failed,     UnitState::Canceled};
inline constexpr Event kAllEvents[] = {
    Event::Submit,   Event::Allocated, Event::AgentUp, Event::StageDone,
    Event::ExecDone, Event::OutDone,   Event::Error,   Event::Cancel};

std::string_view to_string(PilotState s);
std::string_view to_string(UnitState s);
std::string_view to_string(Event e);

bool is_terminal(PilotState s);
bool is_terminal(UnitState s);

// Pure transition tables. Throw IllegalTransition naming (state, event).
PilotState transition(PilotState state, Event event);
UnitState transition(UnitState state, Event event);

}  // namespace pilotkit
