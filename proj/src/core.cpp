#include "pilotkit/core.hpp"

#include <algorithm>
#include <set>

namespace pilotkit {

std::string_view scheme_of(BackendKind kind) {
  switch (kind) {
    case BackendKind::Local: return "local";
    case BackendKind::BatchEmu: return "batch-emu";
    case BackendKind::YarnEmu: return "yarn-emu";
    case BackendKind::File: return "file";
    case BackendKind::Mem: return "mem";
  }
  return "";
}

bool is_compute_backend(BackendKind kind) {
  return kind == BackendKind::Local || kind == BackendKind::BatchEmu ||
         kind == BackendKind::YarnEmu;
}

const std::vector<std::pair<std::string, BackendKind>>& registered_backends() {
  static const std::vector<std::pair<std::string, BackendKind>> registry = {
      {"local", BackendKind::Local}, {"batch-emu", BackendKind::BatchEmu},
      {"yarn-emu", BackendKind::YarnEmu}, {"file", BackendKind::File},
      {"mem", BackendKind::Mem}};
  return registry;
}

ResourceUrl parse_resource_url(std::string_view url) {
  const auto sep = url.find("://");
  if (sep == std::string_view::npos || sep == 0) {
    throw Error(ErrorCode::UnknownBackend,
                "cannot parse resource url '" + std::string(url) + "'");
  }
  const auto scheme = url.substr(0, sep);
  for (const auto& [name, kind] : registered_backends()) {
    if (scheme == name) {
      return ResourceUrl{kind, std::string(url.substr(sep + 3))};
    }
  }
  throw Error(ErrorCode::UnknownBackend,
              "unknown backend '" + std::string(scheme) + "'");
}

int locality_score(const AffinityLabels& unit, const AffinityLabels& pilot) {
  if (unit.machine && pilot.machine && *unit.machine == *pilot.machine) {
    return 2;
  }
  if (unit.datacenter && pilot.datacenter &&
      *unit.datacenter == *pilot.datacenter) {
    return 1;
  }
  return 0;
}

namespace {

void check_labels(const AffinityLabels& labels,
                  std::vector<std::string>& errors) {
  if (labels.datacenter && labels.datacenter->empty()) {
    errors.emplace_back("affinity_datacenter_label must not be empty");
  }
  if (labels.machine && labels.machine->empty()) {
    errors.emplace_back("affinity_machine_label must not be empty");
  }
}

void raise_if(const std::vector<std::string>& errors, const char* what) {
  if (!errors.empty()) {
    throw Error(ErrorCode::ValidationError, std::string("invalid ") + what,
                errors);
  }
}

}  // namespace

PilotComputeDescription validate(const PilotComputeDescription& pcd) {
  // Backend errors take precedence: an unparseable locator is never a
  // per-field complaint.
  const auto url = parse_resource_url(pcd.resource_url);
  std::vector<std::string> errors;
  if (!is_compute_backend(url.kind)) {
    errors.emplace_back("resource_url must name a compute backend");
  }
  if (pcd.cores < 1) errors.emplace_back("cores must be >= 1");
  if (pcd.memory_mb < 1) errors.emplace_back("memory_mb must be >= 1");
  if (pcd.walltime_min < 1) errors.emplace_back("walltime_min must be >= 1");
  if (pcd.queue_name && pcd.queue_name->empty()) {
    errors.emplace_back("queue_name must not be empty");
  }
  check_labels(pcd.affinity, errors);
  raise_if(errors, "PilotComputeDescription");

  PilotComputeDescription out = pcd;
  if (!out.queue_name) out.queue_name = "default";
  return out;
}

PilotDataDescription validate(const PilotDataDescription& pdd) {
  const auto url = parse_resource_url(pdd.storage_url);
  std::vector<std::string> errors;
  if (url.kind != BackendKind::File && url.kind != BackendKind::Mem) {
    errors.emplace_back("storage_url must name a storage backend");
  }
  if (pdd.space_mb < 1) errors.emplace_back("space_mb must be >= 1");
  check_labels(pdd.affinity, errors);
  raise_if(errors, "PilotDataDescription");
  return pdd;
}

ComputeUnitDescription validate(const ComputeUnitDescription& cud) {
  std::vector<std::string> errors;
  if (cud.kind == UnitKind::Executable) {
    if (cud.executable.empty()) {
      errors.emplace_back("executable must be non-empty for EXECUTABLE units");
    }
  } else if (cud.task_ref.empty()) {
    errors.emplace_back("task payload reference required for " +
                        std::string(to_string(cud.kind)) + " units");
  }
  if (cud.cores < 1) errors.emplace_back("cores must be >= 1");
  for (const auto& id : cud.input_du_ids) {
    if (id.empty()) errors.emplace_back("input_du_ids must not contain ''");
  }
  for (const auto& id : cud.output_du_ids) {
    if (id.empty()) errors.emplace_back("output_du_ids must not contain ''");
  }
  check_labels(cud.affinity, errors);
  raise_if(errors, "ComputeUnitDescription");
  return cud;
}

DataUnitDescription validate(const DataUnitDescription& dud) {
  std::vector<std::string> errors;
  std::set<std::string> names;
  for (const auto& item : dud.items) {
    if (item.logical_name.empty()) {
      errors.emplace_back("logical_name must not be empty");
    } else if (!names.insert(item.logical_name).second) {
      errors.emplace_back("duplicate logical_name '" + item.logical_name + "'");
    }
    if (item.logical_name.find('/') != std::string::npos) {
      errors.emplace_back("logical_name '" + item.logical_name +
                          "' must not contain '/'");
    }
    if (item.size_bytes < 0) {
      errors.emplace_back("size_bytes of '" + item.logical_name +
                          "' must be >= 0");
    }
    if (item.source_url.empty()) {
      errors.emplace_back("source_url of '" + item.logical_name +
                          "' must not be empty");
    }
  }
  check_labels(dud.affinity, errors);
  raise_if(errors, "DataUnitDescription");
  return dud;
}

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

BackendRequest translate_description(const PilotComputeDescription& pcd,
                                     BackendKind kind,
                                     const BackendCapacity& capacity) {
  auto unsatisfiable = [&](const std::string& why) {
    return Error(ErrorCode::CapacityUnsatisfiable, why);
  };
  switch (kind) {
    case BackendKind::Local:
      if (pcd.cores > capacity.total_cores()) {
        throw unsatisfiable("local backend has " +
                            std::to_string(capacity.total_cores()) + " cores");
      }
      return LocalRequest{pcd.cores};
    case BackendKind::BatchEmu: {
      const auto nodes = ceil_div(pcd.cores, capacity.cores_per_node);
      if (nodes > capacity.n_nodes) {
        throw unsatisfiable("request needs " + std::to_string(nodes) +
                            " nodes, cluster has " +
                            std::to_string(capacity.n_nodes));
      }
      if (pcd.memory_mb > nodes * capacity.memory_per_node_mb) {
        throw unsatisfiable("memory_mb exceeds memory of the allocated nodes");
      }
      return BatchRequest{nodes, capacity.cores_per_node, pcd.walltime_min};
    }
    case BackendKind::YarnEmu: {
      ContainerRequest req{pcd.cores, ceil_div(pcd.memory_mb, pcd.cores),
                           kAppMasterMemoryMb, pcd.walltime_min};
      // First-fit packing: the application master takes memory (no worker
      // core) on one node; every worker takes one core.
      std::int64_t best = 0;
      for (std::int64_t am_node = 0; am_node < capacity.n_nodes; ++am_node) {
        if (capacity.memory_per_node_mb < kAppMasterMemoryMb) continue;
        std::int64_t slots = 0;
        for (std::int64_t n = 0; n < capacity.n_nodes; ++n) {
          const auto mem = capacity.memory_per_node_mb -
                           (n == am_node ? kAppMasterMemoryMb : 0);
          slots += std::min(capacity.cores_per_node,
                            mem / req.memory_per_container_mb);
        }
        best = std::max(best, slots);
      }
      if (best < req.n_containers) {
        throw unsatisfiable("cluster fits " + std::to_string(best) +
                            " worker containers of " +
                            std::to_string(req.memory_per_container_mb) +
                            " MB, request needs " +
                            std::to_string(req.n_containers));
      }
      return req;
    }
    case BackendKind::File:
    case BackendKind::Mem:
      break;
  }
  throw Error(ErrorCode::UnknownBackend,
              std::string(scheme_of(kind)) + " is not a compute backend");
}

std::string_view to_string(UnitKind kind) {
  switch (kind) {
    case UnitKind::Executable: return "EXECUTABLE";
    case UnitKind::MapTask: return "MAP_TASK";
    case UnitKind::ReduceTask: return "REDUCE_TASK";
  }
  return "?";
}

std::string_view to_string(PilotState s) {
  switch (s) {
    case PilotState::New: return "NEW";
    case PilotState::Pending: return "PENDING";
    case PilotState::Running: return "RUNNING";
    case PilotState::Done: return "DONE";
    case PilotState::Failed: return "FAILED";
    case PilotState::Canceled: return "CANCELED";
  }
  return "?";
}

std::string_view to_string(UnitState s) {
  switch (s) {
    case UnitState::New: return "NEW";
    case UnitState::Scheduled: return "SCHEDULED";
    case UnitState::StagingIn: return "STAGING_IN";
    case UnitState::Running: return "RUNNING";
    case UnitState::StagingOut: return "STAGING_OUT";
    case UnitState::Done: return "DONE";
    case UnitState::Failed: return "FAILED";
    case UnitState::Canceled: return "CANCELED";
  }
  return "?";
}

std::string_view to_string(Event e) {
  switch (e) {
    case Event::Submit: return "SUBMIT";
    case Event::Allocated: return "ALLOCATED";
    case Event::AgentUp: return "AGENT_UP";
    case Event::StageDone: return "STAGE_DONE";
    case Event::ExecDone: return "EXEC_DONE";
    case Event::OutDone: return "OUT_DONE";
    case Event::Error: return "ERROR";
    case Event::Cancel: return "CANCEL";
  }
  return "?";
}

bool is_terminal(PilotState s) {
  return s == PilotState::Done || s == PilotState::Failed ||
         s == PilotState::Canceled;
}

bool is_terminal(UnitState s) {
  return s == UnitState::Done || s == UnitState::Failed ||
         s == UnitState::Canceled;
}

namespace {

template <typename State>
[[noreturn]] void illegal(State s, Event e) {
  throw Error(ErrorCode::IllegalTransition,
              "(" + std::string(to_string(s)) + ", " +
                  std::string(to_string(e)) + ")");
}

}  // namespace

PilotState transition(PilotState state, Event event) {
  if (is_terminal(state)) illegal(state, event);
  if (event == Event::Cancel) return PilotState::Canceled;
  switch (state) {
    case PilotState::New:
      if (event == Event::Submit) return PilotState::Pending;
      break;
    case PilotState::Pending:
      if (event == Event::AgentUp) return PilotState::Running;
      if (event == Event::Error) return PilotState::Failed;
      break;
    case PilotState::Running:
      if (event == Event::ExecDone) return PilotState::Done;
      if (event == Event::Error) return PilotState::Failed;
      break;
    default:
      break;
  }
  illegal(state, event);
}

UnitState transition(UnitState state, Event event) {
  if (is_terminal(state)) illegal(state, event);
  if (event == Event::Cancel) return UnitState::Canceled;
  if (event == Event::Error) return UnitState::Failed;
  switch (state) {
    case UnitState::New:
      if (event == Event::Allocated) return UnitState::Scheduled;
      break;
    case UnitState::Scheduled:
      if (event == Event::AgentUp) return UnitState::StagingIn;
      break;
    case UnitState::StagingIn:
      if (event == Event::StageDone) return UnitState::Running;
      break;
    case UnitState::Running:
      if (event == Event::ExecDone) return UnitState::StagingOut;
      break;
    case UnitState::StagingOut:
      if (event == Event::OutDone) return UnitState::Done;
      break;
    default:
      break;
  }
  illegal(state, event);
}

}  // namespace pilotkit
