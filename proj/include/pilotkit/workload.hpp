#pragma once

// Declarative workloads, read from JSON.
//
// Top level (every key except spec_version optional):
//   spec_version      1
//   scheduling_mode   "soft" | "hard"
//   seed              unsigned; default seed for emulators and kmeans jobs
//   local             {"cores": N}                   local backend size
//   batch_emu         emulator settings (below)
//   yarn_emu          emulator settings (below)
//   pilots            [{id, resource_url, cores, memory_mb, walltime_min,
//                       queue, labels}]
//   data_pilots       [{id, storage_url, space_mb, labels, owner_pilot}]
//   data_units        [{id, space, items: [{source, name}], labels}]
//   units             [{id, executable, arguments, env, cores, inputs,
//                       outputs, labels}]
//   jobs              [{id, type: "wordcount", input, partitions, reducers,
//                       backend, output_space}
//                      | {id, type: "kmeans", points, clusters, dims,
//                         partitions, reducers, backend, epsilon, max_iter,
//                         seed}]
// Emulator settings: nodes, cores_per_node, memory_per_node_mb,
// queue_wait_low_ms, queue_wait_high_ms, preemption, tick_ms,
// max_pending_ms, seed.
// labels: {"datacenter": "...", "machine": "..."}.
//
// Unknown keys are errors. Relative item sources resolve against the
// directory of the spec file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pilotkit/bench.hpp"
#include "pilotkit/compute.hpp"
#include "pilotkit/core.hpp"
#include "pilotkit/kmeans.hpp"
#include "pilotkit/scheduler.hpp"

namespace pilotkit {

inline constexpr int kWorkloadSpecVersion = 1;

struct WorkloadPilot {
  std::string id;
  PilotComputeDescription description;
};

struct WorkloadDataPilot {
  std::string id;
  PilotDataDescription description;
  std::optional<std::string> owner_pilot;
};

struct WorkloadDataUnit {
  std::string id;
  std::string space;  // a data pilot id
  DataUnitDescription description;
};

struct WorkloadUnit {
  std::string id;
  ComputeUnitDescription description;
};

struct WordCountJob {
  std::string input;  // a data unit id
  std::size_t partitions = 2;
  std::size_t reducers = 2;
  EngineBackend backend = EngineBackend::Memory;
  std::optional<std::string> output_space;  // a data pilot id
};

struct WorkloadJob {
  std::string id;
  std::variant<WordCountJob, KMeansConfig> job;
};

struct WorkloadSpec {
  int spec_version = kWorkloadSpecVersion;
  AffinityMode scheduling_mode = AffinityMode::Soft;
  std::uint64_t seed = 1;
  std::int64_t local_cores = 8;
  std::optional<EmulatedClusterConfig> batch_emu;
  std::optional<EmulatedClusterConfig> yarn_emu;
  std::vector<WorkloadPilot> pilots;
  std::vector<WorkloadDataPilot> data_pilots;
  std::vector<WorkloadDataUnit> data_units;
  std::vector<WorkloadUnit> units;
  std::vector<WorkloadJob> jobs;
  std::filesystem::path base_dir;
};

// Throws ValidationError; details list every problem found.
WorkloadSpec parse_workload(const std::string& text,
                            const std::filesystem::path& base_dir = {});
WorkloadSpec load_workload(const std::filesystem::path& path);

struct WorkloadReport {
  bool ok = true;
  std::map<std::string, std::string> unit_states;  // spec id -> final state
  std::map<std::string, std::string> unit_errors;
  std::map<std::string, std::string> job_outputs;  // job id -> DU id or summary
  BenchResult rows;
};

// Runs everything in a fresh session rooted at `root`. Throws on setup
// failures; unit failures are reported, not thrown.
WorkloadReport run_workload(const WorkloadSpec& spec, const std::filesystem::path& root,
                            std::vector<std::string>* event_lines = nullptr);

}  // namespace pilotkit
