#pragma once

// Pilot-Compute service: turns descriptions into backend allocations,
// registers them with the manager and keeps agents in step with the
// allocation (worker grants, preemption, termination).

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pilotkit/agent.hpp"
#include "pilotkit/cluster_runtime.hpp"
#include "pilotkit/compute.hpp"
#include "pilotkit/manager.hpp"

namespace pilotkit {

class DataService;

// $PILOTKIT_ROOT, else <tmp>/pilotkit.
std::filesystem::path default_sandbox_root();

struct ServiceConfig {
  std::filesystem::path sandbox_root = default_sandbox_root();
  std::chrono::milliseconds poll_interval{50};
};

struct BootstrapOptions {
  std::optional<std::string> fail_phase;
};

class PilotComputeService {
 public:
  PilotComputeService(PilotManager& manager, DataService* data,
                      ServiceConfig config = {});
  ~PilotComputeService();

  PilotComputeService(const PilotComputeService&) = delete;
  PilotComputeService& operator=(const PilotComputeService&) = delete;

  void register_backend(std::shared_ptr<ComputeAdaptor> backend);
  std::shared_ptr<ComputeAdaptor> backend(BackendKind kind) const;

  // Validates, translates and allocates; the pilot is registered with the
  // manager as PENDING and becomes RUNNING with its first agent.
  std::string create_pilot(const PilotComputeDescription& pcd,
                           std::optional<std::string> pilot_id = std::nullopt);
  std::shared_ptr<Allocation> allocation(const std::string& pilot_id) const;
  std::filesystem::path pilot_dir(const std::string& pilot_id) const;
  std::vector<std::string> pilot_ids() const;
  bool wait_running(const std::string& pilot_id, std::chrono::milliseconds timeout);

  void cancel_pilot(const std::string& pilot_id);
  // Fault injection: crashes every agent of the pilot. The pilot goes
  // FAILED and its units are requeued.
  void kill_agent(const std::string& pilot_id);
  void preempt(const std::string& pilot_id, const std::string& container_id);
  std::size_t agent_count(const std::string& pilot_id) const;

  // Idempotent; returns the coordinator endpoint.
  std::string bootstrap_cluster(const std::string& pilot_id,
                                const std::string& runtime_kind,
                                const BootstrapOptions& options = {});
  std::shared_ptr<ClusterRuntime> cluster(const std::string& pilot_id) const;

  void shutdown();

 private:
  struct PilotRecord {
    PilotComputeDescription description;
    std::shared_ptr<ComputeAdaptor> backend;
    std::shared_ptr<Allocation> allocation;
    std::filesystem::path dir;
    // key: container id, or "" for the whole-allocation agent
    std::map<std::string, std::unique_ptr<Agent>> agents;
    std::vector<std::unique_ptr<Agent>> retired;
    std::shared_ptr<ClusterRuntime> runtime;
    bool terminal = false;
  };

  struct Guard {
    std::mutex mu;
    bool alive = true;
  };

  // Brings manager and agents in line with the allocation's current state.
  void sync(const std::string& pilot_id);
  void launch_agent(const std::string& pilot_id, PilotRecord& rec,
                    const std::string& key, int slots);
  void retire_agents(PilotRecord& rec);
  PilotRecord& record_locked(const std::string& pilot_id);
  const PilotRecord& record_locked(const std::string& pilot_id) const;

  PilotManager& manager_;
  DataService* data_;
  ServiceConfig config_;
  std::shared_ptr<Guard> guard_;

  mutable std::mutex mu_;
  std::map<BackendKind, std::shared_ptr<ComputeAdaptor>> backends_;
  std::map<std::string, PilotRecord> pilots_;
  std::uint64_t next_pilot_ = 1;
};

}  // namespace pilotkit
