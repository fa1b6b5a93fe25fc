#pragma once

// Pilot-Agent: slot threads that pull units from the manager, stage inputs,
// execute and report back.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <sys/types.h>

#include "pilotkit/core.hpp"
#include "pilotkit/manager.hpp"

namespace pilotkit {

class DataService;
class ClusterRuntime;

struct Lease {
  std::string unit_id;
  int attempt = 0;
};

struct AgentConfig {
  std::string agent_id;
  std::string pilot_id;
  int slots = 1;
  std::filesystem::path pilot_dir;
  AffinityLabels labels;
  std::chrono::milliseconds poll_interval{50};
};

class Agent {
 public:
  Agent(AgentConfig config, PilotManager& manager, DataService* data);
  ~Agent();

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const AgentConfig& config() const { return config_; }
  // Throws AgentSpawnFailed when no slot thread could be created.
  void start();
  // Graceful: slots finish their current unit, then exit.
  void stop();
  // Like stop() without joining.
  void request_stop() { stop_ = true; }
  // Crash emulation: child processes are killed and every later result of
  // this agent is discarded. Returns the units that were in flight.
  std::vector<Lease> kill();
  bool killed() const { return killed_; }
  std::vector<Lease> in_flight() const;
  std::uint64_t units_completed() const { return completed_; }

  // Typed units go through this runtime once set.
  void set_runtime(std::shared_ptr<ClusterRuntime> runtime);

 private:
  void slot_loop(int slot);
  void run_unit(const ComputeUnit& cu);
  // Runs a manager report unless the agent was killed; kill() and reports
  // are mutually exclusive.
  template <typename Fn>
  bool report(Fn&& fn);
  bool stage_in(const ComputeUnit& cu, const std::filesystem::path& sandbox,
                std::string& staging_space, std::string& why);
  UnitOutcome execute(const ComputeUnit& cu, const std::filesystem::path& sandbox,
                      const std::string& staging_space);
  UnitOutcome run_process(const ComputeUnit& cu, const std::filesystem::path& sandbox);
  void stage_out(const ComputeUnit& cu, const std::filesystem::path& sandbox,
                 const std::string& staging_space);

  AgentConfig config_;
  PilotManager& manager_;
  DataService* data_;

  mutable std::mutex mu_;
  std::map<std::string, pid_t> children_;  // unit id -> pid
  std::map<int, Lease> current_;           // slot -> lease
  std::shared_ptr<ClusterRuntime> runtime_;
  std::vector<std::thread> threads_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> killed_{false};
  std::atomic<std::uint64_t> completed_{0};
};

}  // namespace pilotkit
