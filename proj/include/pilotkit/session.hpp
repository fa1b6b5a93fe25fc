#pragma once

// A ready-to-use local stack: event log, manager, data service with memory
// and file tiers, and a compute service with a local backend. Used by the
// command-line tool, the benchmarks and the tests.

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>

#include "pilotkit/data_service.hpp"
#include "pilotkit/event_log.hpp"
#include "pilotkit/manager.hpp"
#include "pilotkit/pilot_service.hpp"

namespace pilotkit {

struct SessionConfig {
  std::filesystem::path root = default_sandbox_root();
  AffinityMode mode = AffinityMode::Soft;
  std::int64_t local_cores = 8;
  std::int64_t file_capacity_mb = std::int64_t{1} << 20;
  std::int64_t memory_capacity_mb = std::int64_t{1} << 20;
  std::chrono::milliseconds poll_interval{5};
};

class Session {
 public:
  explicit Session(SessionConfig config = {});
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  EventLog& log() { return *log_; }
  std::shared_ptr<EventLog> log_ptr() { return log_; }
  PilotManager& manager() { return *manager_; }
  DataService& data() { return *data_; }
  PilotComputeService& compute() { return *compute_; }
  const SessionConfig& config() const { return config_; }

  // Creates a local pilot and waits until it runs; AllocFailed otherwise.
  std::string add_local_pilot(int cores, const AffinityLabels& labels = {});

 private:
  SessionConfig config_;
  std::shared_ptr<EventLog> log_;
  std::unique_ptr<PilotManager> manager_;
  std::unique_ptr<DataService> data_;
  std::unique_ptr<PilotComputeService> compute_;
};

}  // namespace pilotkit
