#pragma once

// An emulated data-processing cluster started inside a pilot allocation: a
// generated configuration directory, one coordinator thread and one worker
// thread per node. Typed units on a bootstrapped pilot are forwarded to the
// coordinator.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pilotkit {

struct ClusterSpec {
  std::string pilot_id;
  std::string runtime_kind;  // "yarn" or "spark"
  std::vector<std::string> nodes;
  std::int64_t cores_per_node = 1;
  std::int64_t memory_per_node_mb = 1;
  std::filesystem::path config_dir;
  // Fault injection: "config-gen", "coordinator" or "worker".
  std::optional<std::string> fail_phase;
};

bool is_runtime_kind(const std::string& kind);

class ClusterRuntime {
 public:
  // Generates the configuration and starts every process. Throws
  // BootstrapFailed naming the failing phase; nothing is left running then.
  explicit ClusterRuntime(ClusterSpec spec);
  ~ClusterRuntime();

  ClusterRuntime(const ClusterRuntime&) = delete;
  ClusterRuntime& operator=(const ClusterRuntime&) = delete;

  const std::string& endpoint() const { return endpoint_; }
  const ClusterSpec& spec() const { return spec_; }
  std::size_t worker_count() const { return workers_.size(); }
  bool coordinator_alive() const;
  std::uint64_t tasks_executed() const;

  // Hands a task to the coordinator, which dispatches it to the least
  // loaded worker.
  std::future<void> submit(std::function<void()> task);
  void stop();

 private:
  struct Worker {
    std::string node;
    std::deque<std::packaged_task<void()>> queue;
    std::thread thread;
  };

  void write_config();
  void coordinator_loop();
  void worker_loop(std::size_t index);

  ClusterSpec spec_;
  std::string endpoint_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::packaged_task<void()>> inbox_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::thread coordinator_;
  bool stop_ = false;
  bool coordinator_up_ = false;
  std::uint64_t executed_ = 0;
};

}  // namespace pilotkit
