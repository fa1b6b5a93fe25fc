#pragma once

// Compute adaptors: a local process pool and two in-process emulations of
// external resource managers. The batch emulation grants whole nodes after
// a queue wait; the container emulation follows the two-stage protocol
// (application master first, then worker containers one per tick).

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "pilotkit/core.hpp"
#include "pilotkit/event_log.hpp"

namespace pilotkit {

enum class ContainerRole { AppMaster, Worker };
enum class ContainerState { Granted, Running, Preempted, Released };

std::string_view to_string(ContainerRole role);
std::string_view to_string(ContainerState state);

struct Container {
  std::string container_id;
  std::int64_t cores = 0;
  std::int64_t memory_mb = 0;
  ContainerRole role = ContainerRole::Worker;
  std::string node_label;
  ContainerState state = ContainerState::Granted;
};

struct AllocationEvent {
  enum class Kind { StateChanged, WorkerUp, WorkerRevoked, CapacityChanged };
  Kind kind = Kind::StateChanged;
  PilotState state = PilotState::New;
  std::string container_id;
  std::string reason;
};

// Handle for one backend allocation. Mutators are driven by the owning
// backend; everyone else reads and subscribes.
class Allocation {
 public:
  using Listener = std::function<void(const AllocationEvent&)>;

  Allocation(std::string id, BackendKind kind, std::shared_ptr<EventLog> log);

  const std::string& id() const { return id_; }
  BackendKind kind() const { return kind_; }
  std::string log_entity() const { return "alloc:" + id_; }

  PilotState state() const;
  std::string failure_reason() const;
  std::int64_t capacity_cores() const;
  std::int64_t requested_cores() const;
  std::vector<std::string> nodes() const;
  std::int64_t cores_per_node() const;
  std::int64_t memory_per_node_mb() const;
  std::vector<Container> containers() const;
  std::optional<Container> container(const std::string& container_id) const;

  void subscribe(Listener listener);
  // Waits until the state is `target` or terminal; false on timeout.
  bool wait_for(PilotState target, std::chrono::milliseconds timeout) const;

  // Backend side.
  void set_state(PilotState to, const std::string& reason = {});
  void set_requested_cores(std::int64_t cores);
  void set_nodes(std::vector<std::string> nodes, std::int64_t cores_per_node,
                 std::int64_t memory_per_node_mb);
  void add_container(const Container& c);
  void set_container_state(const std::string& container_id, ContainerState to,
                           const std::string& reason = {});
  void set_capacity(std::int64_t cores);

 private:
  void notify(const AllocationEvent& ev);

  std::string id_;
  BackendKind kind_;
  std::shared_ptr<EventLog> log_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  PilotState state_ = PilotState::New;
  std::string failure_reason_;
  std::int64_t capacity_ = 0;
  std::int64_t requested_ = 0;
  std::vector<std::string> nodes_;
  std::int64_t cores_per_node_ = 0;
  std::int64_t memory_per_node_mb_ = 0;
  std::vector<Container> containers_;
  std::vector<Listener> listeners_;
};

class ComputeAdaptor {
 public:
  virtual ~ComputeAdaptor() = default;
  virtual BackendKind kind() const = 0;
  virtual BackendCapacity capacity_info() const = 0;
  // Throws CapacityUnsatisfiable when the static capacity can never serve
  // the request.
  virtual std::shared_ptr<Allocation> allocate(const std::string& id,
                                               const BackendRequest& request) = 0;
  PilotState status(const Allocation& handle) const { return handle.state(); }
  // Idempotent.
  virtual void cancel(Allocation& handle) = 0;
  // Container backends only; others throw UnknownContainer.
  virtual void preempt(Allocation& handle, const std::string& container_id);
};

class LocalBackend final : public ComputeAdaptor {
 public:
  explicit LocalBackend(std::int64_t cores, std::int64_t memory_mb = 1 << 20,
                        std::shared_ptr<EventLog> log = nullptr);
  BackendKind kind() const override { return BackendKind::Local; }
  BackendCapacity capacity_info() const override;
  std::shared_ptr<Allocation> allocate(const std::string& id,
                                       const BackendRequest& request) override;
  void cancel(Allocation& handle) override;

 private:
  std::int64_t cores_;
  std::int64_t memory_mb_;
  std::shared_ptr<EventLog> log_;
};

struct EmulatedClusterConfig {
  std::int64_t n_nodes = 2;
  std::int64_t cores_per_node = 4;
  std::int64_t memory_per_node_mb = 16384;
  // Queue wait drawn uniformly from [low, high]; low == high is fixed.
  std::int64_t queue_wait_low_ms = 0;
  std::int64_t queue_wait_high_ms = 0;
  bool preemption_enabled = false;
  std::int64_t tick_ms = 10;
  // PENDING longer than this fails the allocation with ALLOCATION_TIMEOUT.
  std::int64_t max_pending_ms = 60000;
  std::uint64_t seed = 1;

  // Throws ValidationError listing every bad field.
  void validate() const;
  BackendCapacity capacity() const {
    return BackendCapacity{n_nodes, cores_per_node, memory_per_node_mb};
  }
};

// Single-threaded tick loop shared by both emulated backends.
class EmulatedCluster {
 public:
  EmulatedCluster(BackendKind kind, EmulatedClusterConfig config,
                  std::shared_ptr<EventLog> log);
  ~EmulatedCluster();

  EmulatedCluster(const EmulatedCluster&) = delete;
  EmulatedCluster& operator=(const EmulatedCluster&) = delete;

  const EmulatedClusterConfig& config() const { return config_; }
  std::shared_ptr<Allocation> allocate(const std::string& id,
                                       const BackendRequest& request);
  void cancel(Allocation& handle);
  void preempt(Allocation& handle, const std::string& container_id);
  // Slows or speeds up grant pacing at runtime.
  void set_tick_ms(std::int64_t tick_ms);

 private:
  using Clock = std::chrono::steady_clock;

  struct Node {
    std::string name;
    std::int64_t free_cores = 0;
    std::int64_t free_memory_mb = 0;
  };

  struct Job {
    std::shared_ptr<Allocation> alloc;
    BackendRequest request;
    Clock::time_point submitted;
    Clock::time_point ready_at;
    Clock::time_point running_since;
    enum class Phase { Queued, AmGranted, Workers, Running, Finished } phase =
        Phase::Queued;
    std::int64_t workers_granted = 0;
    std::int64_t walltime_min = 0;
    // node index -> (cores, memory) held
    std::vector<std::pair<std::size_t, std::pair<std::int64_t, std::int64_t>>> held;
    std::map<std::string, std::size_t> container_node;
  };

  using Notification = std::function<void()>;

  void run();
  void tick(std::vector<Notification>& out);
  void release(Job& job);
  void finish(Job& job, PilotState to, const std::string& reason,
              std::vector<Notification>& out);
  std::optional<std::size_t> node_with(std::int64_t cores, std::int64_t memory_mb) const;
  Job* find_job(const std::string& id);

  BackendKind kind_;
  EmulatedClusterConfig config_;
  std::shared_ptr<EventLog> log_;
  std::vector<Node> nodes_;
  std::mt19937_64 rng_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  std::int64_t tick_ms_;
  bool stop_ = false;
  std::uint64_t next_container_ = 1;
  std::thread thread_;
};

class BatchEmuBackend final : public ComputeAdaptor {
 public:
  explicit BatchEmuBackend(EmulatedClusterConfig config,
                           std::shared_ptr<EventLog> log = nullptr);
  BackendKind kind() const override { return BackendKind::BatchEmu; }
  BackendCapacity capacity_info() const override;
  std::shared_ptr<Allocation> allocate(const std::string& id,
                                       const BackendRequest& request) override;
  void cancel(Allocation& handle) override;
  EmulatedCluster& cluster() { return cluster_; }

 private:
  EmulatedCluster cluster_;
};

class YarnEmuBackend final : public ComputeAdaptor {
 public:
  explicit YarnEmuBackend(EmulatedClusterConfig config,
                          std::shared_ptr<EventLog> log = nullptr);
  BackendKind kind() const override { return BackendKind::YarnEmu; }
  BackendCapacity capacity_info() const override;
  std::shared_ptr<Allocation> allocate(const std::string& id,
                                       const BackendRequest& request) override;
  void cancel(Allocation& handle) override;
  // Throws PreemptOnAm for the application master, UnknownContainer for ids
  // the allocation never had. Revoking twice is a no-op.
  void preempt(Allocation& handle, const std::string& container_id) override;
  EmulatedCluster& cluster() { return cluster_; }

 private:
  EmulatedCluster cluster_;
};

}  // namespace pilotkit
