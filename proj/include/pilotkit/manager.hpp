#pragma once

// Pilot-Manager: registry of live pilots, the global queue of unplaced
// units, one FIFO per pilot, and the pull/complete surface agents use.
// Every public method takes the same lock, so concurrent callers observe a
// single serialized command stream.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pilotkit/core.hpp"
#include "pilotkit/event_log.hpp"
#include "pilotkit/scheduler.hpp"

namespace pilotkit {

inline constexpr int kMaxRequeues = 3;

// A unit handed to an agent by pull_next. `attempt` identifies the lease;
// completions carrying a stale attempt are ignored.
struct ComputeUnit {
  std::string id;
  ComputeUnitDescription description;
  std::string pilot_id;
  int attempt = 0;
};

struct UnitOutcome {
  bool ok = true;
  int exit_code = 0;
  std::string reason;

  static UnitOutcome success(int exit_code = 0) { return {true, exit_code, {}}; }
  static UnitOutcome failure(std::string why, int exit_code = -1) {
    return {false, exit_code, std::move(why)};
  }
};

struct UnitInfo {
  std::string id;
  UnitState state = UnitState::New;
  std::optional<std::string> pilot_id;
  std::int64_t cores = 1;
  int retries = 0;
  int attempt = 0;
  std::optional<UnitOutcome> outcome;
  std::vector<std::string> pilots_tried;
};

struct PilotInfo {
  std::string id;
  PilotComputeDescription description;
  PilotState state = PilotState::New;
  std::int64_t capacity = 0;
  std::int64_t in_use = 0;
  std::size_t queued = 0;
};

class PilotManager {
 public:
  explicit PilotManager(AffinityMode mode = AffinityMode::Soft,
                        std::shared_ptr<EventLog> log = nullptr);

  AffinityMode mode() const { return mode_; }
  EventLog& log() { return *log_; }
  std::shared_ptr<EventLog> shared_log() const { return log_; }

  // Throws DuplicateId. `state` must be PENDING or RUNNING.
  void register_pilot(const std::string& pilot_id,
                      const PilotComputeDescription& description,
                      PilotState state, std::int64_t capacity_cores);
  // Requeues the pilot's SCHEDULED units (state reset to NEW); in-flight
  // units go through the failure requeue path.
  void deregister_pilot(const std::string& pilot_id);

  void set_pilot_state(const std::string& pilot_id, PilotState state,
                       const std::string& reason = {});
  // Growing capacity comes from worker grants, shrinking from preemption.
  // On shrink, queued units are requeued from the tail until in_use fits.
  void set_pilot_capacity(const std::string& pilot_id, std::int64_t capacity);
  // Marks the pilot FAILED and requeues every unit bound to it.
  void pilot_failed(const std::string& pilot_id, const std::string& reason);

  // Registers a Data-Unit id so compute units may reference it.
  void register_data_unit(const std::string& du_id);
  bool has_data_unit(const std::string& du_id) const;
  // Hook for an external Data-Unit registry (data-backends).
  void set_data_unit_lookup(std::function<bool(const std::string&)> lookup);

  // Validates, enqueues in state NEW and attempts placement. Never blocks on
  // placement.
  std::string submit_compute_unit(const ComputeUnitDescription& cud);

  // Pure scheduling of one NEW unit against the current registry, without
  // mutating anything.
  std::optional<PlacementDecision> preview_schedule(const std::string& unit_id) const;
  // Places every placeable unit of the global queue in FIFO order.
  std::vector<PlacementDecision> schedule_pending();

  // Throws UnknownPilot unless the pilot is registered and RUNNING.
  std::optional<ComputeUnit> pull_next(const std::string& pilot_id);
  // Like pull_next but waits up to `timeout` for work. Returns nullopt if the
  // pilot stops running while waiting.
  std::optional<ComputeUnit> pull_next_wait(const std::string& pilot_id,
                                            std::chrono::milliseconds timeout);

  // STAGING_IN -> RUNNING, RUNNING -> STAGING_OUT. Return false when the
  // lease is stale (unit was requeued or canceled meanwhile).
  bool mark_running(const std::string& unit_id, int attempt);
  bool mark_staging_out(const std::string& unit_id, int attempt);

  // Unit must be RUNNING or STAGING_OUT; throws IllegalTransition otherwise.
  void complete_unit(const std::string& unit_id, const UnitOutcome& outcome);
  // Lease-checked variant used by agents; returns false on a stale lease.
  bool complete_unit(const std::string& unit_id, const UnitOutcome& outcome,
                     int attempt);
  // Fails a non-terminal unit outright (e.g. stage-in failure).
  bool fail_unit(const std::string& unit_id, const std::string& reason,
                 int attempt);
  // Failure requeue path: back to NEW, retry counter incremented; FAILED
  // once kMaxRequeues is exceeded.
  void requeue_unit(const std::string& unit_id, const std::string& reason);
  // Lease-checked variant for lost agents.
  bool requeue_unit(const std::string& unit_id, const std::string& reason,
                    int attempt);
  void cancel_unit(const std::string& unit_id);

  UnitInfo unit_info(const std::string& unit_id) const;
  PilotInfo pilot_info(const std::string& pilot_id) const;
  std::vector<PilotSnapshot> pilot_snapshots() const;
  std::vector<std::string> pilot_ids() const;
  std::vector<std::string> unit_ids() const;
  std::size_t global_queue_size() const;
  std::vector<std::string> global_queue() const;
  std::vector<std::string> pilot_queue(const std::string& pilot_id) const;
  std::vector<PlacementDecision> decisions() const;

  // Blocks until every listed unit is terminal or the timeout expires.
  bool wait_terminal(const std::vector<std::string>& unit_ids,
                     std::chrono::milliseconds timeout);

  // Checks capacity conservation and queue exclusivity; returns a list of
  // violations (empty when consistent).
  std::vector<std::string> check_invariants() const;

 private:
  struct PilotEntry {
    PilotComputeDescription description;
    PilotState state = PilotState::New;
    std::int64_t capacity = 0;
    std::int64_t in_use = 0;
    std::deque<std::string> queue;
  };

  struct UnitEntry {
    ComputeUnitDescription description;
    UnitState state = UnitState::New;
    std::optional<std::string> pilot_id;
    int retries = 0;
    int attempt = 0;
    std::optional<UnitOutcome> outcome;
    std::vector<std::string> pilots_tried;
  };

  PilotEntry& pilot_locked(const std::string& pilot_id);
  const PilotEntry& pilot_locked(const std::string& pilot_id) const;
  UnitEntry& unit_locked(const std::string& unit_id);
  const UnitEntry& unit_locked(const std::string& unit_id) const;

  void move_unit(const std::string& unit_id, UnitEntry& unit, UnitState to,
                 const std::string& reason);
  void advance_unit(const std::string& unit_id, UnitEntry& unit, Event event,
                    const std::string& reason);
  void release_cores(UnitEntry& unit);
  void complete_locked(const std::string& unit_id, UnitEntry& unit,
                       const UnitOutcome& outcome);
  void reset_to_new(const std::string& unit_id, UnitEntry& unit,
                    const std::string& reason);
  void requeue_locked(const std::string& unit_id, UnitEntry& unit,
                      const std::string& reason);
  void requeue_all_of(const std::string& pilot_id, const std::string& reason);
  std::vector<PilotSnapshot> snapshots_locked() const;
  std::vector<PlacementDecision> schedule_pending_locked();
  bool lease_ok(const UnitEntry& unit, int attempt) const;
  std::optional<ComputeUnit> pull_locked(const std::string& pilot_id,
                                         PilotEntry& pilot);

  AffinityMode mode_;
  std::shared_ptr<EventLog> log_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, PilotEntry> pilots_;
  std::map<std::string, UnitEntry> units_;
  std::deque<std::string> global_queue_;
  std::set<std::string> data_units_;
  std::function<bool(const std::string&)> du_lookup_;
  std::vector<PlacementDecision> decisions_;
  std::uint64_t next_unit_ = 1;
};

}  // namespace pilotkit
